#include "perfcap/kinematics.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "perfcap/error.hpp"

namespace perfcap {

SkeletonRig::SkeletonRig(std::vector<JointRecord> joints, std::vector<AngleBounds> bounds)
    : joints_(std::move(joints)), bounds_(std::move(bounds)) {
  if (joints_.empty()) throw InputError("rig has no joints");
  if (joints_[0].parent != kNoParent) throw InputError("joint 0 must be the root");
  size_t axis_total = 0;
  for (size_t i = 0; i < joints_.size(); ++i) {
    const auto& j = joints_[i];
    if (i > 0 && (j.parent < 0 || j.parent >= static_cast<int>(i))) {
      std::ostringstream msg;
      msg << "joint " << i << " (" << j.name << ") must have a parent listed before it";
      throw InputError(msg.str());
    }
    for (const auto& axis : j.axes) {
      if (std::abs(axis.norm() - 1.0) > 1e-9) throw InputError("rotation axis of joint " + j.name + " is not unit");
    }
    axis_total += j.axes.size();
  }
  if (axis_total != bounds_.size()) throw InputError("angle bound count does not match the number of rotation axes");
  for (const auto& b : bounds_) {
    if (!(b.lower <= b.upper)) throw InputError("angle bounds must satisfy lower <= upper");
  }

  const size_t n = joints_.size();
  first_angle_.resize(n);
  bone_lengths_.resize(n);
  param_owner_.assign(kRootDof, 0);
  int next = 0;
  for (size_t i = 0; i < n; ++i) {
    first_angle_[i] = next;
    for (size_t a = 0; a < joints_[i].axes.size(); ++a) param_owner_.push_back(static_cast<int>(i));
    next += static_cast<int>(joints_[i].axes.size());
    bone_lengths_[i] = i == 0 ? 0.0 : joints_[i].offset.norm();
  }
  subtree_.assign(n * n, false);
  for (size_t j = 0; j < n; ++j) {
    for (int a = static_cast<int>(j); a != kNoParent; a = joints_[static_cast<size_t>(a)].parent) {
      subtree_[static_cast<size_t>(a) * n + j] = true;
    }
  }
}

double SkeletonRig::total_bone_length() const {
  double total = 0.0;
  for (double l : bone_lengths_) total += l;
  return total;
}

int SkeletonRig::find_joint(std::string_view name) const {
  for (size_t i = 0; i < joints_.size(); ++i) {
    if (joints_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::vector<std::string> SkeletonRig::joint_names() const {
  std::vector<std::string> names;
  names.reserve(joints_.size());
  for (const auto& j : joints_) names.push_back(j.name);
  return names;
}

std::vector<Vec3> SkeletonRig::rest_positions() const {
  std::vector<Vec3> p(joints_.size());
  for (size_t i = 0; i < joints_.size(); ++i) {
    p[i] = joints_[i].offset;
    if (i > 0) p[i] += p[static_cast<size_t>(joints_[i].parent)];
  }
  return p;
}

SkeletonRig default_rig() {
  const Vec3 X = Vec3::UnitX(), Y = Vec3::UnitY(), Z = Vec3::UnitZ();
  std::vector<JointRecord> joints;
  std::vector<AngleBounds> bounds;
  auto add = [&](std::string name, int parent, Vec3 offset, std::vector<std::pair<Vec3, AngleBounds>> dofs) {
    JointRecord j{std::move(name), parent, offset, {}};
    for (auto& [axis, b] : dofs) {
      j.axes.push_back(axis);
      bounds.push_back(b);
    }
    joints.push_back(std::move(j));
  };
  // Bounds are this project's anatomical choice, not measured values.
  add("pelvis", -1, Vec3::Zero(), {});
  add("neck", 0, {0.0, -0.55, 0.0}, {{X, {-0.6, 0.6}}, {Z, {-0.5, 0.5}}, {Y, {-0.8, 0.8}}});
  add("l_shoulder", 1, {0.18, 0.03, 0.0}, {{Z, {-1.2, 1.7}}, {Y, {-1.6, 1.0}}, {X, {-1.5, 1.5}}});
  add("l_elbow", 2, {0.28, 0.0, 0.0}, {{Y, {-1.0, 2.6}}, {Z, {-1.2, 1.2}}});
  add("l_wrist", 3, {0.25, 0.0, 0.0}, {});
  add("r_shoulder", 1, {-0.18, 0.03, 0.0}, {{Z, {-1.7, 1.2}}, {Y, {-1.0, 1.6}}, {X, {-1.5, 1.5}}});
  add("r_elbow", 5, {-0.28, 0.0, 0.0}, {{Y, {-2.6, 1.0}}, {Z, {-1.2, 1.2}}});
  add("r_wrist", 6, {-0.25, 0.0, 0.0}, {});
  add("l_hip", 0, {0.09, 0.05, 0.0}, {{X, {-2.0, 0.6}}, {Z, {-0.8, 0.4}}, {Y, {-0.8, 0.8}}});
  add("l_knee", 8, {0.0, 0.42, 0.0}, {{X, {0.0, 2.4}}});
  add("l_ankle", 9, {0.0, 0.42, 0.0}, {{X, {-0.8, 0.6}}, {Y, {-0.5, 0.5}}, {Z, {-0.4, 0.4}}});
  add("l_toe", 10, {0.0, 0.06, -0.13}, {});
  add("r_hip", 0, {-0.09, 0.05, 0.0}, {{X, {-2.0, 0.6}}, {Z, {-0.4, 0.8}}, {Y, {-0.8, 0.8}}});
  add("r_knee", 12, {0.0, 0.42, 0.0}, {{X, {0.0, 2.4}}});
  add("r_ankle", 13, {0.0, 0.42, 0.0}, {{X, {-0.8, 0.6}}, {Y, {-0.5, 0.5}}, {Z, {-0.4, 0.4}}});
  add("r_toe", 14, {0.0, 0.06, -0.13}, {});
  return SkeletonRig(std::move(joints), std::move(bounds));
}

SkeletonPose SkeletonPose::rest(const SkeletonRig& rig) {
  SkeletonPose p;
  p.angles = VecX::Zero(rig.angle_count());
  return p;
}

VecX SkeletonPose::flatten() const {
  VecX v(dof());
  v.segment<3>(0) = translation;
  v.segment<3>(3) = rotation;
  v.tail(angles.size()) = angles;
  return v;
}

SkeletonPose SkeletonPose::from_flat(std::span<const double> values) {
  if (values.size() < static_cast<size_t>(kRootDof)) throw InputError("pose vector shorter than 6");
  SkeletonPose p;
  p.translation = Vec3(values[0], values[1], values[2]);
  p.rotation = Vec3(values[3], values[4], values[5]);
  p.angles = Eigen::Map<const VecX>(values.data() + kRootDof, static_cast<Eigen::Index>(values.size() - kRootDof));
  return p;
}

void clamp_to_bounds(const SkeletonRig& rig, SkeletonPose& pose) {
  const auto bounds = rig.angle_bounds();
  for (Eigen::Index i = 0; i < pose.angles.size(); ++i) {
    const auto& b = bounds[static_cast<size_t>(i)];
    pose.angles[i] = std::clamp(pose.angles[i], b.lower, b.upper);
  }
}

bool within_bounds(const SkeletonRig& rig, const SkeletonPose& pose, double tol) {
  const auto bounds = rig.angle_bounds();
  for (Eigen::Index i = 0; i < pose.angles.size(); ++i) {
    const auto& b = bounds[static_cast<size_t>(i)];
    if (pose.angles[i] < b.lower - tol || pose.angles[i] > b.upper + tol) return false;
  }
  return true;
}

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InputError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InputError("camera image size must be positive");
}

Vec2 project(const Camera& cam, const Vec3& p) {
  if (!(p.z() > kMinDepth)) throw RuntimeFailure("point behind camera");
  return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

Vec2 project_guarded(const Camera& cam, const Vec3& p, Eigen::Matrix<double, 2, 3>* jacobian, bool* clamped) {
  const bool clamp = !(p.z() > kMinDepth);
  const double z = clamp ? kMinDepth : p.z();
  if (clamped) *clamped = clamp;
  if (jacobian) {
    jacobian->setZero();
    (*jacobian)(0, 0) = cam.fx / z;
    (*jacobian)(1, 1) = cam.fy / z;
    if (!clamp) {
      (*jacobian)(0, 2) = -cam.fx * p.x() / (z * z);
      (*jacobian)(1, 2) = -cam.fy * p.y() / (z * z);
    }
  }
  return {cam.fx * p.x() / z + cam.cx, cam.fy * p.y() / z + cam.cy};
}

void ActorTemplate::validate(const SkeletonRig& rig) const {
  if (skin_weights.size() != vertices.size()) throw InputError("skinning weight count does not match vertex count");
  for (size_t v = 0; v < skin_weights.size(); ++v) {
    double sum = 0.0;
    for (const auto& inf : skin_weights[v]) {
      if (inf.joint < 0 || inf.joint >= rig.joint_count()) {
        throw InputError("vertex " + std::to_string(v) + " references unknown joint " + std::to_string(inf.joint));
      }
      if (inf.weight < 0.0) throw InputError("negative skinning weight at vertex " + std::to_string(v));
      sum += inf.weight;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw InputError("skinning weights of vertex " + std::to_string(v) + " do not sum to 1");
  }
  const int nv = static_cast<int>(vertices.size());
  std::map<std::pair<int, int>, int> edge_use;
  for (const auto& t : triangles) {
    for (int k = 0; k < 3; ++k) {
      if (t[k] < 0 || t[k] >= nv) throw InputError("triangle references a missing vertex");
      const int a = t[k], b = t[(k + 1) % 3];
      if (++edge_use[{std::min(a, b), std::max(a, b)}] > 2) throw InputError("mesh edge shared by more than two triangles");
    }
  }
}

std::vector<RigidTransform> forward_kinematics(const SkeletonRig& rig, const SkeletonPose& pose) {
  if (pose.angles.size() != rig.angle_count()) {
    throw InputError("pose has " + std::to_string(pose.angles.size()) + " angles, rig expects " +
                     std::to_string(rig.angle_count()));
  }
  std::vector<RigidTransform> world(static_cast<size_t>(rig.joint_count()));
  for (int j = 0; j < rig.joint_count(); ++j) {
    const auto& rec = rig.joint(j);
    Mat3 local = Mat3::Identity();
    const int a0 = rig.first_angle(j);
    for (size_t a = 0; a < rec.axes.size(); ++a) {
      local = local * axis_rotation(rec.axes[a], pose.angles[a0 + static_cast<Eigen::Index>(a)]);
    }
    auto& w = world[static_cast<size_t>(j)];
    if (rec.parent == SkeletonRig::kNoParent) {
      w.rotation = exp_so3(pose.rotation) * local;
      w.translation = pose.translation + rec.offset;
    } else {
      const auto& p = world[static_cast<size_t>(rec.parent)];
      w.rotation = p.rotation * local;
      w.translation = p.rotation * rec.offset + p.translation;
    }
  }
  return world;
}

std::vector<Vec3> joint_positions(const SkeletonRig& rig, const SkeletonPose& pose) {
  const auto world = forward_kinematics(rig, pose);
  std::vector<Vec3> out;
  out.reserve(world.size());
  for (const auto& t : world) out.push_back(t.translation);
  return out;
}

std::vector<ParameterTwist> parameter_twists(const SkeletonRig& rig, const SkeletonPose& pose,
                                             std::span<const RigidTransform> world) {
  std::vector<ParameterTwist> twists(static_cast<size_t>(rig.dof()));
  for (int i = 0; i < 3; ++i) twists[static_cast<size_t>(i)].linear = Vec3::Unit(i);
  const Vec3 root_pos = world[0].translation;
  const Mat3 jl = left_jacobian_so3(pose.rotation);
  for (int i = 0; i < 3; ++i) {
    auto& tw = twists[static_cast<size_t>(3 + i)];
    tw.angular = jl.col(i);
    tw.linear = -tw.angular.cross(root_pos);
  }
  for (int j = 0; j < rig.joint_count(); ++j) {
    const auto& rec = rig.joint(j);
    if (rec.axes.empty()) continue;
    // Frame in which the joint's first axis is expressed.
    Mat3 frame = rec.parent == SkeletonRig::kNoParent ? exp_so3(pose.rotation)
                                                      : world[static_cast<size_t>(rec.parent)].rotation;
    const Vec3 pivot = world[static_cast<size_t>(j)].translation;
    const int a0 = rig.first_angle(j);
    for (size_t a = 0; a < rec.axes.size(); ++a) {
      auto& tw = twists[static_cast<size_t>(kRootDof + a0 + static_cast<int>(a))];
      tw.angular = frame * rec.axes[a];
      tw.linear = -tw.angular.cross(pivot);
      frame = frame * axis_rotation(rec.axes[a], pose.angles[a0 + static_cast<Eigen::Index>(a)]);
    }
  }
  return twists;
}

Eigen::Matrix<double, 3, Eigen::Dynamic> joint_position_jacobian(const SkeletonRig& rig,
                                                                 std::span<const RigidTransform> world,
                                                                 std::span<const ParameterTwist> twists,
                                                                 int joint) {
  Eigen::Matrix<double, 3, Eigen::Dynamic> J = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, rig.dof());
  const Vec3& p = world[static_cast<size_t>(joint)].translation;
  for (int k = 0; k < rig.dof(); ++k) {
    if (!rig.in_subtree(rig.parameter_owner(k), joint)) continue;
    const auto& tw = twists[static_cast<size_t>(k)];
    J.col(k) = tw.angular.cross(p) + tw.linear;
  }
  return J;
}

namespace {

// Per-joint skinning transform (world * rest^-1) as a dual quaternion.
struct BoneState {
  RigidTransform transform;
  DualQuat dq;
};

std::vector<BoneState> bone_states(const SkeletonRig& rig, std::span<const RigidTransform> world) {
  const auto rest = rig.rest_positions();
  std::vector<BoneState> bones(world.size());
  for (size_t j = 0; j < world.size(); ++j) {
    auto& b = bones[j];
    b.transform.rotation = world[j].rotation;
    b.transform.translation = world[j].translation - world[j].rotation * rest[j];
    b.dq = DualQuat::from_transform(b.transform);
  }
  return bones;
}

struct BlendResult {
  Eigen::Vector4d real;
  Eigen::Vector4d dual;
  std::vector<double> signs;  // per influence
};

BlendResult blend(const std::vector<SkinInfluence>& influences, const std::vector<BoneState>& bones) {
  BlendResult out{Eigen::Vector4d::Zero(), Eigen::Vector4d::Zero(), {}};
  size_t pivot = 0;
  for (size_t k = 1; k < influences.size(); ++k) {
    if (influences[k].weight > influences[pivot].weight) pivot = k;
  }
  const Eigen::Vector4d& ref = bones[static_cast<size_t>(influences[pivot].joint)].dq.real;
  out.signs.resize(influences.size());
  for (size_t k = 0; k < influences.size(); ++k) {
    const auto& dq = bones[static_cast<size_t>(influences[k].joint)].dq;
    const double s = dq.real.dot(ref) < 0.0 ? -1.0 : 1.0;
    out.signs[k] = s;
    out.real += s * influences[k].weight * dq.real;
    out.dual += s * influences[k].weight * dq.dual;
  }
  return out;
}

// Applies a normalized dual quaternion (r, d) to a point.
Vec3 apply_unit(const Eigen::Vector4d& r, const Eigen::Vector4d& d, const Vec3& v) {
  const double w = r[0];
  const Vec3 u = r.tail<3>();
  const double d0 = d[0];
  const Vec3 dv = d.tail<3>();
  const Vec3 uv = u.cross(v);
  const Vec3 rotated = v + 2.0 * w * uv + 2.0 * u.cross(uv);
  const Vec3 trans = 2.0 * (-d0 * u + w * dv + u.cross(dv));
  return rotated + trans;
}

// d(apply_unit)/d(r, d) as 3 x 8 (columns: r0..r3, d0..d3).
Eigen::Matrix<double, 3, 8> apply_unit_jacobian(const Eigen::Vector4d& r, const Eigen::Vector4d& d, const Vec3& v) {
  const double w = r[0];
  const Vec3 u = r.tail<3>();
  const double d0 = d[0];
  const Vec3 dv = d.tail<3>();
  Eigen::Matrix<double, 3, 8> J;
  J.col(0) = 2.0 * u.cross(v) + 2.0 * dv;
  J.block<3, 3>(0, 1) = -2.0 * w * skew(v) + 2.0 * (u.dot(v) * Mat3::Identity() + u * v.transpose() - 2.0 * v * u.transpose()) +
                        2.0 * (-d0 * Mat3::Identity() - skew(dv));
  J.col(4) = -2.0 * u;
  J.block<3, 3>(0, 5) = 2.0 * (w * Mat3::Identity() + skew(u));
  return J;
}

Vec3 skin_one(const Vec3& rest, const std::vector<SkinInfluence>& influences, const std::vector<BoneState>& bones,
              BlendResult* blended_out) {
  BlendResult b = blend(influences, bones);
  const double n = b.real.norm();
  const Eigen::Vector4d r = b.real / n;
  const Eigen::Vector4d d = b.dual / n;
  const Vec3 out = apply_unit(r, d, rest);
  if (blended_out) *blended_out = std::move(b);
  return out;
}

}  // namespace

std::vector<Vec3> skin_mesh(const ActorTemplate& actor, const SkeletonRig& rig, const SkeletonPose& pose) {
  const auto world = forward_kinematics(rig, pose);
  const auto bones = bone_states(rig, world);
  std::vector<Vec3> out(actor.vertices.size());
  for (size_t i = 0; i < actor.vertices.size(); ++i) {
    out[i] = skin_one(actor.vertices[i], actor.skin_weights[i], bones, nullptr);
  }
  return out;
}

SkinnedVertices skin_vertices(const ActorTemplate& actor, const SkeletonRig& rig, const SkeletonPose& pose,
                              std::span<const int> vertex_ids, bool with_jacobian) {
  const auto world = forward_kinematics(rig, pose);
  const auto bones = bone_states(rig, world);
  SkinnedVertices out;
  out.positions.reserve(vertex_ids.size());
  std::vector<ParameterTwist> twists;
  // Per bone and parameter: derivative of the bone dual quaternion (8 values).
  std::vector<Eigen::Matrix<double, 8, Eigen::Dynamic>> bone_dq_jac;
  if (with_jacobian) {
    twists = parameter_twists(rig, pose, world);
    bone_dq_jac.resize(bones.size());
    for (size_t j = 0; j < bones.size(); ++j) {
      auto& dj = bone_dq_jac[j];
      dj = Eigen::Matrix<double, 8, Eigen::Dynamic>::Zero(8, rig.dof());
      const auto& bone = bones[j];
      const Vec3& tau = bone.transform.translation;
      const Eigen::Vector4d tq(0.0, tau.x(), tau.y(), tau.z());
      for (int k = 0; k < rig.dof(); ++k) {
        if (!rig.in_subtree(rig.parameter_owner(k), static_cast<int>(j))) continue;
        const auto& tw = twists[static_cast<size_t>(k)];
        const Eigen::Vector4d wq(0.0, tw.angular.x(), tw.angular.y(), tw.angular.z());
        const Vec3 dtau = tw.angular.cross(tau) + tw.linear;
        const Eigen::Vector4d dtq(0.0, dtau.x(), dtau.y(), dtau.z());
        const Eigen::Vector4d dreal = 0.5 * quat_mul(wq, bone.dq.real);
        dj.block<4, 1>(0, k) = dreal;
        dj.block<4, 1>(4, k) = 0.5 * quat_mul(dtq, bone.dq.real) + 0.5 * quat_mul(tq, dreal);
      }
    }
    out.jacobians.reserve(vertex_ids.size());
  }
  for (int vid : vertex_ids) {
    const auto& influences = actor.skin_weights[static_cast<size_t>(vid)];
    const Vec3& rest = actor.vertices[static_cast<size_t>(vid)];
    BlendResult b;
    out.positions.push_back(skin_one(rest, influences, bones, &b));
    if (!with_jacobian) continue;
    // d(blend)/d(pose)
    Eigen::Matrix<double, 8, Eigen::Dynamic> db = Eigen::Matrix<double, 8, Eigen::Dynamic>::Zero(8, rig.dof());
    for (size_t k = 0; k < influences.size(); ++k) {
      db += (b.signs[k] * influences[k].weight) * bone_dq_jac[static_cast<size_t>(influences[k].joint)];
    }
    const double n = b.real.norm();
    const Eigen::Vector4d r = b.real / n;
    const Eigen::Vector4d d = b.dual / n;
    // d(normalized)/d(blend)
    Eigen::Matrix<double, 8, 8> dn = Eigen::Matrix<double, 8, 8>::Zero();
    dn.block<4, 4>(0, 0) = (Eigen::Matrix4d::Identity() - r * r.transpose()) / n;
    dn.block<4, 4>(4, 0) = -(d * r.transpose()) / n;
    dn.block<4, 4>(4, 4) = Eigen::Matrix4d::Identity() / n;
    out.jacobians.push_back(apply_unit_jacobian(r, d, rest) * dn * db);
  }
  return out;
}

}  // namespace perfcap
