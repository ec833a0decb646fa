#include "perfcap/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "perfcap/error.hpp"

namespace perfcap {

MotionSpec random_motion(const SkeletonRig& rig, int frames, int K, std::mt19937& rng, double amplitude, double depth) {
  if (frames < 1 || K < 1) throw InputError("motion needs at least one frame and one basis function");
  const int dof = rig.dof();
  MotionSpec spec;
  spec.frames = frames;
  spec.base = VecX::Zero(dof);
  spec.coeffs = MatX::Zero(dof, K);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Coefficients for k >= 1 whose absolute sum equals `budget`.
  auto oscillation = [&](int row, double budget) {
    if (K < 2) return;
    VecX c(K - 1);
    for (int k = 0; k < K - 1; ++k) c[k] = (2.0 * u(rng) - 1.0) / (k + 1);
    c *= budget / c.cwiseAbs().sum();
    spec.coeffs.row(row).tail(K - 1) = c.transpose();
  };
  spec.base.head<3>() = Vec3(0.2 * (u(rng) - 0.5), -0.2, depth);
  oscillation(0, 0.3 * u(rng));
  oscillation(1, 0.02 * u(rng));
  oscillation(2, 0.3 * u(rng));
  spec.base.segment<3>(3) = Vec3(0.0, 1.2 * (u(rng) - 0.5), 0.0);
  oscillation(3, 0.05 * u(rng));
  oscillation(4, 0.3 * u(rng));
  oscillation(5, 0.05 * u(rng));
  const auto bounds = rig.angle_bounds();
  for (int a = 0; a < rig.angle_count(); ++a) {
    const auto& b = bounds[static_cast<size_t>(a)];
    const double span = b.upper - b.lower;
    const double lo = b.lower + (amplitude + 0.1) * span;
    const double hi = b.upper - (amplitude + 0.1) * span;
    spec.base[kRootDof + a] = lo <= hi ? lo + (hi - lo) * u(rng) : 0.5 * (b.lower + b.upper);
    oscillation(kRootDof + a, amplitude * span * (0.5 + 0.5 * u(rng)));
  }
  return spec;
}

std::vector<SkeletonPose> generate_motion(const SkeletonRig& rig, const MotionSpec& spec) {
  const int dof = rig.dof();
  if (spec.base.size() != dof || spec.coeffs.rows() != dof) throw InputError("motion spec does not match the rig");
  std::vector<SkeletonPose> poses;
  std::vector<int> bad;
  const double n = spec.frames;
  for (int f = 0; f < spec.frames; ++f) {
    VecX x = spec.base;
    for (int k = 0; k < spec.coeffs.cols(); ++k) {
      x += spec.coeffs.col(k) * std::cos(std::numbers::pi * (2.0 * f + 1.0) * k / (2.0 * n));
    }
    poses.push_back(SkeletonPose::from_flat(x));
    if (!within_bounds(rig, poses.back())) bad.push_back(f);
  }
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "motion leaves the angle bounds at frame";
    for (size_t i = 0; i < bad.size(); ++i) msg << (i ? ", " : " ") << bad[i];
    throw InputError(msg.str());
  }
  return poses;
}

std::vector<FrameDetections> synth_detections(const SkeletonRig& rig, const Camera& cam,
                                              const std::vector<SkeletonPose>& poses, const NoiseSpec& noise,
                                              std::mt19937& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double avg_bone = rig.total_bone_length() / std::max(1, rig.joint_count() - 1);
  std::vector<FrameDetections> out;
  for (size_t f = 0; f < poses.size(); ++f) {
    auto d = FrameDetections::empty(static_cast<int>(f), rig.joint_count());
    const auto pos = joint_positions(rig, poses[f]);
    for (size_t j = 0; j < pos.size(); ++j) {
      Vec2 px = project(cam, pos[j]);
      if (noise.sigma_2d > 0.0) px += noise.sigma_2d * Vec2(n(rng), n(rng));
      Vec3 rel = pos[j] - pos[0];
      if (noise.sigma_3d > 0.0) rel += noise.sigma_3d * Vec3(n(rng), n(rng), n(rng));
      d.d2d[j] = px;
      d.d3d[j] = rel / avg_bone;
      d.c2d[j] = 1.0;
      d.c3d[j] = 1.0;
    }
    out.push_back(std::move(d));
  }
  return out;
}

Camera synth_camera() { return Camera{800.0, 800.0, 256.0, 256.0, 512, 512}; }

namespace {

double seg_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

double smooth_min(double a, double b, double k) {
  const double h = std::max(k - std::abs(a - b), 0.0) / k;
  return std::min(a, b) - h * h * k * 0.25;
}

struct Capsule {
  Vec3 a, b;
  double radius;
};

struct BodyShape {
  std::vector<Capsule> capsules;
  Vec3 box_center = Vec3::Zero();
  Vec3 box_half = Vec3::Zero();
  double box_round = 0.0;

  double sdf(const Vec3& p) const {
    const Vec3 q = (p - box_center).cwiseAbs() - (box_half - Vec3::Constant(box_round));
    double d = q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0) - box_round;
    for (const auto& c : capsules) d = smooth_min(d, seg_distance(p, c.a, c.b) - c.radius, 0.02);
    return d;
  }
};

struct Segment {
  Vec3 a, b;
  int owner;
};

double bone_radius(const std::string& child_name) {
  if (child_name.find("shoulder") != std::string::npos) return 0.055;
  if (child_name.find("elbow") != std::string::npos) return 0.05;
  if (child_name.find("wrist") != std::string::npos) return 0.04;
  if (child_name.find("hip") != std::string::npos) return 0.07;
  if (child_name.find("knee") != std::string::npos) return 0.065;
  if (child_name.find("ankle") != std::string::npos) return 0.05;
  if (child_name.find("toe") != std::string::npos) return 0.04;
  return 0.05;
}

}  // namespace

ActorTemplate capsule_template(const SkeletonRig& rig, double cell) {
  if (!(cell > 0.0)) throw InputError("grid cell must be positive");
  const auto rest = rig.rest_positions();
  BodyShape shape;
  std::vector<Segment> segments;
  const int neck = rig.find_joint("neck");
  for (int j = 1; j < rig.joint_count(); ++j) {
    const int p = rig.joint(j).parent;
    const auto& name = rig.joint(j).name;
    segments.push_back({rest[static_cast<size_t>(p)], rest[static_cast<size_t>(j)], p});
    if (name == "neck") continue;  // the torso box covers it
    if (p == 0 && name.find("hip") != std::string::npos) continue;
    shape.capsules.push_back({rest[static_cast<size_t>(p)], rest[static_cast<size_t>(j)], bone_radius(name)});
  }
  // Torso box between pelvis and neck.
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (int j = 0; j < rig.joint_count(); ++j) {
    const auto& name = rig.joint(j).name;
    if (j == 0 || name == "neck" || name.find("hip") != std::string::npos) {
      lo = lo.cwiseMin(rest[static_cast<size_t>(j)]);
      hi = hi.cwiseMax(rest[static_cast<size_t>(j)]);
    }
  }
  shape.box_center = 0.5 * (lo + hi);
  shape.box_half = Vec3(0.15, 0.5 * (hi.y() - lo.y()) + 0.02, 0.09);
  shape.box_round = 0.06;
  if (neck >= 0) {
    const Vec3 n = rest[static_cast<size_t>(neck)];
    const Vec3 head = n + Vec3(0.0, -0.16, 0.0);
    shape.capsules.push_back({n, head, 0.045});
    shape.capsules.push_back({head, head, 0.1});
    segments.push_back({n, head + Vec3(0.0, -0.1, 0.0), neck});
  }
  for (int j = 1; j < rig.joint_count(); ++j) {
    const auto& name = rig.joint(j).name;
    if (name.find("wrist") == std::string::npos) continue;
    const Vec3 w = rest[static_cast<size_t>(j)];
    const Vec3 dir = (w - rest[static_cast<size_t>(rig.joint(j).parent)]).normalized();
    const Vec3 tip = w + 0.08 * dir;
    shape.capsules.push_back({w, tip, 0.045});
    segments.push_back({w, tip, j});
  }

  // Grid over the bounding box, nudged so no sample lands exactly on the surface.
  Vec3 bmin = shape.box_center - shape.box_half, bmax = shape.box_center + shape.box_half;
  for (const auto& c : shape.capsules) {
    bmin = bmin.cwiseMin(c.a - Vec3::Constant(c.radius)).cwiseMin(c.b - Vec3::Constant(c.radius));
    bmax = bmax.cwiseMax(c.a + Vec3::Constant(c.radius)).cwiseMax(c.b + Vec3::Constant(c.radius));
  }
  const Vec3 origin = bmin - Vec3::Constant(2.0 * cell) + cell * Vec3(0.0137, 0.0291, 0.0173);
  const Eigen::Vector3i dims = (((bmax - bmin) / cell).array().ceil().cast<int>() + 5).matrix();
  auto gid = [&](int x, int y, int z) { return (static_cast<long long>(z) * dims.y() + y) * dims.x() + x; };
  auto gpos = [&](int x, int y, int z) { return Vec3(origin + cell * Vec3(x, y, z)); };
  std::vector<double> value(static_cast<size_t>(dims.prod()));
  for (int z = 0; z < dims.z(); ++z) {
    for (int y = 0; y < dims.y(); ++y) {
      for (int x = 0; x < dims.x(); ++x) value[static_cast<size_t>(gid(x, y, z))] = shape.sdf(gpos(x, y, z));
    }
  }

  ActorTemplate out;
  std::unordered_map<long long, int> edge_vertex;
  const long long total = dims.prod();
  auto corner_pos = [&](long long id) {
    const int x = static_cast<int>(id % dims.x());
    const int y = static_cast<int>((id / dims.x()) % dims.y());
    const int z = static_cast<int>(id / (static_cast<long long>(dims.x()) * dims.y()));
    return gpos(x, y, z);
  };
  auto vertex_on = [&](long long a, long long b) {
    if (a > b) std::swap(a, b);
    const long long key = a * total + b;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double va = value[static_cast<size_t>(a)], vb = value[static_cast<size_t>(b)];
    const double t = std::clamp(va / (va - vb), 0.02, 0.98);
    out.vertices.push_back(corner_pos(a) + t * (corner_pos(b) - corner_pos(a)));
    const int idx = static_cast<int>(out.vertices.size()) - 1;
    edge_vertex.emplace(key, idx);
    return idx;
  };
  auto emit = [&](int i0, int i1, int i2, const Vec3& outward) {
    const Vec3 n = (out.vertices[static_cast<size_t>(i1)] - out.vertices[static_cast<size_t>(i0)])
                       .cross(out.vertices[static_cast<size_t>(i2)] - out.vertices[static_cast<size_t>(i0)]);
    if (n.dot(outward) < 0.0) std::swap(i1, i2);
    out.triangles.push_back({i0, i1, i2});
  };
  // Kuhn decomposition: six tetrahedra along the cube diagonal 0 -> 7.
  static const int perms[6][3] = {{1, 2, 4}, {1, 4, 2}, {2, 1, 4}, {2, 4, 1}, {4, 1, 2}, {4, 2, 1}};
  for (int z = 0; z + 1 < dims.z(); ++z) {
    for (int y = 0; y + 1 < dims.y(); ++y) {
      for (int x = 0; x + 1 < dims.x(); ++x) {
        std::array<long long, 8> c;
        for (int k = 0; k < 8; ++k) c[static_cast<size_t>(k)] = gid(x + (k & 1), y + ((k >> 1) & 1), z + ((k >> 2) & 1));
        for (const auto& perm : perms) {
          const std::array<long long, 4> tet = {c[0], c[static_cast<size_t>(perm[0])], c[static_cast<size_t>(perm[0] + perm[1])], c[7]};
          std::vector<long long> in, outside;
          for (long long v : tet) (value[static_cast<size_t>(v)] < 0.0 ? in : outside).push_back(v);
          if (in.empty() || outside.empty()) continue;
          Vec3 cin = Vec3::Zero(), cout = Vec3::Zero();
          for (long long v : in) cin += corner_pos(v);
          for (long long v : outside) cout += corner_pos(v);
          const Vec3 outward = cout / static_cast<double>(outside.size()) - cin / static_cast<double>(in.size());
          if (in.size() == 1 || outside.size() == 1) {
            const long long lone = in.size() == 1 ? in[0] : outside[0];
            const auto& others = in.size() == 1 ? outside : in;
            emit(vertex_on(lone, others[0]), vertex_on(lone, others[1]), vertex_on(lone, others[2]), outward);
          } else {
            const int a = vertex_on(in[0], outside[0]);
            const int b = vertex_on(in[0], outside[1]);
            const int c2 = vertex_on(in[1], outside[1]);
            const int d = vertex_on(in[1], outside[0]);
            emit(a, b, c2, outward);
            emit(a, c2, d, outward);
          }
        }
      }
    }
  }

  // Skinning weights from distance to the bone segments.
  const double sigma = 0.025;
  out.skin_weights.resize(out.vertices.size());
  for (size_t i = 0; i < out.vertices.size(); ++i) {
    std::vector<double> dist(segments.size());
    double dmin = 1e300;
    for (size_t s = 0; s < segments.size(); ++s) {
      dist[s] = seg_distance(out.vertices[i], segments[s].a, segments[s].b);
      dmin = std::min(dmin, dist[s]);
    }
    std::vector<double> per_joint(static_cast<size_t>(rig.joint_count()), 0.0);
    for (size_t s = 0; s < segments.size(); ++s) {
      const double e = (dist[s] - dmin) / sigma;
      per_joint[static_cast<size_t>(segments[s].owner)] = std::max(per_joint[static_cast<size_t>(segments[s].owner)], std::exp(-e * e));
    }
    std::vector<SkinInfluence> infl;
    for (int j = 0; j < rig.joint_count(); ++j) {
      if (per_joint[static_cast<size_t>(j)] > 0.02) infl.push_back({j, per_joint[static_cast<size_t>(j)]});
    }
    std::sort(infl.begin(), infl.end(), [](const auto& a, const auto& b) { return a.weight > b.weight || (a.weight == b.weight && a.joint < b.joint); });
    if (infl.size() > 3) infl.resize(3);
    double sum = 0.0;
    for (const auto& w : infl) sum += w.weight;
    for (auto& w : infl) w.weight /= sum;
    out.skin_weights[i] = std::move(infl);
  }
  return out;
}

}  // namespace perfcap
