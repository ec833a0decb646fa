#include "perfcap/batchpose.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "perfcap/error.hpp"

namespace perfcap {

DctSubspace dct_basis(int batch_len, int K) {
  if (K < 1) throw InputError("DCT subspace dimension must be positive");
  if (batch_len < K) {
    throw InputError("batch length " + std::to_string(batch_len) + " is shorter than the DCT dimension " + std::to_string(K));
  }
  DctSubspace sub;
  sub.basis.resize(K, batch_len);
  const double n = batch_len;
  for (int k = 0; k < K; ++k) {
    const double c = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < batch_len; ++i) {
      sub.basis(k, i) = c * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * n));
    }
  }
  sub.projector = MatX::Identity(batch_len, batch_len) - sub.basis.transpose() * sub.basis;
  return sub;
}

VecX LambdaWeights::diagonal(int dof) const {
  VecX d(dof);
  for (int i = 0; i < dof; ++i) d[i] = i < 3 ? translation : (i < 6 ? rotation : angles);
  return d;
}

VecX stack_poses(const std::vector<SkeletonPose>& poses) {
  if (poses.empty()) return {};
  const int dof = poses[0].dof();
  VecX x(static_cast<Eigen::Index>(poses.size()) * dof);
  for (size_t f = 0; f < poses.size(); ++f) x.segment(static_cast<Eigen::Index>(f) * dof, dof) = poses[f].flatten();
  return x;
}

std::vector<SkeletonPose> unstack_poses(const VecX& x, int frames, int dof) {
  std::vector<SkeletonPose> out;
  out.reserve(static_cast<size_t>(frames));
  for (int f = 0; f < frames; ++f) out.push_back(SkeletonPose::from_flat(VecX(x.segment(static_cast<Eigen::Index>(f) * dof, dof))));
  return out;
}

BoxConstraints angle_box(const SkeletonRig& rig, int frames) {
  const int dof = rig.dof();
  BoxConstraints box = BoxConstraints::none(frames * dof);
  const auto bounds = rig.angle_bounds();
  for (int f = 0; f < frames; ++f) {
    for (int a = 0; a < rig.angle_count(); ++a) {
      const auto& b = bounds[static_cast<size_t>(a)];
      box.set(f * dof + kRootDof + a, b.lower, b.upper);
    }
  }
  return box;
}

namespace {

std::vector<int> frame_parameters(int slot, int dof) {
  std::vector<int> p(static_cast<size_t>(dof));
  for (int i = 0; i < dof; ++i) p[static_cast<size_t>(i)] = slot * dof + i;
  return p;
}

SkeletonPose pose_at(const VecX& x, int slot, int dof) {
  return SkeletonPose::from_flat(std::span<const double>(x.data() + static_cast<Eigen::Index>(slot) * dof, static_cast<size_t>(dof)));
}

void check_batch(const Batch& batch, const std::vector<FrameDetections>& dets) {
  if (batch.size() != static_cast<int>(batch.poses.size())) throw InputError("batch pose count does not match its frame range");
  if (batch.f_start < 0 || batch.f_end >= static_cast<int>(dets.size())) throw InputError("batch extends past the detections");
}

}  // namespace

ResidualBlock make_2d_block(const SkeletonRig& rig, const Camera& cam, const FrameDetections& det, int frame_slot,
                            double weight) {
  const int dof = rig.dof();
  const int nj = rig.joint_count();
  ResidualBlock b;
  b.name = "E_2d frame " + std::to_string(det.frame);
  b.parameters = frame_parameters(frame_slot, dof);
  b.num_residuals = 2 * nj;
  b.weight = weight;
  b.evaluate = [&rig, cam, det, frame_slot, dof, nj](const VecX& x, VecX& r, MatX* J) {
    const SkeletonPose pose = pose_at(x, frame_slot, dof);
    const auto world = forward_kinematics(rig, pose);
    std::vector<ParameterTwist> twists;
    if (J) twists = parameter_twists(rig, pose, world);
    for (int j = 0; j < nj; ++j) {
      const auto s = static_cast<size_t>(j);
      if (det.c2d[s] <= 0.0) continue;
      Eigen::Matrix<double, 2, 3> dp;
      const Vec2 px = project_guarded(cam, world[s].translation, J ? &dp : nullptr);
      r.segment<2>(2 * j) = px - det.d2d[s];
      if (J) J->middleRows<2>(2 * j) = dp * joint_position_jacobian(rig, world, twists, j);
    }
  };
  return b;
}

ResidualBlock make_3d_block(const SkeletonRig& rig, const FrameDetections& det, int frame_slot, double weight,
                            double length_unit) {
  const int dof = rig.dof();
  const int nj = rig.joint_count();
  ResidualBlock b;
  b.name = "E_3d frame " + std::to_string(det.frame);
  b.parameters = frame_parameters(frame_slot, dof);
  b.num_residuals = 3 * nj;
  b.weight = weight;
  b.evaluate = [&rig, det, frame_slot, dof, nj, length_unit](const VecX& x, VecX& r, MatX* J) {
    const SkeletonPose pose = pose_at(x, frame_slot, dof);
    const auto world = forward_kinematics(rig, pose);
    std::vector<ParameterTwist> twists;
    if (J) twists = parameter_twists(rig, pose, world);
    for (int j = 0; j < nj; ++j) {
      const auto s = static_cast<size_t>(j);
      if (det.c3d[s] <= 0.0) continue;
      r.segment<3>(3 * j) = length_unit * (world[s].translation - (det.d3d[s] + pose.translation));
      if (J) {
        auto rows = J->middleRows<3>(3 * j);
        rows = length_unit * joint_position_jacobian(rig, world, twists, j);
        rows.leftCols<3>() -= length_unit * Mat3::Identity();
      }
    }
  };
  return b;
}

std::vector<ResidualBlock> make_dct_blocks(const DctSubspace& sub, const VecX& lambda_diag, int frames, int dof,
                                           double weight) {
  if (sub.projector.rows() != frames) throw InputError("DCT projector size does not match the batch");
  std::vector<ResidualBlock> blocks;
  blocks.reserve(static_cast<size_t>(dof));
  for (int p = 0; p < dof; ++p) {
    ResidualBlock b;
    b.name = "E_d parameter " + std::to_string(p);
    for (int f = 0; f < frames; ++f) b.parameters.push_back(f * dof + p);
    b.num_residuals = frames;
    b.weight = weight;
    const MatX scaled = lambda_diag[p] * sub.projector;
    b.evaluate = [scaled, frames, dof, p](const VecX& x, VecX& r, MatX* J) {
      VecX traj(frames);
      for (int f = 0; f < frames; ++f) traj[f] = x[f * dof + p];
      r = scaled * traj;  // projector is symmetric: row of S P equals P s
      if (J) *J = scaled;
    };
    blocks.push_back(std::move(b));
  }
  return blocks;
}

double energy_d(const Batch& batch, const LambdaWeights& lambda, const DctSubspace& sub) {
  if (batch.poses.empty()) return 0.0;
  const int dof = batch.poses[0].dof();
  const int n = static_cast<int>(batch.poses.size());
  MatX S(dof, n);
  for (int f = 0; f < n; ++f) S.col(f) = batch.poses[static_cast<size_t>(f)].flatten();
  const VecX lam = lambda.diagonal(dof);
  return (lam.asDiagonal() * S * sub.projector).squaredNorm() / n;
}

double energy_2d(const Batch& batch, const std::vector<FrameDetections>& dets, const SkeletonRig& rig,
                 const Camera& cam) {
  check_batch(batch, dets);
  const VecX x = stack_poses(batch.poses);
  const double w = 1.0 / (batch.size() * rig.joint_count());
  double e = 0.0;
  for (int f = 0; f < batch.size(); ++f) {
    const auto blk = make_2d_block(rig, cam, dets[static_cast<size_t>(batch.f_start + f)], f, w);
    VecX r = VecX::Zero(blk.num_residuals);
    blk.evaluate(x, r, nullptr);
    e += w * r.squaredNorm();
  }
  return e;
}

double energy_3d(const Batch& batch, const std::vector<FrameDetections>& dets, const SkeletonRig& rig,
                 double length_unit) {
  check_batch(batch, dets);
  const VecX x = stack_poses(batch.poses);
  const double base = 1.0 / (batch.size() * rig.joint_count());
  double e = 0.0;
  for (int f = 0; f < batch.size(); ++f) {
    const double gate = batch.gates.empty() ? 1.0 : batch.gates[static_cast<size_t>(f)];
    if (gate == 0.0) continue;
    const auto blk = make_3d_block(rig, dets[static_cast<size_t>(batch.f_start + f)], f, base * gate, length_unit);
    VecX r = VecX::Zero(blk.num_residuals);
    blk.evaluate(x, r, nullptr);
    e += blk.weight * r.squaredNorm();
  }
  return e;
}

Vec3 initial_translation(const FrameDetections& det, const SkeletonRig& rig, const Camera& cam) {
  const int nj = rig.joint_count();
  Eigen::MatrixXd A(2 * nj, 3);
  VecX b(2 * nj);
  int rows = 0;
  for (int j = 0; j < nj; ++j) {
    const auto s = static_cast<size_t>(j);
    if (det.c2d[s] <= 0.0 || det.c3d[s] <= 0.0) continue;
    const double du = det.d2d[s].x() - cam.cx, dv = det.d2d[s].y() - cam.cy;
    const Vec3& q = det.d3d[s];
    A.row(rows) << cam.fx, 0.0, -du;
    b[rows++] = du * q.z() - cam.fx * q.x();
    A.row(rows) << 0.0, cam.fy, -dv;
    b[rows++] = dv * q.z() - cam.fy * q.y();
  }
  if (rows >= 6) {
    const auto As = A.topRows(rows);
    Eigen::JacobiSVD<MatX> svd(As, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv[2] > 1e-9 * sv[0]) {
      const Vec3 t = svd.solve(b.head(rows));
      bool in_front = t.allFinite();
      for (int j = 0; j < nj && in_front; ++j) {
        const auto s = static_cast<size_t>(j);
        if (det.c3d[s] > 0.0 && !(det.d3d[s].z() + t.z() > 0.05)) in_front = false;
      }
      if (in_front) return t;
    }
  }
  // Height ratio: depth = f * skeleton height / detected pixel height.
  const auto rest = rig.rest_positions();
  double ymin = 1e300, ymax = -1e300;
  for (const auto& p : rest) {
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  }
  double vmin = 1e300, vmax = -1e300;
  Vec2 mean = Vec2::Zero();
  int count = 0;
  for (int j = 0; j < nj; ++j) {
    const auto s = static_cast<size_t>(j);
    if (det.c2d[s] <= 0.0) continue;
    vmin = std::min(vmin, det.d2d[s].y());
    vmax = std::max(vmax, det.d2d[s].y());
    mean += det.d2d[s];
    ++count;
  }
  if (count == 0) return Vec3(0.0, 0.0, 3.0);
  const double pixel_height = vmax - vmin;
  const double depth = pixel_height > 1.0 ? cam.fy * (ymax - ymin) / pixel_height : 3.0;
  const Vec2 anchor = det.c2d[0] > 0.0 ? det.d2d[0] : Vec2(mean / count);
  return {(anchor.x() - cam.cx) * depth / cam.fx, (anchor.y() - cam.cy) * depth / cam.fy, depth};
}

Vec3 initial_rotation(const FrameDetections& det, const SkeletonRig& rig) {
  const auto rest = rig.rest_positions();
  std::vector<int> ids;
  for (const char* name : {"pelvis", "neck", "l_hip", "r_hip", "l_shoulder", "r_shoulder"}) {
    const int j = rig.find_joint(name);
    if (j >= 0 && det.c3d[static_cast<size_t>(j)] > 0.0) ids.push_back(j);
  }
  if (ids.size() < 3) {
    ids.clear();
    for (int j = 0; j < rig.joint_count(); ++j) {
      if (det.c3d[static_cast<size_t>(j)] > 0.0) ids.push_back(j);
    }
  }
  if (ids.size() < 3) return Vec3::Zero();
  Vec3 cp = Vec3::Zero(), cq = Vec3::Zero();
  for (int j : ids) {
    cp += rest[static_cast<size_t>(j)];
    cq += det.d3d[static_cast<size_t>(j)];
  }
  cp /= static_cast<double>(ids.size());
  cq /= static_cast<double>(ids.size());
  Mat3 H = Mat3::Zero();
  for (int j : ids) H += (rest[static_cast<size_t>(j)] - cp) * (det.d3d[static_cast<size_t>(j)] - cq).transpose();
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()[1] < 1e-9 * std::max(1.0, svd.singularValues()[0])) return Vec3::Zero();
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Mat3 R = svd.matrixV() * D * svd.matrixU().transpose();
  return log_so3(R);
}

InitResult init_poses(const std::vector<FrameDetections>& dets, const SkeletonRig& rig, const Camera& cam,
                      const BatchOptions& opts) {
  InitResult out;
  const int nj = rig.joint_count();
  for (size_t f = 0; f < dets.size(); ++f) {
    const auto& det = dets[f];
    const bool any = std::any_of(det.c2d.begin(), det.c2d.end(), [](double c) { return c > 0.0; }) ||
                     std::any_of(det.c3d.begin(), det.c3d.end(), [](double c) { return c > 0.0; });
    if (!any) {
      out.poses.push_back(SkeletonPose::rest(rig));
      out.flags.push_back("frame " + std::to_string(f) + ": no confident detections, rest pose used");
      continue;
    }
    try {
      SkeletonPose start = SkeletonPose::rest(rig);
      start.rotation = initial_rotation(det, rig);
      start.translation = initial_translation(det, rig, cam);
      clamp_to_bounds(rig, start);
      VecX x = start.flatten();
      // Root-relative 3D terms leave depth to E_2d alone; keep it near the
      // closed-form estimate so contradictory detections cannot run off.
      BoxConstraints box = angle_box(rig, 1);
      if (start.translation.z() > 0.0) box.set(2, 0.25 * start.translation.z(), 4.0 * start.translation.z());
      std::vector<ResidualBlock> blocks;
      blocks.push_back(make_2d_block(rig, cam, det, 0, 1.0 / nj));
      blocks.push_back(make_3d_block(rig, det, 0, opts.w_3d / nj, opts.length_unit));
      SolverOptions so = opts.solver;
      so.max_iters = std::max(so.max_iters, 100);
      lm_minimize(blocks, x, box, so);
      if (!x.allFinite()) throw RuntimeFailure("non-finite pose");
      out.poses.push_back(SkeletonPose::from_flat(x));
    } catch (const std::exception& e) {
      out.poses.push_back(f == 0 ? SkeletonPose::rest(rig) : out.poses.back());
      out.flags.push_back("frame " + std::to_string(f) + ": initialization failed (" + e.what() + "), previous result used");
    }
  }
  return out;
}

namespace {

std::vector<ResidualBlock> batch_blocks(const Batch& batch, const std::vector<FrameDetections>& dets,
                                        const SkeletonRig& rig, const Camera& cam, const BatchOptions& opts,
                                        const DctSubspace& sub) {
  const int n = batch.size();
  const double base = 1.0 / (n * rig.joint_count());
  std::vector<ResidualBlock> blocks;
  for (int f = 0; f < n; ++f) {
    const auto& det = dets[static_cast<size_t>(batch.f_start + f)];
    blocks.push_back(make_2d_block(rig, cam, det, f, base));
    const double gate = batch.gates.empty() ? 1.0 : batch.gates[static_cast<size_t>(f)];
    if (gate > 0.0 && opts.w_3d > 0.0) blocks.push_back(make_3d_block(rig, det, f, opts.w_3d * gate * base, opts.length_unit));
  }
  if (opts.w_d > 0.0) {
    auto d = make_dct_blocks(sub, opts.lambda.diagonal(rig.dof()), n, rig.dof(), opts.w_d / n);
    std::move(d.begin(), d.end(), std::back_inserter(blocks));
  }
  return blocks;
}

}  // namespace

double batch_objective(const Batch& batch, const std::vector<FrameDetections>& dets, const SkeletonRig& rig,
                       const Camera& cam, const BatchOptions& opts) {
  check_batch(batch, dets);
  const auto sub = dct_basis(batch.size(), opts.dct_k);
  return evaluate_objective(batch_blocks(batch, dets, rig, cam, opts, sub), stack_poses(batch.poses));
}

BatchResult optimize_batch(const Batch& init, const std::vector<FrameDetections>& dets, const SkeletonRig& rig,
                           const Camera& cam, const BatchOptions& opts) {
  check_batch(init, dets);
  const int n = init.size();
  const auto sub = dct_basis(n, opts.dct_k);
  const auto blocks = batch_blocks(init, dets, rig, cam, opts, sub);
  VecX x = stack_poses(init.poses);
  BatchResult res;
  res.report = lm_minimize(blocks, x, angle_box(rig, n), opts.solver);
  res.initial_objective = res.report.initial_objective;
  res.final_objective = res.report.final_objective;
  res.batch = init;
  res.batch.poses = unstack_poses(x, n, rig.dof());
  return res;
}

std::vector<FrameRange> plan_batches(int num_frames, int size, int overlap, int K) {
  if (num_frames <= 0) throw InputError("no frames to partition");
  if (size < K) throw InputError("batch size must be at least the DCT dimension");
  if (overlap < 1 || 2 * overlap > size) throw InputError("batch overlap must be in [1, size/2]");
  if (num_frames < K) {
    throw InputError("sequence of " + std::to_string(num_frames) + " frames is shorter than the DCT dimension " + std::to_string(K));
  }
  std::vector<FrameRange> out;
  int start = 0;
  while (true) {
    const int end = std::min(start + size - 1, num_frames - 1);
    FrameRange r{start, end};
    if (end - start + 1 < K) r.start = end - K + 1;
    out.push_back(r);
    if (end == num_frames - 1) break;
    start = end - overlap + 1;
  }
  return out;
}

double blend_scalar(double a, double b, double t) {
  if (t <= 0.0) return a;
  if (t >= 1.0) return b;
  if (a == b) return a;
  const double v = a + t * (b - a);
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

Vec3 blend_rotation(const Vec3& a, const Vec3& b, double t) {
  if (t <= 0.0 || a == b) return a;
  if (t >= 1.0) return b;
  Quat qa(Eigen::AngleAxisd(a.norm(), a.norm() > 0 ? Vec3(a.normalized()) : Vec3::UnitX()));
  Quat qb(Eigen::AngleAxisd(b.norm(), b.norm() > 0 ? Vec3(b.normalized()) : Vec3::UnitX()));
  if (qa.dot(qb) < 0.0) qb.coeffs() = -qb.coeffs();
  const Quat q = qa.slerp(t, qb);
  return quat_to_axis_angle(Eigen::Vector4d(q.w(), q.x(), q.y(), q.z()));
}

std::vector<SkeletonPose> partition_and_blend(int num_frames, const std::vector<Batch>& batches) {
  if (batches.empty()) throw InputError("no batches to blend");
  std::vector<const Batch*> order;
  for (const auto& b : batches) {
    if (b.size() != static_cast<int>(b.poses.size())) throw InputError("batch pose count does not match its frame range");
    order.push_back(&b);
  }
  std::stable_sort(order.begin(), order.end(), [](const Batch* a, const Batch* b) { return a->f_start < b->f_start; });
  if (order.front()->f_start != 0) throw InputError("coverage gap: frames before " + std::to_string(order.front()->f_start));
  for (size_t k = 1; k < order.size(); ++k) {
    if (order[k]->f_start > order[k - 1]->f_end + 1) {
      throw InputError("coverage gap at frame " + std::to_string(order[k - 1]->f_end + 1));
    }
    if (order[k]->f_end <= order[k - 1]->f_end) throw InputError("batch nested inside another batch");
    if (k >= 2 && order[k]->f_start <= order[k - 2]->f_end) throw InputError("frame covered by more than two batches");
  }
  if (order.back()->f_end < num_frames - 1) throw InputError("coverage gap at frame " + std::to_string(order.back()->f_end + 1));

  std::vector<SkeletonPose> out(static_cast<size_t>(num_frames));
  for (int f = 0; f < num_frames; ++f) {
    const Batch* first = nullptr;
    const Batch* second = nullptr;
    for (const Batch* b : order) {
      if (f < b->f_start || f > b->f_end) continue;
      (first ? second : first) = b;
    }
    const SkeletonPose& a = first->poses[static_cast<size_t>(f - first->f_start)];
    if (!second) {
      out[static_cast<size_t>(f)] = a;
      continue;
    }
    const SkeletonPose& b = second->poses[static_cast<size_t>(f - second->f_start)];
    const int L = first->f_end - second->f_start + 1;
    const int i = f - second->f_start;
    const double t = L > 1 ? static_cast<double>(i) / (L - 1) : 0.0;  // weight of the later batch
    SkeletonPose p = a;
    for (int c = 0; c < 3; ++c) p.translation[c] = blend_scalar(a.translation[c], b.translation[c], t);
    p.rotation = blend_rotation(a.rotation, b.rotation, t);
    for (Eigen::Index c = 0; c < p.angles.size(); ++c) p.angles[c] = blend_scalar(a.angles[c], b.angles[c], t);
    out[static_cast<size_t>(f)] = p;
  }
  return out;
}

}  // namespace perfcap
