#pragma once

#include <string>
#include <vector>

#include "perfcap/detections.hpp"
#include "perfcap/kinematics.hpp"
#include "perfcap/solver.hpp"

namespace perfcap {

/// Lowest-frequency orthonormal DCT-II rows and the projector onto their
/// orthogonal complement.
struct DctSubspace {
  MatX basis;      // K x len
  MatX projector;  // len x len, I - basis^T basis
};

DctSubspace dct_basis(int batch_len, int K = 8);

/// Diagonal smoothness weights over (t, R, theta).
struct LambdaWeights {
  double translation = 1.0;
  double rotation = 600.0;
  double angles = 600.0;

  VecX diagonal(int dof) const;
};

/// Frames f_start..f_end (inclusive) with their poses and 3D gates w_f.
struct Batch {
  int f_start = 0;
  int f_end = -1;
  std::vector<SkeletonPose> poses;
  std::vector<double> gates;

  int size() const { return f_end - f_start + 1; }
};

struct BatchOptions {
  double w_3d = 0.1;
  double w_d = 50.0;
  LambdaWeights lambda;
  int dct_k = 8;
  /// Residual units per meter for the 3D term (1000: millimetres).
  double length_unit = 1000.0;
  SolverOptions solver{50, 1e-9, 1e-10, 1e-10, 1e-3, 1e16, 1};
};

/// (1/|B|) |Lambda S_B P|_F^2.
double energy_d(const Batch& batch, const LambdaWeights& lambda, const DctSubspace& sub);

/// Sum over frames and confident joints of |Pi(J_i) - d2d|^2 / (|B| N_d).
/// `dets` is indexed by absolute frame.
double energy_2d(const Batch& batch, const std::vector<FrameDetections>& dets, const SkeletonRig& rig,
                 const Camera& cam);

/// Sum over frames and confident joints of w_f |u (J_i - (d3d_i + t_f))|^2 / (|B| N_d),
/// u = length_unit; gates come from batch.gates.
double energy_3d(const Batch& batch, const std::vector<FrameDetections>& dets, const SkeletonRig& rig,
                 double length_unit = 1.0);

// Residual blocks over a parameter vector laid out as frame-major pose
// vectors: x[frame_slot * dof + p]. Block weights carry the 1/(|B| N_d) and
// term weights.
ResidualBlock make_2d_block(const SkeletonRig& rig, const Camera& cam, const FrameDetections& det, int frame_slot,
                            double weight);
ResidualBlock make_3d_block(const SkeletonRig& rig, const FrameDetections& det, int frame_slot, double weight,
                            double length_unit);
/// One block per pose parameter row.
std::vector<ResidualBlock> make_dct_blocks(const DctSubspace& sub, const VecX& lambda_diag, int frames, int dof,
                                           double weight);

BoxConstraints angle_box(const SkeletonRig& rig, int frames);
VecX stack_poses(const std::vector<SkeletonPose>& poses);
std::vector<SkeletonPose> unstack_poses(const VecX& x, int frames, int dof);

/// Root translation from 2D/3D detections: least squares on the
/// projection equations, with the height-ratio rule as fallback.
Vec3 initial_translation(const FrameDetections& det, const SkeletonRig& rig, const Camera& cam);
/// Root rotation aligning rest torso joints to the 3D detections.
Vec3 initial_rotation(const FrameDetections& det, const SkeletonRig& rig);

struct InitResult {
  std::vector<SkeletonPose> poses;
  std::vector<std::string> flags;  // one entry per flagged frame
};

/// Independent per-frame solves of E_2d + w_3d E_3d (gates all 1).
InitResult init_poses(const std::vector<FrameDetections>& dets, const SkeletonRig& rig, const Camera& cam,
                      const BatchOptions& opts = {});

struct BatchResult {
  Batch batch;
  SolverReport report;
  double initial_objective = 0.0;
  double final_objective = 0.0;
};

/// Joint solve of E_2d + w_3d E_3d + w_d E_d over all frames of the batch.
BatchResult optimize_batch(const Batch& init, const std::vector<FrameDetections>& dets, const SkeletonRig& rig,
                           const Camera& cam, const BatchOptions& opts = {});

/// Total batch objective as minimized by optimize_batch.
double batch_objective(const Batch& batch, const std::vector<FrameDetections>& dets, const SkeletonRig& rig,
                       const Camera& cam, const BatchOptions& opts);

struct FrameRange {
  int start = 0;
  int end = -1;  // inclusive
};

/// Batches of `size` frames, consecutive ones sharing `overlap` frames; a
/// short tail batch is extended backward to at least K frames.
std::vector<FrameRange> plan_batches(int num_frames, int size = 50, int overlap = 10, int K = 8);

/// Stitches batch results into one sequence, blending overlaps with a linear
/// ramp (earlier batch weight (L-1-i)/(L-1) at overlap frame i).
std::vector<SkeletonPose> partition_and_blend(int num_frames, const std::vector<Batch>& batches);

/// Linear blend a + t (b - a) that returns a or b exactly at t = 0 or 1 and
/// never leaves [min(a,b), max(a,b)].
double blend_scalar(double a, double b, double t);
/// Shortest-arc interpolation between axis-angle rotations.
Vec3 blend_rotation(const Vec3& a, const Vec3& b, double t);

}  // namespace perfcap
