#pragma once

#include <random>
#include <vector>

#include "perfcap/detections.hpp"
#include "perfcap/kinematics.hpp"

namespace perfcap {

/// Per-parameter trajectories p(f) = base_p + sum_k coeffs(p, k) cos(pi (2f+1) k / (2N)),
/// k = 0..K-1, over N frames. Such trajectories lie in the span of the K
/// lowest DCT-II rows of length N.
struct MotionSpec {
  int frames = 50;
  VecX base;    // dof
  MatX coeffs;  // dof x K
};

/// Random in-bounds motion: angles oscillate around interior points of their
/// ranges, the root drifts slowly at `depth` meters in front of the camera.
MotionSpec random_motion(const SkeletonRig& rig, int frames, int K, std::mt19937& rng, double amplitude = 0.25,
                         double depth = 4.0);

/// Evaluates the spec; throws InputError listing frames that leave the angle bounds.
std::vector<SkeletonPose> generate_motion(const SkeletonRig& rig, const MotionSpec& spec);

struct NoiseSpec {
  double sigma_2d = 0.0;  // pixels
  double sigma_3d = 0.0;  // meters, before normalization
};

/// d2d = projection + N(0, sigma_2d); d3d = (root-relative joints + N(0, sigma_3d))
/// divided by the rig's average bone length. All confidences 1.
std::vector<FrameDetections> synth_detections(const SkeletonRig& rig, const Camera& cam,
                                              const std::vector<SkeletonPose>& poses, const NoiseSpec& noise,
                                              std::mt19937& rng);

/// Closed body surface for a rig: union of capsules around the bones plus a
/// head, hands and feet, meshed by marching tetrahedra with grid step
/// `cell` (meters). Skinning weights fall off with distance to the bones.
ActorTemplate capsule_template(const SkeletonRig& rig, double cell = 0.03);

/// Default synthetic camera: 512 x 512, f = 800 px, centered principal point.
Camera synth_camera();

}  // namespace perfcap
