#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "perfcap/geometry.hpp"

namespace perfcap {

/// Number of joints in the default humanoid rig.
inline constexpr int kDefaultJointCount = 16;
/// Articulation angles of the default rig; together with t and R gives 33 DOF.
inline constexpr int kDefaultAngleCount = 27;
/// Root translation (3) + root axis-angle rotation (3).
inline constexpr int kRootDof = 6;

struct JointRecord {
  std::string name;
  int parent = -1;
  Vec3 offset = Vec3::Zero();  // rest offset from the parent joint (meters)
  std::vector<Vec3> axes;      // rotation axes in the rest frame, applied in order
};

struct AngleBounds {
  double lower = 0.0;
  double upper = 0.0;
};

/// Joint hierarchy with per-angle anatomical bounds.
///
/// Joints are stored parents-first: every joint's parent index is smaller than
/// its own, and joint 0 is the root. The root carries the global translation
/// and axis-angle rotation; the remaining articulation is a flat vector of
/// angles, one per rotation axis, ordered by joint then by axis.
class SkeletonRig {
 public:
  static constexpr int kNoParent = -1;

  SkeletonRig() = default;
  /// Validates the hierarchy, axis norms and bounds; throws InputError.
  SkeletonRig(std::vector<JointRecord> joints, std::vector<AngleBounds> bounds);

  int joint_count() const { return static_cast<int>(joints_.size()); }
  int angle_count() const { return static_cast<int>(bounds_.size()); }
  int dof() const { return kRootDof + angle_count(); }

  const JointRecord& joint(int i) const { return joints_[static_cast<size_t>(i)]; }
  std::span<const JointRecord> joints() const { return joints_; }
  std::span<const AngleBounds> angle_bounds() const { return bounds_; }

  /// Index of the joint's first angle within the angle vector.
  int first_angle(int joint) const { return first_angle_[static_cast<size_t>(joint)]; }
  /// Joint that owns a flattened pose parameter (root for t and R).
  int parameter_owner(int param) const { return param_owner_[static_cast<size_t>(param)]; }
  /// Rest distance between a joint and its parent (0 for the root).
  double bone_length(int joint) const { return bone_lengths_[static_cast<size_t>(joint)]; }
  double total_bone_length() const;
  /// True when `joint` lies in the subtree rooted at `ancestor` (inclusive).
  bool in_subtree(int ancestor, int joint) const {
    return subtree_[static_cast<size_t>(ancestor) * joints_.size() + static_cast<size_t>(joint)];
  }
  int find_joint(std::string_view name) const;
  std::vector<std::string> joint_names() const;
  std::vector<Vec3> rest_positions() const;

 private:
  std::vector<JointRecord> joints_;
  std::vector<AngleBounds> bounds_;
  std::vector<int> first_angle_;
  std::vector<int> param_owner_;
  std::vector<double> bone_lengths_;
  std::vector<bool> subtree_;
};

/// 16-joint humanoid (pelvis root, neck, arms, legs with toes), 27 angles.
/// Rest frame: x to the actor's left, y down, z away from a camera the actor
/// faces, so the identity root rotation is an upright actor facing the camera.
SkeletonRig default_rig();

struct SkeletonPose {
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();  // axis-angle
  VecX angles;

  static SkeletonPose rest(const SkeletonRig& rig);
  /// (t, R, theta) stacked; length 6 + angle count.
  VecX flatten() const;
  static SkeletonPose from_flat(std::span<const double> values);
  static SkeletonPose from_flat(const VecX& values) {
    return from_flat(std::span<const double>(values.data(), static_cast<size_t>(values.size())));
  }
  int dof() const { return kRootDof + static_cast<int>(angles.size()); }
};

/// Clamp every angle into its bounds.
void clamp_to_bounds(const SkeletonRig& rig, SkeletonPose& pose);
bool within_bounds(const SkeletonRig& rig, const SkeletonPose& pose, double tol = 0.0);

struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
};

inline constexpr double kMinDepth = 1e-6;

/// Full perspective projection; throws RuntimeFailure for z <= kMinDepth.
Vec2 project(const Camera& cam, const Vec3& p);

/// Projection with the depth clamped to kMinDepth, for use inside energies.
/// Optionally returns d(pixel)/d(point); the depth column is zero while clamped.
Vec2 project_guarded(const Camera& cam, const Vec3& p, Eigen::Matrix<double, 2, 3>* jacobian = nullptr,
                     bool* clamped = nullptr);

struct SkinInfluence {
  int joint = 0;
  double weight = 0.0;
};

struct ActorTemplate {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<std::vector<SkinInfluence>> skin_weights;

  /// Checks weight normalization, joint references and edge manifoldness.
  void validate(const SkeletonRig& rig) const;
};

/// World (camera-space) transforms of every joint.
std::vector<RigidTransform> forward_kinematics(const SkeletonRig& rig, const SkeletonPose& pose);
std::vector<Vec3> joint_positions(const SkeletonRig& rig, const SkeletonPose& pose);

/// Instantaneous motion induced by one pose parameter. A world point rigidly
/// attached to any joint in the parameter owner's subtree moves with velocity
/// angular x p + linear.
struct ParameterTwist {
  Vec3 angular = Vec3::Zero();
  Vec3 linear = Vec3::Zero();
};

std::vector<ParameterTwist> parameter_twists(const SkeletonRig& rig, const SkeletonPose& pose,
                                             std::span<const RigidTransform> world);

/// d(joint position)/d(flattened pose), 3 x dof.
Eigen::Matrix<double, 3, Eigen::Dynamic> joint_position_jacobian(const SkeletonRig& rig,
                                                                 std::span<const RigidTransform> world,
                                                                 std::span<const ParameterTwist> twists,
                                                                 int joint);

/// Dual quaternion skinning of the whole template.
std::vector<Vec3> skin_mesh(const ActorTemplate& actor, const SkeletonRig& rig, const SkeletonPose& pose);

/// Skins selected vertices and returns d(vertex)/d(pose) (3 x dof each).
struct SkinnedVertices {
  std::vector<Vec3> positions;
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> jacobians;
};
SkinnedVertices skin_vertices(const ActorTemplate& actor, const SkeletonRig& rig, const SkeletonPose& pose,
                              std::span<const int> vertex_ids, bool with_jacobian);

}  // namespace perfcap
