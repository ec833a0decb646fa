#pragma once

#include <array>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace perfcap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Quat = Eigen::Quaterniond;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

// Rodrigues exponential map for an axis-angle vector.
Mat3 exp_so3(const Vec3& r);

// Inverse of exp_so3; returns the axis-angle vector with angle in [0, pi].
Vec3 log_so3(const Mat3& R);

// Left Jacobian of SO(3): exp(r + dr) ~= exp(J_l(r) dr) exp(r).
Mat3 left_jacobian_so3(const Vec3& r);

// d(exp(r) p)/dr as a 3x3 matrix.
inline Mat3 rotate_point_derivative(const Vec3& r, const Vec3& rotated_point) {
  return -skew(rotated_point) * left_jacobian_so3(r);
}

inline Mat3 axis_rotation(const Vec3& unit_axis, double angle) {
  return Eigen::AngleAxisd(angle, unit_axis).toRotationMatrix();
}

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform operator*(const RigidTransform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
  RigidTransform inverse() const {
    Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
};

// Unit dual quaternion q = real + eps * dual encoding a rigid transform.
// Components are stored (w, x, y, z) so that blending is plain vector math.
struct DualQuat {
  Eigen::Vector4d real = Eigen::Vector4d(1, 0, 0, 0);
  Eigen::Vector4d dual = Eigen::Vector4d::Zero();

  static DualQuat from_transform(const RigidTransform& t);
};

// Hamilton product for (w, x, y, z) quaternions.
inline Eigen::Vector4d quat_mul(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

inline Eigen::Vector4d quat_from_matrix(const Mat3& R) {
  Quat q(R);
  q.normalize();
  return {q.w(), q.x(), q.y(), q.z()};
}

// Axis-angle vector from a (not necessarily unit) quaternion in (w, x, y, z).
Vec3 quat_to_axis_angle(const Eigen::Vector4d& q);
Eigen::Vector4d axis_angle_to_quat(const Vec3& r);

}  // namespace perfcap
