#include "perfcap/geometry.hpp"

namespace perfcap {

Mat3 exp_so3(const Vec3& r) {
  const double theta = r.norm();
  if (theta < 1e-12) return Mat3::Identity() + skew(r);
  return Eigen::AngleAxisd(theta, r / theta).toRotationMatrix();
}

Vec3 log_so3(const Mat3& R) {
  Eigen::AngleAxisd aa(R);
  return aa.axis() * aa.angle();
}

Mat3 left_jacobian_so3(const Vec3& r) {
  const double theta2 = r.squaredNorm();
  const Mat3 K = skew(r);
  if (theta2 < 1e-16) return Mat3::Identity() + 0.5 * K;
  const double theta = std::sqrt(theta2);
  const double a = (1.0 - std::cos(theta)) / theta2;
  const double b = (theta - std::sin(theta)) / (theta2 * theta);
  return Mat3::Identity() + a * K + b * K * K;
}

DualQuat DualQuat::from_transform(const RigidTransform& t) {
  DualQuat dq;
  dq.real = quat_from_matrix(t.rotation);
  const Eigen::Vector4d tq(0.0, t.translation.x(), t.translation.y(), t.translation.z());
  dq.dual = 0.5 * quat_mul(tq, dq.real);
  return dq;
}

Vec3 quat_to_axis_angle(const Eigen::Vector4d& q_in) {
  Eigen::Vector4d q = q_in.normalized();
  if (q[0] < 0) q = -q;
  const Vec3 v = q.tail<3>();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(s, q[0]);
  return v / s * angle;
}

Eigen::Vector4d axis_angle_to_quat(const Vec3& r) {
  const double theta = r.norm();
  if (theta < 1e-12) return {1.0, 0.5 * r.x(), 0.5 * r.y(), 0.5 * r.z()};
  const Vec3 axis = r / theta;
  const double s = std::sin(0.5 * theta);
  return {std::cos(0.5 * theta), axis.x() * s, axis.y() * s, axis.z() * s};
}

}  // namespace perfcap
