#include "umind/rotgeom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include "umind/error.hpp"

namespace umind::rotgeom {

bool is_rotation(const Eigen::Matrix3d& r, double tol) {
  if (!r.allFinite()) return false;
  const Eigen::Matrix3d gram = r * r.transpose() - Eigen::Matrix3d::Identity();
  if (gram.cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

RotationMatrix axis_angle_to_matrix(const AxisAngle& a) {
  require(a.allFinite(), ErrorCode::kInvalidArgument,
          "axis-angle vector must be finite");
  const double theta2 = a.squaredNorm();
  const double theta = std::sqrt(theta2);
  Eigen::Matrix3d k;
  k << 0.0, -a.z(), a.y(),
       a.z(), 0.0, -a.x(),
       -a.y(), a.x(), 0.0;
  double s, c;  // sin(t)/t and (1 - cos(t))/t^2
  if (theta < 1e-4) {
    s = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    c = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
  } else {
    s = std::sin(theta) / theta;
    c = (1.0 - std::cos(theta)) / theta2;
  }
  return Eigen::Matrix3d::Identity() + s * k + c * k * k;
}

AxisAngle matrix_to_axis_angle(const RotationMatrix& r) {
  require(is_rotation(r), ErrorCode::kInvalidArgument,
          "matrix is not a rotation");
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

AxisAngle canonicalize(const AxisAngle& a) {
  require(a.allFinite(), ErrorCode::kInvalidArgument,
          "axis-angle vector must be finite");
  const double theta = a.norm();
  if (theta <= std::numbers::pi) return a;
  double wrapped = std::fmod(theta, 2.0 * std::numbers::pi);
  Eigen::Vector3d axis = a / theta;
  if (wrapped > std::numbers::pi) {
    wrapped = 2.0 * std::numbers::pi - wrapped;
    axis = -axis;
  }
  return axis * wrapped;
}

Rep6D matrix_to_6d(const RotationMatrix& r) {
  require(is_rotation(r), ErrorCode::kInvalidArgument,
          "matrix is not orthonormal within tolerance");
  Rep6D v;
  v << r.col(0), r.col(1);
  return v;
}

RotationMatrix six_d_to_matrix(const Rep6D& v) {
  require(v.allFinite(), ErrorCode::kInvalidArgument, "6D vector must be finite");
  const Eigen::Vector3d a1 = v.head<3>();
  const Eigen::Vector3d a2 = v.tail<3>();
  const double n1 = a1.norm();
  if (n1 <= kDegenerateNorm) {
    throw Error(ErrorCode::kDegenerate6D, "first column has near-zero norm");
  }
  const Eigen::Vector3d b1 = a1 / n1;
  const Eigen::Vector3d u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (n2 <= kDegenerateNorm) {
    throw Error(ErrorCode::kDegenerate6D, "columns are parallel or second is zero");
  }
  const Eigen::Vector3d b2 = u2 / n2;
  RotationMatrix r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b1.cross(b2);
  return r;
}

namespace {

// Angle of R1^T R2 from the trace (cosine) and the skew part (sine). The
// sine term vanishes exactly when R1^T R2 is symmetric, e.g. for R1 == R2.
double relative_angle(const Eigen::Matrix3d& r1, const Eigen::Matrix3d& r2) {
  const Eigen::Matrix3d m = r1.transpose() * r2;
  const double cos2 = r1.cwiseProduct(r2).sum() - 1.0;  // 2 cos(theta)
  const Eigen::Vector3d skew(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0),
                             m(1, 0) - m(0, 1));           // 2 sin(theta) axis
  const double angle = std::atan2(skew.norm(), cos2);
  return std::clamp(angle, 0.0, std::numbers::pi);
}

}  // namespace

double geodesic_angle(const RotationMatrix& r1, const RotationMatrix& r2) {
  require(is_rotation(r1) && is_rotation(r2), ErrorCode::kInvalidArgument,
          "geodesic_angle expects rotation matrices");
  return relative_angle(r1, r2);
}

PoseSequence::PoseSequence(int frames, int joints, double fps)
    : joints_(joints), fps_(fps) {
  require(frames >= 0 && joints >= 1, ErrorCode::kInvalidArgument,
          "pose sequence needs frames >= 0 and joints >= 1");
  require(std::isfinite(fps) && fps > 0.0, ErrorCode::kInvalidArgument,
          "fps must be positive");
  data_.setZero(frames, joints * 6);
  for (int t = 0; t < frames; ++t) {
    for (int j = 0; j < joints; ++j) {
      data_(t, j * 6 + 0) = 1.0;
      data_(t, j * 6 + 4) = 1.0;
    }
  }
}

PoseSequence::PoseSequence(Storage data, int joints, double fps)
    : data_(std::move(data)), joints_(joints), fps_(fps) {
  require(joints >= 1 && data_.cols() == joints * 6, ErrorCode::kShapeMismatch,
          "pose data must have joints*6 columns");
  require(std::isfinite(fps) && fps > 0.0, ErrorCode::kInvalidArgument,
          "fps must be positive");
  require(data_.allFinite(), ErrorCode::kInvalidArgument,
          "pose data must be finite");
}

Rep6D PoseSequence::at(int frame, int joint) const {
  return data_.block<1, 6>(frame, joint * 6).transpose();
}

void PoseSequence::set(int frame, int joint, const Rep6D& v) {
  data_.block<1, 6>(frame, joint * 6) = v.transpose();
}

RotationMatrix PoseSequence::rotation(int frame, int joint) const {
  return six_d_to_matrix(at(frame, joint));
}

PoseSequence PoseSequence::slice(int begin, int end) const {
  require(0 <= begin && begin <= end && end <= frames(),
          ErrorCode::kInvalidArgument, "pose slice out of range");
  PoseSequence out;
  out.data_ = data_.middleRows(begin, end - begin);
  out.joints_ = joints_;
  out.fps_ = fps_;
  return out;
}

bool PoseSequence::operator==(const PoseSequence& other) const {
  return joints_ == other.joints_ && fps_ == other.fps_ &&
         data_.rows() == other.data_.rows() && data_ == other.data_;
}

double pose_angle_error(const PoseSequence& pred, const PoseSequence& ref) {
  if (pred.frames() != ref.frames() || pred.joints() != ref.joints() ||
      pred.fps() != ref.fps()) {
    throw Error(ErrorCode::kShapeMismatch,
                "pose_angle_error needs identical frames, joints and fps");
  }
  require(pred.frames() >= 1, ErrorCode::kShapeMismatch,
          "pose_angle_error needs at least one frame");
  double total = 0.0;
  for (int t = 0; t < pred.frames(); ++t) {
    for (int j = 0; j < pred.joints(); ++j) {
      total += geodesic_angle(pred.rotation(t, j), ref.rotation(t, j));
    }
  }
  return total / (static_cast<double>(pred.frames()) * pred.joints());
}

}  // namespace umind::rotgeom
