#pragma once

// Rotation algebra for pose parameters: axis-angle, rotation matrices and the
// continuous 6D representation (first two matrix columns), plus the geodesic
// angle used by the Angle Error metric.

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace umind::rotgeom {

using AxisAngle = Eigen::Vector3d;
using RotationMatrix = Eigen::Matrix3d;
// Column-major: (c0.x, c0.y, c0.z, c1.x, c1.y, c1.z).
using Rep6D = Eigen::Matrix<double, 6, 1>;

inline constexpr double kRotationTolerance = 1e-6;
inline constexpr double kDegenerateNorm = 1e-8;

// Orthonormality (max-abs entry of R*R^T - I) and det(R) = 1, both within tol.
bool is_rotation(const Eigen::Matrix3d& r, double tol = kRotationTolerance);

RotationMatrix axis_angle_to_matrix(const AxisAngle& a);
// Inverse of axis_angle_to_matrix with the angle in [0, pi].
AxisAngle matrix_to_axis_angle(const RotationMatrix& r);
// Maps an axis-angle vector onto the equivalent one with magnitude in [0, pi].
AxisAngle canonicalize(const AxisAngle& a);

Rep6D matrix_to_6d(const RotationMatrix& r);
// Gram-Schmidt recovery; accepts non-orthonormal 6D vectors.
RotationMatrix six_d_to_matrix(const Rep6D& v);

// Angle of R1^T R2 in [0, pi]. Symmetric, and exactly zero for identical inputs.
double geodesic_angle(const RotationMatrix& r1, const RotationMatrix& r2);

// Time-major per-joint 6D rotations sampled at a fixed frame rate.
// Row t holds joints 0..J-1, six values each.
class PoseSequence {
 public:
  using Storage =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  PoseSequence() = default;
  // Every joint at the identity rotation.
  PoseSequence(int frames, int joints, double fps);
  PoseSequence(Storage data, int joints, double fps);

  int frames() const { return static_cast<int>(data_.rows()); }
  int joints() const { return joints_; }
  double fps() const { return fps_; }
  double duration() const { return frames() / fps_; }

  Rep6D at(int frame, int joint) const;
  void set(int frame, int joint, const Rep6D& v);
  RotationMatrix rotation(int frame, int joint) const;

  const Storage& data() const { return data_; }
  Storage& data() { return data_; }

  // Frames [begin, end).
  PoseSequence slice(int begin, int end) const;

  bool operator==(const PoseSequence& other) const;

 private:
  Storage data_;
  int joints_ = 0;
  double fps_ = 0.0;
};

// Mean geodesic angle over all frame x joint pairs.
double pose_angle_error(const PoseSequence& pred, const PoseSequence& ref);

}  // namespace umind::rotgeom
