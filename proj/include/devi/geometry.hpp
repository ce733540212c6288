#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "devi/errors.hpp"

namespace devi {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

/// Unit quaternion on SO(3). Normalized after every operation; q and -q
/// denote the same rotation.
class Rotation {
 public:
  Rotation() : q_(1, 0, 0, 0) {}
  Rotation(double w, double x, double y, double z) : q_(w, x, y, z) {
    if (!q_.coeffs().allFinite()) throw NonFiniteInput("quaternion");
    q_.normalize();
  }
  explicit Rotation(const Eigen::Quaterniond& q) : q_(q) { q_.normalize(); }

  static Rotation identity() { return Rotation(); }

  static Rotation from_axis_angle(const Vec3& v) {
    if (!v.allFinite()) throw NonFiniteInput("axis-angle");
    const double angle = v.norm();
    if (angle < 1e-12) {
      // sin(a/2)/a -> 1/2 as a -> 0
      return Rotation(Eigen::Quaterniond(1.0, 0.5 * v.x(), 0.5 * v.y(), 0.5 * v.z()));
    }
    const double s = std::sin(0.5 * angle) / angle;
    return Rotation(Eigen::Quaterniond(std::cos(0.5 * angle), s * v.x(), s * v.y(), s * v.z()));
  }

  static Rotation from_matrix(const Mat3& m) { return Rotation(Eigen::Quaterniond(m)); }

  /// Log map; angle in [0, pi].
  Vec3 to_axis_angle() const {
    Eigen::Quaterniond q = q_;
    if (q.w() < 0) q.coeffs() = -q.coeffs();
    const double n = q.vec().norm();
    const double angle = 2.0 * std::atan2(n, q.w());
    if (n < 1e-12) return 2.0 * q.vec();
    return (angle / n) * q.vec();
  }

  Mat3 matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quat() const { return q_; }

  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }

  Rotation operator*(const Rotation& o) const { return Rotation(q_ * o.q_); }
  Vec3 operator*(const Vec3& p) const { return q_ * p; }
  Rotation inverse() const { return Rotation(q_.conjugate()); }

  /// Equality up to double cover.
  bool approx_equal(const Rotation& o, double tol = 1e-9) const {
    return std::abs(std::abs(q_.dot(o.q_)) - 1.0) < tol;
  }

  /// First two columns of the rotation matrix (the 6D representation).
  Eigen::Matrix<double, 6, 1> to_6d() const {
    const Mat3 m = matrix();
    Eigen::Matrix<double, 6, 1> r;
    r << m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1);
    return r;
  }

  static Rotation from_6d(const Eigen::Matrix<double, 6, 1>& r) {
    Vec3 a = r.head<3>(), b = r.tail<3>();
    a.normalize();
    b = (b - a.dot(b) * a).normalized();
    Mat3 m;
    m.col(0) = a;
    m.col(1) = b;
    m.col(2) = a.cross(b);
    return from_matrix(m);
  }

 private:
  Eigen::Quaterniond q_;
};

/// Angle of the relative rotation, in [0, pi]. Symmetric, zero iff a == b
/// up to sign.
inline double geodesic_distance(const Rotation& a, const Rotation& b) {
  const Eigen::Quaterniond r = a.quat().conjugate() * b.quat();
  return 2.0 * std::atan2(r.vec().norm(), std::abs(r.w()));
}

/// Pinhole camera. Default intrinsics follow f = W/2 with the principal
/// point at the image center. Extrinsics map world to camera:
/// c = R p + t, with +z forward, +x right, +y down in the image.
struct CameraModel {
  double f = 512.0;
  double cx = 512.0, cy = 288.0;
  int width = 1024, height = 576;
  Rotation rot;  // world-to-camera
  Vec3 trans = Vec3::Zero();

  CameraModel() = default;
  CameraModel(int W, int H)
      : f(W / 2.0), cx(W / 2.0), cy(H / 2.0), width(W), height(H) {}

  static CameraModel look_at(const Vec3& eye, const Vec3& target, int W, int H,
                             const Vec3& up = Vec3(0, 0, 1)) {
    CameraModel cam(W, H);
    const Vec3 fwd = (target - eye).normalized();
    Vec3 right = fwd.cross(up);
    if (right.norm() < 1e-9) right = fwd.cross(Vec3(0, 1, 0));
    right.normalize();
    const Vec3 down = fwd.cross(right).normalized();
    Mat3 R;
    R.row(0) = right;
    R.row(1) = down;
    R.row(2) = fwd;
    cam.rot = Rotation::from_matrix(R);
    cam.trans = -(R * eye);
    return cam;
  }

  Vec3 to_camera(const Vec3& p) const { return rot * p + trans; }

  bool inside_image(const Vec2& px) const {
    return px.x() >= 0 && px.x() <= width && px.y() >= 0 && px.y() <= height;
  }
};

constexpr double kMinCameraDepth = 1e-6;

/// Perspective projection to pixels. Throws BehindCamera when the point is
/// at or behind the image plane (camera-frame z <= 1e-6).
inline Vec2 project(const CameraModel& cam, const Vec3& world_point) {
  const Vec3 c = cam.to_camera(world_point);
  if (c.z() <= kMinCameraDepth) throw BehindCamera();
  return {cam.f * c.x() / c.z() + cam.cx, cam.f * c.y() / c.z() + cam.cy};
}

/// World point at camera-frame depth d on the ray through a pixel.
inline Vec3 back_project(const CameraModel& cam, const Vec2& px, double depth) {
  const Vec3 c((px.x() - cam.cx) / cam.f * depth, (px.y() - cam.cy) / cam.f * depth, depth);
  return cam.rot.inverse() * (c - cam.trans);
}

/// Mean over A of the squared distance to the nearest point of B (meters^2).
inline double one_sided_chamfer(const std::vector<Vec3>& A, const std::vector<Vec3>& B) {
  if (A.empty() || B.empty()) throw EmptySet("one_sided_chamfer");
  double acc = 0.0;
  for (const Vec3& a : A) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& b : B) best = std::min(best, (a - b).squaredNorm());
    acc += best;
  }
  return acc / static_cast<double>(A.size());
}

enum class JointLabel { Body, Hand };

struct Joint {
  std::string name;
  int parent = -1;            // -1 for the root
  Vec3 offset = Vec3::Zero(); // rest offset from parent, meters
  Vec3 limit_lo = Vec3::Constant(-3.14159265358979323846);
  Vec3 limit_hi = Vec3::Constant(3.14159265358979323846);
  JointLabel label = JointLabel::Body;
};

/// Articulated kinematic tree rooted at the pelvis (joint 0).
struct Skeleton {
  std::vector<Joint> joints;
  std::vector<int> fingertips;
  std::array<int, 2> wrists{-1, -1};  // left, right

  int size() const { return static_cast<int>(joints.size()); }

  void validate() const {
    if (joints.empty()) throw ShapeMismatch("skeleton has no joints");
    if (joints[0].parent != -1) throw ShapeMismatch("joint 0 must be the root");
    for (int j = 1; j < size(); ++j) {
      if (joints[j].parent < 0 || joints[j].parent >= j)
        throw ShapeMismatch("parents must precede children");
    }
    for (const Joint& j : joints)
      for (int a = 0; a < 3; ++a)
        if (j.limit_lo[a] > j.limit_hi[a]) throw ShapeMismatch("limit lo > hi");
    if (wrists[0] < 0 || wrists[1] < 0 || wrists[0] >= size() || wrists[1] >= size())
      throw ShapeMismatch("skeleton needs exactly 2 wrist ids");
    for (int f : fingertips)
      if (f < 0 || f >= size()) throw ShapeMismatch("fingertip id out of range");
  }

  bool is_ancestor(int anc, int j) const {
    while (j != -1) {
      if (j == anc) return true;
      j = joints[j].parent;
    }
    return false;
  }

  /// 0 = left, 1 = right, -1 = not under either wrist.
  int hand_side(int j) const {
    if (is_ancestor(wrists[0], j)) return 0;
    if (is_ancestor(wrists[1], j)) return 1;
    return -1;
  }

  std::vector<int> joints_with_label(JointLabel l) const {
    std::vector<int> out;
    for (int j = 0; j < size(); ++j)
      if (joints[j].label == l) out.push_back(j);
    return out;
  }

  /// Chain of joint ids from the root down to (and including) j.
  std::vector<int> chain_to(int j) const {
    std::vector<int> chain;
    for (int k = j; k != -1; k = joints[k].parent) chain.push_back(k);
    std::reverse(chain.begin(), chain.end());
    return chain;
  }
};

/// Root transform plus per-joint local rotations. local[0] is ignored by
/// forward kinematics: the root's world rotation is root_rot itself.
struct Pose {
  Vec3 root_pos = Vec3::Zero();
  Rotation root_rot;
  std::vector<Rotation> local;

  static Pose rest(const Skeleton& skel) {
    Pose p;
    p.local.assign(skel.joints.size(), Rotation());
    return p;
  }
};

struct JointTransform {
  Rotation rot;
  Vec3 pos;
};

inline std::vector<JointTransform> forward_kinematics(const Skeleton& skel, const Pose& pose) {
  const int J = skel.size();
  if (static_cast<int>(pose.local.size()) != J)
    throw ShapeMismatch("pose joint count != skeleton joint count");
  std::vector<JointTransform> world(J);
  world[0] = {pose.root_rot, pose.root_pos};
  for (int j = 1; j < J; ++j) {
    const int p = skel.joints[j].parent;
    world[j].rot = world[p].rot * pose.local[j];
    world[j].pos = world[p].pos + world[p].rot * skel.joints[j].offset;
  }
  return world;
}

inline std::vector<Vec3> joint_positions(const Skeleton& skel, const Pose& pose) {
  std::vector<Vec3> out;
  const auto world = forward_kinematics(skel, pose);
  out.reserve(world.size());
  for (const auto& t : world) out.push_back(t.pos);
  return out;
}

}  // namespace devi
