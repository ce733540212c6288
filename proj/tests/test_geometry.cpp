#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "devi/geometry.hpp"

using namespace devi;

namespace {

std::mt19937_64 rng(12345);

Rotation random_rotation() {
  std::normal_distribution<double> g(0, 1);
  return Rotation(g(rng), g(rng), g(rng), g(rng));
}

Vec3 random_vec(double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

TEST_CASE("rotation basics") {
  const Rotation q = random_rotation();
  REQUIRE(std::abs(q.quat().norm() - 1.0) < 1e-12);

  const Vec3 aa = q.to_axis_angle();
  const Rotation back = Rotation::from_axis_angle(aa);
  REQUIRE(q.approx_equal(back, 1e-9));

  const Rotation neg(-q.w(), -q.x(), -q.y(), -q.z());
  REQUIRE(q.approx_equal(neg));

  const Mat3 m = q.matrix();
  REQUIRE(q.approx_equal(Rotation::from_matrix(m), 1e-9));
  REQUIRE(q.approx_equal(Rotation::from_6d(q.to_6d()), 1e-9));
}

TEST_CASE("geodesic distance identity and antipode") {
  const Rotation q = random_rotation();
  REQUIRE(geodesic_distance(q, q) == Catch::Approx(0.0).margin(1e-12));
  const Rotation rz = Rotation::from_axis_angle(Vec3(0, 0, M_PI));
  REQUIRE(geodesic_distance(Rotation(), rz) == Catch::Approx(M_PI).margin(1e-12));
}

TEST_CASE("geodesic distance matches trace oracle") {
  for (int i = 0; i < 300; ++i) {
    const Rotation a = random_rotation(), b = random_rotation();
    const Mat3 rel = a.matrix().transpose() * b.matrix();
    const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
    REQUIRE(geodesic_distance(a, b) == Catch::Approx(std::acos(c)).margin(1e-9));
  }
}

TEST_CASE("geodesic triangle inequality") {
  for (int i = 0; i < 300; ++i) {
    const Rotation a = random_rotation(), b = random_rotation(), c = random_rotation();
    REQUIRE(geodesic_distance(a, c) <=
            geodesic_distance(a, b) + geodesic_distance(b, c) + 1e-8);
  }
}

TEST_CASE("default camera intrinsics follow f = W/2") {
  const CameraModel cam(1024, 576);
  REQUIRE(cam.f == 512.0);
  REQUIRE(cam.cx == 512.0);
  REQUIRE(cam.cy == 288.0);
}

TEST_CASE("projection of camera-frame points") {
  CameraModel cam(1024, 576);  // identity extrinsics: camera frame == world
  REQUIRE((project(cam, Vec3(0, 0, 1)) - Vec2(512, 288)).norm() < 1e-12);
  REQUIRE((project(cam, Vec3(1, 0, 1)) - Vec2(1024, 288)).norm() < 1e-12);
  REQUIRE_THROWS_AS(project(cam, Vec3(0, 0, -1)), BehindCamera);
  REQUIRE_THROWS_AS(project(cam, Vec3(0, 0, 0)), BehindCamera);
}

TEST_CASE("project then back_project round trip") {
  const CameraModel cam =
      CameraModel::look_at(Vec3(0.3, 2.0, 1.1), Vec3(0, 0.3, 0.9), 1024, 576);
  std::uniform_real_distribution<double> upx(0, 1024), upy(0, 576), ud(0.2, 5.0);
  for (int i = 0; i < 200; ++i) {
    const Vec2 px(upx(rng), upy(rng));
    const double depth = ud(rng);
    const Vec3 p = back_project(cam, px, depth);
    REQUIRE((project(cam, p) - px).norm() < 1e-6);
  }
}

TEST_CASE("one sided chamfer basics") {
  std::vector<Vec3> A = {{0, 0, 0}};
  std::vector<Vec3> B = {{1, 0, 0}, {0, 2, 0}};
  REQUIRE(one_sided_chamfer(A, B) == Catch::Approx(1.0));
  REQUIRE(one_sided_chamfer(B, B) == Catch::Approx(0.0));
  REQUIRE_THROWS_AS(one_sided_chamfer({}, B), EmptySet);
}

TEST_CASE("chamfer matches brute force oracle and is permutation invariant") {
  std::uniform_int_distribution<int> usize(1, 64);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<Vec3> A(usize(rng)), B(usize(rng));
    for (auto& v : A) v = random_vec(2.0);
    for (auto& v : B) v = random_vec(2.0);

    double oracle = 0;
    for (const Vec3& a : A) {
      double best = 1e300;
      for (const Vec3& b : B) best = std::min(best, (a - b).squaredNorm());
      oracle += best;
    }
    oracle /= A.size();
    REQUIRE(one_sided_chamfer(A, B) == Catch::Approx(oracle).margin(0.0));

    std::vector<Vec3> A2 = A, B2 = B;
    std::shuffle(A2.begin(), A2.end(), rng);
    std::shuffle(B2.begin(), B2.end(), rng);
    REQUIRE(one_sided_chamfer(A2, B2) == Catch::Approx(one_sided_chamfer(A, B)).margin(1e-12));
  }
}

namespace {

Skeleton chain_skeleton(int joints) {
  Skeleton s;
  for (int j = 0; j < joints; ++j) {
    Joint joint;
    joint.name = "j" + std::to_string(j);
    joint.parent = j - 1;
    joint.offset = j == 0 ? Vec3::Zero() : random_vec(0.4);
    s.joints.push_back(joint);
  }
  s.wrists = {0, joints - 1};
  return s;
}

Pose random_pose(const Skeleton& s) {
  Pose p = Pose::rest(s);
  p.root_pos = random_vec(1.0);
  p.root_rot = random_rotation();
  for (auto& r : p.local) r = random_rotation();
  return p;
}

}  // namespace

TEST_CASE("forward kinematics rest pose accumulates offsets") {
  const Skeleton s = chain_skeleton(5);
  const auto world = forward_kinematics(s, Pose::rest(s));
  Vec3 acc = Vec3::Zero();
  for (int j = 0; j < 5; ++j) {
    acc += s.joints[j].offset;
    REQUIRE((world[j].pos - acc).norm() < 1e-12);
    REQUIRE(world[j].rot.approx_equal(Rotation()));
  }
}

TEST_CASE("forward kinematics root transform is (phi, tau)") {
  const Skeleton s = chain_skeleton(4);
  Pose p = random_pose(s);
  const auto world = forward_kinematics(s, p);
  REQUIRE((world[0].pos - p.root_pos).norm() < 1e-12);
  REQUIRE(world[0].rot.approx_equal(p.root_rot));
}

TEST_CASE("forward kinematics matches homogeneous matrix chain oracle") {
  for (int rep = 0; rep < 200; ++rep) {
    const Skeleton s = chain_skeleton(5);
    const Pose p = random_pose(s);
    const auto world = forward_kinematics(s, p);

    using Mat4 = Eigen::Matrix4d;
    auto make_T = [](const Mat3& R, const Vec3& t) {
      Mat4 T = Mat4::Identity();
      T.topLeftCorner<3, 3>() = R;
      T.topRightCorner<3, 1>() = t;
      return T;
    };
    Mat4 T = make_T(p.root_rot.matrix(), p.root_pos);
    for (int j = 0; j < 5; ++j) {
      if (j > 0) T = T * make_T(p.local[j].matrix(), s.joints[j].offset);
      REQUIRE((world[j].pos - T.topRightCorner<3, 1>()).norm() < 1e-9);
      REQUIRE((world[j].rot.matrix() - T.topLeftCorner<3, 3>()).norm() < 1e-9);
    }
  }
}

TEST_CASE("forward kinematics is equivariant under root rigid transform") {
  const Skeleton s = chain_skeleton(6);
  const Pose p = random_pose(s);
  const Rotation R = random_rotation();
  const Vec3 t = random_vec(1.0);

  Pose p2 = p;
  p2.root_rot = R * p.root_rot;
  p2.root_pos = R * p.root_pos + t;

  const auto w1 = forward_kinematics(s, p);
  const auto w2 = forward_kinematics(s, p2);
  for (int j = 0; j < s.size(); ++j) {
    REQUIRE((w2[j].pos - (R * w1[j].pos + t)).norm() < 1e-9);
    REQUIRE(w2[j].rot.approx_equal(R * w1[j].rot, 1e-9));
  }
}

TEST_CASE("forward kinematics rejects mismatched pose") {
  const Skeleton s = chain_skeleton(4);
  Pose p = Pose::rest(s);
  p.local.pop_back();
  REQUIRE_THROWS_AS(forward_kinematics(s, p), ShapeMismatch);
}

TEST_CASE("root rotated 90 degrees rotates every joint position") {
  const Skeleton s = chain_skeleton(5);
  Pose p = Pose::rest(s);
  const auto before = forward_kinematics(s, p);
  p.root_rot = Rotation::from_axis_angle(Vec3(0, 0, M_PI / 2));
  const auto after = forward_kinematics(s, p);
  for (int j = 0; j < s.size(); ++j)
    REQUIRE((after[j].pos - p.root_rot * before[j].pos).norm() < 1e-12);
}
