#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "devi/geometry.hpp"
#include "devi/mesh.hpp"
#include "devi/targets.hpp"
#include "devi/textio.hpp"

namespace devi {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using VecX = Eigen::VectorXd;

namespace spatial {

// Featherstone spatial algebra, motion vectors [w; v].

inline Mat6 motion_transform(const Mat3& E, const Vec3& r) {
  Mat6 X = Mat6::Zero();
  X.topLeftCorner<3, 3>() = E;
  X.bottomRightCorner<3, 3>() = E;
  X.bottomLeftCorner<3, 3>() = -E * skew(r);
  return X;
}

inline Vec6 cross_motion(const Vec6& a, const Vec6& b) {
  Vec6 out;
  out.head<3>() = a.head<3>().cross(b.head<3>());
  out.tail<3>() = a.head<3>().cross(b.tail<3>()) + a.tail<3>().cross(b.head<3>());
  return out;
}

inline Vec6 cross_force(const Vec6& a, const Vec6& f) {
  Vec6 out;
  out.head<3>() = a.head<3>().cross(f.head<3>()) + a.tail<3>().cross(f.tail<3>());
  out.tail<3>() = a.head<3>().cross(f.tail<3>());
  return out;
}

inline Mat6 spatial_inertia(double m, const Vec3& com, const Mat3& inertia_com) {
  const Mat3 cx = skew(com);
  Mat6 I = Mat6::Zero();
  I.topLeftCorner<3, 3>() = inertia_com + m * cx * cx.transpose();
  I.topRightCorner<3, 3>() = m * cx;
  I.bottomLeftCorner<3, 3>() = m * cx.transpose();
  I.bottomRightCorner<3, 3>() = m * Mat3::Identity();
  return I;
}

}  // namespace spatial

enum class DofType { Revolute, Prismatic };

/// One 1-DoF body of the articulated model. Skeleton joints are decomposed
/// into x/y/z revolute triplets (local rotation = Rx Ry Rz); the floating
/// base is three prismatic plus three revolute DoF.
struct Dof {
  DofType type = DofType::Revolute;
  Vec3 axis = Vec3::UnitX();   // in this body's frame
  Vec3 offset = Vec3::Zero();  // translation from parent body origin
  int parent = -1;
  int skel_joint = -1;  // -1 for base DoF
  int axis_index = 0;
  bool locked = false;
  double lo = -M_PI, hi = M_PI;
  double kp = 0, kd = 0, tau_max = 0;
  double mass = 0;
  Vec3 com = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();  // about com
};

struct SphereShape {
  int body = -1;
  Vec3 local = Vec3::Zero();
  double radius = 0.03;
  bool touches_object = false;
  int sensor = -1;  // slot in the sensor array, -1 = not a sensor
  int hand = -1;    // 0 left, 1 right
};

struct HumanoidModel {
  std::vector<Dof> dofs;
  std::vector<int> link_body;  // skeleton joint -> body carrying its link
  std::vector<SphereShape> spheres;
  std::vector<int> actuated;  // dof indices driven by the action
  int sensor_count = 0;
  std::vector<int> sensor_hand;  // per sensor slot

  int body_count() const { return static_cast<int>(dofs.size()); }
};

struct PdClassGains {
  double kp, kd, tau_max;
};

/// Immutable scene description; all mutable simulation state lives in
/// SimState so independent rollouts can share one world.
struct PhysicsWorld {
  Skeleton skel;
  Vec3 gravity{0, 0, -9.81};
  double dt = 1.0 / 60.0;
  int substeps = 4;
  bool base_free = false;

  TriMesh object_mesh;
  double object_mass = 0.35;
  double friction = 0.6;
  double contact_kp = 1e4;
  double contact_kd = 1e2;
  double tangent_damping = 300.0;

  bool has_ground = true;
  bool has_table = true;
  Vec3 table_center{0, 0.4, 0.4};
  Vec3 table_half{0.5, 0.25, 0.4};

  bool humanoid_static_collision = true;  // humanoid spheres vs ground/table

  HumanoidModel model;
  Mat3 object_inertia = Mat3::Identity();  // about com, from mesh AABB

  double table_top() const { return table_center.z() + table_half.z(); }

  void finalize(double kp_scale = 1.0, double kd_scale = 1.0);
  void finalize_object();
};

struct SimState {
  VecX q, qd;
  RigidPose object_pose;
  Vec3 object_linvel = Vec3::Zero();
  Vec3 object_angvel = Vec3::Zero();
  double time = 0;
  double power = 0;  // mean sum |tau * qdot| over the last control step
  std::vector<double> sensor_force;

  // Derived per skeleton joint, refreshed by step()/reset().
  std::vector<JointTransform> joint_world;
  std::vector<Vec3> joint_linvel, joint_angvel;

  /// Object state in R^15: position, 6D orientation, linear and angular
  /// velocity.
  Eigen::Matrix<double, 15, 1> object_state_15() const {
    Eigen::Matrix<double, 15, 1> s;
    s.head<3>() = object_pose.pos;
    s.segment<6>(3) = object_pose.rot.to_6d();
    s.segment<3>(9) = object_linvel;
    s.tail<3>() = object_angvel;
    return s;
  }
};

struct Action {
  VecX pd_target;  // per actuated dof, clamped to [-1, 1] on ingestion
};

namespace detail {

inline Mat3 rot_x(double a) {
  Mat3 m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return m;
}
inline Mat3 rot_y(double a) {
  Mat3 m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return m;
}
inline Mat3 rot_z(double a) {
  Mat3 m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}

/// Intrinsic XYZ Euler angles with R = Rx(a) Ry(b) Rz(c), b in [-pi/2, pi/2].
inline Vec3 euler_xyz_from_matrix(const Mat3& R) {
  const double sb = std::clamp(R(0, 2), -1.0, 1.0);
  const double b = std::asin(sb);
  double a, c;
  if (std::abs(sb) < 1.0 - 1e-9) {
    a = std::atan2(-R(1, 2), R(2, 2));
    c = std::atan2(-R(0, 1), R(0, 0));
  } else {
    a = std::atan2(R(2, 1), R(1, 1));
    c = 0.0;
  }
  return {a, b, c};
}

inline double link_class_kp(const Skeleton& skel, int j) {
  if (skel.joints[j].label == JointLabel::Hand) return 4.0;
  const std::string& n = skel.joints[j].name;
  if (n.find("wrist") != std::string::npos) return 40.0;
  if (n.find("elbow") != std::string::npos || n.find("shoul") != std::string::npos ||
      n.find("clav") != std::string::npos)
    return 160.0;
  return 300.0;
}

inline double link_class_tau(const Skeleton& skel, int j) {
  if (skel.joints[j].label == JointLabel::Hand) return 6.0;
  const std::string& n = skel.joints[j].name;
  if (n.find("wrist") != std::string::npos) return 40.0;
  return 250.0;
}

inline double default_link_mass(const Skeleton& skel, int j) {
  if (skel.joints[j].label == JointLabel::Hand) return 0.06;
  const std::string& n = skel.joints[j].name;
  if (n == "pelvis") return 9.0;
  if (n.find("spine") != std::string::npos) return 7.0;
  if (n.find("head") != std::string::npos) return 4.0;
  if (n.find("neck") != std::string::npos) return 1.2;
  if (n.find("clav") != std::string::npos) return 1.5;
  if (n.find("shoul") != std::string::npos) return 2.2;
  if (n.find("elbow") != std::string::npos) return 1.5;
  if (n.find("wrist") != std::string::npos) return 0.45;
  return 1.0;
}

inline double link_sphere_radius(const Skeleton& skel, int j) {
  if (skel.joints[j].label == JointLabel::Hand) return 0.014;
  const std::string& n = skel.joints[j].name;
  if (n.find("head") != std::string::npos) return 0.09;
  if (n.find("wrist") != std::string::npos) return 0.035;
  if (n.find("elbow") != std::string::npos || n.find("shoul") != std::string::npos) return 0.05;
  return 0.08;
}

}  // namespace detail

inline void PhysicsWorld::finalize(double kp_scale, double kd_scale) {
  model = HumanoidModel{};
  if (skel.joints.empty()) {
    finalize_object();
    return;
  }
  skel.validate();
  const int J = skel.size();
  model.link_body.assign(J, -1);

  auto add_dof = [&](Dof d) {
    model.dofs.push_back(d);
    return static_cast<int>(model.dofs.size()) - 1;
  };

  // Floating base: world xyz translations then intrinsic xyz rotations.
  int parent = -1;
  for (int a = 0; a < 3; ++a) {
    Dof d;
    d.type = DofType::Prismatic;
    d.axis = Vec3::Unit(a);
    d.parent = parent;
    d.locked = !base_free;
    d.lo = -10;
    d.hi = 10;
    parent = add_dof(d);
  }
  for (int a = 0; a < 3; ++a) {
    Dof d;
    d.type = DofType::Revolute;
    d.axis = Vec3::Unit(a);
    d.parent = parent;
    d.locked = !base_free;
    parent = add_dof(d);
  }
  model.link_body[0] = parent;

  for (int j = 1; j < J; ++j) {
    const Joint& joint = skel.joints[j];
    int p = model.link_body[joint.parent];
    for (int a = 0; a < 3; ++a) {
      Dof d;
      d.type = DofType::Revolute;
      d.axis = Vec3::Unit(a);
      d.offset = a == 0 ? joint.offset : Vec3::Zero();
      d.parent = p;
      d.skel_joint = j;
      d.axis_index = a;
      d.lo = joint.limit_lo[a];
      d.hi = joint.limit_hi[a];
      d.locked = !(d.hi - d.lo > 1e-9);
      d.kp = kp_scale * detail::link_class_kp(skel, j);
      d.kd = kd_scale * 0.1 * d.kp;
      d.tau_max = detail::link_class_tau(skel, j);
      p = add_dof(d);
    }
    model.link_body[j] = p;
  }

  // Link mass properties go on the last body of each triplet. The link spans
  // from its joint toward the mean child offset (leaves get a small tip).
  std::vector<Vec3> extent(J, Vec3::Zero());
  std::vector<int> child_count(J, 0);
  for (int j = 1; j < J; ++j) {
    extent[skel.joints[j].parent] += skel.joints[j].offset;
    child_count[skel.joints[j].parent]++;
  }
  for (int j = 0; j < J; ++j) {
    if (child_count[j] > 0) {
      extent[j] /= child_count[j];
    } else {
      // Leaves continue their own bone direction by a small tip length.
      const double tip = skel.joints[j].label == JointLabel::Hand ? 0.035 : 0.05;
      const Vec3 own = skel.joints[j].offset;
      extent[j] = own.norm() > 1e-9 ? Vec3(own.normalized() * tip) : Vec3(0, 0, tip);
    }
    Dof& d = model.dofs[model.link_body[j]];
    d.mass = detail::default_link_mass(skel, j);
    d.com = 0.5 * extent[j];
    const double len2 = extent[j].squaredNorm();
    d.inertia = d.mass * (len2 / 12.0 + 4e-4) * Mat3::Identity();
  }

  // Collision spheres: one at each joint, one midway to each child.
  for (int j = 0; j < J; ++j) {
    SphereShape s;
    s.body = model.link_body[j];
    s.local = Vec3::Zero();
    s.radius = detail::link_sphere_radius(skel, j);
    s.touches_object = skel.hand_side(j) >= 0;
    s.hand = skel.hand_side(j);
    model.spheres.push_back(s);
    for (int c = 1; c < J; ++c)
      if (skel.joints[c].parent == j && skel.joints[c].offset.norm() > 0.05) {
        SphereShape mid = s;
        mid.local = 0.5 * skel.joints[c].offset;
        model.spheres.push_back(mid);
      }
  }

  // Force sensors: fingertip tips plus one palm sphere per wrist.
  auto add_sensor = [&](int j, const Vec3& local, double radius) {
    SphereShape s;
    s.body = model.link_body[j];
    s.local = local;
    s.radius = radius;
    s.touches_object = true;
    s.hand = skel.hand_side(j);
    s.sensor = model.sensor_count++;
    model.sensor_hand.push_back(s.hand);
    model.spheres.push_back(s);
  };
  for (int f : skel.fingertips) {
    Vec3 tip = extent[f];
    if (tip.norm() < 1e-9) tip = Vec3(0, 0, -0.03);
    add_sensor(f, tip.norm() > 0 ? Vec3(0.9 * tip) : tip, 0.013);
  }
  for (int w : skel.wrists) add_sensor(w, 0.6 * extent[w], 0.028);

  for (int i = 0; i < model.body_count(); ++i)
    if (!model.dofs[i].locked && model.dofs[i].skel_joint >= 0) model.actuated.push_back(i);

  finalize_object();
}

inline void PhysicsWorld::finalize_object() {
  // Object inertia from the mesh's bounding box.
  Vec3 mn = Vec3::Constant(1e9), mx = Vec3::Constant(-1e9);
  for (const Vec3& v : object_mesh.vertices) {
    mn = mn.cwiseMin(v);
    mx = mx.cwiseMax(v);
  }
  if (object_mesh.vertices.empty()) mn = mx = Vec3::Zero();
  const Vec3 d = (mx - mn).cwiseMax(0.01);
  object_inertia = object_mass / 12.0 *
                   Vec3(d.y() * d.y() + d.z() * d.z(), d.x() * d.x() + d.z() * d.z(),
                        d.x() * d.x() + d.y() * d.y())
                       .asDiagonal();
}

namespace detail {

struct BodyKin {
  Mat3 R;      // world rotation
  Vec3 o;      // world origin
  Vec6 v;      // spatial velocity in body coords
  Vec3 w_world, v_world;
  Mat6 X;      // parent -> body motion transform
  Vec6 S;      // motion subspace in body coords
};

inline void kinematics_pass(const PhysicsWorld& world, const VecX& q, const VecX& qd,
                            std::vector<BodyKin>& kin) {
  const auto& dofs = world.model.dofs;
  kin.resize(dofs.size());
  for (size_t i = 0; i < dofs.size(); ++i) {
    const Dof& d = dofs[i];
    Mat3 E = Mat3::Identity();
    Vec3 r = d.offset;
    Vec6 S = Vec6::Zero();
    if (d.type == DofType::Revolute) {
      const Vec3 a = d.axis;
      const double ang = q[i];
      E = Eigen::AngleAxisd(ang, a).toRotationMatrix().transpose();
      S.head<3>() = a;
    } else {
      r += d.axis * q[i];
      S.tail<3>() = d.axis;
    }
    BodyKin& k = kin[i];
    k.S = S;
    k.X = spatial::motion_transform(E, r);
    if (d.parent < 0) {
      k.R = E.transpose();
      k.o = r;
      k.v = S * qd[i];
    } else {
      const BodyKin& kp = kin[d.parent];
      k.R = kp.R * E.transpose();
      k.o = kp.o + kp.R * r;
      k.v = k.X * kp.v + S * qd[i];
    }
    k.w_world = k.R * k.v.head<3>();
    k.v_world = k.R * k.v.tail<3>();
  }
}

struct ContactAccum {
  std::vector<Vec3> force;       // per body, world
  std::vector<Vec3> torque;      // per body, about body origin, world
  Vec3 obj_force = Vec3::Zero();
  Vec3 obj_torque = Vec3::Zero();  // about object com
  std::vector<double> sensor_mag;  // per sensor, |force| this substep
  double max_depth = 0;
};

/// Penalty contact force at a point: spring-damper normal, Coulomb-capped
/// viscous friction. v_rel is the velocity of the contact point on the
/// penetrating side relative to the other side. Stiffness and damping are
/// capped by the effective mass so light links stay inside the explicit
/// integrator's stability region; callers divide the mass by the expected
/// number of simultaneous contacts.
inline Vec3 penalty_force(const PhysicsWorld& w, double depth, const Vec3& n, const Vec3& v_rel,
                          double eff_mass) {
  const double h = w.dt / w.substeps;
  const double kp = std::min(w.contact_kp, 0.25 * eff_mass / (h * h));
  const double kd = std::min(w.contact_kd, 0.5 * eff_mass / h);
  const double tang = std::min(w.tangent_damping, 0.5 * eff_mass / h);
  const double vn = v_rel.dot(n);
  const double fn = std::max(0.0, kp * depth - kd * vn);
  Vec3 f = fn * n;
  const Vec3 vt = v_rel - vn * n;
  const double vt_norm = vt.norm();
  if (vt_norm > 1e-9) {
    const double ft = std::min(w.friction * fn, tang * vt_norm);
    f -= ft / vt_norm * vt;
  }
  return f;
}

/// Depth and outward normal of a point vs. an axis-aligned box; depth > 0
/// when inside.
inline bool point_in_aabb(const Vec3& p, const Vec3& c, const Vec3& h, double* depth, Vec3* n) {
  const Vec3 d = p - c;
  const Vec3 pen = h - d.cwiseAbs();
  if (pen.minCoeff() <= 0) return false;
  int axis;
  pen.minCoeff(&axis);
  *depth = pen[axis];
  *n = Vec3::Zero();
  (*n)[axis] = d[axis] >= 0 ? 1.0 : -1.0;
  return true;
}

inline void collect_contacts(const PhysicsWorld& world, const std::vector<BodyKin>& kin,
                             const RigidPose& obj_pose, const Vec3& obj_v, const Vec3& obj_w,
                             ContactAccum& acc) {
  const auto& model = world.model;
  acc.force.assign(model.body_count(), Vec3::Zero());
  acc.torque.assign(model.body_count(), Vec3::Zero());
  acc.obj_force.setZero();
  acc.obj_torque.setZero();
  acc.sensor_mag.assign(model.sensor_count, 0.0);
  acc.max_depth = 0;

  const Mat3 obj_R = obj_pose.rot.matrix();

  auto object_point_vel = [&](const Vec3& p) { return obj_v + obj_w.cross(p - obj_pose.pos); };

  // Humanoid spheres vs statics and object.
  for (const SphereShape& s : model.spheres) {
    const BodyKin& k = kin[s.body];
    const Vec3 p = k.o + k.R * s.local;
    const Vec3 vp = k.v_world + k.w_world.cross(p - k.o);
    const double m_body = model.dofs[s.body].mass;
    Vec3 total = Vec3::Zero();

    if (world.humanoid_static_collision) {
      if (world.has_ground) {
        const double depth = s.radius - p.z();
        if (depth > 0) {
          const Vec3 f = penalty_force(world, depth, Vec3(0, 0, 1), vp, m_body);
          total += f;
          acc.max_depth = std::max(acc.max_depth, depth);
        }
      }
      if (world.has_table) {
        const Vec3 q = p.cwiseMax(world.table_center - world.table_half)
                           .cwiseMin(world.table_center + world.table_half);
        const Vec3 diff = p - q;
        const double dist = diff.norm();
        if (dist > 1e-12 && dist < s.radius) {
          const Vec3 n = diff / dist;
          total += penalty_force(world, s.radius - dist, n, vp, m_body);
          acc.max_depth = std::max(acc.max_depth, s.radius - dist);
        } else if (dist <= 1e-12) {
          double depth;
          Vec3 n;
          if (point_in_aabb(p, world.table_center, world.table_half, &depth, &n)) {
            total += penalty_force(world, depth + s.radius, n, vp, m_body);
            acc.max_depth = std::max(acc.max_depth, depth + s.radius);
          }
        }
      }
    }

    if (s.touches_object && !world.object_mesh.vertices.empty()) {
      // Work in the object's local frame.
      const Vec3 local = obj_R.transpose() * (p - obj_pose.pos);
      const Vec3 q_local = closest_point_on_mesh(world.object_mesh, local);
      const Vec3 q_world = obj_pose.pos + obj_R * q_local;
      const Vec3 diff = p - q_world;
      const double dist = diff.norm();
      if (dist > 1e-12 && dist < s.radius) {
        const Vec3 n = diff / dist;
        const Vec3 f = penalty_force(world, s.radius - dist, n, vp - object_point_vel(q_world),
                                     std::min(m_body, world.object_mass));
        total += f;
        acc.obj_force -= f;
        acc.obj_torque -= (q_world - obj_pose.pos).cross(f);
        acc.max_depth = std::max(acc.max_depth, s.radius - dist);
      }
    }

    if (total != Vec3::Zero()) {
      acc.force[s.body] += total;
      acc.torque[s.body] += (p - k.o).cross(total);
    }
    if (s.sensor >= 0) acc.sensor_mag[s.sensor] += total.norm();
  }

  // Object mesh vertices vs statics.
  for (const Vec3& v_local : world.object_mesh.vertices) {
    const Vec3 p = obj_pose.pos + obj_R * v_local;
    const Vec3 vp = object_point_vel(p);
    Vec3 f = Vec3::Zero();
    if (world.has_ground && p.z() < 0) {
      f += penalty_force(world, -p.z(), Vec3(0, 0, 1), vp, world.object_mass / 16.0);
      acc.max_depth = std::max(acc.max_depth, -p.z());
    }
    if (world.has_table) {
      double depth;
      Vec3 n;
      if (point_in_aabb(p, world.table_center, world.table_half, &depth, &n)) {
        f += penalty_force(world, depth, n, vp, world.object_mass / 16.0);
        acc.max_depth = std::max(acc.max_depth, depth);
      }
    }
    if (f != Vec3::Zero()) {
      acc.obj_force += f;
      acc.obj_torque += (p - obj_pose.pos).cross(f);
    }
  }
}

/// Articulated-body algorithm over the 1-DoF model; locked DoF behave as
/// welds. Returns generalized accelerations.
inline VecX aba(const PhysicsWorld& world, const std::vector<BodyKin>& kin, const VecX& qd,
                const VecX& tau, const ContactAccum& acc) {
  const auto& dofs = world.model.dofs;
  const int n = static_cast<int>(dofs.size());
  std::vector<Mat6> IA(n);
  std::vector<Vec6> pA(n), c(n), U(n);
  VecX d(n), u(n), qdd(n);

  for (int i = 0; i < n; ++i) {
    const Dof& dof = dofs[i];
    const BodyKin& k = kin[i];
    IA[i] = spatial::spatial_inertia(dof.mass, dof.com, dof.inertia);
    c[i] = spatial::cross_motion(k.v, k.S * qd[i]);
    pA[i] = spatial::cross_force(k.v, IA[i] * k.v);
    // External wrench (world, about body origin) to body coordinates.
    Vec6 fext;
    fext.head<3>() = k.R.transpose() * acc.torque[i];
    fext.tail<3>() = k.R.transpose() * acc.force[i];
    pA[i] -= fext;
  }

  for (int i = n - 1; i >= 0; --i) {
    const Dof& dof = dofs[i];
    const BodyKin& k = kin[i];
    Mat6 Ia;
    Vec6 pa;
    if (dof.locked) {
      Ia = IA[i];
      pa = pA[i] + IA[i] * c[i];
    } else {
      U[i] = IA[i] * k.S;
      d[i] = std::max(k.S.dot(U[i]), 1e-10);
      u[i] = tau[i] - k.S.dot(pA[i]);
      Ia = IA[i] - U[i] * (U[i] / d[i]).transpose();
      pa = pA[i] + Ia * c[i] + U[i] * (u[i] / d[i]);
    }
    if (dof.parent >= 0) {
      IA[dof.parent] += k.X.transpose() * Ia * k.X;
      pA[dof.parent] += k.X.transpose() * pa;
    }
  }

  // Gravity enters as a fictitious base acceleration.
  std::vector<Vec6> a(n);
  Vec6 a0 = Vec6::Zero();
  a0.tail<3>() = -world.gravity;
  for (int i = 0; i < n; ++i) {
    const Dof& dof = dofs[i];
    const BodyKin& k = kin[i];
    Vec6 ap;
    if (dof.parent < 0) {
      // Base transform rotates/offsets the fictitious acceleration too.
      ap = k.X * a0;
    } else {
      ap = k.X * a[dof.parent];
    }
    if (dof.locked) {
      qdd[i] = 0;
      a[i] = ap + c[i];
    } else {
      qdd[i] = (u[i] - U[i].dot(ap + c[i])) / d[i];
      a[i] = ap + c[i] + k.S * qdd[i];
    }
  }
  return qdd;
}

}  // namespace detail

/// Map a Pose onto the model's generalized coordinates.
inline VecX coords_from_pose(const PhysicsWorld& world, const Pose& pose) {
  const auto& model = world.model;
  if (world.skel.joints.empty()) return VecX::Zero(0);
  if (static_cast<int>(pose.local.size()) != world.skel.size())
    throw ShapeMismatch("pose/skeleton mismatch");
  VecX q = VecX::Zero(model.body_count());
  q.head<3>() = pose.root_pos;
  q.segment<3>(3) = detail::euler_xyz_from_matrix(pose.root_rot.matrix());
  for (int j = 1; j < world.skel.size(); ++j) {
    const Vec3 e = detail::euler_xyz_from_matrix(pose.local[j].matrix());
    const int b = model.link_body[j];  // last of the triplet
    q[b - 2] = e[0];
    q[b - 1] = e[1];
    q[b] = e[2];
  }
  return q;
}

inline Pose pose_from_coords(const PhysicsWorld& world, const VecX& q) {
  Pose pose = Pose::rest(world.skel);
  pose.root_pos = q.head<3>();
  pose.root_rot = Rotation::from_matrix(detail::rot_x(q[3]) * detail::rot_y(q[4]) *
                                        detail::rot_z(q[5]));
  for (int j = 1; j < world.skel.size(); ++j) {
    const int b = world.model.link_body[j];
    pose.local[j] = Rotation::from_matrix(detail::rot_x(q[b - 2]) * detail::rot_y(q[b - 1]) *
                                          detail::rot_z(q[b]));
  }
  return pose;
}

namespace detail {

inline void refresh_derived(const PhysicsWorld& world, SimState& state) {
  std::vector<BodyKin> kin;
  kinematics_pass(world, state.q, state.qd, kin);
  const int J = world.skel.size();
  state.joint_world.resize(J);
  state.joint_linvel.resize(J);
  state.joint_angvel.resize(J);
  for (int j = 0; j < J; ++j) {
    const BodyKin& k = kin[world.model.link_body[j]];
    state.joint_world[j] = {Rotation::from_matrix(k.R), k.o};
    state.joint_linvel[j] = k.v_world;
    state.joint_angvel[j] = k.w_world;
  }
}

}  // namespace detail

/// Pose the humanoid and place the object; velocities default to zero.
/// Throws PenetrationAtReset when anything interpenetrates more than 5 mm.
inline SimState reset(const PhysicsWorld& world, const Pose& pose, const RigidPose& object_pose,
                      const VecX& qd = VecX()) {
  SimState state;
  state.q = coords_from_pose(world, pose);
  state.qd = qd.size() ? qd : VecX::Zero(world.model.body_count());
  if (state.qd.size() != world.model.body_count()) throw ShapeMismatch("qd size");
  for (int i = 0; i < world.model.body_count(); ++i)
    if (world.model.dofs[i].locked) state.qd[i] = 0;
  state.object_pose = object_pose;
  state.sensor_force.assign(world.model.sensor_count, 0.0);
  detail::refresh_derived(world, state);

  std::vector<detail::BodyKin> kin;
  detail::kinematics_pass(world, state.q, state.qd, kin);
  detail::ContactAccum acc;
  detail::collect_contacts(world, kin, state.object_pose, state.object_linvel,
                           state.object_angvel, acc);
  if (acc.max_depth > 5e-3) throw PenetrationAtReset();
  return state;
}

/// Advance one control step (fixed substeps). Deterministic for identical
/// inputs; throws NonFiniteState if the integration diverges.
inline SimState step(const PhysicsWorld& world, const SimState& prev, const Action& action) {
  const auto& model = world.model;
  if (action.pd_target.size() != static_cast<int>(model.actuated.size()))
    throw ShapeMismatch("action size != actuated dof count");

  SimState state = prev;
  VecX target = VecX::Zero(model.body_count());
  for (size_t k = 0; k < model.actuated.size(); ++k) {
    const int i = model.actuated[k];
    const Dof& d = model.dofs[i];
    const double a = std::clamp(action.pd_target[k], -1.0, 1.0);
    target[i] = d.lo + 0.5 * (a + 1.0) * (d.hi - d.lo);
  }

  const double h = world.dt / world.substeps;
  std::vector<double> sensor_impulse(model.sensor_count, 0.0);
  double power_acc = 0;
  std::vector<detail::BodyKin> kin;
  detail::ContactAccum acc;

  for (int sub = 0; sub < world.substeps; ++sub) {
    detail::kinematics_pass(world, state.q, state.qd, kin);
    detail::collect_contacts(world, kin, state.object_pose, state.object_linvel,
                             state.object_angvel, acc);
    for (int s = 0; s < model.sensor_count; ++s) sensor_impulse[s] += acc.sensor_mag[s] * h;

    VecX tau = VecX::Zero(model.body_count());
    for (size_t k = 0; k < model.actuated.size(); ++k) {
      const int i = model.actuated[k];
      const Dof& d = model.dofs[i];
      tau[i] = std::clamp(d.kp * (target[i] - state.q[i]) - d.kd * state.qd[i], -d.tau_max,
                          d.tau_max);
      power_acc += std::abs(tau[i] * state.qd[i]) * h;
    }

    const VecX qdd = detail::aba(world, kin, state.qd, tau, acc);

    // Symplectic Euler for the articulated system.
    for (int i = 0; i < model.body_count(); ++i) {
      if (model.dofs[i].locked) continue;
      state.qd[i] += h * qdd[i];
      state.q[i] += h * state.qd[i];
    }

    // Free rigid object: symplectic Euler with the constant-gravity half-step
    // removed from the position update, which makes free fall follow the
    // exact parabola without touching the contact-spring feedback loop.
    {
      const Mat3 R = state.object_pose.rot.matrix();
      const Mat3 Iw = R * world.object_inertia * R.transpose();
      const Vec3 L = Iw * state.object_angvel;
      const Vec3 v_new = state.object_linvel +
                         h * (world.gravity + acc.obj_force / world.object_mass);
      const Vec3 w_new = state.object_angvel +
                         h * Iw.inverse() * (acc.obj_torque - state.object_angvel.cross(L));
      state.object_pose.pos += h * v_new - 0.5 * h * h * world.gravity;
      state.object_linvel = v_new;
      const Vec3 rot_vec = h * w_new;
      state.object_pose.rot = Rotation::from_axis_angle(rot_vec) * state.object_pose.rot;
      state.object_angvel = w_new;
    }
  }

  if (!state.q.allFinite() || !state.qd.allFinite() || !state.object_pose.pos.allFinite() ||
      !state.object_linvel.allFinite() || !state.object_angvel.allFinite())
    throw NonFiniteState();

  state.time = prev.time + world.dt;
  state.power = power_acc / world.dt;
  for (int s = 0; s < model.sensor_count; ++s)
    state.sensor_force[s] = sensor_impulse[s] / world.dt;
  detail::refresh_derived(world, state);
  return state;
}

/// Per-sensor force magnitudes (Newtons) measured over the last step.
inline std::vector<double> read_contact_forces(const PhysicsWorld& world, const SimState& state) {
  (void)world;
  return state.sensor_force;
}

/// Kinetic plus gravitational potential energy of everything that moves.
inline double mechanical_energy(const PhysicsWorld& world, const SimState& state) {
  std::vector<detail::BodyKin> kin;
  detail::kinematics_pass(world, state.q, state.qd, kin);
  double e = 0;
  for (int i = 0; i < world.model.body_count(); ++i) {
    const Dof& d = world.model.dofs[i];
    if (d.mass <= 0) continue;
    const Mat6 I = spatial::spatial_inertia(d.mass, d.com, d.inertia);
    e += 0.5 * kin[i].v.dot(I * kin[i].v);
    const Vec3 com_world = kin[i].o + kin[i].R * d.com;
    e -= d.mass * world.gravity.dot(com_world);
  }
  e += 0.5 * world.object_mass * state.object_linvel.squaredNorm();
  const Mat3 R = state.object_pose.rot.matrix();
  e += 0.5 * state.object_angvel.dot(R * world.object_inertia * R.transpose() *
                                     state.object_angvel);
  e -= world.object_mass * world.gravity.dot(state.object_pose.pos);
  return e;
}

// ---------------------------------------------------------------------------
// Scene and skeleton files

inline void save_skeleton(const Skeleton& skel, const std::string& path) {
  TextDoc doc;
  doc.add("skeleton", "joints", skel.size());
  for (const Joint& j : skel.joints) {
    std::ostringstream ss;
    ss << j.name << " " << j.parent;
    const double nums[9] = {j.offset.x(),   j.offset.y(),   j.offset.z(),
                            j.limit_lo.x(), j.limit_lo.y(), j.limit_lo.z(),
                            j.limit_hi.x(), j.limit_hi.y(), j.limit_hi.z()};
    for (double v : nums) ss << " " << TextDoc::fmt(v);
    ss << " " << (j.label == JointLabel::Hand ? "hand" : "body");
    doc.add("skeleton", "joint", ss.str());
  }
  doc.add_seq("skeleton", "fingertips", skel.fingertips.begin(), skel.fingertips.end());
  doc.add_seq("skeleton", "wrists", skel.wrists.begin(), skel.wrists.end());
  doc.save(path);
}

inline Skeleton load_skeleton(const std::string& path) {
  const TextDoc doc = TextDoc::load(path);
  Skeleton skel;
  for (const std::string& line : doc.get_all("skeleton", "joint")) {
    std::istringstream ss(line);
    Joint j;
    std::string label;
    ss >> j.name >> j.parent >> j.offset.x() >> j.offset.y() >> j.offset.z() >>
        j.limit_lo.x() >> j.limit_lo.y() >> j.limit_lo.z() >> j.limit_hi.x() >>
        j.limit_hi.y() >> j.limit_hi.z() >> label;
    if (!ss) throw ParseError(path + ": bad joint row");
    j.label = label == "hand" ? JointLabel::Hand : JointLabel::Body;
    skel.joints.push_back(j);
  }
  for (double v : doc.get_vec("skeleton", "fingertips"))
    skel.fingertips.push_back(static_cast<int>(v));
  const auto w = doc.get_vec("skeleton", "wrists");
  if (w.size() != 2) throw ParseError(path + ": wrists row needs 2 ids");
  skel.wrists = {static_cast<int>(w[0]), static_cast<int>(w[1])};
  skel.validate();
  return skel;
}

/// Scene file: skeleton and object mesh paths plus physics parameters.
struct SceneSpec {
  std::string skeleton_path;
  std::string object_path;
  RigidPose object_init;
  double object_mass = 0.35;
  double friction = 0.6;
  Vec3 table_center{0, 0.4, 0.4};
  Vec3 table_half{0.5, 0.25, 0.4};
  bool has_table = true;
  bool base_free = false;
  double kp_scale = 1.0, kd_scale = 1.0;
  double dt = 1.0 / 60.0;
  int substeps = 4;

  void save(const std::string& path) const {
    TextDoc doc;
    doc.add("scene", "skeleton", skeleton_path);
    doc.add("scene", "object", object_path);
    std::vector<double> op = {object_init.pos.x(), object_init.pos.y(), object_init.pos.z(),
                              object_init.rot.w(), object_init.rot.x(), object_init.rot.y(),
                              object_init.rot.z()};
    doc.add_seq("scene", "object_init", op.begin(), op.end());
    doc.add("scene", "object_mass", object_mass);
    doc.add("scene", "friction", friction);
    const double tc[3] = {table_center.x(), table_center.y(), table_center.z()};
    const double th[3] = {table_half.x(), table_half.y(), table_half.z()};
    doc.add_seq("scene", "table_center", tc, tc + 3);
    doc.add_seq("scene", "table_half", th, th + 3);
    doc.add("scene", "has_table", has_table ? 1 : 0);
    doc.add("scene", "base_free", base_free ? 1 : 0);
    doc.add("scene", "kp_scale", kp_scale);
    doc.add("scene", "kd_scale", kd_scale);
    doc.add("scene", "dt", dt);
    doc.add("scene", "substeps", substeps);
    doc.save(path);
  }

  static SceneSpec load(const std::string& path) {
    const TextDoc doc = TextDoc::load(path);
    SceneSpec s;
    s.skeleton_path = doc.get("scene", "skeleton");
    s.object_path = doc.get("scene", "object");
    const auto op = doc.get_vec("scene", "object_init");
    s.object_init.pos = Vec3(op[0], op[1], op[2]);
    s.object_init.rot = Rotation(op[3], op[4], op[5], op[6]);
    s.object_mass = doc.get_double("scene", "object_mass");
    s.friction = doc.get_double("scene", "friction");
    const auto tc = doc.get_vec("scene", "table_center");
    const auto th = doc.get_vec("scene", "table_half");
    s.table_center = Vec3(tc[0], tc[1], tc[2]);
    s.table_half = Vec3(th[0], th[1], th[2]);
    s.has_table = doc.get_int("scene", "has_table") != 0;
    s.base_free = doc.get_int("scene", "base_free") != 0;
    s.kp_scale = doc.get_double("scene", "kp_scale");
    s.kd_scale = doc.get_double("scene", "kd_scale");
    s.dt = doc.get_double("scene", "dt");
    s.substeps = doc.get_int("scene", "substeps");
    return s;
  }

  /// Build a ready-to-step world, resolving the referenced files relative
  /// to `dir` when paths are not absolute.
  PhysicsWorld build(const std::string& dir = "") const {
    auto resolve = [&](const std::string& p) {
      return (p.empty() || p[0] == '/' || dir.empty()) ? p : dir + "/" + p;
    };
    PhysicsWorld world;
    world.skel = load_skeleton(resolve(skeleton_path));
    world.object_mesh = load_obj(resolve(object_path));
    world.object_mass = object_mass;
    world.friction = friction;
    world.table_center = table_center;
    world.table_half = table_half;
    world.has_table = has_table;
    world.base_free = base_free;
    world.dt = dt;
    world.substeps = substeps;
    world.finalize(kp_scale, kd_scale);
    return world;
  }
};

}  // namespace devi
