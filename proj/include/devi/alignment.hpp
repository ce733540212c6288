#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "devi/geometry.hpp"

namespace devi {

struct AlignmentConfig {
  double w_b = 1.0, w_h = 1.0, w_tc = 1.0e4, w_hoi = 5.0e2;
  double lr = 2.0e-2;
  int iterations = 300;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // Adam
  std::vector<int> optimized_joints;  // local rotations free to move
  std::vector<int> contact_joints;    // the J_* body part for the HOI loss
};

/// Everything the optimizer sees: the skeleton, the initial pose sequence,
/// the camera, 2D joint evidence, and the object vertices to contact.
struct AlignmentProblem {
  Skeleton skel;
  CameraModel camera;
  std::vector<Pose> init_poses;                          // F
  std::vector<int> body_ids, hand_ids;                   // joints with evidence
  std::vector<std::vector<Vec2>> target_body, target_hand;  // F x n, pixels
  std::vector<Vec3> object_vertices;                     // v_*

  int frames() const { return static_cast<int>(init_poses.size()); }

  void validate() const {
    if (frames() < 1) throw ShapeMismatch("no frames");
    if (target_body.size() != init_poses.size() || target_hand.size() != init_poses.size())
      throw ShapeMismatch("target arrays must cover every frame");
    for (int t = 0; t < frames(); ++t)
      if (target_body[t].size() != body_ids.size() || target_hand[t].size() != hand_ids.size())
        throw ShapeMismatch("per-frame target sizes");
  }
};

/// Upper-body subset the supplement optimizes: spine, shoulders, elbows,
/// wrists, and all hand joints. The root is never touched.
inline std::vector<int> default_optimized_joints(const Skeleton& skel) {
  std::vector<int> out;
  for (int j = 1; j < skel.size(); ++j) {
    const std::string& n = skel.joints[j].name;
    if (skel.joints[j].label == JointLabel::Hand || n.rfind("spine", 0) == 0 ||
        n.rfind("shoul", 0) == 0 || n.rfind("elbow", 0) == 0 || n.rfind("wrist", 0) == 0)
      out.push_back(j);
  }
  return out;
}

inline std::vector<int> hand_part_joints(const Skeleton& skel, int side) {
  std::vector<int> out{skel.wrists[side]};
  for (int j = 0; j < skel.size(); ++j)
    if (skel.joints[j].label == JointLabel::Hand && skel.hand_side(j) == side) out.push_back(j);
  return out;
}

// ---------------------------------------------------------------------------
// Loss values on pose sequences (the optimizer works on an axis-angle
// parameter vector; these are also the reference path used by tests).

namespace align_detail {

inline double proj_loss(const AlignmentProblem& p, const std::vector<Pose>& poses,
                        const std::vector<int>& ids,
                        const std::vector<std::vector<Vec2>>& targets) {
  if (ids.empty()) return 0.0;
  double acc = 0;
  for (int t = 0; t < p.frames(); ++t) {
    const auto world = forward_kinematics(p.skel, poses[t]);
    for (size_t k = 0; k < ids.size(); ++k)
      acc += (project(p.camera, world[ids[k]].pos) - targets[t][k]).squaredNorm();
  }
  return acc / (static_cast<double>(p.frames()) * ids.size());
}

inline std::vector<int> tc_subset(const std::vector<int>& ids) {
  std::vector<int> out;
  for (int j : ids)
    if (j != 0) out.push_back(j);  // the root's local rotation is not a pose DoF
  return out;
}

}  // namespace align_detail

/// Mean squared pixel error of projected body joints against the evidence.
inline double loss_body_proj(const AlignmentProblem& p, const std::vector<Pose>& poses) {
  return align_detail::proj_loss(p, poses, p.body_ids, p.target_body);
}

inline double loss_hand_proj(const AlignmentProblem& p, const std::vector<Pose>& poses) {
  return align_detail::proj_loss(p, poses, p.hand_ids, p.target_hand);
}

/// Temporal consistency: sum over consecutive frames of the mean geodesic
/// distance across body rotations plus the same across hand rotations.
inline double loss_temporal(const AlignmentProblem& p, const std::vector<Pose>& poses) {
  const auto body = align_detail::tc_subset(p.body_ids);
  const auto hand = align_detail::tc_subset(p.hand_ids);
  double acc = 0;
  for (int t = 0; t + 1 < static_cast<int>(poses.size()); ++t) {
    double b = 0, h = 0;
    for (int j : body) b += geodesic_distance(poses[t].local[j], poses[t + 1].local[j]);
    for (int j : hand) h += geodesic_distance(poses[t].local[j], poses[t + 1].local[j]);
    if (!body.empty()) acc += b / body.size();
    if (!hand.empty()) acc += h / hand.size();
  }
  return acc;
}

/// Minimum over frames of the one-sided chamfer distance from the contact
/// body part to the object vertices.
inline double loss_hoi(const AlignmentProblem& p, const std::vector<int>& contact_joints,
                       const std::vector<Pose>& poses) {
  if (contact_joints.empty() || p.object_vertices.empty()) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (const Pose& pose : poses) {
    const auto world = forward_kinematics(p.skel, pose);
    std::vector<Vec3> part;
    part.reserve(contact_joints.size());
    for (int j : contact_joints) part.push_back(world[j].pos);
    best = std::min(best, one_sided_chamfer(part, p.object_vertices));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Analytic gradient machinery

namespace align_detail {

/// d quat / d axis-angle, 4x3 with rows (w, x, y, z).
inline Eigen::Matrix<double, 4, 3> quat_jacobian(const Vec3& v) {
  const double theta = v.norm();
  Eigen::Matrix<double, 4, 3> J;
  if (theta < 1e-8) {
    J.row(0) = -0.25 * v.transpose();
    J.bottomRows<3>() = 0.5 * Mat3::Identity();
    return J;
  }
  const double half = 0.5 * theta;
  const double s = std::sin(half) / theta;           // xyz = s * v
  const double sp = (0.5 * std::cos(half) * theta - std::sin(half)) / (theta * theta);
  J.row(0) = -0.5 * std::sin(half) / theta * v.transpose();
  J.bottomRows<3>() = s * Mat3::Identity() + (sp / theta) * v * v.transpose();
  return J;
}

inline Eigen::Vector4d quat_coeffs(const Rotation& r) {
  return Eigen::Vector4d(r.w(), r.x(), r.y(), r.z());
}

/// Right Jacobian of the SO(3) exponential map.
inline Mat3 so3_right_jacobian(const Vec3& v) {
  const double theta = v.norm();
  const Mat3 K = skew(v);
  if (theta < 1e-6) return Mat3::Identity() - 0.5 * K + (1.0 / 6.0) * K * K;
  const double t2 = theta * theta;
  return Mat3::Identity() - (1 - std::cos(theta)) / t2 * K +
         (theta - std::sin(theta)) / (t2 * theta) * K * K;
}

struct ParamMap {
  std::vector<int> opt_joints;        // sorted, unique, root excluded
  std::vector<int> slot_of_joint;     // joint -> slot or -1
  int frames = 0;

  int size() const { return frames * static_cast<int>(opt_joints.size()) * 3; }
  int offset(int frame, int slot) const {
    return (frame * static_cast<int>(opt_joints.size()) + slot) * 3;
  }
};

inline ParamMap make_param_map(const AlignmentProblem& p, const AlignmentConfig& cfg) {
  ParamMap map;
  map.frames = p.frames();
  map.opt_joints = cfg.optimized_joints.empty() ? default_optimized_joints(p.skel)
                                                : cfg.optimized_joints;
  std::sort(map.opt_joints.begin(), map.opt_joints.end());
  map.opt_joints.erase(std::unique(map.opt_joints.begin(), map.opt_joints.end()),
                       map.opt_joints.end());
  if (!map.opt_joints.empty() && map.opt_joints.front() == 0)
    map.opt_joints.erase(map.opt_joints.begin());
  for (int j : map.opt_joints)
    if (j < 0 || j >= p.skel.size()) throw ShapeMismatch("optimized joint out of range");
  map.slot_of_joint.assign(p.skel.size(), -1);
  for (size_t s = 0; s < map.opt_joints.size(); ++s) map.slot_of_joint[map.opt_joints[s]] = s;
  return map;
}

inline Eigen::VectorXd params_from_poses(const ParamMap& map, const std::vector<Pose>& poses) {
  Eigen::VectorXd x(map.size());
  for (int t = 0; t < map.frames; ++t)
    for (size_t s = 0; s < map.opt_joints.size(); ++s)
      x.segment<3>(map.offset(t, s)) = poses[t].local[map.opt_joints[s]].to_axis_angle();
  return x;
}

inline std::vector<Pose> poses_from_params(const ParamMap& map,
                                           const std::vector<Pose>& init_poses,
                                           const Eigen::VectorXd& x) {
  std::vector<Pose> poses = init_poses;
  for (int t = 0; t < map.frames; ++t)
    for (size_t s = 0; s < map.opt_joints.size(); ++s)
      poses[t].local[map.opt_joints[s]] =
          Rotation::from_axis_angle(x.segment<3>(map.offset(t, s)));
  return poses;
}

struct LossBreakdown {
  double body = 0, hand = 0, temporal = 0, hoi = 0;
  double weighted(const AlignmentConfig& c) const {
    return c.w_b * body + c.w_h * hand + c.w_tc * temporal + c.w_hoi * hoi;
  }
};

/// Evaluate all loss terms at x and, when grad != nullptr, accumulate the
/// gradient of wb*Lb + wh*Lh + wtc*Ltc + whoi*Lhoi into it.
inline LossBreakdown eval_losses(const AlignmentProblem& p, const AlignmentConfig& cfg,
                                 const ParamMap& map, const Eigen::VectorXd& x,
                                 Eigen::VectorXd* grad, double wb, double wh, double wtc,
                                 double whoi) {
  const std::vector<Pose> poses = poses_from_params(map, p.init_poses, x);
  const int F = map.frames;
  LossBreakdown out;
  if (grad) grad->setZero(map.size());

  // Cache FK and the right Jacobians per frame.
  std::vector<std::vector<JointTransform>> world(F);
  for (int t = 0; t < F; ++t) world[t] = forward_kinematics(p.skel, poses[t]);
  std::vector<std::vector<int>> anc_slots(p.skel.size());  // optimized ancestors per joint
  for (int j = 0; j < p.skel.size(); ++j) {
    for (int a = p.skel.joints[j].parent; a != -1; a = p.skel.joints[a].parent)
      if (map.slot_of_joint[a] >= 0) anc_slots[j].push_back(map.slot_of_joint[a]);
  }

  // Backpropagate a world-position gradient at joint k of frame t into the
  // optimized axis-angle parameters (geometric Jacobian, then exp-map right
  // Jacobian).
  auto backprop_position = [&](int t, int k, const Vec3& g_pos, Eigen::VectorXd& g) {
    for (int slot : anc_slots[k]) {
      const int j = map.opt_joints[slot];
      const Vec3 g_delta =
          world[t][j].rot.matrix().transpose() * ((world[t][k].pos - world[t][j].pos).cross(g_pos));
      const Vec3 v = x.segment<3>(map.offset(t, slot));
      g.segment<3>(map.offset(t, slot)) += so3_right_jacobian(v).transpose() * g_delta;
    }
  };

  // Projection losses.
  auto proj_term = [&](const std::vector<int>& ids,
                       const std::vector<std::vector<Vec2>>& targets, double weight,
                       double& value) {
    if (ids.empty()) return;
    const double norm = 1.0 / (static_cast<double>(F) * ids.size());
    for (int t = 0; t < F; ++t) {
      for (size_t k = 0; k < ids.size(); ++k) {
        const Vec3 c = p.camera.to_camera(world[t][ids[k]].pos);
        if (c.z() <= kMinCameraDepth) throw BehindCamera();
        const Vec2 px(p.camera.f * c.x() / c.z() + p.camera.cx,
                      p.camera.f * c.y() / c.z() + p.camera.cy);
        const Vec2 r = px - targets[t][k];
        value += norm * r.squaredNorm();
        if (grad && weight != 0.0) {
          const Vec2 g_uv = 2.0 * norm * weight * r;
          Vec3 g_cam(p.camera.f / c.z() * g_uv.x(), p.camera.f / c.z() * g_uv.y(),
                     -p.camera.f / (c.z() * c.z()) * (c.x() * g_uv.x() + c.y() * g_uv.y()));
          const Vec3 g_pos = p.camera.rot.matrix().transpose() * g_cam;
          backprop_position(t, ids[k], g_pos, *grad);
        }
      }
    }
  };
  proj_term(p.body_ids, p.target_body, wb, out.body);
  proj_term(p.hand_ids, p.target_hand, wh, out.hand);

  // Temporal consistency.
  {
    const auto body = tc_subset(p.body_ids);
    const auto hand = tc_subset(p.hand_ids);
    auto tc_term = [&](const std::vector<int>& ids) {
      if (ids.empty()) return 0.0;
      double acc = 0;
      const double inv = 1.0 / ids.size();
      for (int t = 0; t + 1 < F; ++t) {
        for (int j : ids) {
          const Rotation& qa = poses[t].local[j];
          const Rotation& qb = poses[t + 1].local[j];
          acc += inv * geodesic_distance(qa, qb);
          if (!grad || wtc == 0.0) continue;
          const double s = quat_coeffs(qa).dot(quat_coeffs(qb));
          const double s2 = s * s;
          if (1.0 - s2 < 1e-12) continue;  // coincident rotations: flat, subgradient 0
          const double dd_ds = -2.0 * (s >= 0 ? 1.0 : -1.0) / std::sqrt(1.0 - s2);
          const double w = wtc * inv * dd_ds;
          const int slot = map.slot_of_joint[j];
          if (slot < 0) continue;
          const Vec3 va = x.segment<3>(map.offset(t, slot));
          const Vec3 vb = x.segment<3>(map.offset(t + 1, slot));
          grad->segment<3>(map.offset(t, slot)) +=
              w * (quat_jacobian(va).transpose() * quat_coeffs(qb));
          grad->segment<3>(map.offset(t + 1, slot)) +=
              w * (quat_jacobian(vb).transpose() * quat_coeffs(qa));
        }
      }
      return acc;
    };
    out.temporal = tc_term(body) + tc_term(hand);
  }

  // HOI contact loss at the argmin frame (earliest frame on ties).
  if (!cfg.contact_joints.empty() && !p.object_vertices.empty()) {
    int best_t = 0;
    double best = std::numeric_limits<double>::infinity();
    std::vector<Vec3> part(cfg.contact_joints.size());
    for (int t = 0; t < F; ++t) {
      for (size_t k = 0; k < cfg.contact_joints.size(); ++k)
        part[k] = world[t][cfg.contact_joints[k]].pos;
      const double d = one_sided_chamfer(part, p.object_vertices);
      if (d < best) {
        best = d;
        best_t = t;
      }
    }
    out.hoi = best;
    if (grad && whoi != 0.0) {
      const double norm = 1.0 / cfg.contact_joints.size();
      for (size_t k = 0; k < cfg.contact_joints.size(); ++k) {
        const Vec3 a = world[best_t][cfg.contact_joints[k]].pos;
        double dmin = std::numeric_limits<double>::infinity();
        Vec3 nearest = p.object_vertices[0];
        for (const Vec3& b : p.object_vertices) {
          const double d = (a - b).squaredNorm();
          if (d < dmin) {
            dmin = d;
            nearest = b;
          }
        }
        backprop_position(best_t, cfg.contact_joints[k], 2.0 * norm * whoi * (a - nearest),
                          *grad);
      }
    }
  }

  return out;
}

}  // namespace align_detail

struct AlignTraceRow {
  int iteration;
  double loss_body, loss_hand, loss_temporal, loss_hoi, loss_total;
};

struct AlignResult {
  std::vector<Pose> poses;
  std::vector<AlignTraceRow> trace;
};

/// Adam refinement of the optimized joints' rotations against the 2D
/// evidence and the object. Returns the best sequence seen, so the final
/// total loss never exceeds the initial one.
inline AlignResult align(const AlignmentProblem& problem, const AlignmentConfig& cfg) {
  problem.validate();
  const auto map = align_detail::make_param_map(problem, cfg);
  Eigen::VectorXd x = align_detail::params_from_poses(map, problem.init_poses);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(map.size()), v = Eigen::VectorXd::Zero(map.size());
  Eigen::VectorXd grad(map.size());

  AlignResult result;
  Eigen::VectorXd best_x = x;
  double best_loss = std::numeric_limits<double>::infinity();

  for (int it = 0; it <= cfg.iterations; ++it) {
    const auto losses = align_detail::eval_losses(problem, cfg, map, x, &grad, cfg.w_b, cfg.w_h,
                                                  cfg.w_tc, cfg.w_hoi);
    const double total = losses.weighted(cfg);
    result.trace.push_back(
        {it, losses.body, losses.hand, losses.temporal, losses.hoi, total});
    if (!std::isfinite(total)) throw NonFiniteLoss();
    if (total < best_loss) {
      best_loss = total;
      best_x = x;
    }
    if (it == cfg.iterations) break;

    m = cfg.beta1 * m + (1 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1 - cfg.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1 - std::pow(cfg.beta1, it + 1);
    const double bc2 = 1 - std::pow(cfg.beta2, it + 1);
    x -= (cfg.lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + cfg.eps).matrix());
  }

  result.poses = align_detail::poses_from_params(map, problem.init_poses, best_x);
  return result;
}

}  // namespace devi
