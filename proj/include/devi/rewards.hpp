#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "devi/geometry.hpp"
#include "devi/targets.hpp"
#include "devi/textio.hpp"

namespace devi {

struct RewardConfig {
  double lam_jp = 100.0;   // m^-2
  double lam_jv = 0.1;     // s^2 m^-2
  double lam_jr = 2.0;     // rad^-2
  double lam_lp = 500.0;   // m^-2
  double lam_lr = 2.0;     // rad^-2
  double lam_pw = 5e-4;    // per Watt
  double lam_o = 0.01;     // px^-2
  double lam_c = 1000.0;   // m^-2
  double tau_contact = 1.0;  // N
  int sensors_per_hand = 4;
  // 2d: pixel-track reward (default); 6d: full object pose (ablation);
  // off: object reward disabled (ablation).
  std::string object_reward_mode = "2d";
  double lam_o6_pos = 20.0, lam_o6_rot = 1.0;
  double behind_camera_px = 1200.0;  // pixel error charged for invisible vertices

  void save_into(TextDoc& doc) const {
    doc.add("reward", "lam_jp", lam_jp);
    doc.add("reward", "lam_jv", lam_jv);
    doc.add("reward", "lam_jr", lam_jr);
    doc.add("reward", "lam_lp", lam_lp);
    doc.add("reward", "lam_lr", lam_lr);
    doc.add("reward", "lam_pw", lam_pw);
    doc.add("reward", "lam_o", lam_o);
    doc.add("reward", "lam_c", lam_c);
    doc.add("reward", "tau_contact", tau_contact);
    doc.add("reward", "sensors_per_hand", sensors_per_hand);
    doc.add("reward", "object_reward_mode", object_reward_mode);
    doc.add("reward", "lam_o6_pos", lam_o6_pos);
    doc.add("reward", "lam_o6_rot", lam_o6_rot);
    doc.add("reward", "behind_camera_px", behind_camera_px);
  }

  static RewardConfig load_from(const TextDoc& doc) {
    RewardConfig c;
    c.lam_jp = doc.get_or("reward", "lam_jp", c.lam_jp);
    c.lam_jv = doc.get_or("reward", "lam_jv", c.lam_jv);
    c.lam_jr = doc.get_or("reward", "lam_jr", c.lam_jr);
    c.lam_lp = doc.get_or("reward", "lam_lp", c.lam_lp);
    c.lam_lr = doc.get_or("reward", "lam_lr", c.lam_lr);
    c.lam_pw = doc.get_or("reward", "lam_pw", c.lam_pw);
    c.lam_o = doc.get_or("reward", "lam_o", c.lam_o);
    c.lam_c = doc.get_or("reward", "lam_c", c.lam_c);
    c.tau_contact = doc.get_or("reward", "tau_contact", c.tau_contact);
    c.sensors_per_hand =
        static_cast<int>(doc.get_or("reward", "sensors_per_hand", c.sensors_per_hand));
    c.object_reward_mode = doc.get_or("reward", "object_reward_mode", c.object_reward_mode);
    c.lam_o6_pos = doc.get_or("reward", "lam_o6_pos", c.lam_o6_pos);
    c.lam_o6_rot = doc.get_or("reward", "lam_o6_rot", c.lam_o6_rot);
    c.behind_camera_px = doc.get_or("reward", "behind_camera_px", c.behind_camera_px);
    return c;
  }
};

/// A hybrid-target frame prepared for per-step reward evaluation.
struct TargetFrame {
  std::vector<Vec3> joints;              // noisy target positions
  std::vector<Vec3> joint_vel;           // finite differences of the above
  std::vector<Rotation> local_rot;
  std::vector<JointTransform> world;     // FK of the target pose
  std::array<uint8_t, 2> psi{0, 0};
  std::vector<Vec2> track_px;            // object evidence at this frame
  std::vector<uint8_t> track_vis;
};

inline std::vector<TargetFrame> make_target_frames(const HybridTarget& tgt,
                                                   const Skeleton& skel) {
  std::vector<TargetFrame> frames(tgt.frames());
  for (int t = 0; t < tgt.frames(); ++t) {
    TargetFrame& f = frames[t];
    f.joints = tgt.joints[t];
    f.local_rot = tgt.local_rot[t];
    f.world = forward_kinematics(skel, tgt.pose_at(t));
    f.psi = {tgt.contact[0][t], tgt.contact[1][t]};
    f.track_px = tgt.tracks.points[t];
    f.track_vis = tgt.tracks.visible[t];
    const int tp = std::max(0, t - 1), tn = std::min(tgt.frames() - 1, t + 1);
    const double dt = (tn - tp) / tgt.fps;
    f.joint_vel.resize(f.joints.size());
    for (size_t j = 0; j < f.joints.size(); ++j)
      f.joint_vel[j] = (tgt.joints[tn][j] - tgt.joints[tp][j]) / dt;
  }
  return frames;
}

struct HumanRewardTerms {
  double jp, jv, jr, lp, lr, pw;
  double total() const { return jp * jv * jr * lp * lr * pw; }
};

/// Product of exponential joint-difference rewards and the power penalty.
/// Hand terms are measured in wrist-centric coordinates.
inline HumanRewardTerms human_tracking_reward_terms(
    const Skeleton& skel, const std::vector<JointTransform>& sim_world,
    const std::vector<Vec3>& sim_linvel, double sim_power, const TargetFrame& tgt,
    const RewardConfig& cfg) {
  const int J = skel.size();
  if (static_cast<int>(sim_world.size()) != J || static_cast<int>(tgt.joints.size()) != J)
    throw ShapeMismatch("human_tracking_reward joint counts");

  double mse_p = 0, mse_v = 0, mse_r = 0;
  int n_r = 0;
  for (int j = 0; j < J; ++j) {
    mse_p += (sim_world[j].pos - tgt.joints[j]).squaredNorm();
    mse_v += (sim_linvel[j] - tgt.joint_vel[j]).squaredNorm();
    if (j > 0) {
      const int p = skel.joints[j].parent;
      const Rotation sim_local = sim_world[p].rot.inverse() * sim_world[j].rot;
      const double d = geodesic_distance(sim_local, tgt.local_rot[j]);
      mse_r += d * d;
      ++n_r;
    }
  }
  mse_p /= J;
  mse_v /= J;
  if (n_r) mse_r /= n_r;

  double mse_lp = 0, mse_lr = 0;
  int n_h = 0;
  for (int side = 0; side < 2; ++side) {
    const int w = skel.wrists[side];
    const Mat3 Rw_sim = sim_world[w].rot.matrix().transpose();
    const Mat3 Rw_tgt = tgt.world[w].rot.matrix().transpose();
    for (int j = 0; j < J; ++j) {
      if (skel.joints[j].label != JointLabel::Hand || skel.hand_side(j) != side) continue;
      const Vec3 loc_sim = Rw_sim * (sim_world[j].pos - sim_world[w].pos);
      const Vec3 loc_tgt = Rw_tgt * (tgt.joints[j] - tgt.joints[w]);
      mse_lp += (loc_sim - loc_tgt).squaredNorm();
      const Rotation rel_sim = sim_world[w].rot.inverse() * sim_world[j].rot;
      const Rotation rel_tgt = tgt.world[w].rot.inverse() * tgt.world[j].rot;
      const double d = geodesic_distance(rel_sim, rel_tgt);
      mse_lr += d * d;
      ++n_h;
    }
  }
  if (n_h) {
    mse_lp /= n_h;
    mse_lr /= n_h;
  }

  return {std::exp(-cfg.lam_jp * mse_p), std::exp(-cfg.lam_jv * mse_v),
          std::exp(-cfg.lam_jr * mse_r), std::exp(-cfg.lam_lp * mse_lp),
          std::exp(-cfg.lam_lr * mse_lr), std::exp(-cfg.lam_pw * std::max(0.0, sim_power))};
}

inline double human_tracking_reward(const Skeleton& skel,
                                    const std::vector<JointTransform>& sim_world,
                                    const std::vector<Vec3>& sim_linvel, double sim_power,
                                    const TargetFrame& tgt, const RewardConfig& cfg) {
  return human_tracking_reward_terms(skel, sim_world, sim_linvel, sim_power, tgt, cfg).total();
}

/// Mean squared pixel error between the projected tracked vertices of the
/// simulated object and the 2D reference, through exp(-lam_o * err).
inline double object_tracking_reward(const RigidPose& object_pose,
                                     const std::vector<Vec3>& tracked_local,
                                     const std::vector<Vec2>& target_px,
                                     const std::vector<uint8_t>& target_vis,
                                     const CameraModel& cam, const RewardConfig& cfg) {
  if (tracked_local.size() != target_px.size() || target_px.size() != target_vis.size())
    throw ShapeMismatch("object_tracking_reward sizes");
  double acc = 0;
  int n = 0;
  const Mat3 R = object_pose.rot.matrix();
  for (size_t m = 0; m < tracked_local.size(); ++m) {
    if (!target_vis[m]) continue;
    const Vec3 world = object_pose.pos + R * tracked_local[m];
    const Vec3 c = cam.to_camera(world);
    double err;
    if (c.z() <= kMinCameraDepth) {
      err = cfg.behind_camera_px * cfg.behind_camera_px;
    } else {
      const Vec2 px(cam.f * c.x() / c.z() + cam.cx, cam.f * c.y() / c.z() + cam.cy);
      err = (px - target_px[m]).squaredNorm();
    }
    acc += err;
    ++n;
  }
  if (n == 0) return 1.0;
  return std::exp(-cfg.lam_o * acc / n);
}

/// 6D object-pose reward used only by the "w/o 2D reward" ablation.
inline double object_pose_reward(const RigidPose& object_pose, const RigidPose& reference,
                                 const RewardConfig& cfg) {
  const double dpos = (object_pose.pos - reference.pos).squaredNorm();
  const double drot = geodesic_distance(object_pose.rot, reference.rot);
  return std::exp(-cfg.lam_o6_pos * dpos) * std::exp(-cfg.lam_o6_rot * drot * drot);
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Contact force and distance rewards gated by the per-hand contact label;
/// hands multiply.
inline double contact_reward(const std::array<std::vector<double>, 2>& sensor_forces,
                             const std::array<std::vector<Vec3>, 2>& hand_joints,
                             const std::vector<Vec3>& object_vertices,
                             const std::array<uint8_t, 2>& psi, const RewardConfig& cfg) {
  double r_cf = 1.0, r_cd = 1.0;
  for (int side = 0; side < 2; ++side) {
    const double p = psi[side] ? 1.0 : 0.0;
    double ratio = 0.0;
    if (!sensor_forces[side].empty()) {
      int hits = 0;
      for (double f : sensor_forces[side]) hits += f > cfg.tau_contact ? 1 : 0;
      ratio = static_cast<double>(hits) / sensor_forces[side].size();
    }
    r_cf *= (1.0 - p) + p * ratio;
    double cd = 1.0;
    if (psi[side] && !hand_joints[side].empty() && !object_vertices.empty()) {
      const double d2 = one_sided_chamfer(hand_joints[side], object_vertices);
      cd = (1.0 - p) + p * sigmoid(-cfg.lam_c * d2);
    }
    r_cd *= cd;
  }
  return r_cf * r_cd;
}

struct HybridRewardParts {
  double human = 1, object = 1, contact = 1;
  double total() const { return human * object * contact; }
};

inline double hybrid_reward(double human, double object, double contact) {
  return human * object * contact;
}

}  // namespace devi
