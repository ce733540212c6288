#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "devi/rl.hpp"
#include "devi/scenario.hpp"

namespace devi {

struct EpisodeStep {
  double time = 0;
  std::vector<Vec3> joints;        // world joint positions
  RigidPose object_pose;
  Vec3 object_linvel = Vec3::Zero();
  VecX action;
  double r_human = 0, r_object = 0, r_contact = 0, r_total = 0;
  std::array<uint8_t, 2> psi{0, 0};
};

struct EpisodeTrajectory {
  std::string reference_id;
  double fps = 60.0;
  int init_frame = 0;
  std::vector<EpisodeStep> steps;

  void validate(int reference_frames) const {
    if (static_cast<int>(steps.size()) > reference_frames)
      throw ShapeMismatch("trajectory longer than reference");
    for (size_t i = 1; i < steps.size(); ++i)
      if (steps[i].time <= steps[i - 1].time) throw ShapeMismatch("timestamps not monotone");
  }
};

struct MetricsReport {
  double mpjpe_body_mm = 0, mpjpe_hand_mm = 0, mpjpe_all_mm = 0;
  double t_root_mm = 0, t_obj_mm = 0;
  double o_obj_rad = 0;
  double c_prec_010 = 0, c_prec_0025 = 0;
  double d_hoi_mm = 0;
  bool success = false;
};

/// Success thresholds from the evaluation protocol: both the human and the
/// object must stay within 0.2 m on average.
inline bool success_criterion(double mpjpe_all_m, double t_obj_m) {
  return mpjpe_all_m < 0.2 && t_obj_m < 0.2;
}

/// RMS nearest-vertex distance from the contacting hand's joints to the
/// object, in meters (linear, so thresholds like 0.025 m are meaningful).
inline double contact_distance(const Skeleton& skel, const std::vector<Vec3>& joints,
                               const TriMesh& object_mesh, const RigidPose& object_pose,
                               const std::array<uint8_t, 2>& psi) {
  std::vector<Vec3> part;
  for (int side = 0; side < 2; ++side) {
    if (!psi[side]) continue;
    part.push_back(joints[skel.wrists[side]]);
    for (int j = 0; j < skel.size(); ++j)
      if (skel.joints[j].label == JointLabel::Hand && skel.hand_side(j) == side)
        part.push_back(joints[j]);
  }
  if (part.empty()) return 0.0;
  std::vector<Vec3> verts(object_mesh.vertices.size());
  const Mat3 R = object_pose.rot.matrix();
  for (size_t i = 0; i < verts.size(); ++i)
    verts[i] = object_pose.pos + R * object_mesh.vertices[i];
  return std::sqrt(one_sided_chamfer(part, verts));
}

inline MetricsReport compute_metrics(const EpisodeTrajectory& traj, const ReferenceMotion& gt) {
  if (traj.steps.empty()) throw LengthMismatch("empty trajectory");
  const Skeleton& skel = gt.skel;
  const int J = skel.size();
  if (static_cast<int>(traj.steps[0].joints.size()) != J)
    throw LengthMismatch("joint count vs reference skeleton");
  const int frames =
      std::min<int>(traj.steps.size(), static_cast<int>(gt.poses.size()) - traj.init_frame);

  double body = 0, hand = 0, all = 0, root = 0, tobj = 0, oobj = 0;
  int nb = 0, nh = 0;
  double hoi = 0;
  int n_contact = 0, hit_010 = 0, hit_0025 = 0;
  for (int i = 0; i < frames; ++i) {
    const int f = traj.init_frame + i;
    const auto gt_joints = joint_positions(skel, gt.poses[f]);
    double b = 0, h = 0;
    int cb = 0, ch = 0;
    for (int j = 0; j < J; ++j) {
      const double e = (traj.steps[i].joints[j] - gt_joints[j]).norm();
      if (skel.joints[j].label == JointLabel::Body) {
        b += e;
        ++cb;
      } else {
        h += e;
        ++ch;
      }
      all += e;
    }
    body += b / cb;
    hand += h / ch;
    nb = cb;
    nh = ch;
    root += (traj.steps[i].joints[0] - gt_joints[0]).norm();
    tobj += (traj.steps[i].object_pose.pos - gt.object[f].pos).norm();
    oobj += geodesic_distance(traj.steps[i].object_pose.rot, gt.object[f].rot);

    if (traj.steps[i].psi[0] || traj.steps[i].psi[1]) {
      const double d = contact_distance(skel, traj.steps[i].joints, gt.object_mesh,
                                        traj.steps[i].object_pose, traj.steps[i].psi);
      hoi += d;
      ++n_contact;
      if (d < 0.1) ++hit_010;
      if (d < 0.025) ++hit_0025;
    }
  }

  MetricsReport r;
  const double inv = 1.0 / frames;
  r.mpjpe_body_mm = 1000.0 * body * inv;
  r.mpjpe_hand_mm = 1000.0 * hand * inv;
  r.mpjpe_all_mm = 1000.0 * all * inv / J;
  r.t_root_mm = 1000.0 * root * inv;
  r.t_obj_mm = 1000.0 * tobj * inv;
  r.o_obj_rad = oobj * inv;
  if (n_contact) {
    r.c_prec_010 = static_cast<double>(hit_010) / n_contact;
    r.c_prec_0025 = static_cast<double>(hit_0025) / n_contact;
    r.d_hoi_mm = 1000.0 * hoi / n_contact;
  }
  r.success = success_criterion(r.mpjpe_all_mm / 1000.0, r.t_obj_mm / 1000.0);
  return r;
}

/// Roll the policy out deterministically (mean actions) and record the full
/// trajectory for metric computation.
inline EpisodeTrajectory run_episode(const TaskContext& ctx, ActorNet& actor,
                                     const std::string& reference_id) {
  EpisodeTrajectory traj;
  traj.reference_id = reference_id;
  traj.fps = ctx.target.fps;
  traj.init_frame = 0;
  SimState state = ctx.reset_at(0);
  MatF h(ctx.layout.h_dim, 1), o(ctx.layout.o_dim, 1), g(ctx.layout.g_dim, 1);
  const int F = ctx.frame_count();
  auto record = [&](const SimState& s, int frame, const VecX& action,
                    const HybridRewardParts& parts) {
    EpisodeStep step;
    step.time = s.time;
    step.joints.reserve(ctx.world.skel.size());
    for (const auto& jt : s.joint_world) step.joints.push_back(jt.pos);
    step.object_pose = s.object_pose;
    step.object_linvel = s.object_linvel;
    step.action = action;
    step.r_human = parts.human;
    step.r_object = parts.object;
    step.r_contact = parts.contact;
    step.r_total = parts.total();
    step.psi = ctx.frames[frame].psi;
    traj.steps.push_back(std::move(step));
  };
  record(state, 0, VecX(), ctx.step_reward(state, 0));
  for (int t = 0; t + 1 < F; ++t) {
    build_obs(ctx.world.skel, state, ctx.frames, t, ctx.layout, h.data(), o.data(), g.data());
    const MatF mu = actor.forward(h, o, g, false);
    Action a;
    a.pd_target = mu.col(0).cast<double>();
    state = step(ctx.world, state, a);
    record(state, t + 1, a.pd_target, ctx.step_reward(state, t + 1));
  }
  return traj;
}

inline void save_metrics_csv(const MetricsReport& r, const std::string& path) {
  CsvWriter csv(path, {"mpjpe_body_mm", "mpjpe_hand_mm", "mpjpe_all_mm", "t_root_mm",
                       "t_obj_mm", "o_obj_rad", "c_prec_010", "c_prec_0025", "d_hoi_mm",
                       "success"});
  csv.row({r.mpjpe_body_mm, r.mpjpe_hand_mm, r.mpjpe_all_mm, r.t_root_mm, r.t_obj_mm,
           r.o_obj_rad, r.c_prec_010, r.c_prec_0025, r.d_hoi_mm, r.success ? 1.0 : 0.0});
}

inline void save_metrics_report(const MetricsReport& r, const std::string& path) {
  TextDoc doc;
  doc.add("metrics", "mpjpe_body_mm", r.mpjpe_body_mm);
  doc.add("metrics", "mpjpe_hand_mm", r.mpjpe_hand_mm);
  doc.add("metrics", "mpjpe_all_mm", r.mpjpe_all_mm);
  doc.add("metrics", "t_root_mm", r.t_root_mm);
  doc.add("metrics", "t_obj_mm", r.t_obj_mm);
  doc.add("metrics", "o_obj_rad", r.o_obj_rad);
  doc.add("metrics", "c_prec_010", r.c_prec_010);
  doc.add("metrics", "c_prec_0025", r.c_prec_0025);
  doc.add("metrics", "d_hoi_mm", r.d_hoi_mm);
  doc.add("metrics", "success", r.success ? 1 : 0);
  doc.save(path);
}

/// Per-step curves for plotting.
inline void export_trajectory_csv(const EpisodeTrajectory& traj, const ReferenceMotion& gt,
                                  const std::string& path) {
  CsvWriter csv(path, {"time", "frame", "joint_err_mean_m", "obj_err_m", "r_human", "r_object",
                       "r_contact", "r_total", "psi_l", "psi_r"});
  const int frames =
      std::min<int>(traj.steps.size(), static_cast<int>(gt.poses.size()) - traj.init_frame);
  for (int i = 0; i < frames; ++i) {
    const int f = traj.init_frame + i;
    const auto gt_joints = joint_positions(gt.skel, gt.poses[f]);
    double e = 0;
    for (size_t j = 0; j < gt_joints.size(); ++j)
      e += (traj.steps[i].joints[j] - gt_joints[j]).norm();
    e /= gt_joints.size();
    csv.row({traj.steps[i].time, static_cast<double>(f), e,
             (traj.steps[i].object_pose.pos - gt.object[f].pos).norm(), traj.steps[i].r_human,
             traj.steps[i].r_object, traj.steps[i].r_contact, traj.steps[i].r_total,
             static_cast<double>(traj.steps[i].psi[0]),
             static_cast<double>(traj.steps[i].psi[1])});
  }
}

}  // namespace devi
