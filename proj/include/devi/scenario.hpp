#pragma once

#include <random>
#include <string>
#include <vector>

#include "devi/sim.hpp"
#include "devi/targets.hpp"

namespace devi {

/// Upper-body desk skeleton: 13 body joints plus 3 fingers x 2 segments per
/// hand. The human faces +y with z up; +x is its right.
inline Skeleton build_desk_skeleton() {
  Skeleton s;
  auto add = [&](const std::string& name, int parent, const Vec3& offset, const Vec3& lo,
                 const Vec3& hi, JointLabel label) {
    Joint j;
    j.name = name;
    j.parent = parent;
    j.offset = offset;
    j.limit_lo = lo;
    j.limit_hi = hi;
    j.label = label;
    s.joints.push_back(j);
    return static_cast<int>(s.joints.size()) - 1;
  };
  const Vec3 zero = Vec3::Zero();
  const JointLabel B = JointLabel::Body, H = JointLabel::Hand;

  const int pelvis = add("pelvis", -1, zero, zero, zero, B);
  const int spine1 =
      add("spine1", pelvis, {0, 0, 0.12}, {-0.9, -0.4, -0.5}, {0.3, 0.4, 0.5}, B);
  const int spine2 =
      add("spine2", spine1, {0, 0, 0.14}, {-0.9, -0.4, -0.5}, {0.3, 0.4, 0.5}, B);
  const int neck = add("neck", spine2, {0, 0, 0.14}, {-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}, B);
  add("head", neck, {0, 0, 0.10}, zero, zero, B);

  const int clav_l = add("clav_l", spine2, {-0.03, 0, 0.12}, {0, -0.3, -0.3}, {0, 0.3, 0.3}, B);
  const int shoul_l =
      add("shoul_l", clav_l, {-0.14, 0, 0.02}, {-1.2, -1.6, -1.6}, {1.2, 1.6, 1.6}, B);
  const int elbow_l =
      add("elbow_l", shoul_l, {-0.26, 0, 0}, {-0.35, -0.35, -2.4}, {0.35, 0.35, 0.1}, B);
  const int wrist_l =
      add("wrist_l", elbow_l, {-0.25, 0, 0}, {-1.2, -1.2, -1.2}, {1.2, 1.2, 1.2}, B);

  const int clav_r = add("clav_r", spine2, {0.03, 0, 0.12}, {0, -0.3, -0.3}, {0, 0.3, 0.3}, B);
  const int shoul_r =
      add("shoul_r", clav_r, {0.14, 0, 0.02}, {-1.2, -1.6, -1.6}, {1.2, 1.6, 1.6}, B);
  const int elbow_r =
      add("elbow_r", shoul_r, {0.26, 0, 0}, {-0.35, -0.35, -0.1}, {0.35, 0.35, 2.4}, B);
  const int wrist_r =
      add("wrist_r", elbow_r, {0.25, 0, 0}, {-1.2, -1.2, -1.2}, {1.2, 1.2, 1.2}, B);

  auto add_finger = [&](int wrist, double sx, double fy, const std::string& suffix) {
    const Vec3 flex_lo(0, -1.6, 0), flex_hi(0, 1.6, 0);
    const int base = add("f" + suffix + "b", wrist, {sx * 0.095, fy, 0}, flex_lo, flex_hi, H);
    add("f" + suffix + "t", base, {sx * 0.045, 0, 0}, flex_lo, flex_hi, H);
  };
  for (int side = 0; side < 2; ++side) {
    const int wrist = side == 0 ? wrist_l : wrist_r;
    const double sx = side == 0 ? -1.0 : 1.0;
    const std::string s_name = side == 0 ? "_l" : "_r";
    add_finger(wrist, sx, 0.022, "1" + s_name);
    add_finger(wrist, sx, 0.0, "2" + s_name);
    add_finger(wrist, sx, -0.022, "3" + s_name);
  }
  for (int j = 0; j < s.size(); ++j)
    if (s.joints[j].label == H && s.joints[j].name.back() == 't') s.fingertips.push_back(j);
  s.wrists = {wrist_l, wrist_r};
  s.validate();
  return s;
}

struct NoiseConfig {
  double joint_pos_rms = 0.005;  // E[|dp|^2] = rms^2 per joint, meters
  double joint_rot_sigma = 0.01; // axis-angle noise, radians
  double root_pos_sigma = 0.002;
  double px_sigma = 1.0;         // 2D keypoint evidence noise, pixels
  double arm_bias_rot = 0.0;     // constant per-scenario bias on the push-arm
                                 // chain, radians (misaligned scenarios)
};

struct ScenarioConfig {
  std::string name = "desk_slide";
  unsigned seed = 0;
  double fps = 60.0;
  int frames = 120;
  int image_width = 1024, image_height = 576;

  double root_height = 0.95;
  Vec3 box_dims{0.08, 0.08, 0.08};
  int box_subdiv = 3;
  double box_mass = 0.35;
  double friction = 0.5;
  Vec3 box_init{0.10, 0.32, 0.0};  // z filled from the table top
  Vec3 slide{0.10, 0.0, 0.0};
  int hand = 1;  // 0 left, 1 right

  Vec3 table_center{0, 0.4, 0.4};
  Vec3 table_half{0.5, 0.25, 0.4};

  Vec3 camera_eye{0.1, 2.4, 1.45};
  Vec3 camera_lookat{0.05, 0.3, 0.9};

  // Phase durations, seconds.
  double t_settle = 0.4, t_reach = 0.7, t_dwell = 0.1, t_slide = 0.6, t_retreat = 0.2;

  int track_points = 24;
  double contact_tau_px = 0.25;

  NoiseConfig noise;

  double table_top() const { return table_center.z() + table_half.z(); }
  Vec3 box_center_init() const {
    return {box_init.x(), box_init.y(), table_top() + 0.5 * box_dims.z()};
  }

  void save(const std::string& path) const;
  static ScenarioConfig load(const std::string& path);
};

struct ReferenceMotion {
  double fps = 60.0;
  Skeleton skel;
  TriMesh object_mesh;
  CameraModel camera;
  std::vector<Pose> poses;
  std::vector<RigidPose> object;
};

namespace detail {

inline double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

inline void clamp_to_limits(const Skeleton& skel, Pose& pose, int j) {
  const Joint& joint = skel.joints[j];
  Vec3 e = euler_xyz_from_matrix(pose.local[j].matrix());
  for (int a = 0; a < 3; ++a) e[a] = std::clamp(e[a], joint.limit_lo[a], joint.limit_hi[a]);
  pose.local[j] = Rotation::from_matrix(rot_x(e[0]) * rot_y(e[1]) * rot_z(e[2]));
}

/// Damped least-squares IK moving `end_joint` to `target` by adjusting the
/// chain's local rotations (right-perturbation Jacobian), respecting limits.
inline void solve_position_ik(const Skeleton& skel, Pose& pose, const std::vector<int>& chain,
                              int end_joint, const Vec3& target, int iters = 16,
                              double damping = 0.08) {
  const int n = static_cast<int>(chain.size());
  for (int it = 0; it < iters; ++it) {
    const auto world = forward_kinematics(skel, pose);
    const Vec3 err = target - world[end_joint].pos;
    if (err.norm() < 1e-6) break;
    Eigen::MatrixXd J(3, 3 * n);
    for (int i = 0; i < n; ++i) {
      const int j = chain[i];
      J.block<3, 3>(0, 3 * i) = -skew(world[end_joint].pos - world[j].pos) *
                                world[j].rot.matrix();
    }
    const Mat3 JJt = J * J.transpose() + damping * damping * Mat3::Identity();
    Eigen::VectorXd delta = J.transpose() * JJt.ldlt().solve(err);
    const double norm = delta.norm();
    if (norm > 0.25) delta *= 0.25 / norm;
    for (int i = 0; i < n; ++i) {
      pose.local[chain[i]] =
          pose.local[chain[i]] * Rotation::from_axis_angle(delta.segment<3>(3 * i));
      clamp_to_limits(skel, pose, chain[i]);
    }
  }
}

}  // namespace detail

/// Distance from the wrist joint to the front of the fingertip sensors
/// along the straight hand, used to place the wrist so the fingers touch.
inline double hand_reach(const Skeleton& skel, int side) {
  const int wrist = skel.wrists[side];
  double best = 0;
  for (int f : skel.fingertips) {
    if (skel.hand_side(f) != side) continue;
    const int base = skel.joints[f].parent;
    if (skel.joints[base].parent != wrist) continue;
    best = std::max(best, skel.joints[base].offset.norm() + skel.joints[f].offset.norm());
  }
  return best + 0.9 * 0.035 + 0.013;  // tip extent + sensor radius
}

inline Pose desk_ready_pose(const ScenarioConfig& cfg, const Skeleton& skel) {
  Pose pose = Pose::rest(skel);
  pose.root_pos = Vec3(0, 0, cfg.root_height);
  auto set = [&](const char* name, double x, double y, double z) {
    for (int j = 0; j < skel.size(); ++j)
      if (skel.joints[j].name == name)
        pose.local[j] =
            Rotation::from_matrix(detail::rot_x(x) * detail::rot_y(y) * detail::rot_z(z));
  };
  set("spine1", -0.12, 0, 0);
  set("spine2", -0.12, 0, 0);
  set("shoul_l", 0, -1.25, -0.25);
  set("elbow_l", 0, 0, -0.45);
  set("shoul_r", 0, 0.9, 0.45);
  set("elbow_r", 0, 0, 0.9);
  const double curl_base = 0.15, curl_tip = 0.25;
  for (int f : skel.fingertips) {
    const int b = skel.joints[f].parent;
    pose.local[b] = Rotation::from_matrix(detail::rot_y(curl_base));
    pose.local[f] = Rotation::from_matrix(detail::rot_y(curl_tip));
  }
  return pose;
}

/// Scripted ground truth for the desk task: settle, reach to the box, dwell,
/// slide it, retreat. Kinematic only; the policy has to realize it in
/// simulation.
inline ReferenceMotion script_reference(const ScenarioConfig& cfg) {
  if (cfg.frames < 2 || cfg.fps <= 0) throw InvalidScenario("frames/fps");
  ReferenceMotion ref;
  ref.fps = cfg.fps;
  ref.skel = build_desk_skeleton();
  ref.object_mesh = make_box_mesh(cfg.box_dims, cfg.box_subdiv);
  ref.camera = CameraModel::look_at(cfg.camera_eye, cfg.camera_lookat, cfg.image_width,
                                    cfg.image_height);

  const Skeleton& skel = ref.skel;
  const int side = cfg.hand;
  std::vector<int> chain;
  for (int j = 0; j < skel.size(); ++j) {
    const std::string& n = skel.joints[j].name;
    if (n.rfind("spine", 0) == 0) chain.push_back(j);
  }
  const std::string suffix = side == 0 ? "_l" : "_r";
  for (const char* base : {"clav", "shoul", "elbow", "wrist"})
    for (int j = 0; j < skel.size(); ++j)
      if (skel.joints[j].name == std::string(base) + suffix) chain.push_back(j);
  int tip = -1;
  for (int j = 0; j < skel.size(); ++j)
    if (skel.joints[j].name == "f2" + suffix + "t") tip = j;
  if (tip < 0) throw InvalidScenario("middle fingertip not found");

  const Vec3 box0 = cfg.box_center_init();
  const double sign = side == 0 ? 1.0 : -1.0;  // approach from the -x side with the right hand
  const Vec3 face = box0 + Vec3(sign * 0.5 * cfg.box_dims.x(), 0, 0);
  // Place the fingertip joint so its sensor sphere just touches the face.
  const double tip_backoff = 0.9 * 0.035 + 0.013 - 0.005;
  const Vec3 contact_tip = face + Vec3(sign * tip_backoff, 0, 0);

  Pose pose = desk_ready_pose(cfg, skel);
  const Vec3 ready_tip = forward_kinematics(skel, pose)[tip].pos;

  const double t0 = cfg.t_settle, t1 = t0 + cfg.t_reach, t2 = t1 + cfg.t_dwell,
               t3 = t2 + cfg.t_slide;
  auto slide_s = [&](double time) { return detail::smoothstep((time - t2) / cfg.t_slide); };
  auto tip_target = [&](double time) -> Vec3 {
    if (time < t0) return ready_tip;
    if (time < t1)
      return ready_tip +
             detail::smoothstep((time - t0) / cfg.t_reach) * (contact_tip - ready_tip);
    if (time < t2) return contact_tip;
    if (time < t3) return contact_tip + slide_s(time) * cfg.slide;
    const Vec3 end = contact_tip + cfg.slide;
    return end + detail::smoothstep((time - t3) / cfg.t_retreat) *
                     Vec3(sign * 0.06, -0.10, 0.04);
  };

  for (int t = 0; t < cfg.frames; ++t) {
    const double time = t / cfg.fps;
    detail::solve_position_ik(skel, pose, chain, tip, tip_target(time), t == 0 ? 120 : 20);
    ref.poses.push_back(pose);

    RigidPose obj;
    obj.pos = box0 + slide_s(time) * cfg.slide;
    ref.object.push_back(obj);
  }
  return ref;
}

/// Render the scripted ground truth into a hybrid imitation target:
/// noisy/biased 3D human, exact 2D object tracks, contact labels inferred
/// from track motion, and 2D keypoint evidence. Deterministic per seed.
inline HybridTarget synth_reference(const ScenarioConfig& cfg, const NoiseConfig& noise,
                                    unsigned seed) {
  const ReferenceMotion ref = script_reference(cfg);
  const Skeleton& skel = ref.skel;
  std::mt19937_64 rng(seed * 1000003u + 17u);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto nvec = [&](double sigma) { return Vec3(gauss(rng), gauss(rng), gauss(rng)) * sigma; };

  HybridTarget tgt;
  tgt.fps = cfg.fps;
  tgt.camera = ref.camera;
  tgt.body_ids = skel.joints_with_label(JointLabel::Body);
  tgt.hand_ids = skel.joints_with_label(JointLabel::Hand);

  // Constant arm bias models the estimators' depth misalignment.
  std::vector<int> bias_joints;
  std::vector<Rotation> bias_rot;
  if (noise.arm_bias_rot > 0) {
    const std::string suffix = cfg.hand == 0 ? "_l" : "_r";
    for (const char* base : {"shoul", "elbow", "wrist"})
      for (int j = 0; j < skel.size(); ++j)
        if (skel.joints[j].name == std::string(base) + suffix) {
          bias_joints.push_back(j);
          bias_rot.push_back(Rotation::from_axis_angle(nvec(1.0).normalized() *
                                                       noise.arm_bias_rot));
        }
  }

  const double pos_axis_sigma = noise.joint_pos_rms / std::sqrt(3.0);
  for (int t = 0; t < cfg.frames; ++t) {
    Pose p = ref.poses[t];
    for (size_t k = 0; k < bias_joints.size(); ++k)
      p.local[bias_joints[k]] = p.local[bias_joints[k]] * bias_rot[k];
    if (noise.joint_rot_sigma > 0)
      for (int j = 1; j < skel.size(); ++j)
        p.local[j] = p.local[j] * Rotation::from_axis_angle(nvec(noise.joint_rot_sigma));
    p.root_pos += nvec(noise.root_pos_sigma / std::sqrt(3.0));

    std::vector<Vec3> joints = joint_positions(skel, p);
    if (noise.joint_pos_rms > 0)
      for (Vec3& x : joints) x += nvec(pos_axis_sigma);

    tgt.root_pos.push_back(p.root_pos);
    tgt.root_rot.push_back(p.root_rot);
    tgt.joints.push_back(std::move(joints));
    tgt.local_rot.push_back(p.local);
  }

  // Object reference from the exact object motion.
  const ObjectReference obj =
      make_object_reference(ref.object_mesh, ref.object, ref.camera, cfg.track_points);
  tgt.tracks = obj.tracks;
  tgt.tracked_vertex_ids = obj.vertex_ids;

  // Contact labels for the scripted hand; the idle hand never interacts.
  TrackSet hand_px;
  hand_px.points.assign(cfg.frames, {});
  hand_px.visible.assign(cfg.frames, {});
  std::vector<int> hand_kps = {skel.wrists[cfg.hand]};
  for (int f : skel.fingertips)
    if (skel.hand_side(f) == cfg.hand) hand_kps.push_back(f);
  for (int t = 0; t < cfg.frames; ++t) {
    const auto gt_joints = joint_positions(skel, ref.poses[t]);
    for (int j : hand_kps) {
      hand_px.points[t].push_back(project(ref.camera, gt_joints[j]));
      hand_px.visible[t].push_back(1);
    }
  }
  const auto psi = estimate_contact_labels(tgt.tracks, hand_px, cfg.contact_tau_px);
  tgt.contact[cfg.hand] = psi;
  tgt.contact[1 - cfg.hand].assign(cfg.frames, 0);

  // 2D keypoint evidence from the true poses.
  for (int t = 0; t < cfg.frames; ++t) {
    const auto gt_joints = joint_positions(skel, ref.poses[t]);
    std::vector<Vec2> body, hand;
    for (int j : tgt.body_ids)
      body.push_back(project(ref.camera, gt_joints[j]) +
                     Vec2(gauss(rng), gauss(rng)) * noise.px_sigma);
    for (int j : tgt.hand_ids)
      hand.push_back(project(ref.camera, gt_joints[j]) +
                     Vec2(gauss(rng), gauss(rng)) * noise.px_sigma);
    tgt.est2d_body.push_back(std::move(body));
    tgt.est2d_hand.push_back(std::move(hand));
  }

  tgt.validate();
  return tgt;
}

inline void ScenarioConfig::save(const std::string& path) const {
  TextDoc doc;
  doc.add("scenario", "name", name);
  doc.add("scenario", "seed", static_cast<int>(seed));
  doc.add("scenario", "fps", fps);
  doc.add("scenario", "frames", frames);
  doc.add("scenario", "image_width", image_width);
  doc.add("scenario", "image_height", image_height);
  doc.add("scenario", "root_height", root_height);
  auto add3 = [&](const char* key, const Vec3& v) {
    const double a[3] = {v.x(), v.y(), v.z()};
    doc.add_seq("scenario", key, a, a + 3);
  };
  add3("box_dims", box_dims);
  doc.add("scenario", "box_subdiv", box_subdiv);
  doc.add("scenario", "box_mass", box_mass);
  doc.add("scenario", "friction", friction);
  add3("box_init", box_init);
  add3("slide", slide);
  doc.add("scenario", "hand", hand);
  add3("table_center", table_center);
  add3("table_half", table_half);
  add3("camera_eye", camera_eye);
  add3("camera_lookat", camera_lookat);
  doc.add("scenario", "t_settle", t_settle);
  doc.add("scenario", "t_reach", t_reach);
  doc.add("scenario", "t_dwell", t_dwell);
  doc.add("scenario", "t_slide", t_slide);
  doc.add("scenario", "t_retreat", t_retreat);
  doc.add("scenario", "track_points", track_points);
  doc.add("scenario", "contact_tau_px", contact_tau_px);
  doc.add("noise", "joint_pos_rms", noise.joint_pos_rms);
  doc.add("noise", "joint_rot_sigma", noise.joint_rot_sigma);
  doc.add("noise", "root_pos_sigma", noise.root_pos_sigma);
  doc.add("noise", "px_sigma", noise.px_sigma);
  doc.add("noise", "arm_bias_rot", noise.arm_bias_rot);
  doc.save(path);
}

inline ScenarioConfig ScenarioConfig::load(const std::string& path) {
  const TextDoc doc = TextDoc::load(path);
  ScenarioConfig c;
  c.name = doc.get("scenario", "name");
  c.seed = static_cast<unsigned>(doc.get_int("scenario", "seed"));
  c.fps = doc.get_double("scenario", "fps");
  c.frames = doc.get_int("scenario", "frames");
  c.image_width = doc.get_int("scenario", "image_width");
  c.image_height = doc.get_int("scenario", "image_height");
  c.root_height = doc.get_double("scenario", "root_height");
  auto get3 = [&](const char* key) {
    const auto v = doc.get_vec("scenario", key);
    return Vec3(v[0], v[1], v[2]);
  };
  c.box_dims = get3("box_dims");
  c.box_subdiv = doc.get_int("scenario", "box_subdiv");
  c.box_mass = doc.get_double("scenario", "box_mass");
  c.friction = doc.get_double("scenario", "friction");
  c.box_init = get3("box_init");
  c.slide = get3("slide");
  c.hand = doc.get_int("scenario", "hand");
  c.table_center = get3("table_center");
  c.table_half = get3("table_half");
  c.camera_eye = get3("camera_eye");
  c.camera_lookat = get3("camera_lookat");
  c.t_settle = doc.get_double("scenario", "t_settle");
  c.t_reach = doc.get_double("scenario", "t_reach");
  c.t_dwell = doc.get_double("scenario", "t_dwell");
  c.t_slide = doc.get_double("scenario", "t_slide");
  c.t_retreat = doc.get_double("scenario", "t_retreat");
  c.track_points = doc.get_int("scenario", "track_points");
  c.contact_tau_px = doc.get_double("scenario", "contact_tau_px");
  c.noise.joint_pos_rms = doc.get_double("noise", "joint_pos_rms");
  c.noise.joint_rot_sigma = doc.get_double("noise", "joint_rot_sigma");
  c.noise.root_pos_sigma = doc.get_double("noise", "root_pos_sigma");
  c.noise.px_sigma = doc.get_double("noise", "px_sigma");
  c.noise.arm_bias_rot = doc.get_double("noise", "arm_bias_rot");
  return c;
}

/// Apply the scenario's seed-driven jitter (box placement). Keeps the slide
/// itself fixed so tasks stay comparable across seeds.
inline ScenarioConfig jitter_scenario(ScenarioConfig cfg, unsigned seed) {
  cfg.seed = seed;
  std::mt19937_64 rng(seed * 7919u + 3u);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  cfg.box_init.x() += 0.015 * u(rng);
  cfg.box_init.y() += 0.015 * u(rng);
  return cfg;
}

inline SceneSpec make_scene_spec(const ScenarioConfig& cfg, const std::string& skeleton_path,
                                 const std::string& object_path) {
  SceneSpec spec;
  spec.skeleton_path = skeleton_path;
  spec.object_path = object_path;
  spec.object_init.pos = cfg.box_center_init();
  spec.object_mass = cfg.box_mass;
  spec.friction = cfg.friction;
  spec.table_center = cfg.table_center;
  spec.table_half = cfg.table_half;
  return spec;
}

}  // namespace devi
