#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "devi/nn.hpp"
#include "devi/rewards.hpp"
#include "devi/scenario.hpp"
#include "devi/sim.hpp"
#include "devi/targets.hpp"
#include "devi/textio.hpp"

namespace devi {

struct PolicySpec {
  int enc_layers = 2, enc_width = 256;
  int attn_heads = 4;
  int actor_head_layers = 3, actor_head_width = 1024;
  int critic_layers = 4, critic_width = 1024;
  double log_std_init = -1.0;

  void save_into(TextDoc& doc) const {
    doc.add("policy", "enc_layers", enc_layers);
    doc.add("policy", "enc_width", enc_width);
    doc.add("policy", "attn_heads", attn_heads);
    doc.add("policy", "actor_head_layers", actor_head_layers);
    doc.add("policy", "actor_head_width", actor_head_width);
    doc.add("policy", "critic_layers", critic_layers);
    doc.add("policy", "critic_width", critic_width);
    doc.add("policy", "log_std_init", log_std_init);
  }
  static PolicySpec load_from(const TextDoc& doc) {
    PolicySpec s;
    s.enc_layers = static_cast<int>(doc.get_or("policy", "enc_layers", s.enc_layers));
    s.enc_width = static_cast<int>(doc.get_or("policy", "enc_width", s.enc_width));
    s.attn_heads = static_cast<int>(doc.get_or("policy", "attn_heads", s.attn_heads));
    s.actor_head_layers =
        static_cast<int>(doc.get_or("policy", "actor_head_layers", s.actor_head_layers));
    s.actor_head_width =
        static_cast<int>(doc.get_or("policy", "actor_head_width", s.actor_head_width));
    s.critic_layers = static_cast<int>(doc.get_or("policy", "critic_layers", s.critic_layers));
    s.critic_width = static_cast<int>(doc.get_or("policy", "critic_width", s.critic_width));
    s.log_std_init = doc.get_or("policy", "log_std_init", s.log_std_init);
    return s;
  }
};

struct TrainerConfig {
  double actor_lr = 2e-5, critic_lr = 1e-4;
  int rollout_steps = 32;
  int batch_size = 1024;
  int env_count = 32;
  double gamma = 0.99, gae_lambda = 0.95;
  double clip_eps = 0.2, value_clip = 0.2;
  int goal_horizon = 4;
  double precontact_init_prob = 0.5;
  double term_body_mean = 0.2, term_body_max = 0.4, term_fingertip_mean = 0.04;
  double alpha_2d = 0.08;
  int epochs = 5;
  long max_env_steps = 2000000;
  int eval_every_updates = 20;
  bool stop_on_success = true;
  double max_grad_norm = 1.0;
  unsigned seed = 0;
  int threads = 2;

  void validate() const {
    if (!(gamma > 0 && gamma <= 1)) throw ShapeMismatch("gamma");
    if (!(gae_lambda >= 0 && gae_lambda <= 1)) throw ShapeMismatch("gae lambda");
    if (!(clip_eps > 0)) throw ShapeMismatch("clip eps");
  }

  void save_into(TextDoc& doc) const {
    doc.add("trainer", "actor_lr", actor_lr);
    doc.add("trainer", "critic_lr", critic_lr);
    doc.add("trainer", "rollout_steps", rollout_steps);
    doc.add("trainer", "batch_size", batch_size);
    doc.add("trainer", "env_count", env_count);
    doc.add("trainer", "gamma", gamma);
    doc.add("trainer", "gae_lambda", gae_lambda);
    doc.add("trainer", "clip_eps", clip_eps);
    doc.add("trainer", "value_clip", value_clip);
    doc.add("trainer", "goal_horizon", goal_horizon);
    doc.add("trainer", "precontact_init_prob", precontact_init_prob);
    doc.add("trainer", "term_body_mean", term_body_mean);
    doc.add("trainer", "term_body_max", term_body_max);
    doc.add("trainer", "term_fingertip_mean", term_fingertip_mean);
    doc.add("trainer", "alpha_2d", alpha_2d);
    doc.add("trainer", "epochs", epochs);
    doc.add("trainer", "max_env_steps", static_cast<double>(max_env_steps));
    doc.add("trainer", "eval_every_updates", eval_every_updates);
    doc.add("trainer", "stop_on_success", stop_on_success ? 1 : 0);
    doc.add("trainer", "max_grad_norm", max_grad_norm);
    doc.add("trainer", "seed", static_cast<int>(seed));
    doc.add("trainer", "threads", threads);
  }
  static TrainerConfig load_from(const TextDoc& doc) {
    TrainerConfig c;
    c.actor_lr = doc.get_or("trainer", "actor_lr", c.actor_lr);
    c.critic_lr = doc.get_or("trainer", "critic_lr", c.critic_lr);
    c.rollout_steps = static_cast<int>(doc.get_or("trainer", "rollout_steps", c.rollout_steps));
    c.batch_size = static_cast<int>(doc.get_or("trainer", "batch_size", c.batch_size));
    c.env_count = static_cast<int>(doc.get_or("trainer", "env_count", c.env_count));
    c.gamma = doc.get_or("trainer", "gamma", c.gamma);
    c.gae_lambda = doc.get_or("trainer", "gae_lambda", c.gae_lambda);
    c.clip_eps = doc.get_or("trainer", "clip_eps", c.clip_eps);
    c.value_clip = doc.get_or("trainer", "value_clip", c.value_clip);
    c.goal_horizon = static_cast<int>(doc.get_or("trainer", "goal_horizon", c.goal_horizon));
    c.precontact_init_prob =
        doc.get_or("trainer", "precontact_init_prob", c.precontact_init_prob);
    c.term_body_mean = doc.get_or("trainer", "term_body_mean", c.term_body_mean);
    c.term_body_max = doc.get_or("trainer", "term_body_max", c.term_body_max);
    c.term_fingertip_mean =
        doc.get_or("trainer", "term_fingertip_mean", c.term_fingertip_mean);
    c.alpha_2d = doc.get_or("trainer", "alpha_2d", c.alpha_2d);
    c.epochs = static_cast<int>(doc.get_or("trainer", "epochs", c.epochs));
    c.max_env_steps =
        static_cast<long>(doc.get_or("trainer", "max_env_steps", static_cast<double>(c.max_env_steps)));
    c.eval_every_updates =
        static_cast<int>(doc.get_or("trainer", "eval_every_updates", c.eval_every_updates));
    c.stop_on_success = doc.get_or("trainer", "stop_on_success", 1.0) != 0.0;
    c.max_grad_norm = doc.get_or("trainer", "max_grad_norm", c.max_grad_norm);
    c.seed = static_cast<unsigned>(doc.get_or("trainer", "seed", 0.0));
    c.threads = static_cast<int>(doc.get_or("trainer", "threads", c.threads));
    return c;
  }
};

// ---------------------------------------------------------------------------
// Core PPO math (double precision, finite-difference checkable).

/// Standard GAE. `values` carries T entries plus the bootstrap value of the
/// state after the last step; a set `dones[t]` cuts the recursion.
inline void gae_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                           const std::vector<uint8_t>& dones, double gamma, double lambda,
                           std::vector<double>* advantages, std::vector<double>* returns) {
  const size_t T = rewards.size();
  if (values.size() != T + 1 || dones.size() != T) throw LengthMismatch("gae_advantages");
  advantages->assign(T, 0.0);
  returns->assign(T, 0.0);
  double next_adv = 0.0;
  for (int t = static_cast<int>(T) - 1; t >= 0; --t) {
    const double notdone = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * notdone - values[t];
    next_adv = delta + gamma * lambda * notdone * next_adv;
    (*advantages)[t] = next_adv;
    (*returns)[t] = next_adv + values[t];
  }
}

struct ActorLossResult {
  double total = 0, ppo = 0, bound = 0;
  Eigen::VectorXd d_new_logp;  // per sample
  Eigen::MatrixXd d_mu;        // act x batch (bound term only)
};

/// Clipped-ratio PPO surrogate plus the action-bound penalty. Advantages are
/// expected to be normalized by the caller.
inline ActorLossResult actor_loss(const Eigen::VectorXd& old_logp,
                                  const Eigen::VectorXd& new_logp,
                                  const Eigen::VectorXd& advantages, const Eigen::MatrixXd& mu,
                                  double eps) {
  const int B = static_cast<int>(old_logp.size());
  if (new_logp.size() != B || advantages.size() != B || mu.cols() != B)
    throw LengthMismatch("actor_loss");
  ActorLossResult out;
  out.d_new_logp.setZero(B);
  out.d_mu.setZero(mu.rows(), B);
  for (int i = 0; i < B; ++i) {
    const double r = std::exp(new_logp[i] - old_logp[i]);
    if (!std::isfinite(r)) throw NonFiniteLoss("ppo ratio");
    const double rc = std::clamp(r, 1.0 - eps, 1.0 + eps);
    const double a = advantages[i];
    const double u1 = r * a, u2 = rc * a;
    if (u1 <= u2) {
      out.ppo += -u1 / B;
      out.d_new_logp[i] = -a * r / B;  // d(-u1)/dlogp
    } else {
      out.ppo += -u2 / B;
      if (r > 1.0 - eps && r < 1.0 + eps) out.d_new_logp[i] = -a * r / B;
    }
    for (int d = 0; d < mu.rows(); ++d) {
      const double hi = std::max(0.0, mu(d, i) - 1.0);
      const double lo = std::max(0.0, -mu(d, i) - 1.0);
      out.bound += (hi * hi + lo * lo) / B;
      out.d_mu(d, i) = (2.0 * hi - 2.0 * lo) / B;
    }
  }
  out.total = out.ppo + out.bound;
  return out;
}

struct CriticLossResult {
  double total = 0;
  Eigen::VectorXd d_value;
};

/// Value-clipped regression onto the GAE returns.
inline CriticLossResult critic_loss(const Eigen::VectorXd& values,
                                    const Eigen::VectorXd& old_values,
                                    const Eigen::VectorXd& returns, double eps) {
  const int B = static_cast<int>(values.size());
  if (old_values.size() != B || returns.size() != B) throw LengthMismatch("critic_loss");
  CriticLossResult out;
  out.d_value.setZero(B);
  for (int i = 0; i < B; ++i) {
    const double vc = std::clamp(values[i], old_values[i] - eps, old_values[i] + eps);
    const double e1 = values[i] - returns[i];
    const double e2 = vc - returns[i];
    if (e1 * e1 >= e2 * e2) {
      out.total += 0.5 * e1 * e1 / B;
      out.d_value[i] = e1 / B;
    } else {
      out.total += 0.5 * e2 * e2 / B;
      if (std::abs(values[i] - old_values[i]) < eps) out.d_value[i] = e2 / B;
    }
  }
  return out;
}

enum class TerminationReason { None, BodyMean, BodyMax, FingertipMean, Object2D };

inline const char* termination_name(TerminationReason r) {
  switch (r) {
    case TerminationReason::BodyMean: return "body_mean";
    case TerminationReason::BodyMax: return "body_max";
    case TerminationReason::FingertipMean: return "fingertip_mean";
    case TerminationReason::Object2D: return "object_2d";
    default: return "none";
  }
}

inline double tau_2d_pixels(double alpha, int width, int height) {
  return alpha * std::sqrt(static_cast<double>(width) * width +
                           static_cast<double>(height) * height);
}

/// Early termination on 3D body error, fingertip error, or 2D object error.
inline TerminationReason early_termination(
    const Skeleton& skel, const std::vector<JointTransform>& sim_world,
    const std::vector<Vec3>& target_joints, double object_px_err_mean, int width, int height,
    const TrainerConfig& cfg) {
  double body_sum = 0, body_max = 0, tip_sum = 0;
  int nb = 0;
  for (int j = 0; j < skel.size(); ++j) {
    if (skel.joints[j].label != JointLabel::Body) continue;
    const double e = (sim_world[j].pos - target_joints[j]).norm();
    body_sum += e;
    body_max = std::max(body_max, e);
    ++nb;
  }
  if (nb && body_sum / nb > cfg.term_body_mean) return TerminationReason::BodyMean;
  if (body_max > cfg.term_body_max) return TerminationReason::BodyMax;
  if (!skel.fingertips.empty()) {
    for (int f : skel.fingertips) tip_sum += (sim_world[f].pos - target_joints[f]).norm();
    if (tip_sum / skel.fingertips.size() > cfg.term_fingertip_mean)
      return TerminationReason::FingertipMean;
  }
  if (object_px_err_mean > tau_2d_pixels(cfg.alpha_2d, width, height))
    return TerminationReason::Object2D;
  return TerminationReason::None;
}

/// Pre-contact time sampling: frame 0 with probability 1/2, otherwise a
/// uniform frame strictly before the first contact.
template <typename Rng>
inline int sample_init_frame(const HybridTarget& target, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> all(0, target.frames() - 1);
  if (u01(rng) < 0.5) return 0;
  const int first = target.first_contact_frame();
  if (first < 0) return all(rng);
  if (first <= 1) return 0;
  return std::uniform_int_distribution<int>(0, first - 1)(rng);
}

// ---------------------------------------------------------------------------
// Networks

struct ActorNet {
  PolicySpec spec;
  int h_dim = 0, o_dim = 0, g_dim = 0, act_dim = 0;
  nn::Mlp enc_h, enc_o, enc_g;
  nn::SelfAttention3 attn;
  nn::Mlp head;
  nn::Param log_std;
  MatF tok_cache;

  void init(int h, int o, int g, int act, unsigned seed) {
    h_dim = h;
    o_dim = o;
    g_dim = g;
    act_dim = act;
    std::mt19937_64 rng(seed);
    std::vector<int> enc(spec.enc_layers, spec.enc_width);
    enc_h.init(h, enc, rng);
    enc_o.init(o, enc, rng);
    enc_g.init(g, enc, rng);
    attn.init(spec.enc_width, spec.attn_heads, rng);
    std::vector<int> hw(spec.actor_head_layers, spec.actor_head_width);
    hw.push_back(act);
    head.init(3 * spec.enc_width, hw, rng, 0.01f);
    log_std.init_zero(act, 1);
    log_std.value.setConstant(static_cast<float>(spec.log_std_init));
  }

  MatF forward(const MatF& h, const MatF& o, const MatF& g, bool keep = true) {
    const int B = static_cast<int>(h.cols());
    const MatF t0 = enc_h.forward(h, keep), t1 = enc_o.forward(o, keep),
               t2 = enc_g.forward(g, keep);
    MatF tokens(spec.enc_width, 3 * B);
    for (int b = 0; b < B; ++b) {
      tokens.col(3 * b + 0) = t0.col(b);
      tokens.col(3 * b + 1) = t1.col(b);
      tokens.col(3 * b + 2) = t2.col(b);
    }
    const MatF fused = attn.forward(tokens, keep);
    MatF cat(3 * spec.enc_width, B);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < 3; ++i)
        cat.block(i * spec.enc_width, b, spec.enc_width, 1) = fused.col(3 * b + i);
    return head.forward(cat, keep);
  }

  void backward(const MatF& d_mu) {
    const int B = static_cast<int>(d_mu.cols());
    MatF d_cat = head.backward(d_mu);
    MatF d_fused(spec.enc_width, 3 * B);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < 3; ++i)
        d_fused.col(3 * b + i) = d_cat.block(i * spec.enc_width, b, spec.enc_width, 1);
    const MatF d_tokens = attn.backward(d_fused);
    MatF d0(spec.enc_width, B), d1(spec.enc_width, B), d2(spec.enc_width, B);
    for (int b = 0; b < B; ++b) {
      d0.col(b) = d_tokens.col(3 * b + 0);
      d1.col(b) = d_tokens.col(3 * b + 1);
      d2.col(b) = d_tokens.col(3 * b + 2);
    }
    enc_h.backward(d0);
    enc_o.backward(d1);
    enc_g.backward(d2);
  }

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> out;
    enc_h.collect(out);
    enc_o.collect(out);
    enc_g.collect(out);
    attn.collect(out);
    head.collect(out);
    out.push_back(&log_std);
    return out;
  }
};

struct CriticNet {
  nn::Mlp net;
  void init(int in, const PolicySpec& spec, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::vector<int> widths(spec.critic_layers, spec.critic_width);
    widths.push_back(1);
    net.init(in, widths, rng);
  }
  VecF forward(const MatF& x, bool keep = true) { return net.forward(x, keep).row(0); }
  void backward(const Eigen::RowVectorXf& d_value) { net.backward(d_value); }
  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> out;
    net.collect(out);
    return out;
  }
};

/// Diagonal Gaussian log-density per column of `a` given mean `mu`.
inline Eigen::VectorXd gaussian_logp(const MatF& a, const MatF& mu, const VecF& log_std) {
  const int B = static_cast<int>(a.cols());
  const int D = static_cast<int>(a.rows());
  Eigen::VectorXd out(B);
  constexpr double half_log_2pi = 0.91893853320467274;
  for (int i = 0; i < B; ++i) {
    double acc = 0;
    for (int d = 0; d < D; ++d) {
      const double s = std::exp(static_cast<double>(log_std[d]));
      const double z = (static_cast<double>(a(d, i)) - static_cast<double>(mu(d, i))) / s;
      acc += -0.5 * z * z - static_cast<double>(log_std[d]) - half_log_2pi;
    }
    out[i] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Observation building

struct ObsLayout {
  int h_dim = 0, o_dim = 15, g_dim = 0;
  int joints = 0, goal_horizon = 4;
};

inline ObsLayout make_obs_layout(const Skeleton& skel, int goal_horizon) {
  ObsLayout l;
  l.joints = skel.size();
  l.goal_horizon = goal_horizon;
  l.h_dim = l.joints * 15;
  l.g_dim = goal_horizon * l.joints * 3 + 1;
  return l;
}

/// Root-local features: joint poses/velocities, the 15-D object state, and
/// the next goal_horizon target frames plus a phase scalar.
inline void build_obs(const Skeleton& skel, const SimState& state,
                      const std::vector<TargetFrame>& targets, int frame, const ObsLayout& lay,
                      float* h_out, float* o_out, float* g_out) {
  const Mat3 R0t = state.joint_world[0].rot.matrix().transpose();
  const Vec3 p0 = state.joint_world[0].pos;
  int k = 0;
  for (int j = 0; j < skel.size(); ++j) {
    const Vec3 p = R0t * (state.joint_world[j].pos - p0);
    const Eigen::Matrix<double, 6, 1> r6 =
        Rotation::from_matrix(R0t * state.joint_world[j].rot.matrix()).to_6d();
    const Vec3 lv = R0t * state.joint_linvel[j];
    const Vec3 av = R0t * state.joint_angvel[j];
    for (int i = 0; i < 3; ++i) h_out[k++] = static_cast<float>(p[i]);
    for (int i = 0; i < 6; ++i) h_out[k++] = static_cast<float>(r6[i]);
    for (int i = 0; i < 3; ++i) h_out[k++] = static_cast<float>(lv[i]);
    for (int i = 0; i < 3; ++i) h_out[k++] = static_cast<float>(av[i]);
  }
  k = 0;
  {
    const Vec3 p = R0t * (state.object_pose.pos - p0);
    const Eigen::Matrix<double, 6, 1> r6 =
        Rotation::from_matrix(R0t * state.object_pose.rot.matrix()).to_6d();
    const Vec3 lv = R0t * state.object_linvel;
    const Vec3 av = R0t * state.object_angvel;
    for (int i = 0; i < 3; ++i) o_out[k++] = static_cast<float>(p[i]);
    for (int i = 0; i < 6; ++i) o_out[k++] = static_cast<float>(r6[i]);
    for (int i = 0; i < 3; ++i) o_out[k++] = static_cast<float>(lv[i]);
    for (int i = 0; i < 3; ++i) o_out[k++] = static_cast<float>(av[i]);
  }
  k = 0;
  const int F = static_cast<int>(targets.size());
  for (int s = 1; s <= lay.goal_horizon; ++s) {
    const TargetFrame& tf = targets[std::min(F - 1, frame + s)];
    for (int j = 0; j < skel.size(); ++j) {
      const Vec3 p = R0t * (tf.joints[j] - p0);
      for (int i = 0; i < 3; ++i) g_out[k++] = static_cast<float>(p[i]);
    }
  }
  g_out[k++] = static_cast<float>(frame) / static_cast<float>(F);
}

// ---------------------------------------------------------------------------
// Rollout buffer

struct RolloutBuffer {
  int steps = 0, envs = 0;
  MatF obs_h, obs_o, obs_g, actions;
  Eigen::VectorXd logp, value, reward;
  std::vector<uint8_t> done;
  std::vector<TerminationReason> reason;

  void init(int T, int N, const ObsLayout& lay, int act_dim) {
    steps = T;
    envs = N;
    obs_h.setZero(lay.h_dim, T * N);
    obs_o.setZero(lay.o_dim, T * N);
    obs_g.setZero(lay.g_dim, T * N);
    actions.setZero(act_dim, T * N);
    logp.setZero(T * N);
    value.setZero(T * N);
    reward.setZero(T * N);
    done.assign(T * N, 0);
    reason.assign(T * N, TerminationReason::None);
  }
  int col(int t, int n) const { return t * envs + n; }
};

// ---------------------------------------------------------------------------
// Trainer

struct TrainLogRow {
  long env_steps;
  double mean_reward, mean_episode_return, actor_loss, critic_loss;
  double eval_mpjpe = -1, eval_tobj = -1;
  int eval_success = -1;
  std::array<int, 5> term_counts{0, 0, 0, 0, 0};
};

struct EvalSummary {
  double mpjpe_all = 0, t_obj = 0;
  bool success = false;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  long env_steps = 0;
  bool success = false;
  EvalSummary final_eval;
};

namespace rl_detail {

inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

struct EnvRuntime {
  SimState state;
  int frame = 0;       // current target frame index
  int init_frame = 0;
  double episode_return = 0;
};

}  // namespace rl_detail

/// Everything train() and eval share: the world, prepared target frames, and
/// the reward plumbing.
struct TaskContext {
  PhysicsWorld world;
  HybridTarget target;
  std::vector<TargetFrame> frames;
  std::vector<Vec3> tracked_local;      // object-frame positions of tracked vertices
  std::vector<Vec3> object_local_verts; // for contact distance terms
  std::vector<RigidPose> object_ref_6d; // ground truth, ablation reward only
  RigidPose object_init;
  RewardConfig reward;
  ObsLayout layout;
  std::array<std::vector<int>, 2> hand_joint_ids;
  std::array<std::vector<int>, 2> hand_sensor_slots;

  static TaskContext build(const ScenarioConfig& scenario, const HybridTarget& tgt,
                           const RewardConfig& reward_cfg, int goal_horizon) {
    TaskContext ctx;
    ctx.target = tgt;
    ctx.reward = reward_cfg;
    const ReferenceMotion ref = script_reference(scenario);
    ctx.world.skel = ref.skel;
    ctx.world.object_mesh = ref.object_mesh;
    ctx.world.object_mass = scenario.box_mass;
    ctx.world.friction = scenario.friction;
    ctx.world.table_center = scenario.table_center;
    ctx.world.table_half = scenario.table_half;
    ctx.world.finalize();
    ctx.frames = make_target_frames(tgt, ref.skel);
    for (int id : tgt.tracked_vertex_ids)
      ctx.tracked_local.push_back(ref.object_mesh.vertices[id]);
    ctx.object_local_verts = ref.object_mesh.vertices;
    ctx.object_ref_6d = ref.object;
    ctx.object_init = ref.object[0];
    ctx.layout = make_obs_layout(ref.skel, goal_horizon);
    for (int side = 0; side < 2; ++side) {
      ctx.hand_joint_ids[side] = hand_part_joints(ref.skel, side);
      for (int s = 0; s < ctx.world.model.sensor_count; ++s)
        if (ctx.world.model.sensor_hand[s] == side) ctx.hand_sensor_slots[side].push_back(s);
    }
    return ctx;
  }

  int frame_count() const { return static_cast<int>(frames.size()); }

  double object_px_error(const SimState& state, int frame) const {
    const TargetFrame& tf = frames[frame];
    double acc = 0;
    int n = 0;
    const Mat3 R = state.object_pose.rot.matrix();
    for (size_t m = 0; m < tracked_local.size(); ++m) {
      if (!tf.track_vis[m]) continue;
      const Vec3 world_pt = state.object_pose.pos + R * tracked_local[m];
      const Vec3 c = target.camera.to_camera(world_pt);
      if (c.z() <= kMinCameraDepth) {
        acc += reward.behind_camera_px;
      } else {
        const Vec2 px(target.camera.f * c.x() / c.z() + target.camera.cx,
                      target.camera.f * c.y() / c.z() + target.camera.cy);
        acc += (px - tf.track_px[m]).norm();
      }
      ++n;
    }
    return n ? acc / n : 0.0;
  }

  /// Hybrid reward parts for a state at a target frame.
  HybridRewardParts step_reward(const SimState& state, int frame) const {
    const TargetFrame& tf = frames[frame];
    HybridRewardParts parts;
    parts.human = human_tracking_reward(world.skel, state.joint_world, state.joint_linvel,
                                        state.power, tf, reward);
    if (reward.object_reward_mode == "2d") {
      parts.object = object_tracking_reward(state.object_pose, tracked_local, tf.track_px,
                                            tf.track_vis, target.camera, reward);
    } else if (reward.object_reward_mode == "6d") {
      parts.object = object_pose_reward(state.object_pose, object_ref_6d[frame], reward);
    } else {
      parts.object = 1.0;
    }
    std::array<std::vector<double>, 2> forces;
    std::array<std::vector<Vec3>, 2> hand_pts;
    std::vector<Vec3> obj_world(object_local_verts.size());
    const Mat3 R = state.object_pose.rot.matrix();
    for (size_t i = 0; i < object_local_verts.size(); ++i)
      obj_world[i] = state.object_pose.pos + R * object_local_verts[i];
    for (int side = 0; side < 2; ++side) {
      for (int s : hand_sensor_slots[side]) forces[side].push_back(state.sensor_force[s]);
      for (int j : hand_joint_ids[side]) hand_pts[side].push_back(state.joint_world[j].pos);
    }
    parts.contact = contact_reward(forces, hand_pts, obj_world, tf.psi, reward);
    return parts;
  }

  /// Reference-velocity reset at a target frame (finite differences).
  SimState reset_at(int frame) const {
    const Pose pose = target.pose_at(frame);
    const int tp = std::max(0, frame - 1), tn = std::min(frame_count() - 1, frame + 1);
    VecX qd;
    if (tn > tp) {
      const VecX qa = coords_from_pose(world, target.pose_at(tp));
      const VecX qb = coords_from_pose(world, target.pose_at(tn));
      qd = (qb - qa) * (target.fps / (tn - tp));
    }
    return reset(world, pose, object_init, qd);
  }
};

/// Deterministic evaluation episode with mean actions; reports the §5.1
/// success criterion against the scenario's ground truth.
inline EvalSummary evaluate_policy(const TaskContext& ctx, ActorNet& actor,
                                   const ReferenceMotion& gt,
                                   std::vector<SimState>* trajectory = nullptr) {
  EvalSummary out;
  SimState state = ctx.reset_at(0);
  MatF h(ctx.layout.h_dim, 1), o(ctx.layout.o_dim, 1), g(ctx.layout.g_dim, 1);
  double j_acc = 0, o_acc = 0;
  long count = 0;
  const int F = ctx.frame_count();
  if (trajectory) trajectory->push_back(state);
  for (int t = 0; t + 1 < F; ++t) {
    build_obs(ctx.world.skel, state, ctx.frames, t, ctx.layout, h.data(), o.data(), g.data());
    const MatF mu = actor.forward(h, o, g, false);
    Action a;
    a.pd_target = mu.col(0).cast<double>();
    state = step(ctx.world, state, a);
    if (trajectory) trajectory->push_back(state);
    const auto gt_joints = joint_positions(gt.skel, gt.poses[t + 1]);
    double e = 0;
    for (int j = 0; j < ctx.world.skel.size(); ++j)
      e += (state.joint_world[j].pos - gt_joints[j]).norm();
    j_acc += e / ctx.world.skel.size();
    o_acc += (state.object_pose.pos - gt.object[t + 1].pos).norm();
    ++count;
  }
  out.mpjpe_all = j_acc / count;
  out.t_obj = o_acc / count;
  out.success = out.mpjpe_all < 0.2 && out.t_obj < 0.2;
  return out;
}

/// PPO training on parallel worlds. Deterministic per seed for a fixed env
/// count.
inline TrainResult train(const ScenarioConfig& scenario, const HybridTarget& target,
                         const TrainerConfig& cfg, const RewardConfig& reward_cfg,
                         const PolicySpec& spec, ActorNet* actor_out = nullptr,
                         CriticNet* critic_out = nullptr) {
  cfg.validate();
  TaskContext ctx = TaskContext::build(scenario, target, reward_cfg, cfg.goal_horizon);
  const ReferenceMotion gt = script_reference(scenario);
  const int N = cfg.env_count, T = cfg.rollout_steps;
  const int act_dim = static_cast<int>(ctx.world.model.actuated.size());

  ActorNet actor;
  actor.spec = spec;
  actor.init(ctx.layout.h_dim, ctx.layout.o_dim, ctx.layout.g_dim, act_dim, cfg.seed + 1);
  CriticNet critic;
  critic.init(ctx.layout.h_dim + ctx.layout.o_dim + ctx.layout.g_dim, spec, cfg.seed + 2);
  auto actor_params = actor.params();
  auto critic_params = critic.params();
  nn::AdamOpt actor_opt, critic_opt;
  actor_opt.lr = cfg.actor_lr;
  critic_opt.lr = cfg.critic_lr;

  std::mt19937_64 rng(cfg.seed * 2654435761u + 13u);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<rl_detail::EnvRuntime> envs(N);
  for (int n = 0; n < N; ++n) {
    envs[n].init_frame = sample_init_frame(target, rng);
    envs[n].frame = envs[n].init_frame;
    envs[n].state = ctx.reset_at(envs[n].frame);
  }

  RolloutBuffer buf;
  buf.init(T, N, ctx.layout, act_dim);

  TrainResult result;
  long env_steps = 0;
  int update = 0;
  const int F = ctx.frame_count();
  std::vector<double> completed_returns;

  MatF h_batch(ctx.layout.h_dim, N), o_batch(ctx.layout.o_dim, N), g_batch(ctx.layout.g_dim, N);
  MatF next_h(ctx.layout.h_dim, N), next_o(ctx.layout.o_dim, N), next_g(ctx.layout.g_dim, N);

  while (env_steps < cfg.max_env_steps) {
    std::array<int, 5> term_counts{0, 0, 0, 0, 0};
    // ----- rollout -----
    for (int t = 0; t < T; ++t) {
      for (int n = 0; n < N; ++n)
        build_obs(ctx.world.skel, envs[n].state, ctx.frames, envs[n].frame, ctx.layout,
                  h_batch.col(n).data(), o_batch.col(n).data(), g_batch.col(n).data());
      const MatF mu = actor.forward(h_batch, o_batch, g_batch, false);
      MatF acts(act_dim, N);
      for (int n = 0; n < N; ++n)
        for (int d = 0; d < act_dim; ++d)
          acts(d, n) = mu(d, n) + std::exp(actor.log_std.value(d, 0)) *
                                      static_cast<float>(gauss(rng));
      const Eigen::VectorXd logp = gaussian_logp(acts, mu, actor.log_std.value.col(0));
      MatF critic_in(ctx.layout.h_dim + ctx.layout.o_dim + ctx.layout.g_dim, N);
      critic_in << h_batch, o_batch, g_batch;
      const VecF values = critic.forward(critic_in, false);

      std::vector<double> rewards(N);
      std::vector<uint8_t> dones(N, 0);
      std::vector<uint8_t> truncs(N, 0);
      std::vector<TerminationReason> reasons(N, TerminationReason::None);
      std::vector<int> next_frame(N);
      rl_detail::parallel_for(N, cfg.threads, [&](int n) {
        Action a;
        a.pd_target = acts.col(n).cast<double>();
        envs[n].state = step(ctx.world, envs[n].state, a);
        next_frame[n] = std::min(envs[n].frame + 1, F - 1);
        const auto parts = ctx.step_reward(envs[n].state, next_frame[n]);
        rewards[n] = parts.total();
        const TerminationReason reason = early_termination(
            ctx.world.skel, envs[n].state.joint_world, ctx.frames[next_frame[n]].joints,
            ctx.object_px_error(envs[n].state, next_frame[n]), ctx.target.camera.width,
            ctx.target.camera.height, cfg);
        if (reason != TerminationReason::None) {
          dones[n] = 1;
          reasons[n] = reason;
        } else if (next_frame[n] >= F - 1) {
          truncs[n] = 1;
        }
      });

      // Truncation bootstraps through the critic; termination does not.
      std::vector<int> truncated;
      for (int n = 0; n < N; ++n)
        if (truncs[n]) truncated.push_back(n);
      if (!truncated.empty()) {
        MatF th(ctx.layout.h_dim, truncated.size()), to(ctx.layout.o_dim, truncated.size()),
            tg(ctx.layout.g_dim, truncated.size());
        for (size_t i = 0; i < truncated.size(); ++i)
          build_obs(ctx.world.skel, envs[truncated[i]].state, ctx.frames,
                    next_frame[truncated[i]], ctx.layout, th.col(i).data(), to.col(i).data(),
                    tg.col(i).data());
        MatF tin(ctx.layout.h_dim + ctx.layout.o_dim + ctx.layout.g_dim, truncated.size());
        tin << th, to, tg;
        const VecF vboot = critic.forward(tin, false);
        for (size_t i = 0; i < truncated.size(); ++i) {
          rewards[truncated[i]] += cfg.gamma * static_cast<double>(vboot[i]);
          dones[truncated[i]] = 1;
        }
      }

      for (int n = 0; n < N; ++n) {
        const int c = buf.col(t, n);
        buf.obs_h.col(c) = h_batch.col(n);
        buf.obs_o.col(c) = o_batch.col(n);
        buf.obs_g.col(c) = g_batch.col(n);
        buf.actions.col(c) = acts.col(n);
        buf.logp[c] = logp[n];
        buf.value[c] = static_cast<double>(values[n]);
        buf.reward[c] = rewards[n];
        buf.done[c] = dones[n];
        buf.reason[c] = reasons[n];
        term_counts[static_cast<int>(reasons[n])]++;
        envs[n].episode_return += rewards[n];
        envs[n].frame = next_frame[n];
        if (dones[n]) {
          completed_returns.push_back(envs[n].episode_return);
          envs[n].episode_return = 0;
          envs[n].init_frame = sample_init_frame(target, rng);
          envs[n].frame = envs[n].init_frame;
          envs[n].state = ctx.reset_at(envs[n].frame);
        }
      }
      env_steps += N;
    }

    // ----- bootstrap + GAE per env stream -----
    for (int n = 0; n < N; ++n)
      build_obs(ctx.world.skel, envs[n].state, ctx.frames, envs[n].frame, ctx.layout,
                next_h.col(n).data(), next_o.col(n).data(), next_g.col(n).data());
    MatF bin(ctx.layout.h_dim + ctx.layout.o_dim + ctx.layout.g_dim, N);
    bin << next_h, next_o, next_g;
    const VecF vlast = critic.forward(bin, false);

    Eigen::VectorXd advantages(T * N), returns(T * N);
    for (int n = 0; n < N; ++n) {
      std::vector<double> r(T), v(T + 1);
      std::vector<uint8_t> d(T);
      for (int t = 0; t < T; ++t) {
        r[t] = buf.reward[buf.col(t, n)];
        v[t] = buf.value[buf.col(t, n)];
        d[t] = buf.done[buf.col(t, n)];
      }
      v[T] = static_cast<double>(vlast[n]);
      std::vector<double> adv, ret;
      gae_advantages(r, v, d, cfg.gamma, cfg.gae_lambda, &adv, &ret);
      for (int t = 0; t < T; ++t) {
        advantages[buf.col(t, n)] = adv[t];
        returns[buf.col(t, n)] = ret[t];
      }
    }
    const double adv_mean = advantages.mean();
    const double adv_std =
        std::sqrt((advantages.array() - adv_mean).square().sum() / advantages.size()) + 1e-8;
    advantages = (advantages.array() - adv_mean) / adv_std;

    // ----- PPO updates -----
    const int total = T * N;
    std::vector<int> order(total);
    std::iota(order.begin(), order.end(), 0);
    double last_actor_loss = 0, last_critic_loss = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (int start = 0; start < total; start += cfg.batch_size) {
        const int B = std::min<int>(cfg.batch_size, total - start);
        MatF mh(ctx.layout.h_dim, B), mo(ctx.layout.o_dim, B), mg(ctx.layout.g_dim, B),
            ma(act_dim, B);
        Eigen::VectorXd old_logp(B), adv(B), ret(B), old_val(B);
        for (int i = 0; i < B; ++i) {
          const int c = order[start + i];
          mh.col(i) = buf.obs_h.col(c);
          mo.col(i) = buf.obs_o.col(c);
          mg.col(i) = buf.obs_g.col(c);
          ma.col(i) = buf.actions.col(c);
          old_logp[i] = buf.logp[c];
          adv[i] = advantages[c];
          ret[i] = returns[c];
          old_val[i] = buf.value[c];
        }

        // Actor
        const MatF mu = actor.forward(mh, mo, mg, true);
        const Eigen::VectorXd new_logp = gaussian_logp(ma, mu, actor.log_std.value.col(0));
        const ActorLossResult al =
            actor_loss(old_logp, new_logp, adv, mu.cast<double>(), cfg.clip_eps);
        if (!std::isfinite(al.total)) throw DivergedTraining("actor loss");
        MatF d_mu(act_dim, B);
        for (int i = 0; i < B; ++i) {
          for (int d = 0; d < act_dim; ++d) {
            const double s = std::exp(static_cast<double>(actor.log_std.value(d, 0)));
            const double z =
                (static_cast<double>(ma(d, i)) - static_cast<double>(mu(d, i))) / s;
            // d logp / d mu = z / s ; chain with d L / d logp, plus bound term.
            d_mu(d, i) = static_cast<float>(al.d_new_logp[i] * z / s + al.d_mu(d, i));
            actor.log_std.grad(d, 0) +=
                static_cast<float>(al.d_new_logp[i] * (z * z - 1.0));
          }
        }
        actor.backward(d_mu);
        nn::clip_grad_norm(actor_params, cfg.max_grad_norm);
        actor_opt.step(actor_params);
        actor.log_std.value = actor.log_std.value.cwiseMax(-4.f).cwiseMin(1.f);
        last_actor_loss = al.total;

        // Critic
        MatF cin(ctx.layout.h_dim + ctx.layout.o_dim + ctx.layout.g_dim, B);
        cin << mh, mo, mg;
        const VecF v = critic.forward(cin, true);
        const CriticLossResult cl = critic_loss(v.cast<double>(), old_val, ret, cfg.value_clip);
        if (!std::isfinite(cl.total)) throw DivergedTraining("critic loss");
        critic.backward(cl.d_value.cast<float>().transpose());
        nn::clip_grad_norm(critic_params, cfg.max_grad_norm);
        critic_opt.step(critic_params);
        last_critic_loss = cl.total;
      }
    }

    ++update;
    TrainLogRow row;
    row.env_steps = env_steps;
    row.mean_reward = buf.reward.mean();
    row.mean_episode_return =
        completed_returns.empty()
            ? 0.0
            : std::accumulate(completed_returns.end() -
                                  std::min<size_t>(completed_returns.size(), 32),
                              completed_returns.end(), 0.0) /
                  std::min<size_t>(completed_returns.size(), 32);
    row.actor_loss = last_actor_loss;
    row.critic_loss = last_critic_loss;
    row.term_counts = term_counts;

    if (cfg.eval_every_updates > 0 && update % cfg.eval_every_updates == 0) {
      const EvalSummary ev = evaluate_policy(ctx, actor, gt);
      row.eval_mpjpe = ev.mpjpe_all;
      row.eval_tobj = ev.t_obj;
      row.eval_success = ev.success ? 1 : 0;
      result.log.push_back(row);
      if (ev.success && cfg.stop_on_success) {
        result.success = true;
        result.final_eval = ev;
        break;
      }
    } else {
      result.log.push_back(row);
    }
  }

  if (!result.success) result.final_eval = evaluate_policy(ctx, actor, gt);
  result.success = result.final_eval.success;
  result.env_steps = env_steps;
  if (actor_out) *actor_out = actor;
  if (critic_out) *critic_out = critic;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline void save_checkpoint(ActorNet& actor, CriticNet& critic, const std::string& path) {
  std::vector<std::pair<std::string, const MatF*>> tensors;
  auto add_all = [&](std::vector<nn::Param*> params, const std::string& prefix) {
    for (size_t i = 0; i < params.size(); ++i)
      tensors.emplace_back(prefix + std::to_string(i), &params[i]->value);
  };
  add_all(actor.params(), "actor.");
  add_all(critic.params(), "critic.");
  nn::save_tensors(tensors, path);
}

inline void load_checkpoint(ActorNet& actor, CriticNet& critic, const std::string& path) {
  std::vector<std::pair<std::string, MatF*>> tensors;
  auto add_all = [&](std::vector<nn::Param*> params, const std::string& prefix) {
    for (size_t i = 0; i < params.size(); ++i)
      tensors.emplace_back(prefix + std::to_string(i), &params[i]->value);
  };
  add_all(actor.params(), "actor.");
  add_all(critic.params(), "critic.");
  nn::load_tensors(tensors, path);
}

}  // namespace devi
