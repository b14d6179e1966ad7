#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dgfn/adam.hpp"
#include "dgfn/hypergrid.hpp"
#include "dgfn/objectives.hpp"
#include "dgfn/policy.hpp"
#include "dgfn/rng.hpp"
#include "dgfn/tape.hpp"

namespace dgfn {

enum class Algorithm { kGfn, kDgfn };
enum class Objective { kTb, kSubTb };

inline const char* to_string(Algorithm a) {
  return a == Algorithm::kGfn ? "gfn" : "dgfn";
}
inline const char* to_string(Objective o) {
  return o == Objective::kTb ? "tb" : "subtb";
}

struct TrainerConfig {
  Algorithm algorithm = Algorithm::kDgfn;
  Objective objective = Objective::kTb;
  double subtb_lambda = 0.9;
  std::int64_t t_initial = 698;  // steps of the frequent-update phase
  std::int64_t t_update = 137;   // scheduled update period after it
  double alpha = 0.25;           // Polyak coefficient
  bool initial_phase_full_copy = false;
  int batch_size = 64;
  std::int64_t total_steps = 10000;
  double lr_policy = 1e-3;
  double lr_logz = 1e-1;
  double exploration_eps = 0.0;
  std::int64_t metric_every = 10;
  std::int64_t checkpoint_every = 0;  // 0: only the final checkpoint

  bool operator==(const TrainerConfig&) const = default;

  void validate() const {
    if (t_initial < 0) throw Error("trainer: t_initial must be >= 0");
    if (t_update < 1) throw Error("trainer: t_update must be >= 1");
    if (batch_size < 1) throw Error("trainer: batch_size must be >= 1");
    if (total_steps < 1) throw Error("trainer: total_steps must be >= 1");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("trainer: alpha out of (0,1]");
    if (!(subtb_lambda > 0.0 && subtb_lambda <= 1.0)) {
      throw Error("trainer: subtb_lambda out of (0,1]");
    }
    if (!(exploration_eps >= 0.0 && exploration_eps < 1.0)) {
      throw Error("trainer: exploration_eps out of [0,1)");
    }
    if (metric_every < 1) throw Error("trainer: metric_every must be >= 1");
    if (checkpoint_every < 0) throw Error("trainer: checkpoint_every must be >= 0");
  }
};

/// Scheduled target refresh: every step of the initial phase, then every
/// t_update-th step.
inline bool should_update_target(std::int64_t t, const TrainerConfig& cfg) {
  if (t < 1) throw Error("should_update_target: step index must be >= 1");
  return t < cfg.t_initial || t % cfg.t_update == 0;
}

struct StepResult {
  std::int64_t step = 0;  // 1-based index of the step just taken
  double loss = 0;
  double mean_reward = 0;
  bool target_updated = false;
  std::vector<double> residuals;  // per trajectory (see LossGraph)
  std::vector<Trajectory> batch;
};

/// One online network trained by gradient descent on trajectories sampled
/// from a periodically refreshed target copy. With the plain algorithm the
/// two roles collapse onto the single online network.
class Trainer {
 public:
  Trainer(const EnvConfig& env, const PolicyConfig& pcfg, const TrainerConfig& tcfg,
          std::uint64_t seed)
      : env_(env), tcfg_(tcfg), seed_(seed) {
    env_.validate();
    tcfg_.validate();
    if (tcfg_.objective == Objective::kSubTb && !pcfg.flow_head) {
      throw Error("trainer: subtb objective needs a policy with a flow head");
    }
    online_ = make_policy(env_, pcfg, seed_);
    if (tcfg_.algorithm == Algorithm::kDgfn) target_ = online_;
    adam_policy_.lr = tcfg_.lr_policy;
    adam_logz_.lr = tcfg_.lr_logz;
    online_.for_each_param([&](const std::string& name, Tensor&) {
      (name == "logz" ? adam_logz_ : adam_policy_).names.push_back(name);
    });
  }

  StepResult step() {
    const std::int64_t t = step_ + 1;
    const PolicySet& sampler = sampling_policy();
    StepResult res;
    res.step = t;
    res.batch = sample_batch(sampler, env_, seed_, t, tcfg_.batch_size,
                             tcfg_.exploration_eps);
    double reward_sum = 0;
    for (const Trajectory& tr : res.batch) reward_sum += tr.reward;
    res.mean_reward = reward_sum / static_cast<double>(res.batch.size());

    try {
      Tape tape;
      LossGraph g = tcfg_.objective == Objective::kTb
                        ? tb_loss(tape, online_, res.batch, env_)
                        : subtb_loss(tape, online_, res.batch, env_,
                                     tcfg_.subtb_lambda);
      res.loss = tape.value(g.loss).data[0];
      res.residuals = tape.value(g.per_trajectory).data;
      std::vector<Tensor> grads = tape.backward(g.loss);
      apply_gradients(g, grads);
    } catch (const Error& e) {
      throw Error("train step " + std::to_string(t) + ": " + e.what() +
                  batch_dump(res.batch));
    }

    if (tcfg_.algorithm == Algorithm::kDgfn && should_update_target(t, tcfg_)) {
      const bool full_copy = tcfg_.initial_phase_full_copy && t < tcfg_.t_initial;
      polyak(target_, online_, full_copy ? 1.0 : tcfg_.alpha);
      last_target_update_ = t;
      res.target_updated = true;
    }
    step_ = t;
    return res;
  }

  const PolicySet& sampling_policy() const {
    return tcfg_.algorithm == Algorithm::kGfn ? online_ : target_;
  }

  PolicySet& online() { return online_; }
  const PolicySet& online() const { return online_; }
  PolicySet& target() {
    if (tcfg_.algorithm == Algorithm::kGfn) throw Error("trainer: no target network");
    return target_;
  }
  const PolicySet& target() const {
    if (tcfg_.algorithm == Algorithm::kGfn) throw Error("trainer: no target network");
    return target_;
  }

  const EnvConfig& env() const { return env_; }
  const TrainerConfig& config() const { return tcfg_; }
  std::uint64_t seed() const { return seed_; }
  std::int64_t steps_done() const { return step_; }
  std::int64_t last_target_update() const { return last_target_update_; }
  double logz() const { return online_.logz.data[0]; }

  AdamState& adam_policy() { return adam_policy_; }
  AdamState& adam_logz() { return adam_logz_; }
  const AdamState& adam_policy() const { return adam_policy_; }
  const AdamState& adam_logz() const { return adam_logz_; }

  /// Restore loop position after loading a checkpoint.
  void set_steps_done(std::int64_t s) {
    if (s < 0) throw Error("trainer: negative step index");
    step_ = s;
  }

 private:
  void apply_gradients(const LossGraph& g, const std::vector<Tensor>& grads) {
    std::vector<Tensor*> pol_params, z_params;
    std::vector<Tensor> pol_grads, z_grads;
    std::size_t k = 0;
    online_.for_each_param([&](const std::string& name, Tensor& t) {
      if (k >= g.params.size() || g.params[k].first != name) {
        throw Error("trainer: gradient order mismatch at " + name);
      }
      const Tensor& grad = grads[g.params[k].second];
      if (name == "logz") {
        z_params.push_back(&t);
        z_grads.push_back(grad);
      } else {
        pol_params.push_back(&t);
        pol_grads.push_back(grad);
      }
      ++k;
    });
    adam_step(pol_params, pol_grads, adam_policy_);
    adam_step(z_params, z_grads, adam_logz_);
  }

  static std::string batch_dump(std::span<const Trajectory> batch) {
    std::string out = "\nbatch dump (reward, length, behavior log-prob):";
    const std::size_t show = std::min<std::size_t>(batch.size(), 16);
    for (std::size_t i = 0; i < show; ++i) {
      double lp = 0;
      for (double v : batch[i].log_pf) lp += v;
      out += "\n  traj " + std::to_string(i) + ": r=" + std::to_string(batch[i].reward) +
             " len=" + std::to_string(batch[i].actions.size()) +
             " logp=" + std::to_string(lp);
    }
    if (batch.size() > show) out += "\n  ...";
    return out;
  }

  EnvConfig env_;
  TrainerConfig tcfg_;
  std::uint64_t seed_ = 0;
  std::int64_t step_ = 0;
  std::int64_t last_target_update_ = 0;
  PolicySet online_, target_;
  AdamState adam_policy_, adam_logz_;
};

}  // namespace dgfn
