#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dgfn/hypergrid.hpp"
#include "dgfn/policy.hpp"
#include "dgfn/tape.hpp"
#include "dgfn/tensor.hpp"

namespace dgfn {

/// A loss assembled on a tape: the scalar node plus the parameter leaves it
/// depends on, in PolicySet order. `per_trajectory` is the balance residual
/// per trajectory for TB and the weighted mean squared residual per
/// trajectory for SubTB.
struct LossGraph {
  Tape::NodeId loss = 0;
  Tape::NodeId per_trajectory = 0;
  std::vector<std::pair<std::string, Tape::NodeId>> params;
};

namespace detail {

struct BatchLayout {
  std::vector<GridState> states;        // all states, trajectory-major
  std::vector<std::size_t> offsets;     // B+1, into `states`
  std::vector<double> log_rewards;      // per trajectory
};

inline BatchLayout flatten_batch(std::span<const Trajectory> batch,
                                 const EnvConfig& cfg) {
  if (batch.empty()) throw Error("loss: empty batch");
  BatchLayout lay;
  lay.offsets.push_back(0);
  for (const Trajectory& t : batch) {
    validate_trajectory(t, cfg);
    const double r = reward(t.states.back(), cfg);
    if (t.reward != r) throw Error("loss: trajectory reward does not match its terminal state");
    lay.states.insert(lay.states.end(), t.states.begin(), t.states.end());
    lay.offsets.push_back(lay.states.size());
    lay.log_rewards.push_back(std::log(r));
  }
  return lay;
}

}  // namespace detail

/// Trajectory balance. Per trajectory the residual is
///   logZ + sum log P_F - log R(x) - sum log P_B
/// (P_F includes the Terminate step, P_B covers the increments), and the
/// batch loss is the mean squared residual.
inline LossGraph tb_loss(Tape& tape, const PolicySet& p,
                         std::span<const Trajectory> batch, const EnvConfig& cfg) {
  detail::BatchLayout lay = detail::flatten_batch(batch, cfg);
  PolicyGraph g = build_policy_graph(tape, p, lay.states, cfg, /*want_pb=*/true,
                                     /*want_flow=*/false);

  const std::size_t b = batch.size();
  std::vector<std::int64_t> pf_rows, pf_cols, pb_rows, pb_cols;
  std::vector<std::int64_t> pf_seg{0}, pb_seg{0};
  for (std::size_t ti = 0; ti < b; ++ti) {
    const Trajectory& t = batch[ti];
    const std::size_t base = lay.offsets[ti];
    for (std::size_t i = 0; i < t.states.size(); ++i) {
      pf_rows.push_back(static_cast<std::int64_t>(base + i));
      pf_cols.push_back(t.actions[i].is_terminate() ? cfg.dims : t.actions[i].dim);
      if (i > 0) {
        pb_rows.push_back(static_cast<std::int64_t>(base + i));
        pb_cols.push_back(t.actions[i - 1].dim);
      }
    }
    pf_seg.push_back(static_cast<std::int64_t>(pf_rows.size()));
    pb_seg.push_back(static_cast<std::int64_t>(pb_rows.size()));
  }

  Tape::NodeId sum_pf = tape.segment_sum(tape.gather(g.pf_logprob, pf_rows, pf_cols), pf_seg);
  Tape::NodeId spb;
  if (pb_rows.empty()) {
    spb = tape.input(Tensor::zeros({b}));
  } else {
    spb = tape.segment_sum(tape.gather(g.pb_logprob, pb_rows, pb_cols), pb_seg);
  }
  Tape::NodeId log_r = tape.input(Tensor({b}, lay.log_rewards));
  Tape::NodeId resid =
      tape.add_scalar(tape.sub(tape.sub(sum_pf, spb), log_r), g.logz);
  LossGraph out;
  out.loss = tape.mean(tape.square(resid));
  out.per_trajectory = resid;
  out.params = std::move(g.params);
  return out;
}

/// Sub-trajectory balance with geometric weights. Each trajectory with n
/// increments yields chain positions 0..n+1: position k<=n is state s_k and
/// position n+1 is the terminal sink. Flows are logZ at position 0 (tied to
/// the trajectory-balance partition estimate), the flow head at interior
/// states, and log R(x) at the sink. Every position pair i<j contributes a
/// residual
///   (cumPF_j - cumPF_i) - (cumPB_j - cumPB_i) - (logF_j - logF_i)
/// weighted by lambda^(j-i); the per-trajectory loss is the weighted mean
/// of squared residuals and the batch loss averages over trajectories.
inline LossGraph subtb_loss(Tape& tape, const PolicySet& p,
                            std::span<const Trajectory> batch, const EnvConfig& cfg,
                            double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw Error("subtb: lambda out of (0,1]");
  if (!p.cfg.flow_head) throw Error("subtb: policy has no flow head");
  detail::BatchLayout lay = detail::flatten_batch(batch, cfg);
  PolicyGraph g = build_policy_graph(tape, p, lay.states, cfg, /*want_pb=*/true,
                                     /*want_flow=*/true);

  const std::size_t b = batch.size();
  std::vector<Tape::NodeId> per_traj;
  Tape::NodeId zero1 = tape.input(Tensor::zeros({1}));
  for (std::size_t ti = 0; ti < b; ++ti) {
    const Trajectory& t = batch[ti];
    const std::size_t base = lay.offsets[ti];
    const std::size_t n = t.states.size() - 1;  // increments

    std::vector<std::int64_t> pf_rows, pf_cols, pb_rows, pb_cols;
    for (std::size_t i = 0; i + 1 < t.states.size(); ++i) {
      pf_rows.push_back(static_cast<std::int64_t>(base + i));
      pf_cols.push_back(t.actions[i].dim);
      pb_rows.push_back(static_cast<std::int64_t>(base + i + 1));
      pb_cols.push_back(t.actions[i].dim);
    }
    pf_rows.push_back(static_cast<std::int64_t>(base + n));
    pf_cols.push_back(cfg.dims);  // terminate

    // Cumulative edge sums over positions 0..n+1. The terminate edge has no
    // backward term, so the backward chain gets a trailing zero.
    Tape::NodeId pf_edges = tape.gather(g.pf_logprob, pf_rows, pf_cols);
    Tape::NodeId cum_pf = tape.concat(std::vector<Tape::NodeId>{zero1, tape.cumsum(pf_edges)});
    Tape::NodeId pb_edges;
    if (pb_rows.empty()) {
      pb_edges = zero1;
    } else {
      pb_edges = tape.concat(std::vector<Tape::NodeId>{
          tape.gather(g.pb_logprob, pb_rows, pb_cols), zero1});
    }
    Tape::NodeId cum_pb = tape.concat(std::vector<Tape::NodeId>{zero1, tape.cumsum(pb_edges)});

    std::vector<Tape::NodeId> flow_parts{g.logz};
    if (n >= 1) {
      flow_parts.push_back(tape.slice(g.log_flow, base + 1, base + n + 1));
    }
    flow_parts.push_back(tape.input(Tensor({1}, {lay.log_rewards[ti]})));
    Tape::NodeId log_f = tape.concat(flow_parts);

    const std::size_t m = n + 2;  // positions
    std::vector<std::int64_t> pairs;
    std::vector<double> weights;
    double wsum = 0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) {
        pairs.push_back(static_cast<std::int64_t>(i));
        pairs.push_back(static_cast<std::int64_t>(j));
        const double w = std::pow(lambda, static_cast<double>(j - i));
        weights.push_back(w);
        wsum += w;
      }
    }
    Tape::NodeId resid = tape.sub(tape.sub(tape.pair_diff(cum_pf, pairs),
                                           tape.pair_diff(cum_pb, pairs)),
                                  tape.pair_diff(log_f, pairs));
    Tape::NodeId weighted =
        tape.mul(tape.input(Tensor({weights.size()}, weights)), tape.square(resid));
    per_traj.push_back(tape.scale(tape.sum(weighted), 1.0 / wsum));
  }

  LossGraph out;
  out.per_trajectory = tape.concat(per_traj);
  out.loss = tape.scale(tape.sum(out.per_trajectory), 1.0 / static_cast<double>(b));
  out.params = std::move(g.params);
  return out;
}

/// Non-differentiating convenience: loss value only.
inline double tb_loss_value(const PolicySet& p, std::span<const Trajectory> batch,
                            const EnvConfig& cfg) {
  Tape tape;
  LossGraph g = tb_loss(tape, p, batch, cfg);
  return tape.value(g.loss).data[0];
}

inline double subtb_loss_value(const PolicySet& p, std::span<const Trajectory> batch,
                               const EnvConfig& cfg, double lambda) {
  Tape tape;
  LossGraph g = subtb_loss(tape, p, batch, cfg, lambda);
  return tape.value(g.loss).data[0];
}

}  // namespace dgfn
