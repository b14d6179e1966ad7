#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dgfn/hypergrid.hpp"
#include "dgfn/policy.hpp"
#include "dgfn/tensor.hpp"

namespace dgfn {

/// The distribution a perfectly trained sampler should match:
/// p(x) = R(x) / Z over all grid states.
struct TargetTable {
  std::vector<double> rewards;  // by state_index
  std::vector<double> probs;
  double z = 0;
};

inline TargetTable target_distribution(const EnvConfig& cfg) {
  cfg.validate();
  TargetTable t;
  const std::size_t n = cfg.state_count();
  t.rewards.resize(n);
  t.probs.resize(n);
  // Compensated (Neumaier) sum: Z is the correctly rounded total, not a
  // value that drifts with the number of states.
  double comp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t.rewards[i] = reward(state_from_index(i, cfg), cfg);
    const double next = t.z + t.rewards[i];
    comp += std::abs(t.z) >= std::abs(t.rewards[i]) ? (t.z - next) + t.rewards[i]
                                                    : (t.rewards[i] - next) + t.z;
    t.z = next;
  }
  t.z += comp;
  for (std::size_t i = 0; i < n; ++i) t.probs[i] = t.rewards[i] / t.z;
  return t;
}

/// Exact terminal distribution of the forward policy, by dynamic
/// programming over states in coordinate-sum order: push unit flow from the
/// origin through the policy and read off the mass each state terminates.
inline std::vector<double> terminal_distribution(const PolicySet& p,
                                                 const EnvConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.state_count();
  std::vector<std::vector<std::size_t>> by_sum(
      static_cast<std::size_t>(cfg.dims * (cfg.side - 1)) + 1);
  for (std::size_t i = 0; i < n; ++i) {
    by_sum[static_cast<std::size_t>(coordinate_sum(state_from_index(i, cfg)))]
        .push_back(i);
  }

  std::vector<double> flow(n, 0.0), terminal(n, 0.0);
  flow[state_index(initial_state(cfg), cfg)] = 1.0;
  std::vector<GridState> bucket_states;
  for (const auto& bucket : by_sum) {
    if (bucket.empty()) continue;
    bucket_states.clear();
    for (std::size_t i : bucket) bucket_states.push_back(state_from_index(i, cfg));
    PolicyForward f = forward_policy(p, bucket_states, cfg);
    for (std::size_t k = 0; k < bucket.size(); ++k) {
      const std::size_t i = bucket[k];
      if (flow[i] == 0.0) continue;
      terminal[i] = flow[i] * std::exp(f.pf_logprob.at(k, static_cast<std::size_t>(cfg.dims)));
      for (int d = 0; d < cfg.dims; ++d) {
        const double pd = std::exp(f.pf_logprob.at(k, static_cast<std::size_t>(d)));
        if (pd == 0.0) continue;
        GridState child = bucket_states[k];
        child.coords[static_cast<std::size_t>(d)] += 1;
        flow[state_index(child, cfg)] += flow[i] * pd;
      }
    }
  }
  return terminal;
}

/// Exact L1 distance between the policy's terminal distribution and the
/// target: sum_x |p(x) - R(x)/Z|.
inline double exact_l1(const PolicySet& p, const EnvConfig& cfg) {
  TargetTable t = target_distribution(cfg);
  std::vector<double> q = terminal_distribution(p, cfg);
  double acc = 0;
  for (std::size_t i = 0; i < q.size(); ++i) acc += std::abs(q[i] - t.probs[i]);
  return acc;
}

/// Every complete trajectory of the grid DAG, origin to Terminate. Guarded
/// to tiny grids; the count grows factorially.
inline std::vector<Trajectory> enumerate_all_trajectories(const EnvConfig& cfg) {
  cfg.validate();
  if (cfg.dims > 2 || cfg.side > 4) {
    throw Error("enumerate_all_trajectories: grid too large to enumerate");
  }
  std::vector<Trajectory> out;
  Trajectory cur;
  cur.states.push_back(initial_state(cfg));
  auto rec = [&](auto&& self) -> void {
    Trajectory done = cur;
    done.actions.push_back(Action::terminate());
    done.reward = reward(done.states.back(), cfg);
    out.push_back(std::move(done));
    const auto mask = valid_actions(cur.states.back(), cfg);
    for (int d = 0; d < cfg.dims; ++d) {
      if (!mask[static_cast<std::size_t>(d)]) continue;
      cur.actions.push_back(Action::increment(d));
      cur.states.push_back(*step(cur.states[cur.states.size() - 1],
                                 Action::increment(d), cfg));
      self(self);
      cur.states.pop_back();
      cur.actions.pop_back();
    }
  };
  rec(rec);
  return out;
}

/// Exact probability of one trajectory under the forward policy.
inline double trajectory_probability(const PolicySet& p, const Trajectory& t,
                                     const EnvConfig& cfg) {
  validate_trajectory(t, cfg);
  PolicyForward f = forward_policy(p, t.states, cfg);
  double logp = 0;
  for (std::size_t i = 0; i < t.states.size(); ++i) {
    const int col = t.actions[i].is_terminate() ? cfg.dims : t.actions[i].dim;
    logp += f.pf_logprob.at(i, static_cast<std::size_t>(col));
  }
  return std::exp(logp);
}

// --- flow conservation ----------------------------------------------------

/// An explicit flow on the grid DAG: one value per increment edge (keyed by
/// source state index and dimension) plus one terminal value per state.
struct FlowAssignment {
  EnvConfig cfg;
  double source = 0;                        // flow injected at the origin
  std::vector<double> edge;                 // [state_count * dims]
  std::vector<double> terminal;             // [state_count]

  double& edge_flow(std::size_t state, int dim) {
    return edge[state * static_cast<std::size_t>(cfg.dims) + static_cast<std::size_t>(dim)];
  }
  double edge_flow(std::size_t state, int dim) const {
    return edge[state * static_cast<std::size_t>(cfg.dims) + static_cast<std::size_t>(dim)];
  }
};

/// Build a flow that exactly realizes the target distribution: terminal
/// flow R(x) everywhere, demand propagated to parents in equal shares.
/// Total source flow comes out to Z.
inline FlowAssignment balanced_flow_from_target(const EnvConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.state_count();
  FlowAssignment fa;
  fa.cfg = cfg;
  fa.edge.assign(n * static_cast<std::size_t>(cfg.dims), 0.0);
  fa.terminal.resize(n);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return coordinate_sum(state_from_index(a, cfg)) >
           coordinate_sum(state_from_index(b, cfg));
  });

  std::vector<double> demand(n, 0.0);  // flow that must arrive at each state
  for (std::size_t i : order) {
    const GridState s = state_from_index(i, cfg);
    fa.terminal[i] = reward(s, cfg);
    double need = fa.terminal[i] + demand[i];
    const auto pmask = parents_mask(s, cfg);
    int parents = 0;
    for (auto m : pmask) parents += m;
    if (parents == 0) {
      fa.source = need;
      continue;
    }
    const double share = need / parents;
    for (int d = 0; d < cfg.dims; ++d) {
      if (!pmask[static_cast<std::size_t>(d)]) continue;
      GridState parent = s;
      parent.coords[static_cast<std::size_t>(d)] -= 1;
      const std::size_t pi = state_index(parent, cfg);
      fa.edge_flow(pi, d) = share;  // edge parent -> s along d
      demand[pi] += share;
    }
  }
  return fa;
}

/// Max absolute conservation violation over all states:
///   inflow(s) + [s = origin] * source  ==  terminal(s) + outflow(s).
inline double check_flow_balance(const FlowAssignment& fa) {
  const EnvConfig& cfg = fa.cfg;
  const std::size_t n = cfg.state_count();
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const GridState s = state_from_index(i, cfg);
    double in = 0;
    const auto pmask = parents_mask(s, cfg);
    for (int d = 0; d < cfg.dims; ++d) {
      if (!pmask[static_cast<std::size_t>(d)]) continue;
      GridState parent = s;
      parent.coords[static_cast<std::size_t>(d)] -= 1;
      in += fa.edge_flow(state_index(parent, cfg), d);
    }
    if (coordinate_sum(s) == 0) in += fa.source;
    double out = fa.terminal[i];
    const auto amask = valid_actions(s, cfg);
    for (int d = 0; d < cfg.dims; ++d) {
      if (amask[static_cast<std::size_t>(d)]) out += fa.edge_flow(i, d);
    }
    worst = std::max(worst, std::abs(in - out));
  }
  return worst;
}

/// Terminal distribution implied by summing exact trajectory probabilities,
/// for cross-checking the dynamic-programming path on tiny grids.
inline std::vector<double> terminal_distribution_by_enumeration(
    const PolicySet& p, const EnvConfig& cfg) {
  std::vector<double> probs(cfg.state_count(), 0.0);
  for (const Trajectory& t : enumerate_all_trajectories(cfg)) {
    probs[state_index(t.states.back(), cfg)] += trajectory_probability(p, t, cfg);
  }
  return probs;
}

}  // namespace dgfn
