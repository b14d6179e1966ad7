#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dgfn/hypergrid.hpp"
#include "dgfn/rng.hpp"
#include "dgfn/tape.hpp"
#include "dgfn/tensor.hpp"

namespace dgfn {

// Additive mask: illegal logits get this offset before log-softmax, which
// underflows their probability to exactly zero.
inline constexpr double kMaskOffset = -1e9;

struct PolicyConfig {
  std::vector<int> hidden = {256, 256};
  double leaky_slope = 0.01;
  bool learn_pb = true;    // false: uniform backward policy over parents
  bool flow_head = false;  // scalar log-state-flow head (SubTB)

  bool operator==(const PolicyConfig&) const = default;
};

/// All learnable quantities: shared trunk, forward-policy head (D+1 logits),
/// backward-policy head (D logits), free scalar logZ, and optionally a
/// scalar log-flow head.
struct PolicySet {
  PolicyConfig cfg;
  int dims = 0;       // D
  int input_dim = 0;  // D*H one-hot encoding

  std::vector<Tensor> trunk_w;  // layer l: [width_l, width_{l-1}]
  std::vector<Tensor> trunk_b;
  Tensor pf_w, pf_b;            // [D+1, width]
  Tensor pb_w, pb_b;            // [D, width]
  Tensor flow_w, flow_b;        // [1, width] when cfg.flow_head
  Tensor logz;                  // [1]

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (std::size_t l = 0; l < trunk_w.size(); ++l) {
      fn("trunk." + std::to_string(l) + ".w", trunk_w[l]);
      fn("trunk." + std::to_string(l) + ".b", trunk_b[l]);
    }
    fn("pf.w", pf_w);
    fn("pf.b", pf_b);
    if (cfg.learn_pb) {
      fn("pb.w", pb_w);
      fn("pb.b", pb_b);
    }
    if (cfg.flow_head) {
      fn("flow.w", flow_w);
      fn("flow.b", flow_b);
    }
    fn("logz", logz);
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) const {
    const_cast<PolicySet*>(this)->for_each_param(
        [&](const std::string& name, Tensor& t) {
          fn(name, static_cast<const Tensor&>(t));
        });
  }

  std::vector<std::pair<std::string, Tensor*>> named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for_each_param([&](const std::string& n, Tensor& t) { out.emplace_back(n, &t); });
    return out;
  }
};

inline PolicySet make_policy(const EnvConfig& env, PolicyConfig cfg,
                             std::uint64_t seed) {
  env.validate();
  if (cfg.hidden.empty()) throw Error("policy: need at least one hidden layer");
  PolicySet p;
  p.cfg = std::move(cfg);
  p.dims = env.dims;
  p.input_dim = env.dims * env.side;

  RngStream rng = param_init_stream(seed);
  auto init_layer = [&](int out_dim, int in_dim) {
    Tensor w = Tensor::zeros({static_cast<std::size_t>(out_dim),
                              static_cast<std::size_t>(in_dim)});
    const double lim = std::sqrt(6.0 / (in_dim + out_dim));
    for (double& v : w.data) v = rng.uniform(-lim, lim);
    return w;
  };

  int prev = p.input_dim;
  for (int width : p.cfg.hidden) {
    if (width < 1) throw Error("policy: bad hidden width");
    p.trunk_w.push_back(init_layer(width, prev));
    p.trunk_b.push_back(Tensor::zeros({static_cast<std::size_t>(width)}));
    prev = width;
  }
  p.pf_w = init_layer(env.dims + 1, prev);
  p.pf_b = Tensor::zeros({static_cast<std::size_t>(env.dims) + 1});
  p.pb_w = init_layer(env.dims, prev);
  p.pb_b = Tensor::zeros({static_cast<std::size_t>(env.dims)});
  if (p.cfg.flow_head) {
    p.flow_w = init_layer(1, prev);
    p.flow_b = Tensor::zeros({1});
  }
  p.logz = Tensor::scalar(0.0);
  return p;
}

/// theta' <- alpha*theta + (1-alpha)*theta', elementwise, logZ included.
/// alpha = 1 is a bit-exact copy.
inline void polyak(PolicySet& target, const PolicySet& online, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("polyak: alpha out of (0,1]");
  std::vector<const Tensor*> src;
  online.for_each_param([&](const std::string&, const Tensor& t) { src.push_back(&t); });
  std::size_t i = 0;
  target.for_each_param([&](const std::string& name, Tensor& t) {
    if (i >= src.size() || !t.same_shape(*src[i])) {
      throw Error("polyak: shape mismatch at " + name);
    }
    for (std::size_t k = 0; k < t.numel(); ++k) {
      t.data[k] = alpha * src[i]->data[k] + (1.0 - alpha) * t.data[k];
    }
    ++i;
  });
  if (i != src.size()) throw Error("polyak: parameter count mismatch");
}

// --- state encoding ----------------------------------------------------

/// One-hot per coordinate: position d*H + coords[d] is 1.
inline void encode_state_into(std::span<double> row, const GridState& s,
                              const EnvConfig& cfg) {
  std::fill(row.begin(), row.end(), 0.0);
  for (int d = 0; d < cfg.dims; ++d) {
    row[static_cast<std::size_t>(d) * cfg.side +
        static_cast<std::size_t>(s.coords[static_cast<std::size_t>(d)])] = 1.0;
  }
}

inline Tensor encode_state(const GridState& s, const EnvConfig& cfg) {
  if (!in_bounds(s, cfg)) throw Error("encode_state: state out of bounds");
  Tensor t = Tensor::zeros({static_cast<std::size_t>(cfg.dims * cfg.side)});
  encode_state_into(t.data, s, cfg);
  return t;
}

inline Tensor encode_states(std::span<const GridState> states,
                            const EnvConfig& cfg) {
  const std::size_t in = static_cast<std::size_t>(cfg.dims * cfg.side);
  Tensor t = Tensor::zeros({states.size(), in});
  for (std::size_t i = 0; i < states.size(); ++i) {
    encode_state_into(std::span<double>(t.data.data() + i * in, in), states[i], cfg);
  }
  return t;
}

// --- fast (non-tape) forward pass ---------------------------------------

struct PolicyForward {
  Tensor pf_logprob;  // [B, D+1], masked
  Tensor pb_logprob;  // [B, D]; rows for the origin are meaningless
  Tensor log_flow;    // [B] when requested
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<RowMat> emat(Tensor& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
          static_cast<Eigen::Index>(t.shape[1])};
}
inline Eigen::Map<const RowMat> ecmat(const Tensor& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
          static_cast<Eigen::Index>(t.shape[1])};
}

inline void log_softmax_rows_inplace(Tensor& m) {
  const std::size_t c = m.shape[1];
  for (std::size_t r = 0; r < m.shape[0]; ++r) {
    double* row = m.data.data() + r * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double acc = 0;
    for (std::size_t j = 0; j < c; ++j) acc += std::exp(row[j] - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
  }
}

/// Uniform log-probability over parents, used when P_B is not learned.
inline void uniform_pb_logits(Tensor& out, std::span<const GridState> states,
                              const EnvConfig& cfg) {
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto mask = parents_mask(states[i], cfg);
    int n = 0;
    for (auto m : mask) n += m;
    for (int d = 0; d < cfg.dims; ++d) {
      out.at(i, static_cast<std::size_t>(d)) =
          mask[static_cast<std::size_t>(d)] ? -std::log(static_cast<double>(n)) : kMaskOffset;
    }
  }
}

}  // namespace detail

inline PolicyForward forward_policy(const PolicySet& p,
                                    std::span<const GridState> states,
                                    const EnvConfig& cfg, bool want_pb = false,
                                    bool want_flow = false) {
  const std::size_t b = states.size();
  Tensor h = encode_states(states, cfg);
  for (std::size_t l = 0; l < p.trunk_w.size(); ++l) {
    Tensor next = Tensor::zeros({b, p.trunk_w[l].shape[0]});
    detail::emat(next).noalias() = detail::ecmat(h) * detail::ecmat(p.trunk_w[l]).transpose();
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t j = 0; j < next.shape[1]; ++j) {
        double v = next.at(r, j) + p.trunk_b[l].data[j];
        next.at(r, j) = v > 0 ? v : p.cfg.leaky_slope * v;
      }
    }
    h = std::move(next);
  }

  auto head = [&](const Tensor& w, const Tensor& bias) {
    Tensor out = Tensor::zeros({b, w.shape[0]});
    detail::emat(out).noalias() = detail::ecmat(h) * detail::ecmat(w).transpose();
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t j = 0; j < out.shape[1]; ++j) out.at(r, j) += bias.data[j];
    }
    return out;
  };

  PolicyForward f;
  f.pf_logprob = head(p.pf_w, p.pf_b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto mask = valid_actions(states[i], cfg);
    for (std::size_t j = 0; j < mask.size(); ++j) {
      if (!mask[j]) f.pf_logprob.at(i, j) += kMaskOffset;
    }
  }
  detail::log_softmax_rows_inplace(f.pf_logprob);

  if (want_pb) {
    if (p.cfg.learn_pb) {
      f.pb_logprob = head(p.pb_w, p.pb_b);
      for (std::size_t i = 0; i < b; ++i) {
        const auto mask = parents_mask(states[i], cfg);
        for (std::size_t j = 0; j < mask.size(); ++j) {
          if (!mask[j]) f.pb_logprob.at(i, j) += kMaskOffset;
        }
      }
      detail::log_softmax_rows_inplace(f.pb_logprob);
    } else {
      f.pb_logprob = Tensor::zeros({b, static_cast<std::size_t>(cfg.dims)});
      detail::uniform_pb_logits(f.pb_logprob, states, cfg);
    }
  }
  if (want_flow) {
    if (!p.cfg.flow_head) throw Error("forward_policy: policy has no flow head");
    Tensor flow = head(p.flow_w, p.flow_b);
    f.log_flow = reshape(std::move(flow), {b});
  }
  return f;
}

/// Action distribution at one state. Illegal actions have probability
/// exactly 0 (their masked logits underflow in exp).
inline std::vector<double> pf_distribution(const PolicySet& p, const GridState& s,
                                           const EnvConfig& cfg) {
  const GridState states[1] = {s};
  PolicyForward f = forward_policy(p, states, cfg);
  std::vector<double> probs(f.pf_logprob.numel());
  for (std::size_t j = 0; j < probs.size(); ++j) probs[j] = std::exp(f.pf_logprob.data[j]);
  return probs;
}

inline std::vector<double> pb_distribution(const PolicySet& p, const GridState& s,
                                           const EnvConfig& cfg) {
  if (s == initial_state(cfg)) throw Error("pb_distribution: undefined at the origin");
  const GridState states[1] = {s};
  PolicyForward f = forward_policy(p, states, cfg, /*want_pb=*/true);
  std::vector<double> probs(f.pb_logprob.numel());
  for (std::size_t j = 0; j < probs.size(); ++j) probs[j] = std::exp(f.pb_logprob.data[j]);
  return probs;
}

// --- trajectory sampling -------------------------------------------------

namespace detail {

/// Draw one action from a masked log-prob row, optionally mixed with the
/// uniform distribution over legal actions. Returns (action index, log-prob
/// under the behavior distribution).
inline std::pair<int, double> draw_action(std::span<const double> logprob,
                                          std::span<const std::uint8_t> mask,
                                          double eps, RngStream& rng) {
  const std::size_t n = logprob.size();
  int legal = 0;
  for (auto m : mask) legal += m;
  const double u = rng.uniform();
  double cum = 0;
  int chosen = -1;
  double chosen_p = 0;
  for (std::size_t j = 0; j < n; ++j) {
    double pj = mask[j] ? std::exp(logprob[j]) : 0.0;
    if (eps > 0 && mask[j]) pj = (1.0 - eps) * pj + eps / legal;
    cum += pj;
    if (u < cum) {
      chosen = static_cast<int>(j);
      chosen_p = pj;
      break;
    }
  }
  if (chosen < 0) {
    // u landed in the tail lost to rounding; take the last legal action.
    for (std::size_t j = n; j-- > 0;) {
      if (mask[j]) {
        chosen = static_cast<int>(j);
        chosen_p = eps > 0 ? (1.0 - eps) * std::exp(logprob[j]) + eps / legal
                           : std::exp(logprob[j]);
        break;
      }
    }
  }
  return {chosen, std::log(chosen_p)};
}

}  // namespace detail

/// Sample a batch of `count` trajectories from the policy's forward
/// distribution. Trajectory i consumes only its own random stream (keyed by
/// run seed, step, i), so results are independent of batching or evaluation
/// order. States are batched level by level into single matrix passes.
inline std::vector<Trajectory> sample_batch(const PolicySet& p, const EnvConfig& cfg,
                                            std::uint64_t run_seed, std::int64_t step_index,
                                            int count, double exploration_eps = 0.0) {
  std::vector<Trajectory> out(static_cast<std::size_t>(count));
  std::vector<RngStream> streams;
  streams.reserve(static_cast<std::size_t>(count));
  std::vector<std::size_t> active;
  for (int i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)].states.push_back(initial_state(cfg));
    streams.push_back(trajectory_stream(run_seed, step_index, i));
    active.push_back(static_cast<std::size_t>(i));
  }

  const std::size_t max_states = max_trajectory_states(cfg);
  std::vector<GridState> cur;
  while (!active.empty()) {
    cur.clear();
    for (std::size_t i : active) cur.push_back(out[i].states.back());
    PolicyForward f = forward_policy(p, cur, cfg);

    std::vector<std::size_t> still;
    const std::size_t cols = f.pf_logprob.shape[1];
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      Trajectory& t = out[i];
      const auto mask = valid_actions(t.states.back(), cfg);
      auto [a, logp] = detail::draw_action(
          std::span<const double>(f.pf_logprob.data.data() + k * cols, cols),
          mask, exploration_eps, streams[i]);
      t.log_pf.push_back(logp);
      if (a == cfg.dims) {
        t.actions.push_back(Action::terminate());
        t.reward = reward(t.states.back(), cfg);
      } else {
        t.actions.push_back(Action::increment(a));
        t.states.push_back(*step(t.states.back(), Action::increment(a), cfg));
        if (t.states.size() > max_states) throw Error("sample_batch: impossible length");
        still.push_back(i);
      }
    }
    active = std::move(still);
  }
  return out;
}

/// Single-trajectory sampler over a caller-provided stream. Bit-identical
/// to the batch path when given the same stream.
inline Trajectory sample_trajectory(const PolicySet& p, const EnvConfig& cfg,
                                    RngStream& rng, double exploration_eps = 0.0) {
  Trajectory t;
  t.states.push_back(initial_state(cfg));
  const std::size_t max_states = max_trajectory_states(cfg);
  while (true) {
    const GridState states[1] = {t.states.back()};
    PolicyForward f = forward_policy(p, states, cfg);
    const auto mask = valid_actions(t.states.back(), cfg);
    auto [a, logp] = detail::draw_action(f.pf_logprob.data, mask, exploration_eps, rng);
    t.log_pf.push_back(logp);
    if (a == cfg.dims) {
      t.actions.push_back(Action::terminate());
      t.reward = reward(t.states.back(), cfg);
      return t;
    }
    t.actions.push_back(Action::increment(a));
    t.states.push_back(*step(t.states.back(), Action::increment(a), cfg));
    if (t.states.size() > max_states) throw Error("sample_trajectory: impossible length");
  }
}

// --- tape-building evaluation (gradients flow) ---------------------------

struct PolicyGraph {
  Tape::NodeId pf_logprob = 0;  // [B, D+1]
  Tape::NodeId pb_logprob = 0;  // [B, D]; constant when P_B is uniform
  Tape::NodeId log_flow = 0;    // [B] when requested
  Tape::NodeId logz = 0;        // [1]
  std::vector<std::pair<std::string, Tape::NodeId>> params;
};

/// Rebuild the policy forward pass for a batch of states on a tape, so that
/// losses assembled from the outputs differentiate w.r.t. every parameter.
/// Masking adds kMaskOffset to illegal logits before log-softmax.
inline PolicyGraph build_policy_graph(Tape& tape, const PolicySet& p,
                                      std::span<const GridState> states,
                                      const EnvConfig& cfg, bool want_pb,
                                      bool want_flow) {
  PolicyGraph g;
  p.for_each_param([&](const std::string& name, const Tensor& t) {
    g.params.emplace_back(name, tape.param(t, name));
  });
  auto node_of = [&](const std::string& name) {
    for (const auto& [n, id] : g.params) {
      if (n == name) return id;
    }
    throw Error("build_policy_graph: missing param " + name);
  };

  Tape::NodeId h = tape.input(encode_states(states, cfg));
  for (std::size_t l = 0; l < p.trunk_w.size(); ++l) {
    const std::string ls = std::to_string(l);
    h = tape.affine(h, node_of("trunk." + ls + ".w"), node_of("trunk." + ls + ".b"));
    h = tape.leaky_relu(h, p.cfg.leaky_slope);
  }

  const std::size_t b = states.size();
  {
    Tensor offsets = Tensor::zeros({b, static_cast<std::size_t>(cfg.dims) + 1});
    for (std::size_t i = 0; i < b; ++i) {
      const auto mask = valid_actions(states[i], cfg);
      for (std::size_t j = 0; j < mask.size(); ++j) {
        if (!mask[j]) offsets.at(i, j) = kMaskOffset;
      }
    }
    Tape::NodeId logits = tape.affine(h, node_of("pf.w"), node_of("pf.b"));
    g.pf_logprob = tape.log_softmax_rows(tape.add(logits, tape.input(std::move(offsets))));
  }

  if (want_pb) {
    if (p.cfg.learn_pb) {
      Tensor offsets = Tensor::zeros({b, static_cast<std::size_t>(cfg.dims)});
      for (std::size_t i = 0; i < b; ++i) {
        const auto mask = parents_mask(states[i], cfg);
        for (std::size_t j = 0; j < mask.size(); ++j) {
          if (!mask[j]) offsets.at(i, j) = kMaskOffset;
        }
      }
      Tape::NodeId logits = tape.affine(h, node_of("pb.w"), node_of("pb.b"));
      g.pb_logprob = tape.log_softmax_rows(tape.add(logits, tape.input(std::move(offsets))));
    } else {
      Tensor uni = Tensor::zeros({b, static_cast<std::size_t>(cfg.dims)});
      detail::uniform_pb_logits(uni, states, cfg);
      g.pb_logprob = tape.input(std::move(uni));
    }
  }
  if (want_flow) {
    if (!p.cfg.flow_head) throw Error("build_policy_graph: policy has no flow head");
    Tape::NodeId flow = tape.affine(h, node_of("flow.w"), node_of("flow.b"));
    g.log_flow = tape.reshape_node(flow, {b});
  }
  g.logz = node_of("logz");
  return g;
}

/// (sum log P_F, sum log P_B) for one trajectory, recomputed under `p` on
/// the tape. P_F includes the Terminate step; P_B covers the increments.
struct LogProbSums {
  Tape::NodeId sum_pf = 0;
  Tape::NodeId sum_pb = 0;
  std::vector<std::pair<std::string, Tape::NodeId>> params;
};

inline LogProbSums log_pf_pb(Tape& tape, const PolicySet& p, const Trajectory& t,
                             const EnvConfig& cfg) {
  validate_trajectory(t, cfg);
  PolicyGraph g = build_policy_graph(tape, p, t.states, cfg, /*want_pb=*/true,
                                     /*want_flow=*/false);
  const std::size_t n = t.states.size();
  std::vector<std::int64_t> pf_rows, pf_cols, pb_rows, pb_cols;
  for (std::size_t i = 0; i < n; ++i) {
    pf_rows.push_back(static_cast<std::int64_t>(i));
    pf_cols.push_back(t.actions[i].is_terminate() ? cfg.dims : t.actions[i].dim);
    if (i > 0) {
      pb_rows.push_back(static_cast<std::int64_t>(i));
      pb_cols.push_back(t.actions[i - 1].dim);
    }
  }
  LogProbSums s;
  s.sum_pf = tape.sum(tape.gather(g.pf_logprob, pf_rows, pf_cols));
  if (pb_rows.empty()) {
    s.sum_pb = tape.input(Tensor::scalar(0.0));  // empty product
  } else {
    s.sum_pb = tape.sum(tape.gather(g.pb_logprob, pb_rows, pb_cols));
  }
  s.params = std::move(g.params);
  return s;
}

}  // namespace dgfn
