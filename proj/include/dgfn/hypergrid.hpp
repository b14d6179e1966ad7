#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <optional>
#include <vector>

#include "dgfn/tensor.hpp"

namespace dgfn {

/// D-dimensional grid DAG with side length H. Actions increment one
/// coordinate; termination is legal everywhere. Rewards follow the standard
/// two-indicator corner layout with constants R0 << R1 < R2.
struct EnvConfig {
  int dims = 2;       // D
  int side = 8;       // H
  double r0 = 1e-3;
  double r1 = 0.5;
  double r2 = 2.0;

  void validate() const {
    if (dims < 1) throw Error("env: D must be >= 1");
    if (side < 2) throw Error("env: H must be >= 2");
    if (!(0 < r0 && r0 < r1 && r1 < r2)) {
      throw Error("env: need 0 < R0 < R1 < R2");
    }
  }

  std::int64_t state_count() const {
    std::int64_t n = 1;
    for (int d = 0; d < dims; ++d) n *= side;
    return n;
  }

  bool operator==(const EnvConfig&) const = default;
};

struct GridState {
  std::vector<int> coords;

  bool operator==(const GridState&) const = default;
  auto operator<=>(const GridState&) const = default;
};

inline constexpr int kTerminateDim = -1;

struct Action {
  int dim = kTerminateDim;  // incremented coordinate, or kTerminateDim

  static Action increment(int d) { return Action{d}; }
  static Action terminate() { return Action{kTerminateDim}; }
  bool is_terminate() const { return dim == kTerminateDim; }
  bool operator==(const Action&) const = default;
};

/// Complete path s0 -> ... -> sn -> sink. `actions` has one entry per state:
/// the action taken from it (the last one is always Terminate). Cached log
/// probabilities, when present, reflect the sampling-time policy.
struct Trajectory {
  std::vector<GridState> states;
  std::vector<Action> actions;
  double reward = 0.0;
  std::vector<double> log_pf;  // optional cache, one per action
  std::vector<double> log_pb;  // optional cache, one per increment
};

inline GridState initial_state(const EnvConfig& cfg) {
  return GridState{std::vector<int>(static_cast<std::size_t>(cfg.dims), 0)};
}

inline bool in_bounds(const GridState& s, const EnvConfig& cfg) {
  if (s.coords.size() != static_cast<std::size_t>(cfg.dims)) return false;
  for (int c : s.coords) {
    if (c < 0 || c >= cfg.side) return false;
  }
  return true;
}

/// Mask over D+1 actions; entry d allows Increment(d), entry D is Terminate
/// (always legal).
inline std::vector<std::uint8_t> valid_actions(const GridState& s,
                                               const EnvConfig& cfg) {
  if (!in_bounds(s, cfg)) throw Error("valid_actions: state out of bounds");
  std::vector<std::uint8_t> mask;
  mask.reserve(static_cast<std::size_t>(cfg.dims) + 1);
  for (int d = 0; d < cfg.dims; ++d) {
    mask.push_back(s.coords[static_cast<std::size_t>(d)] < cfg.side - 1);
  }
  mask.push_back(1);
  return mask;
}

/// Mask over D parent directions; entry d means coords[d] > 0.
inline std::vector<std::uint8_t> parents_mask(const GridState& s,
                                              const EnvConfig& cfg) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(cfg.dims), 0);
  for (int d = 0; d < cfg.dims; ++d) {
    mask[static_cast<std::size_t>(d)] = s.coords[static_cast<std::size_t>(d)] > 0;
  }
  return mask;
}

/// Increment returns the next state; Terminate returns nullopt, marking `s`
/// itself as the terminal object. Illegal actions are hard errors.
inline std::optional<GridState> step(const GridState& s, Action a,
                                     const EnvConfig& cfg) {
  if (a.is_terminate()) return std::nullopt;
  if (a.dim < 0 || a.dim >= cfg.dims) throw Error("step: bad action dimension");
  if (s.coords[static_cast<std::size_t>(a.dim)] >= cfg.side - 1) {
    throw Error("step: increment out of bounds");
  }
  GridState next = s;
  next.coords[static_cast<std::size_t>(a.dim)] += 1;
  return next;
}

namespace detail {

/// Both indicators compare z = |c/(H-1) - 0.5| against rational thresholds.
/// With m = |2c - (H-1)| we have z = m / (2(H-1)), so the comparisons reduce
/// to exact integer inequalities (binary rounding of c/(H-1) would otherwise
/// misclassify boundary coordinates, e.g. c=4 at H=6).
inline bool outer_coord(int c, int side) {
  const int m = std::abs(2 * c - (side - 1));
  return 2 * m > side - 1;  // z > 0.25
}

inline bool band_coord(int c, int side) {
  const int m = std::abs(2 * c - (side - 1));
  return 5 * m > 3 * (side - 1) && 5 * m < 4 * (side - 1);  // 0.3 < z < 0.4
}

}  // namespace detail

/// R(x) = R0 + R1*prod_i 1[0.25 < |x_i/(H-1) - 0.5|]
///           + R2*prod_i 1[0.3 < |x_i/(H-1) - 0.5| < 0.4].
inline double reward(const GridState& x, const EnvConfig& cfg) {
  if (!in_bounds(x, cfg)) throw Error("reward: state out of bounds");
  bool outer = true, band = true;
  for (int c : x.coords) {
    outer = outer && detail::outer_coord(c, cfg.side);
    band = band && detail::band_coord(c, cfg.side);
  }
  return cfg.r0 + (outer ? cfg.r1 : 0.0) + (band ? cfg.r2 : 0.0);
}

/// Per-dimension coordinates whose normalized offset falls in the R2 band.
inline std::vector<int> mode_coordinates(const EnvConfig& cfg) {
  std::vector<int> coords;
  for (int c = 0; c < cfg.side; ++c) {
    if (detail::band_coord(c, cfg.side)) coords.push_back(c);
  }
  return coords;
}

/// All maximal-reward cells (R2 indicator active), in lexicographic order.
/// An empty set signals a reward-normalization bug and is a hard error.
inline std::vector<GridState> mode_set(const EnvConfig& cfg) {
  cfg.validate();
  const std::vector<int> per_dim = mode_coordinates(cfg);
  if (per_dim.empty()) {
    throw Error("mode_set: empty R2 band for H=" + std::to_string(cfg.side));
  }
  std::vector<GridState> modes;
  GridState cur{std::vector<int>(static_cast<std::size_t>(cfg.dims), per_dim[0])};
  std::vector<std::size_t> pick(static_cast<std::size_t>(cfg.dims), 0);
  while (true) {
    for (int d = 0; d < cfg.dims; ++d) {
      cur.coords[static_cast<std::size_t>(d)] = per_dim[pick[static_cast<std::size_t>(d)]];
    }
    modes.push_back(cur);
    int d = cfg.dims - 1;
    while (d >= 0) {
      if (++pick[static_cast<std::size_t>(d)] < per_dim.size()) break;
      pick[static_cast<std::size_t>(d)] = 0;
      --d;
    }
    if (d < 0) break;
  }
  return modes;
}

/// Row-major flat index; coordinate 0 is the most significant digit.
inline std::int64_t state_index(const GridState& s, const EnvConfig& cfg) {
  std::int64_t idx = 0;
  for (int d = 0; d < cfg.dims; ++d) {
    idx = idx * cfg.side + s.coords[static_cast<std::size_t>(d)];
  }
  return idx;
}

inline GridState state_from_index(std::int64_t idx, const EnvConfig& cfg) {
  GridState s{std::vector<int>(static_cast<std::size_t>(cfg.dims), 0)};
  for (int d = cfg.dims - 1; d >= 0; --d) {
    s.coords[static_cast<std::size_t>(d)] = static_cast<int>(idx % cfg.side);
    idx /= cfg.side;
  }
  return s;
}

inline int coordinate_sum(const GridState& s) {
  int acc = 0;
  for (int c : s.coords) acc += c;
  return acc;
}

/// Longest possible trajectory: every coordinate maxed, then Terminate.
inline std::size_t max_trajectory_states(const EnvConfig& cfg) {
  return static_cast<std::size_t>(cfg.dims) * static_cast<std::size_t>(cfg.side - 1) + 1;
}

inline void validate_trajectory(const Trajectory& t, const EnvConfig& cfg) {
  if (t.states.empty() || t.actions.size() != t.states.size()) {
    throw Error("trajectory: state/action count mismatch");
  }
  if (t.states.front() != initial_state(cfg)) {
    throw Error("trajectory: must start at the origin");
  }
  if (!t.actions.back().is_terminate()) {
    throw Error("trajectory: must end with Terminate");
  }
  for (std::size_t i = 0; i + 1 < t.states.size(); ++i) {
    const Action a = t.actions[i];
    if (a.is_terminate()) throw Error("trajectory: premature Terminate");
    auto next = step(t.states[i], a, cfg);
    if (!next || *next != t.states[i + 1]) {
      throw Error("trajectory: inconsistent transition");
    }
  }
}

}  // namespace dgfn
