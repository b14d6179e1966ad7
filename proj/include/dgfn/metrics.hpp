#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dgfn/hypergrid.hpp"
#include "dgfn/tensor.hpp"

namespace dgfn {

/// Shortest decimal string that round-trips the value. Keeps every emitted
/// file byte-stable across runs and platforms with the same doubles.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// Ring buffer of the most recent K terminal states with per-state counts.
class SampleWindow {
 public:
  SampleWindow(std::size_t capacity, std::size_t state_count)
      : capacity_(capacity), counts_(state_count, 0) {
    if (capacity == 0) throw Error("SampleWindow: zero capacity");
  }

  void push(std::size_t state) {
    if (state >= counts_.size()) throw Error("SampleWindow: state out of range");
    if (ring_.size() < capacity_) {
      ring_.push_back(state);
    } else {
      counts_[ring_[head_]] -= 1;
      ring_[head_] = state;
      head_ = (head_ + 1) % capacity_;
    }
    counts_[state] += 1;
  }

  std::size_t size() const { return ring_.size(); }
  bool empty() const { return ring_.empty(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t state_count() const { return counts_.size(); }
  std::span<const std::uint32_t> counts() const { return counts_; }

  /// Contents oldest to newest; re-pushing them into an empty window of the
  /// same capacity reproduces this window's behavior exactly.
  std::vector<std::size_t> ordered() const {
    std::vector<std::size_t> out;
    out.reserve(ring_.size());
    for (std::size_t k = 0; k < ring_.size(); ++k) {
      out.push_back(ring_[(head_ + k) % ring_.size()]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<std::size_t> ring_;
  std::vector<std::uint32_t> counts_;
};

/// Empirical L1 distance between the window's distribution and the target,
/// summed over every state (unsampled states contribute their target mass).
inline double l1_error(const SampleWindow& window, std::span<const double> target) {
  if (window.empty()) throw Error("l1_error: empty window");
  if (window.counts().size() != target.size()) {
    throw Error("l1_error: target size mismatch");
  }
  const double n = static_cast<double>(window.size());
  double acc = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    acc += std::abs(static_cast<double>(window.counts()[i]) / n - target[i]);
  }
  return acc;
}

/// Which cells of the maximal-reward region have been sampled so far.
class ModeTracker {
 public:
  ModeTracker(const EnvConfig& cfg) : cfg_(cfg) {
    for (const GridState& m : mode_set(cfg)) {
      modes_.insert(state_index(m, cfg));
    }
  }

  /// Returns the number of modes newly discovered by this batch.
  std::size_t update(std::span<const GridState> terminal_states) {
    std::size_t fresh = 0;
    for (const GridState& s : terminal_states) {
      const std::size_t i = state_index(s, cfg_);
      if (modes_.count(i) && discovered_.insert(i).second) ++fresh;
    }
    return fresh;
  }

  std::size_t count() const { return discovered_.size(); }
  std::size_t total() const { return modes_.size(); }
  double fraction() const {
    return static_cast<double>(count()) / static_cast<double>(total());
  }
  const std::set<std::size_t>& discovered() const { return discovered_; }
  void restore(std::span<const std::size_t> discovered) {
    discovered_.clear();
    for (std::size_t i : discovered) {
      if (!modes_.count(i)) throw Error("ModeTracker: restored state is not a mode");
      discovered_.insert(i);
    }
  }

 private:
  EnvConfig cfg_;
  std::set<std::size_t> modes_;
  std::set<std::size_t> discovered_;
};

struct MetricRecord {
  std::int64_t step = 0;
  std::int64_t trajectories = 0;
  double loss = 0;
  double l1 = 0;
  std::int64_t modes = 0;
  double modes_frac = 0;
  double mean_reward = 0;
  double logz = 0;
};

inline constexpr const char* kMetricCsvHeader =
    "step,trajectories,loss,l1,modes,modes_frac,mean_reward,logZ";

inline std::string to_csv_row(const MetricRecord& r) {
  std::string out;
  out += std::to_string(r.step);
  out += ',';
  out += std::to_string(r.trajectories);
  out += ',';
  out += format_double(r.loss);
  out += ',';
  out += format_double(r.l1);
  out += ',';
  out += std::to_string(r.modes);
  out += ',';
  out += format_double(r.modes_frac);
  out += ',';
  out += format_double(r.mean_reward);
  out += ',';
  out += format_double(r.logz);
  return out;
}

// --- sample-quality metrics ------------------------------------------------

struct RewardedSample {
  GridState state;
  double reward = 0;
};

namespace detail {

/// Descending reward, ties broken by lexicographic state order.
inline std::vector<RewardedSample> sorted_by_reward(
    std::span<const RewardedSample> samples) {
  std::vector<RewardedSample> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end(), [](const RewardedSample& a, const RewardedSample& b) {
    if (a.reward != b.reward) return a.reward > b.reward;
    return a.state.coords < b.state.coords;
  });
  return s;
}

}  // namespace detail

/// Mean reward of the k highest-reward samples, duplicates counted.
inline double top_k_reward(std::span<const RewardedSample> samples, std::size_t k) {
  if (k == 0 || k > samples.size()) throw Error("top_k_reward: bad k");
  std::vector<RewardedSample> s = detail::sorted_by_reward(samples);
  double acc = 0;
  for (std::size_t i = 0; i < k; ++i) acc += s[i].reward;
  return acc / static_cast<double>(k);
}

using SimilarityFn = std::function<double(const GridState&, const GridState&)>;

/// Fraction of matching coordinates.
inline double hamming_similarity(const GridState& a, const GridState& b) {
  if (a.coords.size() != b.coords.size()) {
    throw Error("hamming_similarity: dimension mismatch");
  }
  std::size_t same = 0;
  for (std::size_t d = 0; d < a.coords.size(); ++d) same += a.coords[d] == b.coords[d];
  return static_cast<double>(same) / static_cast<double>(a.coords.size());
}

struct DiverseTopK {
  double mean_reward = 0;
  std::size_t accepted = 0;
  bool shortfall = false;  // fewer than k mutually dissimilar samples existed
};

/// Greedy diversity filter: scan by descending reward, accept a sample iff
/// its similarity to every accepted one is <= threshold, stop at k.
inline DiverseTopK diverse_top_k(std::span<const RewardedSample> samples,
                                 std::size_t k, const SimilarityFn& similarity,
                                 double threshold) {
  if (k == 0) throw Error("diverse_top_k: bad k");
  std::vector<RewardedSample> s = detail::sorted_by_reward(samples);
  std::vector<const RewardedSample*> accepted;
  for (const RewardedSample& cand : s) {
    bool ok = true;
    for (const RewardedSample* a : accepted) {
      if (similarity(cand.state, a->state) > threshold) {
        ok = false;
        break;
      }
    }
    if (ok) {
      accepted.push_back(&cand);
      if (accepted.size() == k) break;
    }
  }
  DiverseTopK out;
  out.accepted = accepted.size();
  out.shortfall = accepted.size() < k;
  if (!accepted.empty()) {
    double acc = 0;
    for (const RewardedSample* a : accepted) acc += a->reward;
    out.mean_reward = acc / static_cast<double>(accepted.size());
  }
  return out;
}

}  // namespace dgfn
