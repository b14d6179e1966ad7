#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgfn/adam.hpp"
#include "dgfn/metrics.hpp"
#include "dgfn/policy.hpp"
#include "dgfn/tensor.hpp"
#include "dgfn/trainer.hpp"

namespace dgfn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

inline constexpr const char* kCheckpointFormat = "dgfn-checkpoint-1";

namespace detail {

struct PayloadWriter {
  std::vector<char> bytes;
  nlohmann::json tensors = nlohmann::json::array();
  nlohmann::json u64_arrays = nlohmann::json::array();

  void add_tensor(const std::string& name, const Tensor& t) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape;
    e["offset"] = bytes.size();
    tensors.push_back(e);
    const std::size_t n = t.numel() * sizeof(double);
    const std::size_t at = bytes.size();
    bytes.resize(at + n);
    std::memcpy(bytes.data() + at, t.data.data(), n);
  }

  void add_u64(const std::string& name, const std::vector<std::uint64_t>& v) {
    nlohmann::json e;
    e["name"] = name;
    e["count"] = v.size();
    e["offset"] = bytes.size();
    u64_arrays.push_back(e);
    const std::size_t n = v.size() * sizeof(std::uint64_t);
    const std::size_t at = bytes.size();
    bytes.resize(at + n);
    std::memcpy(bytes.data() + at, v.data(), n);
  }
};

struct PayloadReader {
  std::vector<char> bytes;
  nlohmann::json manifest;

  const nlohmann::json* entry(const nlohmann::json& list, const std::string& name) const {
    for (const auto& e : list) {
      if (e.at("name").get<std::string>() == name) return &e;
    }
    return nullptr;
  }

  void read_tensor(const std::string& name, Tensor& into) const {
    const nlohmann::json* e = entry(manifest.at("tensors"), name);
    if (!e) throw Error("checkpoint: missing tensor " + name);
    const auto shape = e->at("shape").get<std::vector<std::size_t>>();
    if (shape != into.shape) throw Error("checkpoint: shape mismatch for " + name);
    const std::size_t off = e->at("offset").get<std::size_t>();
    const std::size_t n = into.numel() * sizeof(double);
    if (off + n > bytes.size()) throw Error("checkpoint: payload truncated at " + name);
    std::memcpy(into.data.data(), bytes.data() + off, n);
  }

  std::vector<std::uint64_t> read_u64(const std::string& name) const {
    const nlohmann::json* e = entry(manifest.at("u64_arrays"), name);
    if (!e) throw Error("checkpoint: missing array " + name);
    const std::size_t count = e->at("count").get<std::size_t>();
    const std::size_t off = e->at("offset").get<std::size_t>();
    if (off + count * sizeof(std::uint64_t) > bytes.size()) {
      throw Error("checkpoint: payload truncated at " + name);
    }
    std::vector<std::uint64_t> v(count);
    std::memcpy(v.data(), bytes.data() + off, count * sizeof(std::uint64_t));
    return v;
  }
};

inline void add_adam(PayloadWriter& w, const std::string& prefix, const AdamState& a) {
  for (std::size_t i = 0; i < a.names.size(); ++i) {
    w.add_tensor(prefix + "/m/" + a.names[i], a.m[i]);
    w.add_tensor(prefix + "/v/" + a.names[i], a.v[i]);
  }
}

}  // namespace detail

/// Write `dir/manifest.json` + `dir/params.bin` capturing everything a run
/// needs to continue exactly: both parameter sets, optimizer moments, the
/// (seed, step) pair that keys the trajectory streams, the metric window,
/// the discovered modes, and when discovery completed (-1 = not yet).
inline void save_checkpoint(const std::filesystem::path& dir, const Trainer& trainer,
                            const SampleWindow& window, const ModeTracker& modes,
                            const std::string& config_hash_hex,
                            std::int64_t steps_to_all_modes = -1,
                            std::int64_t trajectories_to_all_modes = -1) {
  std::filesystem::create_directories(dir);
  detail::PayloadWriter w;
  trainer.online().for_each_param([&](const std::string& n, const Tensor& t) {
    w.add_tensor("online/" + n, t);
  });
  const bool has_target = trainer.config().algorithm == Algorithm::kDgfn;
  if (has_target) {
    trainer.target().for_each_param([&](const std::string& n, const Tensor& t) {
      w.add_tensor("target/" + n, t);
    });
  }
  detail::add_adam(w, "adam_policy", trainer.adam_policy());
  detail::add_adam(w, "adam_logz", trainer.adam_logz());

  std::vector<std::uint64_t> win;
  for (std::size_t s : window.ordered()) win.push_back(s);
  w.add_u64("window", win);
  std::vector<std::uint64_t> disc(modes.discovered().begin(), modes.discovered().end());
  w.add_u64("modes", disc);

  nlohmann::json m;
  m["format"] = kCheckpointFormat;
  m["config_hash"] = config_hash_hex;
  m["algorithm"] = to_string(trainer.config().algorithm);
  m["objective"] = to_string(trainer.config().objective);
  m["seed"] = trainer.seed();
  m["step"] = trainer.steps_done();
  m["steps_to_all_modes"] = steps_to_all_modes;
  m["trajectories_to_all_modes"] = trajectories_to_all_modes;
  m["adam_policy_t"] = trainer.adam_policy().t;
  m["adam_policy_names"] = trainer.adam_policy().names;
  m["adam_logz_t"] = trainer.adam_logz().t;
  m["adam_logz_names"] = trainer.adam_logz().names;
  m["payload"] = "params.bin";
  m["payload_bytes"] = w.bytes.size();
  m["tensors"] = std::move(w.tensors);
  m["u64_arrays"] = std::move(w.u64_arrays);

  {
    std::ofstream f(dir / "params.bin", std::ios::binary | std::ios::trunc);
    if (!f) throw Error("checkpoint: cannot write " + (dir / "params.bin").string());
    f.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
    if (!f) throw Error("checkpoint: short write to params.bin");
  }
  {
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw Error("checkpoint: cannot write " + (dir / "manifest.json").string());
    f << m.dump(2) << '\n';
  }
}

inline bool checkpoint_exists(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "manifest.json") &&
         std::filesystem::exists(dir / "params.bin");
}

/// Restore `trainer`, `window`, and `modes` from `dir`. The trainer must
/// have been constructed with the same config (and therefore shapes); the
/// stored config hash must match `expected_hash`. The optional out-params
/// receive the stored discovery marks so a resumed run reports the step at
/// which the original run first covered every mode.
inline void load_checkpoint(const std::filesystem::path& dir, Trainer& trainer,
                            SampleWindow& window, ModeTracker& modes,
                            const std::string& expected_hash,
                            std::int64_t* steps_to_all_modes = nullptr,
                            std::int64_t* trajectories_to_all_modes = nullptr) {
  detail::PayloadReader r;
  {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw Error("checkpoint: cannot read " + (dir / "manifest.json").string());
    f >> r.manifest;
  }
  if (r.manifest.at("format").get<std::string>() != kCheckpointFormat) {
    throw Error("checkpoint: unknown format");
  }
  if (r.manifest.at("config_hash").get<std::string>() != expected_hash) {
    throw Error("checkpoint: config hash mismatch (checkpoint " +
                r.manifest.at("config_hash").get<std::string>() + ", config " +
                expected_hash + ")");
  }
  if (r.manifest.at("seed").get<std::uint64_t>() != trainer.seed()) {
    throw Error("checkpoint: seed mismatch");
  }
  if (r.manifest.at("algorithm").get<std::string>() !=
          to_string(trainer.config().algorithm) ||
      r.manifest.at("objective").get<std::string>() !=
          to_string(trainer.config().objective)) {
    throw Error("checkpoint: trainer identity mismatch");
  }
  {
    std::ifstream f(dir / "params.bin", std::ios::binary);
    if (!f) throw Error("checkpoint: cannot read " + (dir / "params.bin").string());
    r.bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  if (r.bytes.size() != r.manifest.at("payload_bytes").get<std::size_t>()) {
    throw Error("checkpoint: payload size mismatch");
  }

  trainer.online().for_each_param([&](const std::string& n, Tensor& t) {
    r.read_tensor("online/" + n, t);
  });
  if (trainer.config().algorithm == Algorithm::kDgfn) {
    trainer.target().for_each_param([&](const std::string& n, Tensor& t) {
      r.read_tensor("target/" + n, t);
    });
  }

  auto load_adam = [&](const std::string& prefix, AdamState& a, const char* t_key,
                       const char* names_key) {
    a.t = r.manifest.at(t_key).get<std::int64_t>();
    a.names = r.manifest.at(names_key).get<std::vector<std::string>>();
    a.m.clear();
    a.v.clear();
    std::vector<std::pair<std::string, Tensor*>> params = trainer.online().named_params();
    for (const std::string& n : a.names) {
      const Tensor* shape_src = nullptr;
      for (const auto& [pn, pt] : params) {
        if (pn == n) {
          shape_src = pt;
          break;
        }
      }
      if (!shape_src) throw Error("checkpoint: optimizer state for unknown param " + n);
      Tensor m = Tensor::zeros(shape_src->shape);
      Tensor v = Tensor::zeros(shape_src->shape);
      r.read_tensor(prefix + "/m/" + n, m);
      r.read_tensor(prefix + "/v/" + n, v);
      a.m.push_back(std::move(m));
      a.v.push_back(std::move(v));
    }
  };
  load_adam("adam_policy", trainer.adam_policy(), "adam_policy_t", "adam_policy_names");
  load_adam("adam_logz", trainer.adam_logz(), "adam_logz_t", "adam_logz_names");

  SampleWindow fresh(window.capacity(), window.state_count());
  for (std::uint64_t s : r.read_u64("window")) {
    fresh.push(static_cast<std::size_t>(s));
  }
  window = std::move(fresh);

  std::vector<std::size_t> disc;
  for (std::uint64_t s : r.read_u64("modes")) disc.push_back(static_cast<std::size_t>(s));
  modes.restore(disc);

  trainer.set_steps_done(r.manifest.at("step").get<std::int64_t>());
  if (steps_to_all_modes) {
    *steps_to_all_modes = r.manifest.value("steps_to_all_modes", std::int64_t{-1});
  }
  if (trajectories_to_all_modes) {
    *trajectories_to_all_modes =
        r.manifest.value("trajectories_to_all_modes", std::int64_t{-1});
  }
}

}  // namespace dgfn
