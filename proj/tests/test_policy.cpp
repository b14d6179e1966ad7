#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dgfn/policy.hpp"

using namespace dgfn;

namespace {

EnvConfig grid(int dims, int side) {
  EnvConfig cfg;
  cfg.dims = dims;
  cfg.side = side;
  return cfg;
}

PolicyConfig small_policy(std::vector<int> hidden, bool learn_pb = true,
                          bool flow_head = false) {
  PolicyConfig cfg;
  cfg.hidden = std::move(hidden);
  cfg.learn_pb = learn_pb;
  cfg.flow_head = flow_head;
  return cfg;
}

}  // namespace

TEST_CASE("one-hot state encoding") {
  EnvConfig cfg = grid(2, 3);
  Tensor enc = encode_state(GridState{{1, 2}}, cfg);
  REQUIRE(enc.shape == std::vector<std::size_t>{6});
  REQUIRE(enc.data == std::vector<double>{0, 1, 0, 0, 0, 1});

  std::vector<GridState> states = {GridState{{0, 0}}, GridState{{2, 1}}};
  Tensor batch = encode_states(states, cfg);
  REQUIRE(batch.shape == std::vector<std::size_t>{2, 6});
  REQUIRE(batch.data == std::vector<double>{1, 0, 0, 1, 0, 0,  //
                                            0, 0, 1, 0, 1, 0});
}

TEST_CASE("policy construction") {
  EnvConfig env = grid(2, 3);
  PolicySet p = make_policy(env, small_policy({5, 4}, true, true), 7);

  REQUIRE(p.trunk_w.size() == 2);
  REQUIRE(p.trunk_w[0].shape == std::vector<std::size_t>{5, 6});
  REQUIRE(p.trunk_w[1].shape == std::vector<std::size_t>{4, 5});
  REQUIRE(p.pf_w.shape == std::vector<std::size_t>{3, 4});
  REQUIRE(p.pb_w.shape == std::vector<std::size_t>{2, 4});
  REQUIRE(p.flow_w.shape == std::vector<std::size_t>{1, 4});
  REQUIRE(p.logz.numel() == 1);

  std::vector<std::string> names;
  p.for_each_param([&](const std::string& n, Tensor&) { names.push_back(n); });
  REQUIRE(names == std::vector<std::string>{
                       "trunk.0.w", "trunk.0.b", "trunk.1.w", "trunk.1.b",
                       "pf.w", "pf.b", "pb.w", "pb.b", "flow.w", "flow.b",
                       "logz"});

  PolicySet same = make_policy(env, small_policy({5, 4}, true, true), 7);
  REQUIRE(same.trunk_w[0].data == p.trunk_w[0].data);
  PolicySet other = make_policy(env, small_policy({5, 4}, true, true), 8);
  REQUIRE(other.trunk_w[0].data != p.trunk_w[0].data);

  REQUIRE_THROWS_AS(make_policy(env, small_policy({}), 0), Error);
}

TEST_CASE("masking produces exactly-zero probabilities") {
  EnvConfig env = grid(2, 3);
  PolicySet p = make_policy(env, small_policy({8}), 3);

  auto at_origin = pf_distribution(p, initial_state(env), env);
  REQUIRE(at_origin.size() == 3);
  double sum = at_origin[0] + at_origin[1] + at_origin[2];
  REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
  for (double v : at_origin) REQUIRE(v > 0.0);

  auto at_corner = pf_distribution(p, GridState{{2, 2}}, env);
  REQUIRE(at_corner[0] == 0.0);
  REQUIRE(at_corner[1] == 0.0);
  REQUIRE(at_corner[2] == 1.0);

  auto at_edge = pf_distribution(p, GridState{{2, 0}}, env);
  REQUIRE(at_edge[0] == 0.0);
  REQUIRE(at_edge[1] + at_edge[2] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("backward distribution") {
  EnvConfig env = grid(2, 3);

  PolicySet learned = make_policy(env, small_policy({8}, true), 3);
  auto pb = pb_distribution(learned, GridState{{1, 2}}, env);
  REQUIRE(pb.size() == 2);
  REQUIRE(pb[0] + pb[1] == Catch::Approx(1.0).margin(1e-12));
  auto pb_edge = pb_distribution(learned, GridState{{1, 0}}, env);
  REQUIRE(pb_edge[0] == 1.0);
  REQUIRE(pb_edge[1] == 0.0);
  REQUIRE_THROWS_AS(pb_distribution(learned, initial_state(env), env), Error);

  PolicySet fixed = make_policy(env, small_policy({8}, false), 3);
  auto uni = pb_distribution(fixed, GridState{{1, 2}}, env);
  REQUIRE(uni == std::vector<double>{0.5, 0.5});
  auto uni_edge = pb_distribution(fixed, GridState{{0, 2}}, env);
  REQUIRE(uni_edge == std::vector<double>{0.0, 1.0});
}

TEST_CASE("target blending") {
  EnvConfig env = grid(2, 3);
  PolicySet online = make_policy(env, small_policy({4}), 1);
  PolicySet target = make_policy(env, small_policy({4}), 2);

  PolicySet blended = target;
  polyak(blended, online, 0.25);
  for (std::size_t k = 0; k < online.trunk_w[0].numel(); ++k) {
    double expect = 0.25 * online.trunk_w[0].data[k] + 0.75 * target.trunk_w[0].data[k];
    REQUIRE(blended.trunk_w[0].data[k] == Catch::Approx(expect).margin(1e-15));
  }

  PolicySet copied = target;
  polyak(copied, online, 1.0);
  REQUIRE(copied.trunk_w[0].data == online.trunk_w[0].data);
  REQUIRE(copied.logz.data == online.logz.data);

  REQUIRE_THROWS_AS(polyak(target, online, 0.0), Error);
  REQUIRE_THROWS_AS(polyak(target, online, 1.5), Error);

  PolicySet wide = make_policy(env, small_policy({9}), 1);
  REQUIRE_THROWS_AS(polyak(wide, online, 0.5), Error);
}

TEST_CASE("batch sampling is deterministic and batching-invariant") {
  EnvConfig env = grid(2, 4);
  PolicySet p = make_policy(env, small_policy({8}), 11);

  auto batch = sample_batch(p, env, /*run_seed=*/5, /*step_index=*/3, 6);
  REQUIRE(batch.size() == 6);
  for (const Trajectory& t : batch) {
    REQUIRE_NOTHROW(validate_trajectory(t, env));
    REQUIRE(t.log_pf.size() == t.actions.size());
    REQUIRE(t.reward == reward(t.states.back(), env));
  }

  auto again = sample_batch(p, env, 5, 3, 6);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    REQUIRE(batch[i].actions.size() == again[i].actions.size());
    REQUIRE(batch[i].states.back() == again[i].states.back());
    REQUIRE(batch[i].log_pf == again[i].log_pf);
  }

  // one-at-a-time sampling over the same per-trajectory streams agrees
  for (std::size_t i = 0; i < batch.size(); ++i) {
    RngStream rng = trajectory_stream(5, 3, static_cast<std::int64_t>(i));
    Trajectory solo = sample_trajectory(p, env, rng);
    REQUIRE(solo.states.back() == batch[i].states.back());
    REQUIRE(solo.log_pf == batch[i].log_pf);
  }

  auto other_step = sample_batch(p, env, 5, 4, 6);
  bool any_diff = false;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (other_step[i].actions != batch[i].actions) any_diff = true;
  }
  REQUIRE(any_diff);
}

TEST_CASE("full exploration draws uniformly over legal actions") {
  EnvConfig env = grid(2, 3);
  PolicySet p = make_policy(env, small_policy({8}), 11);
  auto batch = sample_batch(p, env, 9, 0, 4, /*exploration_eps=*/1.0);
  for (const Trajectory& t : batch) {
    // behavior log-prob of the first action: 3 legal actions at the origin
    REQUIRE(t.log_pf[0] == Catch::Approx(std::log(1.0 / 3.0)).margin(1e-12));
  }
}

TEST_CASE("tape evaluation matches the plain forward pass") {
  EnvConfig env = grid(2, 3);
  PolicySet p = make_policy(env, small_policy({6, 5}, true, true), 21);
  std::vector<GridState> states = {GridState{{0, 0}}, GridState{{1, 2}},
                                   GridState{{2, 1}}};

  PolicyForward plain = forward_policy(p, states, env, true, true);
  Tape tape;
  PolicyGraph g = build_policy_graph(tape, p, states, env, true, true);

  const Tensor& pf = tape.value(g.pf_logprob);
  REQUIRE(pf.shape == plain.pf_logprob.shape);
  for (std::size_t k = 0; k < pf.numel(); ++k) {
    REQUIRE(pf.data[k] == Catch::Approx(plain.pf_logprob.data[k]).margin(1e-10));
  }
  const Tensor& pb = tape.value(g.pb_logprob);
  for (std::size_t k = 0; k < pb.numel(); ++k) {
    REQUIRE(pb.data[k] == Catch::Approx(plain.pb_logprob.data[k]).margin(1e-10));
  }
  const Tensor& fl = tape.value(g.log_flow);
  REQUIRE(fl.shape == std::vector<std::size_t>{3});
  for (std::size_t k = 0; k < fl.numel(); ++k) {
    REQUIRE(fl.data[k] == Catch::Approx(plain.log_flow.data[k]).margin(1e-10));
  }
}

TEST_CASE("trajectory log-probability sums") {
  EnvConfig env = grid(2, 3);
  PolicySet p = make_policy(env, small_policy({8}), 5);

  Trajectory t;
  t.states = {GridState{{0, 0}}, GridState{{1, 0}}, GridState{{1, 1}}};
  t.actions = {Action::increment(0), Action::increment(1), Action::terminate()};
  t.reward = reward(t.states.back(), env);

  Tape tape;
  LogProbSums sums = log_pf_pb(tape, p, t, env);
  double sum_pf = tape.value(sums.sum_pf).data[0];
  double sum_pb = tape.value(sums.sum_pb).data[0];

  // manual recomputation, step by step
  double want_pf = 0;
  want_pf += std::log(pf_distribution(p, t.states[0], env)[0]);
  want_pf += std::log(pf_distribution(p, t.states[1], env)[1]);
  want_pf += std::log(pf_distribution(p, t.states[2], env)[2]);
  double want_pb = 0;
  want_pb += std::log(pb_distribution(p, t.states[1], env)[0]);
  want_pb += std::log(pb_distribution(p, t.states[2], env)[1]);

  REQUIRE(sum_pf == Catch::Approx(want_pf).margin(1e-10));
  REQUIRE(sum_pb == Catch::Approx(want_pb).margin(1e-10));

  // terminating at the origin: forward picks one action, backward sums nothing
  Trajectory at_origin;
  at_origin.states = {GridState{{0, 0}}};
  at_origin.actions = {Action::terminate()};
  at_origin.reward = reward(at_origin.states[0], env);
  Tape tape2;
  LogProbSums s2 = log_pf_pb(tape2, p, at_origin, env);
  REQUIRE(tape2.value(s2.sum_pb).data[0] == 0.0);
  REQUIRE(tape2.value(s2.sum_pf).data[0] ==
          Catch::Approx(std::log(pf_distribution(p, at_origin.states[0], env)[2]))
              .margin(1e-10));
}
