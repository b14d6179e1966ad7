#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "dgfn/trainer.hpp"

using namespace dgfn;
using Catch::Matchers::ContainsSubstring;

namespace {

EnvConfig grid(int dims, int side) {
  EnvConfig cfg;
  cfg.dims = dims;
  cfg.side = side;
  return cfg;
}

PolicyConfig hidden(std::vector<int> widths, bool flow_head = false) {
  PolicyConfig pc;
  pc.hidden = std::move(widths);
  pc.flow_head = flow_head;
  return pc;
}

TrainerConfig trainer_config(Algorithm algo, Objective obj = Objective::kTb) {
  TrainerConfig tc;
  tc.algorithm = algo;
  tc.objective = obj;
  tc.batch_size = 8;
  tc.total_steps = 100;
  return tc;
}

}  // namespace

TEST_CASE("target update schedule") {
  TrainerConfig tc;
  tc.t_initial = 698;
  tc.t_update = 137;
  REQUIRE(should_update_target(5, tc));
  REQUIRE(should_update_target(697, tc));
  REQUIRE(!should_update_target(698, tc));
  REQUIRE(!should_update_target(700, tc));
  REQUIRE(should_update_target(822, tc));  // 6 * 137
  REQUIRE(should_update_target(1370, tc));
  REQUIRE(!should_update_target(1371, tc));
  REQUIRE_THROWS_AS(should_update_target(0, tc), Error);

  TrainerConfig never_initial = tc;
  never_initial.t_initial = 0;
  REQUIRE(!should_update_target(1, never_initial));
  REQUIRE(should_update_target(137, never_initial));

  TrainerConfig every_step = tc;
  every_step.t_initial = 0;
  every_step.t_update = 1;
  for (std::int64_t t : {1, 2, 3, 100}) REQUIRE(should_update_target(t, every_step));
}

TEST_CASE("trainer config validation") {
  TrainerConfig tc;
  REQUIRE_NOTHROW(tc.validate());

  auto expect_bad = [](auto mutate) {
    TrainerConfig bad;
    mutate(bad);
    REQUIRE_THROWS_AS(bad.validate(), Error);
  };
  expect_bad([](TrainerConfig& c) { c.t_initial = -1; });
  expect_bad([](TrainerConfig& c) { c.t_update = 0; });
  expect_bad([](TrainerConfig& c) { c.batch_size = 0; });
  expect_bad([](TrainerConfig& c) { c.total_steps = 0; });
  expect_bad([](TrainerConfig& c) { c.alpha = 0.0; });
  expect_bad([](TrainerConfig& c) { c.alpha = 1.0001; });
  expect_bad([](TrainerConfig& c) { c.subtb_lambda = 0.0; });
  expect_bad([](TrainerConfig& c) { c.exploration_eps = 1.0; });
  expect_bad([](TrainerConfig& c) { c.exploration_eps = -0.1; });
  expect_bad([](TrainerConfig& c) { c.metric_every = 0; });
  expect_bad([](TrainerConfig& c) { c.checkpoint_every = -1; });
}

TEST_CASE("step results are deterministic and well-formed") {
  EnvConfig env = grid(2, 3);
  Trainer a(env, hidden({8}), trainer_config(Algorithm::kGfn), 42);
  Trainer b(env, hidden({8}), trainer_config(Algorithm::kGfn), 42);

  for (int i = 0; i < 10; ++i) {
    StepResult ra = a.step();
    StepResult rb = b.step();
    REQUIRE(ra.step == i + 1);
    REQUIRE(ra.batch.size() == 8);
    REQUIRE(ra.residuals.size() == 8);
    REQUIRE(ra.loss == rb.loss);  // bit-for-bit
    double mean = 0;
    for (const Trajectory& t : ra.batch) mean += t.reward;
    mean /= 8;
    REQUIRE(ra.mean_reward == Catch::Approx(mean).margin(1e-15));
    double from_resid = 0;
    for (double r : ra.residuals) from_resid += r * r;
    REQUIRE(ra.loss == Catch::Approx(from_resid / 8).margin(1e-12));
  }
  REQUIRE(a.steps_done() == 10);
  REQUIRE(a.logz() != 0.0);

  Trainer c(env, hidden({8}), trainer_config(Algorithm::kGfn), 43);
  REQUIRE(c.step().loss != Trainer(env, hidden({8}), trainer_config(Algorithm::kGfn), 42).step().loss);
}

TEST_CASE("single-network training equals a target that copies every step") {
  EnvConfig env = grid(2, 3);
  TrainerConfig gfn_cfg = trainer_config(Algorithm::kGfn);
  TrainerConfig dgfn_cfg = trainer_config(Algorithm::kDgfn);
  dgfn_cfg.t_initial = 0;
  dgfn_cfg.t_update = 1;
  dgfn_cfg.alpha = 1.0;

  Trainer gfn(env, hidden({8}), gfn_cfg, 7);
  Trainer dgfn(env, hidden({8}), dgfn_cfg, 7);
  for (int i = 0; i < 30; ++i) {
    StepResult rg = gfn.step();
    StepResult rd = dgfn.step();
    REQUIRE(rg.loss == rd.loss);
    REQUIRE(rd.target_updated);
  }
  REQUIRE(gfn.online().logz.data == dgfn.online().logz.data);
  REQUIRE(gfn.online().trunk_w[0].data == dgfn.online().trunk_w[0].data);
}

TEST_CASE("target network moves only on schedule") {
  EnvConfig env = grid(2, 3);
  TrainerConfig tc = trainer_config(Algorithm::kDgfn);
  tc.t_initial = 0;
  tc.t_update = 5;
  tc.alpha = 0.5;
  Trainer t(env, hidden({8}), tc, 3);

  for (int step = 1; step <= 12; ++step) {
    std::vector<double> before = t.target().trunk_w[0].data;
    StepResult r = t.step();
    bool scheduled = step % 5 == 0;
    REQUIRE(r.target_updated == scheduled);
    if (scheduled) {
      REQUIRE(t.target().trunk_w[0].data != before);
      REQUIRE(t.last_target_update() == step);
      // exact midpoint blend
      for (std::size_t k = 0; k < before.size(); ++k) {
        double want = 0.5 * t.online().trunk_w[0].data[k] + 0.5 * before[k];
        REQUIRE(t.target().trunk_w[0].data[k] == Catch::Approx(want).margin(1e-15));
      }
    } else {
      REQUIRE(t.target().trunk_w[0].data == before);  // bit-identical
    }
  }
}

TEST_CASE("initial phase can hard-copy instead of blending") {
  EnvConfig env = grid(2, 3);
  TrainerConfig tc = trainer_config(Algorithm::kDgfn);
  tc.t_initial = 10;
  tc.t_update = 100;
  tc.alpha = 0.25;
  tc.initial_phase_full_copy = true;
  Trainer t(env, hidden({8}), tc, 3);
  t.step();
  REQUIRE(t.target().trunk_w[0].data == t.online().trunk_w[0].data);
  REQUIRE(t.target().logz.data == t.online().logz.data);
}

TEST_CASE("plain algorithm exposes no target network") {
  EnvConfig env = grid(2, 3);
  Trainer t(env, hidden({8}), trainer_config(Algorithm::kGfn), 1);
  REQUIRE_THROWS_AS(t.target(), Error);
  REQUIRE(&t.sampling_policy() == &t.online());
}

TEST_CASE("loss trends down over training") {
  EnvConfig env = grid(2, 3);
  TrainerConfig tc = trainer_config(Algorithm::kGfn);
  tc.batch_size = 16;
  Trainer t(env, hidden({16}), tc, 11);

  double first = 0, last = 0;
  for (int i = 0; i < 300; ++i) {
    double loss = t.step().loss;
    if (i < 20) first += loss;
    if (i >= 280) last += loss;
  }
  REQUIRE(last < first);
}

TEST_CASE("sub-trajectory objective trains with a flow head") {
  EnvConfig env = grid(2, 3);
  TrainerConfig tc = trainer_config(Algorithm::kDgfn, Objective::kSubTb);
  Trainer t(env, hidden({8}, /*flow_head=*/true), tc, 5);
  for (int i = 0; i < 20; ++i) {
    StepResult r = t.step();
    REQUIRE(std::isfinite(r.loss));
    REQUIRE(r.residuals.size() == 8);
    for (double v : r.residuals) REQUIRE(v >= 0.0);  // weighted mean of squares
  }

  REQUIRE_THROWS_AS(
      Trainer(env, hidden({8}, false), trainer_config(Algorithm::kGfn, Objective::kSubTb), 5),
      Error);
}

TEST_CASE("step failures carry a batch dump") {
  EnvConfig env = grid(2, 3);
  Trainer t(env, hidden({8}), trainer_config(Algorithm::kGfn), 2);
  t.online().trunk_w[0].data[0] = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_WITH(t.step(), ContainsSubstring("train step 1") &&
                                    ContainsSubstring("batch dump"));
}
