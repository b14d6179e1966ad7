#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "dgfn/hypergrid.hpp"

using namespace dgfn;

static EnvConfig grid(int dims, int side) {
  EnvConfig cfg;
  cfg.dims = dims;
  cfg.side = side;
  return cfg;
}

TEST_CASE("reward regions on the 8-wide plane") {
  EnvConfig cfg = grid(2, 8);
  REQUIRE(reward(GridState{{0, 0}}, cfg) == Catch::Approx(0.501).epsilon(1e-12));
  REQUIRE(reward(GridState{{1, 6}}, cfg) == Catch::Approx(2.501).epsilon(1e-12));
  REQUIRE(reward(GridState{{4, 4}}, cfg) == Catch::Approx(0.001).epsilon(1e-12));
  REQUIRE(reward(GridState{{0, 4}}, cfg) == Catch::Approx(0.001).epsilon(1e-12));

  double z = 0;
  for (std::size_t i = 0; i < cfg.state_count(); ++i) {
    z += reward(state_from_index(static_cast<std::int64_t>(i), cfg), cfg);
  }
  REQUIRE(z == Catch::Approx(16.064).epsilon(1e-12));
}

TEST_CASE("mode coordinates per side length") {
  REQUIRE(mode_coordinates(grid(2, 8)) == std::vector<int>{1, 6});
  REQUIRE(mode_coordinates(grid(2, 10)) == std::vector<int>{1, 8});
  REQUIRE(mode_coordinates(grid(2, 12)) == std::vector<int>{2, 9});
}

TEST_CASE("mode set is the cartesian power of the band coordinates") {
  for (int side : {8, 10, 12}) {
    for (int dims : {1, 2, 3}) {
      EnvConfig cfg = grid(dims, side);
      std::vector<GridState> modes = mode_set(cfg);
      REQUIRE(modes.size() == (std::size_t{1} << dims));
      // every mode really sits in the maximal reward region
      for (const GridState& m : modes) {
        REQUIRE(reward(m, cfg) ==
                Catch::Approx(cfg.r0 + cfg.r1 + cfg.r2).epsilon(1e-12));
      }
      // lexicographic output order
      for (std::size_t i = 1; i < modes.size(); ++i) {
        REQUIRE(modes[i - 1].coords < modes[i].coords);
      }
    }
  }
  // narrow grids have an empty band: that is a configuration error
  for (int side : {3, 4, 5, 6}) {
    REQUIRE_THROWS_AS(mode_set(grid(2, side)), Error);
  }
  REQUIRE(mode_set(grid(2, 7)).size() == 4);
}

TEST_CASE("action legality") {
  EnvConfig cfg = grid(2, 3);
  auto at_origin = valid_actions(initial_state(cfg), cfg);
  REQUIRE(at_origin == std::vector<std::uint8_t>{1, 1, 1});

  auto at_corner = valid_actions(GridState{{2, 2}}, cfg);
  REQUIRE(at_corner == std::vector<std::uint8_t>{0, 0, 1});

  auto at_edge = valid_actions(GridState{{2, 0}}, cfg);
  REQUIRE(at_edge == std::vector<std::uint8_t>{0, 1, 1});

  REQUIRE_THROWS_AS(valid_actions(GridState{{3, 0}}, cfg), Error);

  REQUIRE(parents_mask(initial_state(cfg), cfg) == std::vector<std::uint8_t>{0, 0});
  REQUIRE(parents_mask(GridState{{1, 0}}, cfg) == std::vector<std::uint8_t>{1, 0});
  REQUIRE(parents_mask(GridState{{1, 2}}, cfg) == std::vector<std::uint8_t>{1, 1});
}

TEST_CASE("transitions") {
  EnvConfig cfg = grid(2, 3);
  GridState s{{1, 0}};
  auto next = step(s, Action::increment(1), cfg);
  REQUIRE(next.has_value());
  REQUIRE(next->coords == std::vector<int>{1, 1});

  REQUIRE(!step(s, Action::terminate(), cfg).has_value());

  REQUIRE_THROWS_AS(step(GridState{{2, 0}}, Action::increment(0), cfg), Error);
  REQUIRE_THROWS_AS(step(s, Action::increment(5), cfg), Error);
}

TEST_CASE("state indexing is a row-major bijection") {
  EnvConfig cfg = grid(2, 3);
  REQUIRE(state_index(GridState{{1, 2}}, cfg) == 5);
  REQUIRE(state_from_index(5, cfg).coords == std::vector<int>{1, 2});

  EnvConfig big = grid(3, 4);
  std::set<std::int64_t> seen;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(big.state_count()); ++i) {
    GridState s = state_from_index(i, big);
    REQUIRE(in_bounds(s, big));
    REQUIRE(state_index(s, big) == i);
    seen.insert(i);
  }
  REQUIRE(seen.size() == 64);
}

TEST_CASE("trajectory validation") {
  EnvConfig cfg = grid(2, 8);
  REQUIRE(max_trajectory_states(cfg) == 15);

  Trajectory t;
  t.states = {GridState{{0, 0}}, GridState{{0, 1}}};
  t.actions = {Action::increment(1), Action::terminate()};
  t.reward = reward(t.states.back(), cfg);
  REQUIRE_NOTHROW(validate_trajectory(t, cfg));

  Trajectory bad = t;
  bad.actions[0] = Action::increment(0);  // does not reach states[1]
  REQUIRE_THROWS_AS(validate_trajectory(bad, cfg), Error);

  Trajectory short_actions = t;
  short_actions.actions.pop_back();
  REQUIRE_THROWS_AS(validate_trajectory(short_actions, cfg), Error);

  Trajectory no_terminate = t;
  no_terminate.actions[1] = Action::increment(0);
  REQUIRE_THROWS_AS(validate_trajectory(no_terminate, cfg), Error);
}

TEST_CASE("environment validation") {
  REQUIRE_THROWS_AS(grid(0, 8).validate(), Error);
  REQUIRE_THROWS_AS(grid(2, 1).validate(), Error);
  EnvConfig bad_r = grid(2, 8);
  bad_r.r0 = 0.0;
  REQUIRE_THROWS_AS(bad_r.validate(), Error);
  REQUIRE_NOTHROW(grid(6, 12).validate());
  REQUIRE(grid(6, 12).state_count() == 2985984u);
}
