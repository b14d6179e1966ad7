#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dgfn/grad_check.hpp"
#include "dgfn/rng.hpp"
#include "dgfn/tape.hpp"

using namespace dgfn;

TEST_CASE("grad check accepts correct tape gradients") {
  RngStream rng(11);
  Tensor w({3, 4}, std::vector<double>(12));
  Tensor b({3}, std::vector<double>(3));
  for (double& v : w.data) v = rng.uniform(-1, 1);
  for (double& v : b.data) v = rng.uniform(-1, 1);
  Tensor x({2, 4}, std::vector<double>(8));
  for (double& v : x.data) v = rng.uniform(-1, 1);

  std::vector<Tensor*> params{&w, &b};
  std::vector<std::string> names{"w", "b"};
  auto fn = [&]() {
    Tape tape;
    auto wn = tape.param(w, "w");
    auto bn = tape.param(b, "b");
    auto h = tape.leaky_relu(tape.affine(tape.input(x), wn, bn), 0.01);
    auto lp = tape.log_softmax_rows(h);
    auto picked = tape.gather(lp, {0, 1}, {2, 0});
    auto loss = tape.mean(tape.square(picked));
    LossWithGrads out;
    out.value = tape.value(loss).data[0];
    auto grads = tape.backward(loss);
    out.grads = {grads[wn], grads[bn]};
    return out;
  };
  GradCheckReport rep = grad_check(params, names, fn, 1e-5);
  INFO("worst " << rep.worst_param << "[" << rep.worst_index << "] tape=" << rep.tape_grad
                << " fd=" << rep.fd_grad);
  REQUIRE(rep.max_rel_error < 1e-7);
}

TEST_CASE("grad check flags wrong gradients") {
  Tensor p({1}, {0.7});
  std::vector<Tensor*> params{&p};
  std::vector<std::string> names{"p"};
  auto lying = [&]() {
    LossWithGrads out;
    out.value = p.data[0] * p.data[0];
    out.grads = {Tensor({1}, {1.0})};  // truth is 2p = 1.4
    return out;
  };
  GradCheckReport rep = grad_check(params, names, lying, 1e-5);
  REQUIRE(rep.max_rel_error > 0.1);
  REQUIRE(rep.worst_param == "p");
}

TEST_CASE("grad check validates its step size") {
  Tensor p({1}, {1.0});
  std::vector<Tensor*> params{&p};
  std::vector<std::string> names{"p"};
  auto fn = [&]() { return LossWithGrads{p.data[0], {Tensor({1}, {1.0})}}; };
  REQUIRE_THROWS_AS(grad_check(params, names, fn, 1e-2), Error);
  REQUIRE_THROWS_AS(grad_check(params, names, fn, 1e-9), Error);
}

TEST_CASE("grad check leaves parameters untouched") {
  Tensor p({2}, {0.3, -0.4});
  std::vector<Tensor*> params{&p};
  std::vector<std::string> names{"p"};
  auto fn = [&]() {
    LossWithGrads out;
    out.value = p.data[0] * p.data[0] + p.data[1] * p.data[1];
    out.grads = {Tensor({2}, {2 * p.data[0], 2 * p.data[1]})};
    return out;
  };
  grad_check(params, names, fn, 1e-5);
  REQUIRE(p.data == std::vector<double>{0.3, -0.4});
}
