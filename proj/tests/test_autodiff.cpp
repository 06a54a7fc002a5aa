#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "rdseg/autodiff.hpp"
#include "support/test_support.hpp"

using rdseg::Shape4;
using rdseg::Tape;
using rdseg::Tensor4;

namespace {

constexpr double kGradTol = 1e-4;

// A loss with a non-uniform adjoint: sum(y * weights).
template <typename BuildOutput>
double weighted_loss(Tape<double>& tape, BuildOutput&& build, const Tensor4<double>& weights) {
  auto out = build(tape);
  auto w = tape.leaf(weights);
  auto loss = tape.sum(tape.mul(out, w));
  tape.backward(loss);
  return tape.value(loss).data[0];
}

}  // namespace

TEST_CASE("backward of sum(x) is all ones") {
  std::mt19937_64 rng(1);
  auto x = testsup::random_tensor({2, 2, 3, 3}, rng);
  Tape<double> tape;
  auto xid = tape.leaf(x, "x");
  auto loss = tape.sum(xid);
  tape.backward(loss);
  for (double v : tape.grad(xid).data) CHECK(v == 1.0);
}

TEST_CASE("backward of sum(sigmoid(x)) at x=0 is 0.25 per element") {
  Tensor4<double> x({1, 2, 2, 2});
  Tape<double> tape;
  auto xid = tape.leaf(x, "x");
  auto loss = tape.sum(tape.sigmoid(xid));
  tape.backward(loss);
  CHECK(tape.value(loss).data[0] == doctest::Approx(4.0));  // 8 elements * 0.5
  for (double v : tape.grad(xid).data) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("unused parameters receive zero gradients") {
  Tape<double> tape;
  auto used = tape.leaf(Tensor4<double>::full({1, 1, 2, 2}, 1.0), "used");
  auto unused = tape.leaf(Tensor4<double>::full({1, 1, 3, 3}, 2.0), "unused");
  tape.backward(tape.sum(used));
  auto grads = tape.parameter_gradients();
  CHECK(grads.at("used").data == std::vector<double>(4, 1.0));
  CHECK(grads.at("unused").shape == Shape4{1, 1, 3, 3});
  CHECK(grads.at("unused").data == std::vector<double>(9, 0.0));
  CHECK(tape.has_grad(unused) == false);
}

TEST_CASE("dangling node ids are rejected") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor4<double>::full({1, 1, 2, 2}, 1.0));
  CHECK_THROWS_AS(tape.relu(static_cast<Tape<double>::NodeId>(x + 17)), std::out_of_range);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor4<double>::full({1, 1, 2, 2}, 1.0));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("gradcheck: conv2d 3x3 w.r.t. input, kernel and bias") {
  std::mt19937_64 rng(42);
  auto x = testsup::random_tensor({2, 3, 6, 6}, rng);
  auto k = testsup::random_tensor({4, 3, 3, 3}, rng);
  auto b = testsup::random_tensor({1, 4, 1, 1}, rng);
  auto weights = testsup::random_tensor({2, 4, 6, 6}, rng);

  auto run = [&](Tape<double>& tape) {
    return tape.conv2d(tape.leaf(x, "x"), tape.leaf(k, "k"), tape.leaf(b, "b"));
  };

  Tape<double> tape;
  weighted_loss(tape, run, weights);
  auto grads = tape.parameter_gradients();

  auto f = [&]() {
    Tape<double> t;
    return weighted_loss(t, run, weights);
  };
  auto r = testsup::finite_difference_check(
      f, {&x, &k, &b}, {grads.at("x"), grads.at("k"), grads.at("b")});
  CAPTURE(r.where);
  CHECK(r.max_rel < kGradTol);
}

TEST_CASE("gradcheck: conv2d 1x1") {
  std::mt19937_64 rng(43);
  auto x = testsup::random_tensor({1, 4, 5, 5}, rng);
  auto k = testsup::random_tensor({2, 4, 1, 1}, rng);
  auto b = testsup::random_tensor({1, 2, 1, 1}, rng);
  auto weights = testsup::random_tensor({1, 2, 5, 5}, rng);

  auto run = [&](Tape<double>& tape) {
    return tape.conv2d(tape.leaf(x, "x"), tape.leaf(k, "k"), tape.leaf(b, "b"));
  };
  Tape<double> tape;
  weighted_loss(tape, run, weights);
  auto grads = tape.parameter_gradients();
  auto f = [&]() {
    Tape<double> t;
    return weighted_loss(t, run, weights);
  };
  auto r = testsup::finite_difference_check(
      f, {&x, &k, &b}, {grads.at("x"), grads.at("k"), grads.at("b")});
  CHECK(r.max_rel < kGradTol);
}

TEST_CASE("gradcheck: maxpool2x2") {
  std::mt19937_64 rng(44);
  auto x = testsup::random_tensor({2, 3, 4, 4}, rng);
  auto weights = testsup::random_tensor({2, 3, 2, 2}, rng);

  auto run = [&](Tape<double>& tape) { return tape.maxpool2x2(tape.leaf(x, "x")); };
  Tape<double> tape;
  weighted_loss(tape, run, weights);
  auto grads = tape.parameter_gradients();
  auto f = [&]() {
    Tape<double> t;
    return weighted_loss(t, run, weights);
  };
  auto r = testsup::finite_difference_check(f, {&x}, {grads.at("x")});
  CHECK(r.max_rel < kGradTol);
}

TEST_CASE("gradcheck: upsample2x") {
  std::mt19937_64 rng(45);
  auto x = testsup::random_tensor({1, 2, 3, 3}, rng);
  auto weights = testsup::random_tensor({1, 2, 6, 6}, rng);

  auto run = [&](Tape<double>& tape) { return tape.upsample2x(tape.leaf(x, "x")); };
  Tape<double> tape;
  weighted_loss(tape, run, weights);
  auto grads = tape.parameter_gradients();
  auto f = [&]() {
    Tape<double> t;
    return weighted_loss(t, run, weights);
  };
  auto r = testsup::finite_difference_check(f, {&x}, {grads.at("x")});
  CHECK(r.max_rel < kGradTol);
}

TEST_CASE("gradcheck: concat_channels") {
  std::mt19937_64 rng(46);
  auto a = testsup::random_tensor({1, 2, 4, 4}, rng);
  auto b = testsup::random_tensor({1, 3, 4, 4}, rng);
  auto weights = testsup::random_tensor({1, 5, 4, 4}, rng);

  auto run = [&](Tape<double>& tape) {
    return tape.concat_channels(tape.leaf(a, "a"), tape.leaf(b, "b"));
  };
  Tape<double> tape;
  weighted_loss(tape, run, weights);
  auto grads = tape.parameter_gradients();
  auto f = [&]() {
    Tape<double> t;
    return weighted_loss(t, run, weights);
  };
  auto r = testsup::finite_difference_check(f, {&a, &b}, {grads.at("a"), grads.at("b")});
  CHECK(r.max_rel < kGradTol);
}

TEST_CASE("gradcheck: batch_norm (train mode)") {
  std::mt19937_64 rng(47);
  auto x = testsup::random_tensor({2, 3, 4, 4}, rng);
  auto gamma = testsup::random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5);
  auto beta = testsup::random_tensor({1, 3, 1, 1}, rng);
  auto weights = testsup::random_tensor({2, 3, 4, 4}, rng);

  auto run = [&](Tape<double>& tape) {
    // fresh running stats per evaluation; they do not feed the output
    Tensor4<double> rmean({1, 3, 1, 1});
    auto rvar = Tensor4<double>::full({1, 3, 1, 1}, 1.0);
    return tape.batch_norm_train(tape.leaf(x, "x"), tape.leaf(gamma, "gamma"),
                                 tape.leaf(beta, "beta"), rmean, rvar, 0.9, 1e-5);
  };
  Tape<double> tape;
  weighted_loss(tape, run, weights);
  auto grads = tape.parameter_gradients();
  auto f = [&]() {
    Tape<double> t;
    return weighted_loss(t, run, weights);
  };
  auto r = testsup::finite_difference_check(
      f, {&x, &gamma, &beta}, {grads.at("x"), grads.at("gamma"), grads.at("beta")});
  CAPTURE(r.where);
  CHECK(r.max_rel < kGradTol);
}

TEST_CASE("gradcheck: relu away from the kink") {
  std::mt19937_64 rng(48);
  auto x = testsup::random_tensor_away_from_zero({2, 2, 4, 4}, rng, 0.05);
  auto weights = testsup::random_tensor({2, 2, 4, 4}, rng);

  auto run = [&](Tape<double>& tape) { return tape.relu(tape.leaf(x, "x")); };
  Tape<double> tape;
  weighted_loss(tape, run, weights);
  auto grads = tape.parameter_gradients();
  auto f = [&]() {
    Tape<double> t;
    return weighted_loss(t, run, weights);
  };
  auto r = testsup::finite_difference_check(f, {&x}, {grads.at("x")});
  CHECK(r.max_rel < kGradTol);
}

TEST_CASE("gradcheck: sigmoid, add, mul") {
  std::mt19937_64 rng(49);
  auto a = testsup::random_tensor({1, 2, 4, 4}, rng);
  auto b = testsup::random_tensor({1, 2, 4, 4}, rng);
  auto weights = testsup::random_tensor({1, 2, 4, 4}, rng);

  auto run = [&](Tape<double>& tape) {
    auto aid = tape.leaf(a, "a");
    auto bid = tape.leaf(b, "b");
    return tape.sigmoid(tape.add(tape.mul(aid, bid), aid));
  };
  Tape<double> tape;
  weighted_loss(tape, run, weights);
  auto grads = tape.parameter_gradients();
  auto f = [&]() {
    Tape<double> t;
    return weighted_loss(t, run, weights);
  };
  auto r = testsup::finite_difference_check(f, {&a, &b}, {grads.at("a"), grads.at("b")});
  CHECK(r.max_rel < kGradTol);
}

TEST_CASE("gradcheck: soft dice loss") {
  std::mt19937_64 rng(50);
  auto logits = testsup::random_tensor({2, 1, 6, 6}, rng, -2.0, 2.0);
  auto target = testsup::random_binary_tensor({2, 1, 6, 6}, rng);

  auto f = [&]() {
    Tape<double> t;
    auto pred = t.sigmoid(t.leaf(logits, "logits"));
    auto loss = t.soft_dice(pred, target, 1.0);
    return t.value(loss).data[0];
  };

  Tape<double> tape;
  auto pred = tape.sigmoid(tape.leaf(logits, "logits"));
  auto loss = tape.soft_dice(pred, target, 1.0);
  tape.backward(loss);
  auto grads = tape.parameter_gradients();

  auto r = testsup::finite_difference_check(f, {&logits}, {grads.at("logits")});
  CAPTURE(r.where);
  CHECK(r.max_rel < kGradTol);
}

TEST_CASE("a parameter used twice accumulates both paths") {
  std::mt19937_64 rng(51);
  auto x = testsup::random_tensor({1, 1, 2, 2}, rng);
  Tape<double> tape;
  auto xid = tape.leaf(x, "x");
  auto loss = tape.sum(tape.add(xid, xid));
  tape.backward(loss);
  for (double v : tape.grad(xid).data) CHECK(v == 2.0);
}
