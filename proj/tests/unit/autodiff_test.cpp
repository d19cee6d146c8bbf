#include "volfit/autodiff.hpp"
#include "volfit/branch_trace.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace volfit {
namespace {

struct Quadratic {
  ParamStore<double> store;
  std::vector<double> a = {1.5, -2, 0.25};

  Quadratic() {
    store.add("x", {3}, ParamGroup::direct);
    store.get("x").value.data = {0.3, -0.7, 2.0};
  }
  double loss() const {
    const auto& x = store.get("x").value.data;
    double f = 0;
    for (int i = 0; i < 3; ++i) f += a[i] * x[i] * x[i];
    return f;
  }
  void forward_backward() {
    Tape tape;
    auto& p = store.get("x");
    tape.push([&] {
      for (int i = 0; i < 3; ++i) p.grad.data[i] += 2 * a[i] * p.value.data[i];
    });
    store.zero_grad();
    backward(tape, store);
  }
};

TEST(Tape, ReplaysInReverseOrderOnce) {
  Tape tape;
  std::vector<int> order;
  for (int i = 0; i < 4; ++i) tape.push([&order, i] { order.push_back(i); });
  EXPECT_EQ(tape.size(), 4u);
  tape.replay();
  EXPECT_EQ(order, (std::vector<int>{3, 2, 1, 0}));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, QuadraticGradient) {
  Quadratic q;
  q.forward_backward();
  const auto& g = q.store.get("x").grad.data;
  EXPECT_DOUBLE_EQ(g[0], 0.9);
  EXPECT_DOUBLE_EQ(g[1], 2.8);
  EXPECT_DOUBLE_EQ(g[2], 1.0);
  const FiniteDiffReport rep = finite_diff_check(q.store, [&] { return q.loss(); });
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_err, 1e-8);
  EXPECT_EQ(q.store.get("x").value.data, (std::vector<double>{0.3, -0.7, 2.0}));
}

TEST(FiniteDiff, ConstantLossHasZeroGradient) {
  ParamStore<double> s;
  s.add("w", {5}, ParamGroup::network, 1.0);
  const FiniteDiffReport rep = finite_diff_check(s, [] { return 4.0; });
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.max_rel_err, 0.0);
}

TEST(FiniteDiff, DetectsWrongGradient) {
  Quadratic q;
  q.forward_backward();
  q.store.get("x").grad.data[1] *= 1.01;
  const FiniteDiffReport rep = finite_diff_check(q.store, [&] { return q.loss(); });
  EXPECT_FALSE(rep.passed);
  EXPECT_GT(rep.max_rel_err, 1e-3);
}

TEST(FiniteDiff, LinearLossIsExactUpToRounding) {
  ParamStore<double> s;
  s.add("w", {200}, ParamGroup::network);
  auto& p = s.get("w");
  for (std::size_t i = 0; i < 200; ++i) {
    p.value.data[i] = 0.01 * i;
    p.grad.data[i] = std::sin(double(i));
  }
  auto loss = [&] {
    double f = 0;
    for (std::size_t i = 0; i < 200; ++i) f += std::sin(double(i)) * p.value.data[i];
    return f;
  };
  const FiniteDiffReport rep = finite_diff_check(s, loss);
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_err, 1e-9);
  ASSERT_EQ(rep.tensors.size(), 1u);
  EXPECT_EQ(rep.tensors[0].checked, 64 + 4);
}

TEST(FiniteDiff, RejectsNondeterministicLoss) {
  ParamStore<double> s;
  s.add("w", {1}, ParamGroup::network);
  int calls = 0;
  EXPECT_THROW(finite_diff_check(s, [&] { return double(++calls); }), InvalidCheckError);
}

TEST(FiniteDiff, ExcludesProbesAcrossKinks) {
  // |x| at x = 0 with the sign recorded: both probes leave the base piece.
  ParamStore<double> s;
  s.add("x", {1}, ParamGroup::network, 0.0);
  s.get("x").grad.data[0] = 0.5;
  auto loss = [&] {
    const double x = s.get("x").value.data[0];
    BranchTrace::record(trace_tag::kLeakyRelu, 0, x > 0 ? 1 : x < 0 ? -1 : 0);
    return std::abs(x);
  };
  const FiniteDiffReport rep = finite_diff_check(s, loss);
  EXPECT_EQ(rep.tensors[0].excluded, 1);
  EXPECT_EQ(rep.tensors[0].checked, 0);
  FiniteDiffOptions keep;
  keep.exclude_nonsmooth = false;
  EXPECT_FALSE(finite_diff_check(s, loss, keep).passed);
}

TEST(FiniteDiff, OnlyFiltersByPrefix) {
  ParamStore<double> s;
  s.add("a.w", {2}, ParamGroup::network);
  s.add("b.w", {2}, ParamGroup::network);
  FiniteDiffOptions opt;
  opt.only = {"b."};
  const FiniteDiffReport rep = finite_diff_check(s, [] { return 0.0; }, opt);
  ASSERT_EQ(rep.tensors.size(), 1u);
  EXPECT_EQ(rep.tensors[0].name, "b.w");
}

TEST(ParamStore, RejectsDuplicatesAndNonFiniteGradients) {
  ParamStore<double> s;
  s.add("w", {2, 3}, ParamGroup::network);
  EXPECT_EQ(s.get("w").value.size(), 6u);
  EXPECT_THROW(s.add("w", {1}, ParamGroup::network), ShapeError);
  s.get("w").grad.data[4] = std::nan("");
  Tape tape;
  EXPECT_THROW(backward(tape, s), NonFiniteError);
  s.zero_grad();
  EXPECT_NO_THROW(s.check_finite_grads());
}

}  // namespace
}  // namespace volfit
