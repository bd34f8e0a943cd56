// SPDX-License-Identifier: Apache-2.0
#include "op_catalog.hpp"
#include "simeq/autodiff.hpp"
#include "simeq/errors.hpp"
#include "simeq/parameters.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace simeq {
namespace {

using testing::random_tensor;

TEST(Tape, LinearFormGradientIsTheFixedVector) {
  ad::Tape tape;
  const Tensor x = random_tensor({1, 5, 1}, 1);
  ad::Parameter w{"w", random_tensor({1, 5, 1}, 2)};
  ad::Var loss = ad::sum_all(tape.parameter(w) * tape.constant(x));
  tape.backward(loss);
  EXPECT_EQ(tape.parameter_grad(w), x);
}

TEST(Tape, NonScalarRootThrows) {
  ad::Tape tape;
  ad::Var v = tape.input(random_tensor({2, 2, 1}, 3));
  EXPECT_THROW(tape.backward(ad::scale(v, 2.0)), std::logic_error);
}

TEST(Tape, UnusedParameterGradientIsExactlyZero) {
  ad::Tape tape;
  ad::Parameter used{"used", random_tensor({2, 3, 1}, 4)};
  ad::Parameter bound_unused{"bound", random_tensor({2, 3, 1}, 5)};
  ad::Parameter never{"never", random_tensor({2, 3, 1}, 6)};
  tape.parameter(bound_unused);
  tape.backward(ad::sum_all(ad::norm3(tape.parameter(used))));
  EXPECT_EQ(tape.parameter_grad(bound_unused), Tensor({2, 3, 1}));
  EXPECT_EQ(tape.parameter_grad(never), Tensor({2, 3, 1}));
}

TEST(Tape, ParameterBoundOncePerTape) {
  ad::Tape tape;
  ad::Parameter p{"p", random_tensor({1, 1, 1}, 7)};
  ad::Var a = tape.parameter(p);
  ad::Var b = tape.parameter(p);
  EXPECT_EQ(a.id, b.id);
  tape.backward(ad::sum_all(a * b));
  EXPECT_DOUBLE_EQ(tape.parameter_grad(p)[0], 2.0 * p.value[0]);
}

TEST(Tape, ReplayReproducesValuesBitwise) {
  for (auto& c : testing::primitive_grad_cases(3)) {
    ad::Tape tape;
    const Tensor before = c.f(tape).value();
    tape.replay();
    const Tensor after = tape.value(ad::Var{&tape, static_cast<int>(tape.node_count()) - 1});
    EXPECT_EQ(before, after) << c.name;
  }
}

TEST(Tape, BackwardIsDeterministic) {
  auto cases = testing::layer_grad_cases(2);
  for (auto& c : cases) {
    if (c.name != "Sim3Block_self") continue;
    Tensor first;
    for (int rep = 0; rep < 2; ++rep) {
      ad::Tape tape;
      tape.backward(ad::sum_all(ad::norm3(c.f(tape))));
      Tensor g = tape.parameter_grad(*c.leaves[0]);
      if (rep == 0) first = g;
      else EXPECT_EQ(g, first);
    }
  }
}

TEST(Tape, BroadcastRejectsIncompatibleShapes) {
  ad::Tape tape;
  ad::Var a = tape.input(Tensor({2, 3, 3}));
  ad::Var b = tape.input(Tensor({2, 2, 3}));
  EXPECT_THROW(a + b, std::invalid_argument);
}

TEST(Ops, ForwardValuesOnSmallInputs) {
  ad::Tape tape(false);
  ad::Var w = tape.constant(Tensor({2, 2, 1}, {1, 2, 3, 4}));
  ad::Var x = tape.constant(Tensor({1, 2, 3}, {1, 0, 0, 0, 1, 0}));
  const Tensor y = ad::channel_mix(w, x).value();
  EXPECT_EQ(y, Tensor({1, 2, 3}, {1, 2, 0, 3, 4, 0}));
  const Tensor a = ad::affine_rows(w).value();
  EXPECT_EQ(a, Tensor({2, 2, 1}, {0, 1, 0, 1}));
  ad::Var logits = tape.constant(Tensor({1, 3, 1}, {0, std::log(2.0), std::log(3.0)}));
  const Tensor s = ad::softmax_rows(logits).value();
  EXPECT_NEAR(s[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(s[2], 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(ad::norm3(tape.constant(Tensor({1, 1, 3}, {3, 4, 0}))).value()[0], 5.0);
  const Tensor mx = ad::max_over_tokens(tape.constant(Tensor({3, 1, 2}, {1, 5, 7, 5, 7, 0}))).value();
  EXPECT_EQ(mx, Tensor({1, 1, 2}, {7, 5}));
}

TEST(Ops, MaxOverTokensTiesGoToLowestIndex) {
  ad::Tape tape;
  ad::Var x = tape.input(Tensor({3, 1, 1}, {2, 2, 1}));
  tape.backward(ad::sum_all(ad::max_over_tokens(x)));
  EXPECT_EQ(tape.grad(x), Tensor({3, 1, 1}, {1, 0, 0}));
}

TEST(Ops, Norm3GradientAtZeroIsZero) {
  ad::Tape tape;
  ad::Var x = tape.input(Tensor({1, 1, 3}));
  tape.backward(ad::sum_all(ad::norm3(x)));
  EXPECT_EQ(tape.grad(x), Tensor({1, 1, 3}));
}

class PrimitiveGradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveGradients, MatchCentralDifferences) {
  auto cases = testing::primitive_grad_cases(1);
  ASSERT_LT(GetParam(), cases.size());
  auto& c = cases[GetParam()];
  const testing::GradCheckResult r = testing::check_gradients(c.f, c.leaves, 17, c.per_leaf, c.step);
  EXPECT_GE(r.coordinates, 64u) << c.name;
  EXPECT_LT(r.relative_error, 1e-4) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradients,
                         ::testing::Range<std::size_t>(0, testing::primitive_grad_cases(1).size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return testing::primitive_grad_cases(1)[info.param].name;
                         });

class LayerGradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(LayerGradients, MatchCentralDifferences) {
  auto cases = testing::layer_grad_cases(1);
  ASSERT_LT(GetParam(), cases.size());
  auto& c = cases[GetParam()];
  const testing::GradCheckResult r = testing::check_gradients(c.f, c.leaves, 23, c.per_leaf, c.step);
  EXPECT_GE(r.coordinates, 64u) << c.name;
  EXPECT_LT(r.relative_error, 1e-4) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllLayers, LayerGradients,
                         ::testing::Range<std::size_t>(0, testing::layer_grad_cases(1).size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return testing::layer_grad_cases(1)[info.param].name;
                         });

TEST(Parameters, PackUnpackRoundTrip) {
  ad::Parameter a{"a", random_tensor({2, 3, 1}, 1)};
  ad::Parameter b{"b", random_tensor({1, 4, 3}, 2)};
  ParameterBlob blob = pack_parameters({&a, &b});
  EXPECT_EQ(blob.bytes.size(), (6 + 12) * sizeof(double));
  ad::Parameter a2{"a", Tensor({2, 3, 1})};
  ad::Parameter b2{"b", Tensor({1, 4, 3})};
  unpack_parameters(blob, {&a2, &b2});
  EXPECT_EQ(a2.value, a.value);
  EXPECT_EQ(b2.value, b.value);
  EXPECT_EQ(parameter_count(ConstParameterList{&a, &b}), 18u);
}

TEST(Parameters, MismatchedManifestThrows) {
  ad::Parameter a{"a", random_tensor({2, 3, 1}, 1)};
  ParameterBlob blob = pack_parameters({&a});
  ad::Parameter renamed{"z", Tensor({2, 3, 1})};
  ad::Parameter reshaped{"a", Tensor({3, 2, 1})};
  EXPECT_THROW(unpack_parameters(blob, {&renamed}), UsageError);
  EXPECT_THROW(unpack_parameters(blob, {&reshaped}), UsageError);
  EXPECT_THROW(unpack_parameters(blob, {&a, &renamed}), UsageError);
}

TEST(Parameters, SaveLoadFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "simeq_params_test";
  std::filesystem::remove_all(dir);
  ad::Parameter a{"a", random_tensor({2, 3, 1}, 9)};
  save_parameters(dir, "params", {&a});
  ad::Parameter back{"a", Tensor({2, 3, 1})};
  load_parameters(dir, "params", {&back});
  EXPECT_EQ(back.value, a.value);
  EXPECT_THROW(load_parameters(dir, "missing", {&back}), UsageError);
}

}  // namespace
}  // namespace simeq
