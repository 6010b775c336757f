#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "dbswin/tensor.hpp"
#include "support.hpp"

using namespace dbswin;
using dbswin::testing::finite_difference_check;
using dbswin::testing::random_tensor;

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

double check(const Fn& f, std::vector<Tensor> inputs) {
  return finite_difference_check(f, std::move(inputs)).max_rel_err;
}

}  // namespace

TEST(TensorBasics, ConstructionAndShapeErrors) {
  const Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(-1), 3u);
  EXPECT_EQ(t.dim(0), 2u);
  EXPECT_THROW(Tensor::from_data({2, 3}, {1, 2}), ShapeError);
  EXPECT_THROW(Tensor::from_data({0, 3}, {}), ShapeError);
  EXPECT_THROW(matmul(t, t), ShapeError);
  EXPECT_THROW(add(t, Tensor::zeros({4})), ShapeError);
  EXPECT_THROW(reshape(t, {4}), ShapeError);
  EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
}

TEST(TensorBasics, MatmulValues) {
  const Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()),
            (std::vector<double>{19, 22, 43, 50}));
}

TEST(TensorBasics, BroadcastAdd) {
  const Tensor a = Tensor::from_data({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::from_data({2, 1}, {10, 20});
  const Tensor c = add(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 2, 3}));
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()),
            (std::vector<double>{11, 12, 13, 21, 22, 23, 14, 15, 16, 24, 25, 26}));
}

TEST(TensorBasics, NoTapeMeansNoGraph) {
  Rng rng(1);
  const Tensor x = random_tensor({3, 3}, rng);
  const Tensor y = gelu(x);
  EXPECT_FALSE(y.requires_grad());
  Tape tape;
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_THROW(tape.backward(sum(y)), ContractError);
}

TEST(TensorBasics, BackwardRejectsNonScalarAndClearsTape) {
  Rng rng(2);
  Tensor x = random_tensor({2, 2}, rng);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = scale(x, 3.0);
  EXPECT_THROW(tape.backward(y), ContractError);
  const Tensor l = sum(y);
  tape.backward(l);
  EXPECT_EQ(tape.size(), 0u);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 3.0);
}

TEST(TensorBasics, FaultInjectionScalesNamedOpGradient) {
  Rng rng(3);
  Tensor x = random_tensor({4}, rng);
  set_fault_injection("scale");
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(scale(x, 2.0)));
  }
  set_fault_injection("");
  for (double g : x.grad()) EXPECT_NEAR(g, 2.02, 1e-12);
}

TEST(TensorGradients, Matmul) {
  Rng rng(10);
  EXPECT_LE(check([](auto& in) { return matmul(in[0], in[1]); },
                  {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)}),
            1e-6);
  EXPECT_LE(check([](auto& in) { return matmul(in[0], in[1]); },
                  {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)}),
            1e-6);
  EXPECT_LE(check([](auto& in) { return matmul(in[0], in[1]); },
                  {random_tensor({2, 2, 3, 4}, rng), random_tensor({4, 5}, rng)}),
            1e-6);
  EXPECT_LE(check([](auto& in) { return matmul(in[0], in[1]); },
                  {random_tensor({2, 1, 3, 4}, rng), random_tensor({3, 4, 2}, rng)}),
            1e-6);
}

TEST(TensorGradients, Linear) {
  Rng rng(11);
  EXPECT_LE(check([](auto& in) { return linear(in[0], in[1], in[2]); },
                  {random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng),
                   random_tensor({5}, rng)}),
            1e-4);
  EXPECT_LE(check([](auto& in) { return linear(in[0], in[1]); },
                  {random_tensor({6, 4}, rng), random_tensor({4, 3}, rng)}),
            1e-4);
}

TEST(TensorGradients, ElementwiseWithBroadcast) {
  Rng rng(12);
  for (auto op : {&add, &sub, &mul}) {
    EXPECT_LE(check([op](auto& in) { return op(in[0], in[1]); },
                    {random_tensor({2, 3, 4}, rng), random_tensor({3, 1}, rng)}),
              1e-4);
    EXPECT_LE(check([op](auto& in) { return op(in[0], in[1]); },
                    {random_tensor({4}, rng), random_tensor({2, 4}, rng)}),
              1e-4);
  }
  EXPECT_LE(check([](auto& in) { return scale(in[0], -1.7); }, {random_tensor({5}, rng)}), 1e-4);
}

TEST(TensorGradients, SoftmaxOnTwoByFour) {
  Rng rng(13);
  EXPECT_LE(check([](auto& in) { return softmax_lastdim(in[0]); }, {random_tensor({2, 4}, rng, 2.0)}),
            1e-4);
}

TEST(TensorGradients, LayerNorm) {
  Rng rng(14);
  EXPECT_LE(check([](auto& in) { return layer_norm(in[0], in[1], in[2]); },
                  {random_tensor({2, 4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)}),
            1e-4);
  EXPECT_LE(check([](auto& in) { return layer_norm(in[0], in[1], in[2]); },
                  {random_tensor({3, 2, 8}, rng, 3.0), random_tensor({8}, rng),
                   random_tensor({8}, rng)}),
            1e-4);
}

TEST(TensorGradients, GeluAndSigmoid) {
  Rng rng(15);
  EXPECT_LE(check([](auto& in) { return gelu(in[0]); }, {random_tensor({3, 5}, rng, 3.0)}), 1e-4);
  EXPECT_LE(check([](auto& in) { return sigmoid(in[0]); }, {random_tensor({3, 5}, rng, 4.0)}),
            1e-4);
}

TEST(TensorGradients, ShapeOps) {
  Rng rng(16);
  EXPECT_LE(check([](auto& in) { return reshape(in[0], {6, 2}); }, {random_tensor({3, 4}, rng)}),
            1e-4);
  EXPECT_LE(check([](auto& in) { return permute(in[0], {2, 0, 1}); },
                  {random_tensor({2, 3, 4}, rng)}),
            1e-4);
  EXPECT_LE(check([](auto& in) { return concat_lastdim({in[0], in[1]}); },
                  {random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)}),
            1e-4);
  EXPECT_LE(check([](auto& in) { return slice(in[0], 1, 1, 2); }, {random_tensor({2, 4, 3}, rng)}),
            1e-4);
}

TEST(TensorGradients, Gathers) {
  Rng rng(17);
  auto rows = std::make_shared<const std::vector<std::int64_t>>(
      std::vector<std::int64_t>{2, 0, -1, 2, 1});
  EXPECT_LE(check([rows](auto& in) { return gather_rows(in[0], rows, {5, 3}); },
                  {random_tensor({3, 3}, rng)}),
            1e-4);
  auto elems = std::make_shared<const std::vector<std::int64_t>>(
      std::vector<std::int64_t>{5, 5, 0, -1, 3, 1});
  EXPECT_LE(check([elems](auto& in) { return gather(in[0], {2, 3}, elems); },
                  {random_tensor({2, 3}, rng)}),
            1e-4);
}

TEST(TensorGradients, Reductions) {
  Rng rng(18);
  EXPECT_LE(check([](auto& in) { return sum(in[0]); }, {random_tensor({3, 4}, rng)}), 1e-4);
  EXPECT_LE(check([](auto& in) { return mean(in[0]); }, {random_tensor({3, 4}, rng)}), 1e-4);
  EXPECT_LE(check([](auto& in) { return mean_rows(in[0]); }, {random_tensor({2, 3, 4}, rng)}),
            1e-4);
}

TEST(TensorGradients, ReusedInputAccumulates) {
  Rng rng(19);
  EXPECT_LE(check([](auto& in) { return mul(add(in[0], in[0]), gelu(in[0])); },
                  {random_tensor({6}, rng)}),
            1e-4);
}
