#include <gtest/gtest.h>

#include <set>

#include "dbswin/swin.hpp"
#include "support.hpp"
#include "swin_oracle.hpp"

using namespace dbswin;
using namespace dbswin::swin;
using dbswin::testing::brute_force_block;
using dbswin::testing::finite_difference_check;
using dbswin::testing::random_attention_block;
using dbswin::testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(WindowOps, PartitionReverseRoundTripIsExact) {
  Rng rng(1);
  for (auto [h, w, m] : {std::array<std::size_t, 3>{8, 8, 4}, {4, 8, 2}, {6, 9, 3}}) {
    const Tensor x = random_tensor({h, w, 5}, rng);
    const Tensor win = window_partition(x, m);
    EXPECT_EQ(win.shape(), (Shape{h / m * (w / m), m * m, 5}));
    EXPECT_EQ(values(window_reverse(win, h, w)), values(x));
  }
}

TEST(WindowOps, PartitionLayoutIsRowMajorWindows) {
  std::vector<double> v(4 * 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const Tensor win = window_partition(Tensor::from_data({4, 4, 1}, v), 2);
  // window 1 is the top-right 2x2 block: grid cells (0,2),(0,3),(1,2),(1,3)
  EXPECT_EQ(win.at(4), 2.0);
  EXPECT_EQ(win.at(5), 3.0);
  EXPECT_EQ(win.at(6), 6.0);
  EXPECT_EQ(win.at(7), 7.0);
}

TEST(WindowOps, CyclicShiftDefinitionAndInverse) {
  Rng rng(2);
  const std::size_t h = 5, w = 7;
  const Tensor x = random_tensor({h, w, 3}, rng);
  for (std::int64_t dy = -6; dy <= 6; ++dy) {
    for (std::int64_t dx = -8; dx <= 8; dx += 3) {
      const Tensor y = cyclic_shift(x, dy, dx);
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t si = static_cast<std::size_t>(((static_cast<std::int64_t>(i) + dy) % 5 + 5) % 5);
          const std::size_t sj = static_cast<std::size_t>(((static_cast<std::int64_t>(j) + dx) % 7 + 7) % 7);
          for (std::size_t c = 0; c < 3; ++c) {
            ASSERT_EQ(y.at((i * w + j) * 3 + c), x.at((si * w + sj) * 3 + c));
          }
        }
      }
      EXPECT_EQ(values(cyclic_shift(y, -dy, -dx)), values(x));
    }
  }
}

TEST(RelativePosition, IndexDependsOnlyOnOffset) {
  for (std::size_t m : {2u, 3u, 4u, 7u}) {
    const auto idx = relative_position_index(m);
    const std::size_t t = m * m;
    std::set<std::int64_t> seen(idx.begin(), idx.end());
    EXPECT_EQ(seen.size(), (2 * m - 1) * (2 * m - 1));
    for (std::size_t a = 0; a < t; ++a) {
      for (std::size_t b = 0; b < t; ++b) {
        for (std::size_t a2 = 0; a2 < t; ++a2) {
          for (std::size_t b2 = 0; b2 < t; ++b2) {
            const bool same_offset =
                static_cast<long>(a / m) - static_cast<long>(b / m) ==
                    static_cast<long>(a2 / m) - static_cast<long>(b2 / m) &&
                static_cast<long>(a % m) - static_cast<long>(b % m) ==
                    static_cast<long>(a2 % m) - static_cast<long>(b2 % m);
            ASSERT_EQ(same_offset, idx[a * t + b] == idx[a2 * t + b2]);
          }
        }
      }
    }
  }
}

TEST(ShiftMask, RejectsZeroShift) { EXPECT_THROW(shift_attention_mask(8, 8, 4, 0), ContractError); }

TEST(ShiftMask, SoftmaxLeakageAcrossRegionsIsNegligible) {
  Rng rng(3);
  const Tensor mask = shift_attention_mask(8, 8, 4, 2);
  ASSERT_EQ(mask.shape(), (Shape{4, 16, 16}));
  const Tensor logits = random_tensor({4, 16, 16}, rng, 30.0);
  const Tensor p = softmax_lastdim(add(logits, mask));
  std::size_t masked = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (mask.at(i) != 0.0) {
      ++masked;
      EXPECT_LE(p.at(i), 1e-9);
    }
  }
  EXPECT_GT(masked, 0u);
  // window 0 is interior and fully connected
  for (std::size_t i = 0; i < 256; ++i) EXPECT_EQ(mask.at(i), 0.0);
}

TEST(ShiftedAttention, MatchesSubWindowBruteForce) {
  Rng rng(4);
  for (auto [h, w] : {std::array<std::size_t, 2>{8, 8}, {4, 8}, {6, 6}, {8, 5}}) {
    for (bool shifted : {false, true}) {
      const SwinBlockParams p = random_attention_block(8, 2, 4, rng);
      const Tensor x = random_tensor({h, w, 8}, rng);
      const Tensor y = swin_block(x, p, WindowConfig::for_grid(h, w, 4), shifted);
      EXPECT_LE(max_abs_diff(values(y), brute_force_block(x, p, 4, shifted)), 1e-8)
          << h << "x" << w << " shifted=" << shifted;
    }
  }
}

TEST(ShiftedAttention, NoInfluenceAcrossRegions) {
  Rng rng(5);
  const SwinBlockParams p = random_attention_block(8, 2, 4, rng);
  const auto cfg = WindowConfig::for_grid(8, 8, 4);
  Tensor x = random_tensor({8, 8, 8}, rng);
  const Tensor y0 = swin_block(x, p, cfg, true);
  // (0,0) wraps to the bottom-right shifted window; (7,7) shares that window but not its region.
  for (std::size_t c = 0; c < 8; ++c) x.mutable_data()[c] += 5.0;
  const Tensor y1 = swin_block(x, p, cfg, true);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_LE(std::abs(y1.at(63 * 8 + c) - y0.at(63 * 8 + c)), 1e-9);
}

TEST(SwinBlock, PairGradientMatchesFiniteDifferences) {
  Rng rng(6);
  const SwinBlockParams a = init_block(8, 2, 4, 4, rng);
  const SwinBlockParams b = init_block(8, 2, 4, 4, rng);
  const auto cfg = WindowConfig::for_grid(8, 8, 4);
  const Tensor x = random_tensor({8, 8, 8}, rng);
  const auto rep = finite_difference_check(
      [&](const std::vector<Tensor>& in) { return swin_block_pair(in[0], a, b, cfg); }, {x}, 1e-5,
      1e-4, 40);
  EXPECT_LE(rep.max_rel_err, 1e-3);

  ParamList params;
  collect_params(b, "b", params);
  std::vector<Tensor> tensors;
  for (auto& np : params) tensors.push_back(np.tensor);
  const auto rep2 = finite_difference_check(
      [&](const std::vector<Tensor>&) { return swin_block_pair(x, a, b, cfg); }, tensors, 1e-5,
      1e-4, 6);
  EXPECT_LE(rep2.max_rel_err, 1e-3);
}

TEST(PatchEmbed, MatchesDirectProjection) {
  Rng rng(7);
  const std::size_t cin = 2, s = 2, c = 3;
  const Tensor img = random_tensor({cin, 4, 6}, rng);
  const Tensor w = random_tensor({cin * s * s, c}, rng);
  const Tensor b = random_tensor({c}, rng);
  const Tensor tok = patch_embed(img, s, w, b);
  ASSERT_EQ(tok.shape(), (Shape{2, 3, 3}));
  for (std::size_t pr = 0; pr < 2; ++pr) {
    for (std::size_t pc = 0; pc < 3; ++pc) {
      for (std::size_t o = 0; o < c; ++o) {
        double acc = b.at(o);
        for (std::size_t ch = 0; ch < cin; ++ch)
          for (std::size_t dy = 0; dy < s; ++dy)
            for (std::size_t dx = 0; dx < s; ++dx)
              acc += img.at((ch * 4 + pr * s + dy) * 6 + pc * s + dx) *
                     w.at(((ch * s + dy) * s + dx) * c + o);
        EXPECT_NEAR(tok.at((pr * 3 + pc) * c + o), acc, 1e-12);
      }
    }
  }
  EXPECT_LE(finite_difference_check(
                [&](const std::vector<Tensor>& in) { return patch_embed(in[0], s, in[1], in[2]); },
                {img, w, b})
                .max_rel_err,
            1e-4);
}

TEST(PatchMerge, ConcatenationOrderAndShape) {
  std::vector<double> v(4 * 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const Tensor x = Tensor::from_data({4, 4, 1}, v);
  // Identity-like weight [4, 2]: output channel 0 = top-left, channel 1 = bottom-right.
  const Tensor w = Tensor::from_data({4, 2}, {1, 0, 0, 0, 0, 0, 0, 1});
  const Tensor y = patch_merge(x, w);
  ASSERT_EQ(y.shape(), (Shape{2, 2, 2}));
  EXPECT_EQ(y.at(0), 0.0);
  EXPECT_EQ(y.at(1), 5.0);
  EXPECT_EQ(y.at(2), 2.0);
  EXPECT_EQ(y.at(3), 7.0);
  EXPECT_EQ(y.at(6), 10.0);
  EXPECT_EQ(y.at(7), 15.0);
}

TEST(PatchExpand, InvertsMergeLayout) {
  Rng rng(8);
  const Tensor x = random_tensor({4, 6, 3}, rng);
  // Merge with an identity [12, 12] then expand with identity [12, 12] restores x.
  std::vector<double> eye(144, 0.0);
  for (std::size_t i = 0; i < 12; ++i) eye[i * 12 + i] = 1.0;
  const Tensor id = Tensor::from_data({12, 12}, eye);
  const Tensor y = patch_expand(patch_merge(x, id), id);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_LE(max_abs_diff(values(y), values(x)), 0.0);
  EXPECT_LE(finite_difference_check(
                [](const std::vector<Tensor>& in) { return patch_expand(in[0], in[1]); },
                {random_tensor({2, 3, 4}, rng), random_tensor({4, 8}, rng)})
                .max_rel_err,
            1e-4);
}

TEST(SwinBlock, InitializationConventions) {
  Rng rng(9);
  const SwinBlockParams p = init_block(16, 2, 4, 4, rng);
  for (double v : p.ln1_gamma.data()) EXPECT_EQ(v, 1.0);
  for (double v : p.ln1_beta.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.attn.bias_table.data()) EXPECT_LE(std::abs(v), 0.04 + 1e-15);
  const double bound = 1.0 / std::sqrt(16.0);
  for (double v : p.attn.qkv_weight.data()) EXPECT_LE(std::abs(v), bound);
  EXPECT_EQ(p.attn.bias_table.shape(), (Shape{49, 2}));
}
