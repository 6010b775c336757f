#pragma once

// Swin Transformer block primitives: patch embedding, window partitioning,
// cyclic shift, (shifted) window attention with relative position bias, the
// pre-norm residual block pair, and patch merging.
//
// Feature maps are channel-last tensors [grid_h, grid_w, C] whose rows are the
// patch tokens in row-major grid order.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dbswin/params.hpp"
#include "dbswin/rng.hpp"
#include "dbswin/tensor.hpp"

namespace dbswin::swin {

// Added to attention logits between positions that must not attend.
inline constexpr double kMaskValue = -1e9;

using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;

struct WindowConfig {
  std::size_t window = 4;  // M, window side in patches
  std::size_t shift = 2;   // SW-MSA offset, floor(M / 2)
  std::size_t grid_h = 0;  // real patch grid; padded up to multiples of M internally
  std::size_t grid_w = 0;

  static WindowConfig for_grid(std::size_t grid_h, std::size_t grid_w, std::size_t window);

  std::size_t padded_h() const;
  std::size_t padded_w() const;
  bool padded() const { return padded_h() != grid_h || padded_w() != grid_w; }
  std::size_t num_windows() const { return (padded_h() / window) * (padded_w() / window); }
  void validate() const;
};

struct AttentionParams {
  std::size_t num_heads = 1;
  std::size_t window = 4;
  Tensor qkv_weight;   // [C, 3C]
  Tensor qkv_bias;     // [3C]
  Tensor proj_weight;  // [C, C]
  Tensor proj_bias;    // [C]
  Tensor bias_table;   // [(2M-1)^2, num_heads]
  IndexMap bias_index;  // [M^2 * M^2] rows of bias_table

  std::size_t dim() const { return proj_weight.dim(0); }
};

struct SwinBlockParams {
  Tensor ln1_gamma, ln1_beta;
  AttentionParams attn;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_weight, fc1_bias;  // C -> rC
  Tensor fc2_weight, fc2_bias;  // rC -> C
};

// Row of the bias table for every (query, key) pair of an M x M window:
// (dr + M - 1) * (2M - 1) + (dc + M - 1) with (dr, dc) = query - key.
std::vector<std::int64_t> relative_position_index(std::size_t window);

AttentionParams init_attention(std::size_t dim, std::size_t num_heads, std::size_t window,
                               Rng& rng);
SwinBlockParams init_block(std::size_t dim, std::size_t num_heads, std::size_t window,
                           std::size_t mlp_ratio, Rng& rng);
void collect_params(const SwinBlockParams& p, const std::string& prefix, ParamList& out);

// image [Cin, H, W] -> tokens [H/S, W/S, C]. Each patch is flattened in
// (channel, row, col) order and projected by weight [Cin*S*S, C] (+ bias).
Tensor patch_embed(const Tensor& image, std::size_t patch, const Tensor& weight,
                   const Tensor& bias = {});

// [h, w, C] -> [nW, M*M, C] with windows and in-window positions row-major.
Tensor window_partition(const Tensor& x, std::size_t window);
// Inverse of window_partition.
Tensor window_reverse(const Tensor& windows, std::size_t grid_h, std::size_t grid_w);

// out[i][j] = x[(i + dy) mod h][(j + dx) mod w]; positive offsets move content top-left.
Tensor cyclic_shift(const Tensor& x, std::int64_t dy, std::int64_t dx);

// Region-label mask for SW-MSA on an (already divisible) grid: [nW, M^2, M^2]
// holding 0 within a region and kMaskValue across regions.
Tensor shift_attention_mask(std::size_t grid_h, std::size_t grid_w, std::size_t window,
                            std::size_t shift);

// Multi-head self-attention inside each window: [nW, T, C] -> [nW, T, C].
// `mask` ([nW, T, T]) is optional.
Tensor window_attention(const Tensor& windows, const AttentionParams& p, const Tensor& mask = {});

// One pre-norm block (W-MSA when !shifted, SW-MSA otherwise) on x [h, w, C].
Tensor swin_block(const Tensor& x, const SwinBlockParams& p, const WindowConfig& cfg,
                  bool shifted);
// W-MSA block followed by SW-MSA block.
Tensor swin_block_pair(const Tensor& x, const SwinBlockParams& regular,
                       const SwinBlockParams& shifted, const WindowConfig& cfg);

// [h, w, C] -> [h/2, w/2, 2C]: 2x2 neighbourhoods concatenated in
// (top-left, top-right, bottom-left, bottom-right) order, then weight [4C, 2C].
Tensor patch_merge(const Tensor& x, const Tensor& weight);

// [h, w, C] -> [2h, 2w, C']: weight [C, 4C'] then each token's four channel
// groups laid out as its 2x2 block in the same order patch_merge reads them.
Tensor patch_expand(const Tensor& x, const Tensor& weight);

}  // namespace dbswin::swin
