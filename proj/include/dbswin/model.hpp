#pragma once

// Multi-branch Swin U-Net: per-branch Swin encoders at different patch sizes,
// attentional feature fusion of the branches at every encoder level, and a
// skip-connected Swin decoder ending in a per-pixel logit head.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dbswin/params.hpp"
#include "dbswin/swin.hpp"
#include "dbswin/tensor.hpp"

namespace dbswin::model {

inline constexpr std::size_t kStages = 4;

struct BranchConfig {
  std::size_t patch_size = 4;
  std::size_t embed_dim = 16;
  // Swin blocks per encoder stage, alternating W-MSA / SW-MSA.
  std::array<std::size_t, kStages> depths{2, 2, 2, 2};
  std::array<std::size_t, kStages> heads{2, 4, 8, 16};
  std::size_t window = 4;

  // Heads double with channels starting from max(1, embed_dim / 8).
  static BranchConfig make(std::size_t patch_size, std::size_t embed_dim, std::size_t window);
};

struct ModelConfig {
  std::vector<BranchConfig> branches;  // first entry is the resolution anchor
  std::size_t in_channels = 1;
  std::size_t out_classes = 1;
  std::size_t decoder_depth = 2;  // Swin blocks per decoder stage
  std::size_t mlp_ratio = 4;
  std::size_t aff_ratio = 4;
  std::uint64_t init_seed = 1;

  void validate() const;

  // Same per-branch settings for every patch size in `patch_sizes`.
  static ModelConfig with_branches(const std::vector<std::size_t>& patch_sizes,
                                   std::size_t embed_dim, std::size_t window);
  // Desk-scale default: C=16, M=4, branches s=4 and s=8 (64x64 inputs).
  static ModelConfig desk();
  // Gradient-check model: C=8, M=4, branches s=4 and s=8 (32x32 inputs).
  static ModelConfig tiny();
};

struct GridShape {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;
  bool operator==(const GridShape&) const = default;
};

// Input side length a branch pads to: the next multiple of 8 * patch_size.
std::size_t padded_extent(std::size_t extent, std::size_t patch_size);
// Closed-form encoder stage shapes of a branch for an H x W input (padded extents).
std::array<GridShape, kStages> encoder_stage_shapes(const BranchConfig& branch, std::size_t height,
                                                    std::size_t width);

struct EncoderParams {
  Tensor embed_weight;  // [Cin * S * S, C]
  Tensor embed_bias;    // [C]
  std::array<std::vector<swin::SwinBlockParams>, kStages> blocks;
  std::array<Tensor, kStages - 1> merge;  // [4 C_i, 2 C_i]
};

struct EncoderOutput {
  std::array<Tensor, kStages> stages;  // pre-merge output of every stage
};

// Channel-attention fusion parameters. Both context paths are a pointwise
// bottleneck C -> C/r -> C with a per-channel affine after each projection.
struct AFFParams {
  std::size_t channels = 0;
  std::size_t hidden = 0;
  Tensor global_fc1, global_scale1, global_shift1, global_fc2, global_scale2, global_shift2;
  Tensor local_fc1, local_scale1, local_shift1, local_fc2, local_scale2, local_shift2;
};

// Aligns a coarser branch's level to the anchor branch's level.
struct AlignParams {
  enum class Mode { kExpand, kNearest };
  Mode mode = Mode::kExpand;
  std::size_t source_patch = 8;  // token footprint in pixels at level 0
  std::size_t target_patch = 4;
  Tensor weight;  // [Cs, 4 Ct] for kExpand, [Cs, Ct] for kNearest
};

struct FusionParams {
  std::array<AlignParams, kStages> align;
  std::array<AFFParams, kStages> aff;
};

struct DecoderStageParams {
  Tensor expand_weight;  // [2C, 4C] (up-sample from the deeper level)
  Tensor norm_gamma, norm_beta;
  Tensor reduce_weight, reduce_bias;  // [2C, C] after skip concatenation
  std::vector<swin::SwinBlockParams> blocks;
};

struct FinalUpParams {
  Tensor expand_weight;  // [C, 4C]
  Tensor norm_gamma, norm_beta;
};

struct DecoderParams {
  std::array<DecoderStageParams, kStages - 1> stages;  // index = skip level (0..2)
  std::vector<FinalUpParams> final_ups;                // log2(anchor patch size) entries
  Tensor head_weight, head_bias;                       // [C, classes]
};

EncoderOutput encoder_forward(const Tensor& tokens, const BranchConfig& branch,
                              const EncoderParams& params);

// Sigmoid gate in (0, 1) for u [h, w, C]: global pooled path + local pointwise path.
Tensor ms_cam(const Tensor& u, const AFFParams& params);
// Z = M(X + Y) * X + (1 - M(X + Y)) * Y, evaluated as Y + M * (X - Y).
Tensor aff_fuse(const Tensor& x, const Tensor& y, const AFFParams& params);

Tensor upsample_align(const Tensor& feature, std::size_t target_h, std::size_t target_w,
                      const AlignParams& params);

// skips ordered deepest-first (levels 2, 1, 0); returns logits [classes, H, W]
// for the anchor's padded extent cropped to out_h x out_w.
Tensor decoder_forward(const Tensor& bottleneck, const std::vector<Tensor>& skips,
                       const DecoderParams& params, const ModelConfig& config, std::size_t out_h,
                       std::size_t out_w);

AFFParams init_aff(std::size_t channels, std::size_t ratio, Rng& rng);
AlignParams init_align(std::size_t source_patch, std::size_t target_patch,
                       std::size_t source_channels, std::size_t target_channels, Rng& rng);

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  // image [Cin, H, W] -> logits [classes, H, W].
  Tensor forward(const Tensor& image) const;

  const ParamList& params() const { return params_; }
  ParamList& params() { return params_; }
  std::size_t num_parameters() const { return total_numel(params_); }

  const std::vector<EncoderParams>& encoders() const { return encoders_; }
  const std::vector<FusionParams>& fusions() const { return fusions_; }
  const DecoderParams& decoder() const { return decoder_; }

  // Per-branch encoder outputs for `image` (used by shape checks and tests).
  std::vector<EncoderOutput> encode(const Tensor& image) const;
  // Fused per-level features fed to the decoder.
  std::array<Tensor, kStages> fuse(const std::vector<EncoderOutput>& encoded) const;

 private:
  ModelConfig config_;
  std::vector<EncoderParams> encoders_;
  std::vector<FusionParams> fusions_;  // one per non-anchor branch
  DecoderParams decoder_;
  ParamList params_;
};

// Parameter count derived from shape algebra alone.
std::size_t param_count(const ModelConfig& config);

}  // namespace dbswin::model
