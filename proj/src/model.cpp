#include "dbswin/model.hpp"

#include <algorithm>
#include <bit>

namespace dbswin::model {

namespace {

std::string level_name(std::size_t i) { return std::to_string(i); }

std::size_t aff_hidden(std::size_t channels, std::size_t ratio) {
  return std::max<std::size_t>(1, channels / ratio);
}

// Rows of an h x w grid kept when cropping it to its top-left out_h x out_w corner.
std::shared_ptr<const std::vector<std::int64_t>> crop_index(std::size_t w, std::size_t out_h,
                                                            std::size_t out_w) {
  auto index = std::make_shared<std::vector<std::int64_t>>(out_h * out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    for (std::size_t c = 0; c < out_w; ++c) {
      (*index)[r * out_w + c] = static_cast<std::int64_t>(r * w + c);
    }
  }
  return index;
}

Tensor crop_grid(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.dim(0) == out_h && x.dim(1) == out_w) return x;
  if (x.dim(0) < out_h || x.dim(1) < out_w) {
    throw ShapeError("cannot crop " + shape_str(x.shape()) + " to " + std::to_string(out_h) + "x" +
                     std::to_string(out_w));
  }
  return gather_rows(x, crop_index(x.dim(1), out_h, out_w), {out_h, out_w, x.dim(2)});
}

// Pads image [Cin, H, W] on the right and bottom by mirroring (edge pixel
// repeated), extended periodically when the pad exceeds the image.
Tensor pad_image(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  const std::size_t cin = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  auto mirror = [](std::size_t p, std::size_t n) {
    const std::size_t m = p % (2 * n);
    return m < n ? m : 2 * n - 1 - m;
  };
  auto index = std::make_shared<std::vector<std::int64_t>>(cin * out_h * out_w);
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t r = 0; r < out_h; ++r) {
      for (std::size_t col = 0; col < out_w; ++col) {
        (*index)[(c * out_h + r) * out_w + col] =
            static_cast<std::int64_t>((c * h + mirror(r, h)) * w + mirror(col, w));
      }
    }
  }
  return gather(image, {cin, out_h, out_w}, std::move(index));
}

Tensor context_path(const Tensor& u, const Tensor& fc1, const Tensor& scale1,
                    const Tensor& shift1, const Tensor& fc2, const Tensor& scale2,
                    const Tensor& shift2) {
  Tensor h = add(mul(linear(u, fc1), scale1), shift1);
  h = gelu(h);
  return add(mul(linear(h, fc2), scale2), shift2);
}

std::vector<swin::SwinBlockParams> init_blocks(std::size_t count, std::size_t dim,
                                               std::size_t heads, std::size_t window,
                                               std::size_t mlp_ratio, Rng& rng) {
  std::vector<swin::SwinBlockParams> blocks;
  blocks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    blocks.push_back(swin::init_block(dim, heads, window, mlp_ratio, rng));
  }
  return blocks;
}

Tensor run_blocks(Tensor x, const std::vector<swin::SwinBlockParams>& blocks, std::size_t window) {
  const auto cfg = swin::WindowConfig::for_grid(x.dim(0), x.dim(1), window);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = swin::swin_block(x, blocks[i], cfg, i % 2 == 1);
  }
  return x;
}

void collect_aff(const AFFParams& p, const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".global.fc1.weight", p.global_fc1, true});
  out.push_back({prefix + ".global.norm1.scale", p.global_scale1, false});
  out.push_back({prefix + ".global.norm1.shift", p.global_shift1, false});
  out.push_back({prefix + ".global.fc2.weight", p.global_fc2, true});
  out.push_back({prefix + ".global.norm2.scale", p.global_scale2, false});
  out.push_back({prefix + ".global.norm2.shift", p.global_shift2, false});
  out.push_back({prefix + ".local.fc1.weight", p.local_fc1, true});
  out.push_back({prefix + ".local.norm1.scale", p.local_scale1, false});
  out.push_back({prefix + ".local.norm1.shift", p.local_shift1, false});
  out.push_back({prefix + ".local.fc2.weight", p.local_fc2, true});
  out.push_back({prefix + ".local.norm2.scale", p.local_scale2, false});
  out.push_back({prefix + ".local.norm2.shift", p.local_shift2, false});
}

std::size_t block_param_count(std::size_t c, std::size_t window, std::size_t heads,
                              std::size_t mlp_ratio) {
  const std::size_t span = 2 * window - 1;
  const std::size_t ln = 2 * c;
  const std::size_t attn = c * 3 * c + 3 * c + c * c + c + span * span * heads;
  const std::size_t mlp = c * mlp_ratio * c + mlp_ratio * c + mlp_ratio * c * c + c;
  return 2 * ln + attn + mlp;
}

}  // namespace

BranchConfig BranchConfig::make(std::size_t patch_size, std::size_t embed_dim,
                                std::size_t window) {
  BranchConfig b;
  b.patch_size = patch_size;
  b.embed_dim = embed_dim;
  b.window = window;
  const std::size_t base = std::max<std::size_t>(1, embed_dim / 8);
  for (std::size_t i = 0; i < kStages; ++i) b.heads[i] = base << i;
  return b;
}

void ModelConfig::validate() const {
  if (branches.empty() || branches.size() > 3) {
    throw ContractError("model needs 1 to 3 branches, got " + std::to_string(branches.size()));
  }
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const auto& b = branches[i];
    if (b.patch_size == 0 || b.embed_dim == 0 || b.window == 0) {
      throw ContractError("branch " + std::to_string(i) + ": sizes must be positive");
    }
    if (i > 0 && b.patch_size <= branches[i - 1].patch_size) {
      throw ContractError("branch patch sizes must be strictly increasing");
    }
    for (std::size_t s = 0; s < kStages; ++s) {
      const std::size_t dim = b.embed_dim << s;
      if (b.heads[s] == 0 || dim % b.heads[s] != 0) {
        throw ContractError("branch " + std::to_string(i) + " stage " + std::to_string(s) +
                            ": " + std::to_string(dim) + " channels not divisible by " +
                            std::to_string(b.heads[s]) + " heads");
      }
    }
  }
  if (!std::has_single_bit(branches[0].patch_size)) {
    throw ContractError("anchor patch size must be a power of two");
  }
  if (in_channels == 0 || out_classes == 0 || mlp_ratio == 0 || aff_ratio == 0) {
    throw ContractError("model sizes must be positive");
  }
}

ModelConfig ModelConfig::with_branches(const std::vector<std::size_t>& patch_sizes,
                                       std::size_t embed_dim, std::size_t window) {
  ModelConfig cfg;
  for (std::size_t s : patch_sizes) cfg.branches.push_back(BranchConfig::make(s, embed_dim, window));
  return cfg;
}

ModelConfig ModelConfig::desk() { return with_branches({4, 8}, 16, 4); }
ModelConfig ModelConfig::tiny() { return with_branches({4, 8}, 8, 4); }

std::size_t padded_extent(std::size_t extent, std::size_t patch_size) {
  const std::size_t unit = patch_size << (kStages - 1);
  return (extent + unit - 1) / unit * unit;
}

std::array<GridShape, kStages> encoder_stage_shapes(const BranchConfig& branch, std::size_t height,
                                                    std::size_t width) {
  std::array<GridShape, kStages> shapes;
  const std::size_t gh = padded_extent(height, branch.patch_size) / branch.patch_size;
  const std::size_t gw = padded_extent(width, branch.patch_size) / branch.patch_size;
  for (std::size_t i = 0; i < kStages; ++i) {
    shapes[i] = {gh >> i, gw >> i, branch.embed_dim << i};
  }
  return shapes;
}

EncoderOutput encoder_forward(const Tensor& tokens, const BranchConfig& branch,
                              const EncoderParams& params) {
  if (tokens.rank() != 3 || tokens.dim(2) != branch.embed_dim) {
    throw ShapeError("encoder_forward: tokens " + shape_str(tokens.shape()) +
                     " vs embed dim " + std::to_string(branch.embed_dim));
  }
  EncoderOutput out;
  Tensor x = tokens;
  for (std::size_t i = 0; i < kStages; ++i) {
    x = run_blocks(x, params.blocks[i], branch.window);
    out.stages[i] = x;
    if (i + 1 < kStages) x = swin::patch_merge(x, params.merge[i]);
  }
  return out;
}

AFFParams init_aff(std::size_t channels, std::size_t ratio, Rng& rng) {
  AFFParams p;
  p.channels = channels;
  p.hidden = aff_hidden(channels, ratio);
  p.global_fc1 = init_linear_weight(channels, p.hidden, rng);
  p.global_scale1 = init_ones({p.hidden});
  p.global_shift1 = init_zeros({p.hidden});
  p.global_fc2 = init_linear_weight(p.hidden, channels, rng);
  p.global_scale2 = init_ones({channels});
  p.global_shift2 = init_zeros({channels});
  p.local_fc1 = init_linear_weight(channels, p.hidden, rng);
  p.local_scale1 = init_ones({p.hidden});
  p.local_shift1 = init_zeros({p.hidden});
  p.local_fc2 = init_linear_weight(p.hidden, channels, rng);
  p.local_scale2 = init_ones({channels});
  p.local_shift2 = init_zeros({channels});
  return p;
}

Tensor ms_cam(const Tensor& u, const AFFParams& p) {
  if (u.dim(-1) != p.channels) {
    throw ShapeError("ms_cam: input " + shape_str(u.shape()) + " vs " +
                     std::to_string(p.channels) + " channels");
  }
  Tensor global = context_path(mean_rows(u), p.global_fc1, p.global_scale1, p.global_shift1,
                               p.global_fc2, p.global_scale2, p.global_shift2);  // [1, C]
  Tensor local = context_path(u, p.local_fc1, p.local_scale1, p.local_shift1, p.local_fc2,
                              p.local_scale2, p.local_shift2);
  return sigmoid(add(local, global));
}

Tensor aff_fuse(const Tensor& x, const Tensor& y, const AFFParams& p) {
  if (x.shape() != y.shape()) {
    throw ShapeError("aff_fuse: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  Tensor gate = ms_cam(add(x, y), p);
  return add(y, mul(gate, sub(x, y)));
}

AlignParams init_align(std::size_t source_patch, std::size_t target_patch,
                       std::size_t source_channels, std::size_t target_channels, Rng& rng) {
  AlignParams p;
  p.source_patch = source_patch;
  p.target_patch = target_patch;
  if (source_patch == 2 * target_patch) {
    p.mode = AlignParams::Mode::kExpand;
    p.weight = init_linear_weight(source_channels, 4 * target_channels, rng);
  } else {
    p.mode = AlignParams::Mode::kNearest;
    p.weight = init_linear_weight(source_channels, target_channels, rng);
  }
  return p;
}

Tensor upsample_align(const Tensor& feature, std::size_t target_h, std::size_t target_w,
                      const AlignParams& p) {
  if (feature.rank() != 3) {
    throw ShapeError("upsample_align expects [h, w, C], got " + shape_str(feature.shape()));
  }
  if (p.mode == AlignParams::Mode::kExpand) {
    if (2 * feature.dim(0) < target_h || 2 * feature.dim(1) < target_w) {
      throw ShapeError("upsample_align: 2x of " + shape_str(feature.shape()) + " cannot cover " +
                       std::to_string(target_h) + "x" + std::to_string(target_w));
    }
    return crop_grid(swin::patch_expand(feature, p.weight), target_h, target_w);
  }
  // Nearest-neighbour replication by pixel footprint, then a channel projection.
  const std::size_t h = feature.dim(0);
  const std::size_t w = feature.dim(1);
  auto index = std::make_shared<std::vector<std::int64_t>>(target_h * target_w);
  for (std::size_t r = 0; r < target_h; ++r) {
    const std::size_t sr = r * p.target_patch / p.source_patch;
    for (std::size_t c = 0; c < target_w; ++c) {
      const std::size_t sc = c * p.target_patch / p.source_patch;
      if (sr >= h || sc >= w) {
        throw ShapeError("upsample_align: source " + shape_str(feature.shape()) +
                         " too small for target");
      }
      (*index)[r * target_w + c] = static_cast<std::int64_t>(sr * w + sc);
    }
  }
  Tensor replicated = gather_rows(feature, std::move(index), {target_h, target_w, feature.dim(2)});
  return linear(replicated, p.weight);
}

Tensor decoder_forward(const Tensor& bottleneck, const std::vector<Tensor>& skips,
                       const DecoderParams& params, const ModelConfig& config, std::size_t out_h,
                       std::size_t out_w) {
  if (skips.size() != kStages - 1) {
    throw ShapeError("decoder_forward needs " + std::to_string(kStages - 1) + " skips, got " +
                     std::to_string(skips.size()));
  }
  const BranchConfig& anchor = config.branches.front();
  Tensor x = bottleneck;
  for (std::size_t k = 0; k < kStages - 1; ++k) {
    const std::size_t level = kStages - 2 - k;
    const Tensor& skip = skips[k];
    const DecoderStageParams& st = params.stages[level];
    Tensor up = swin::patch_expand(x, st.expand_weight);
    up = layer_norm(crop_grid(up, skip.dim(0), skip.dim(1)), st.norm_gamma, st.norm_beta);
    if (up.shape() != skip.shape()) {
      throw ShapeError("decoder level " + std::to_string(level) + ": up-sampled " +
                       shape_str(up.shape()) + " vs skip " + shape_str(skip.shape()));
    }
    x = linear(concat_lastdim({up, skip}), st.reduce_weight, st.reduce_bias);
    x = run_blocks(x, st.blocks, anchor.window);
  }
  for (const FinalUpParams& up : params.final_ups) {
    x = layer_norm(swin::patch_expand(x, up.expand_weight), up.norm_gamma, up.norm_beta);
  }
  Tensor logits = linear(x, params.head_weight, params.head_bias);  // [Hp, Wp, classes]
  logits = crop_grid(logits, out_h, out_w);
  return permute(logits, {2, 0, 1});
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.init_seed);
  const std::size_t mlp = config_.mlp_ratio;
  const BranchConfig& anchor = config_.branches.front();

  for (std::size_t b = 0; b < config_.branches.size(); ++b) {
    const BranchConfig& br = config_.branches[b];
    const std::string prefix = "branch" + std::to_string(b);
    EncoderParams enc;
    const std::size_t flat = config_.in_channels * br.patch_size * br.patch_size;
    enc.embed_weight = init_linear_weight(flat, br.embed_dim, rng);
    enc.embed_bias = init_zeros({br.embed_dim});
    params_.push_back({prefix + ".embed.weight", enc.embed_weight, true});
    params_.push_back({prefix + ".embed.bias", enc.embed_bias, false});
    for (std::size_t s = 0; s < kStages; ++s) {
      const std::size_t dim = br.embed_dim << s;
      enc.blocks[s] = init_blocks(br.depths[s], dim, br.heads[s], br.window, mlp, rng);
      for (std::size_t i = 0; i < enc.blocks[s].size(); ++i) {
        swin::collect_params(enc.blocks[s][i],
                             prefix + ".stage" + level_name(s) + ".block" + std::to_string(i),
                             params_);
      }
      if (s + 1 < kStages) {
        enc.merge[s] = init_linear_weight(4 * dim, 2 * dim, rng);
        params_.push_back({prefix + ".stage" + level_name(s) + ".merge.weight", enc.merge[s], true});
      }
    }
    encoders_.push_back(std::move(enc));
  }

  for (std::size_t b = 1; b < config_.branches.size(); ++b) {
    const BranchConfig& br = config_.branches[b];
    const std::string prefix = "fusion" + std::to_string(b);
    FusionParams fp;
    for (std::size_t s = 0; s < kStages; ++s) {
      const std::size_t target_c = anchor.embed_dim << s;
      fp.align[s] = init_align(br.patch_size, anchor.patch_size, br.embed_dim << s, target_c, rng);
      params_.push_back({prefix + ".level" + level_name(s) + ".align.weight", fp.align[s].weight, true});
      fp.aff[s] = init_aff(target_c, config_.aff_ratio, rng);
      collect_aff(fp.aff[s], prefix + ".level" + level_name(s) + ".aff", params_);
    }
    fusions_.push_back(std::move(fp));
  }

  for (std::size_t level = kStages - 1; level-- > 0;) {
    const std::size_t dim = anchor.embed_dim << level;
    const std::string prefix = "decoder.level" + level_name(level);
    DecoderStageParams& st = decoder_.stages[level];
    st.expand_weight = init_linear_weight(2 * dim, 4 * dim, rng);
    st.norm_gamma = init_ones({dim});
    st.norm_beta = init_zeros({dim});
    st.reduce_weight = init_linear_weight(2 * dim, dim, rng);
    st.reduce_bias = init_zeros({dim});
    st.blocks = init_blocks(config_.decoder_depth, dim, anchor.heads[level], anchor.window, mlp, rng);
    params_.push_back({prefix + ".expand.weight", st.expand_weight, true});
    params_.push_back({prefix + ".norm.gamma", st.norm_gamma, false});
    params_.push_back({prefix + ".norm.beta", st.norm_beta, false});
    params_.push_back({prefix + ".reduce.weight", st.reduce_weight, true});
    params_.push_back({prefix + ".reduce.bias", st.reduce_bias, false});
    for (std::size_t i = 0; i < st.blocks.size(); ++i) {
      swin::collect_params(st.blocks[i], prefix + ".block" + std::to_string(i), params_);
    }
  }

  const std::size_t c = anchor.embed_dim;
  const auto ups = static_cast<std::size_t>(std::countr_zero(anchor.patch_size));
  for (std::size_t i = 0; i < ups; ++i) {
    FinalUpParams up;
    up.expand_weight = init_linear_weight(c, 4 * c, rng);
    up.norm_gamma = init_ones({c});
    up.norm_beta = init_zeros({c});
    const std::string prefix = "decoder.final" + std::to_string(i);
    params_.push_back({prefix + ".expand.weight", up.expand_weight, true});
    params_.push_back({prefix + ".norm.gamma", up.norm_gamma, false});
    params_.push_back({prefix + ".norm.beta", up.norm_beta, false});
    decoder_.final_ups.push_back(std::move(up));
  }
  decoder_.head_weight = init_linear_weight(c, config_.out_classes, rng);
  decoder_.head_bias = init_zeros({config_.out_classes});
  params_.push_back({"head.weight", decoder_.head_weight, true});
  params_.push_back({"head.bias", decoder_.head_bias, false});
}

std::vector<EncoderOutput> Model::encode(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != config_.in_channels) {
    throw ShapeError("model expects [" + std::to_string(config_.in_channels) +
                     ", H, W] input, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  std::vector<EncoderOutput> out;
  for (std::size_t b = 0; b < config_.branches.size(); ++b) {
    const BranchConfig& br = config_.branches[b];
    Tensor padded = pad_image(image, padded_extent(h, br.patch_size), padded_extent(w, br.patch_size));
    Tensor tokens = swin::patch_embed(padded, br.patch_size, encoders_[b].embed_weight,
                                      encoders_[b].embed_bias);
    out.push_back(encoder_forward(tokens, br, encoders_[b]));
  }
  return out;
}

std::array<Tensor, kStages> Model::fuse(const std::vector<EncoderOutput>& encoded) const {
  std::array<Tensor, kStages> fused = encoded.front().stages;
  for (std::size_t b = 1; b < encoded.size(); ++b) {
    const FusionParams& fp = fusions_[b - 1];
    for (std::size_t s = 0; s < kStages; ++s) {
      Tensor aligned =
          upsample_align(encoded[b].stages[s], fused[s].dim(0), fused[s].dim(1), fp.align[s]);
      fused[s] = aff_fuse(fused[s], aligned, fp.aff[s]);
    }
  }
  return fused;
}

Tensor Model::forward(const Tensor& image) const {
  const auto fused = fuse(encode(image));
  return decoder_forward(fused[3], {fused[2], fused[1], fused[0]}, decoder_, config_,
                         image.dim(1), image.dim(2));
}

std::size_t param_count(const ModelConfig& config) {
  config.validate();
  const std::size_t mlp = config.mlp_ratio;
  const BranchConfig& anchor = config.branches.front();
  std::size_t total = 0;
  for (const BranchConfig& br : config.branches) {
    total += config.in_channels * br.patch_size * br.patch_size * br.embed_dim + br.embed_dim;
    for (std::size_t s = 0; s < kStages; ++s) {
      const std::size_t dim = br.embed_dim << s;
      total += br.depths[s] * block_param_count(dim, br.window, br.heads[s], mlp);
      if (s + 1 < kStages) total += 4 * dim * 2 * dim;
    }
  }
  for (std::size_t b = 1; b < config.branches.size(); ++b) {
    const BranchConfig& br = config.branches[b];
    for (std::size_t s = 0; s < kStages; ++s) {
      const std::size_t cs = br.embed_dim << s;
      const std::size_t ct = anchor.embed_dim << s;
      total += br.patch_size == 2 * anchor.patch_size ? cs * 4 * ct : cs * ct;
      const std::size_t hid = aff_hidden(ct, config.aff_ratio);
      total += 2 * (ct * hid + 2 * hid + hid * ct + 2 * ct);
    }
  }
  for (std::size_t level = 0; level + 1 < kStages; ++level) {
    const std::size_t dim = anchor.embed_dim << level;
    total += 2 * dim * 4 * dim + 2 * dim + 2 * dim * dim + dim;
    total += config.decoder_depth * block_param_count(dim, anchor.window, anchor.heads[level], mlp);
  }
  const std::size_t c = anchor.embed_dim;
  const auto ups = static_cast<std::size_t>(std::countr_zero(anchor.patch_size));
  total += ups * (c * 4 * c + 2 * c);
  total += c * config.out_classes + config.out_classes;
  return total;
}

}  // namespace dbswin::model
