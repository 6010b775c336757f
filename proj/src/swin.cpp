#include "dbswin/swin.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace dbswin {

Tensor init_linear_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  return Tensor::parameter({fan_in, fan_out}, std::move(w));
}

Tensor init_zeros(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor init_ones(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, 1.0));
}

std::size_t total_numel(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

namespace swin {

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

std::size_t wrap(std::int64_t v, std::size_t n) {
  const auto m = static_cast<std::int64_t>(n);
  return static_cast<std::size_t>(((v % m) + m) % m);
}

// Gather maps and mask for one block geometry, built once and shared.
struct BlockPlan {
  IndexMap to_windows;    // [nW * T] rows of the real grid (-1 for padding)
  IndexMap from_windows;  // [h * w] rows of the window tensor
  Tensor mask;            // [nW, 1, T, T] or undefined
};

// Region label of a padded-grid position seen in the shifted frame.
std::size_t region_label(std::size_t pos, std::size_t extent, std::size_t window,
                         std::size_t shift) {
  if (shift == 0) return 0;
  if (pos < extent - window) return 0;
  if (pos < extent - shift) return 1;
  return 2;
}

BlockPlan build_plan(const WindowConfig& cfg, bool shifted) {
  const std::size_t m = cfg.window;
  const std::size_t t = m * m;
  const std::size_t hp = cfg.padded_h();
  const std::size_t wp = cfg.padded_w();
  const std::size_t s = shifted ? cfg.shift : 0;
  const std::size_t nwc = wp / m;
  const std::size_t nw = cfg.num_windows();

  auto to = std::make_shared<std::vector<std::int64_t>>(nw * t, -1);
  std::vector<std::size_t> labels(nw * t);
  for (std::size_t wi = 0; wi < nw; ++wi) {
    const std::size_t wr = wi / nwc;
    const std::size_t wc = wi % nwc;
    for (std::size_t ti = 0; ti < t; ++ti) {
      const std::size_t pr = wr * m + ti / m;
      const std::size_t pc = wc * m + ti % m;
      const std::size_t r = (pr + s) % hp;
      const std::size_t c = (pc + s) % wp;
      const bool real = r < cfg.grid_h && c < cfg.grid_w;
      if (real) (*to)[wi * t + ti] = static_cast<std::int64_t>(r * cfg.grid_w + c);
      std::size_t label = region_label(pr, hp, m, s) * 3 + region_label(pc, wp, m, s);
      if (!real) label += 9;
      labels[wi * t + ti] = label;
    }
  }

  auto from = std::make_shared<std::vector<std::int64_t>>(cfg.grid_h * cfg.grid_w);
  for (std::size_t r = 0; r < cfg.grid_h; ++r) {
    for (std::size_t c = 0; c < cfg.grid_w; ++c) {
      const std::size_t pr = wrap(static_cast<std::int64_t>(r) - static_cast<std::int64_t>(s), hp);
      const std::size_t pc = wrap(static_cast<std::int64_t>(c) - static_cast<std::int64_t>(s), wp);
      const std::size_t wi = (pr / m) * nwc + pc / m;
      const std::size_t ti = (pr % m) * m + pc % m;
      (*from)[r * cfg.grid_w + c] = static_cast<std::int64_t>(wi * t + ti);
    }
  }

  BlockPlan plan{to, from, {}};
  if (s > 0 || cfg.padded()) {
    std::vector<double> mask(nw * t * t, 0.0);
    for (std::size_t wi = 0; wi < nw; ++wi) {
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < t; ++j) {
          if (labels[wi * t + i] != labels[wi * t + j]) mask[(wi * t + i) * t + j] = kMaskValue;
        }
      }
    }
    plan.mask = Tensor::from_data({nw, 1, t, t}, std::move(mask));
  }
  return plan;
}

const BlockPlan& plan_for(const WindowConfig& cfg, bool shifted) {
  using Key = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, bool>;
  static std::mutex mu;
  static std::map<Key, BlockPlan> cache;
  const Key key{cfg.grid_h, cfg.grid_w, cfg.window, cfg.shift, shifted};
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_plan(cfg, shifted)).first;
  return it->second;
}

void check_grid(const Tensor& x, const char* what) {
  if (x.rank() != 3) {
    throw ShapeError(std::string(what) + " expects [h, w, C], got " + shape_str(x.shape()));
  }
}

}  // namespace

WindowConfig WindowConfig::for_grid(std::size_t grid_h, std::size_t grid_w, std::size_t window) {
  WindowConfig cfg{window, window / 2, grid_h, grid_w};
  cfg.validate();
  return cfg;
}

std::size_t WindowConfig::padded_h() const { return round_up(grid_h, window); }
std::size_t WindowConfig::padded_w() const { return round_up(grid_w, window); }

void WindowConfig::validate() const {
  if (window < 1) throw ContractError("window size must be >= 1");
  if (shift >= window) throw ContractError("shift must be < window size");
  if (grid_h == 0 || grid_w == 0) throw ContractError("empty patch grid");
}

std::vector<std::int64_t> relative_position_index(std::size_t window) {
  const std::size_t t = window * window;
  const std::size_t span = 2 * window - 1;
  std::vector<std::int64_t> index(t * t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      const std::size_t dr = i / window + window - 1 - j / window;
      const std::size_t dc = i % window + window - 1 - j % window;
      index[i * t + j] = static_cast<std::int64_t>(dr * span + dc);
    }
  }
  return index;
}

AttentionParams init_attention(std::size_t dim, std::size_t num_heads, std::size_t window,
                               Rng& rng) {
  if (num_heads == 0 || dim % num_heads != 0) {
    throw ShapeError("channel dim " + std::to_string(dim) + " not divisible by " +
                     std::to_string(num_heads) + " heads");
  }
  AttentionParams p;
  p.num_heads = num_heads;
  p.window = window;
  p.qkv_weight = init_linear_weight(dim, 3 * dim, rng);
  p.qkv_bias = init_zeros({3 * dim});
  p.proj_weight = init_linear_weight(dim, dim, rng);
  p.proj_bias = init_zeros({dim});
  const std::size_t span = 2 * window - 1;
  std::vector<double> table(span * span * num_heads);
  for (double& v : table) v = rng.truncated_normal(0.02);
  p.bias_table = Tensor::parameter({span * span, num_heads}, std::move(table));
  p.bias_index = std::make_shared<const std::vector<std::int64_t>>(relative_position_index(window));
  return p;
}

SwinBlockParams init_block(std::size_t dim, std::size_t num_heads, std::size_t window,
                           std::size_t mlp_ratio, Rng& rng) {
  SwinBlockParams p;
  p.ln1_gamma = init_ones({dim});
  p.ln1_beta = init_zeros({dim});
  p.attn = init_attention(dim, num_heads, window, rng);
  p.ln2_gamma = init_ones({dim});
  p.ln2_beta = init_zeros({dim});
  p.fc1_weight = init_linear_weight(dim, mlp_ratio * dim, rng);
  p.fc1_bias = init_zeros({mlp_ratio * dim});
  p.fc2_weight = init_linear_weight(mlp_ratio * dim, dim, rng);
  p.fc2_bias = init_zeros({dim});
  return p;
}

void collect_params(const SwinBlockParams& p, const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".ln1.gamma", p.ln1_gamma, false});
  out.push_back({prefix + ".ln1.beta", p.ln1_beta, false});
  out.push_back({prefix + ".attn.qkv.weight", p.attn.qkv_weight, true});
  out.push_back({prefix + ".attn.qkv.bias", p.attn.qkv_bias, false});
  out.push_back({prefix + ".attn.proj.weight", p.attn.proj_weight, true});
  out.push_back({prefix + ".attn.proj.bias", p.attn.proj_bias, false});
  out.push_back({prefix + ".attn.bias_table", p.attn.bias_table, false});
  out.push_back({prefix + ".ln2.gamma", p.ln2_gamma, false});
  out.push_back({prefix + ".ln2.beta", p.ln2_beta, false});
  out.push_back({prefix + ".mlp.fc1.weight", p.fc1_weight, true});
  out.push_back({prefix + ".mlp.fc1.bias", p.fc1_bias, false});
  out.push_back({prefix + ".mlp.fc2.weight", p.fc2_weight, true});
  out.push_back({prefix + ".mlp.fc2.bias", p.fc2_bias, false});
}

Tensor patch_embed(const Tensor& image, std::size_t patch, const Tensor& weight,
                   const Tensor& bias) {
  if (image.rank() != 3) {
    throw ShapeError("patch_embed expects [Cin, H, W], got " + shape_str(image.shape()));
  }
  const std::size_t cin = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patch_embed: image " + shape_str(image.shape()) +
                     " not divisible by patch size " + std::to_string(patch));
  }
  const std::size_t gh = h / patch;
  const std::size_t gw = w / patch;
  const std::size_t flat = cin * patch * patch;
  auto index = std::make_shared<std::vector<std::int64_t>>(gh * gw * flat);
  std::size_t e = 0;
  for (std::size_t pr = 0; pr < gh; ++pr) {
    for (std::size_t pc = 0; pc < gw; ++pc) {
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t dy = 0; dy < patch; ++dy) {
          for (std::size_t dx = 0; dx < patch; ++dx) {
            (*index)[e++] =
                static_cast<std::int64_t>((c * h + pr * patch + dy) * w + pc * patch + dx);
          }
        }
      }
    }
  }
  Tensor patches = gather(image, {gh, gw, flat}, std::move(index));
  return linear(patches, weight, bias);
}

Tensor window_partition(const Tensor& x, std::size_t window) {
  check_grid(x, "window_partition");
  const std::size_t h = x.dim(0);
  const std::size_t w = x.dim(1);
  const std::size_t c = x.dim(2);
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw ShapeError("window_partition: grid " + shape_str(x.shape()) +
                     " not divisible by window " + std::to_string(window));
  }
  const std::size_t nwc = w / window;
  const std::size_t nw = (h / window) * nwc;
  const std::size_t t = window * window;
  auto index = std::make_shared<std::vector<std::int64_t>>(nw * t);
  for (std::size_t wi = 0; wi < nw; ++wi) {
    for (std::size_t ti = 0; ti < t; ++ti) {
      const std::size_t r = (wi / nwc) * window + ti / window;
      const std::size_t col = (wi % nwc) * window + ti % window;
      (*index)[wi * t + ti] = static_cast<std::int64_t>(r * w + col);
    }
  }
  return gather_rows(x, std::move(index), {nw, t, c});
}

Tensor window_reverse(const Tensor& windows, std::size_t grid_h, std::size_t grid_w) {
  if (windows.rank() != 3) {
    throw ShapeError("window_reverse expects [nW, T, C], got " + shape_str(windows.shape()));
  }
  const std::size_t t = windows.dim(1);
  const auto window = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(t))));
  if (window * window != t || grid_h % window != 0 || grid_w % window != 0 ||
      (grid_h / window) * (grid_w / window) != windows.dim(0)) {
    throw ShapeError("window_reverse: " + shape_str(windows.shape()) + " does not tile a " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  const std::size_t nwc = grid_w / window;
  auto index = std::make_shared<std::vector<std::int64_t>>(grid_h * grid_w);
  for (std::size_t r = 0; r < grid_h; ++r) {
    for (std::size_t c = 0; c < grid_w; ++c) {
      const std::size_t wi = (r / window) * nwc + c / window;
      const std::size_t ti = (r % window) * window + c % window;
      (*index)[r * grid_w + c] = static_cast<std::int64_t>(wi * t + ti);
    }
  }
  return gather_rows(windows, std::move(index), {grid_h, grid_w, windows.dim(2)});
}

Tensor cyclic_shift(const Tensor& x, std::int64_t dy, std::int64_t dx) {
  check_grid(x, "cyclic_shift");
  const std::size_t h = x.dim(0);
  const std::size_t w = x.dim(1);
  auto index = std::make_shared<std::vector<std::int64_t>>(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t sr = wrap(static_cast<std::int64_t>(r) + dy, h);
      const std::size_t sc = wrap(static_cast<std::int64_t>(c) + dx, w);
      (*index)[r * w + c] = static_cast<std::int64_t>(sr * w + sc);
    }
  }
  return gather_rows(x, std::move(index), x.shape());
}

Tensor shift_attention_mask(std::size_t grid_h, std::size_t grid_w, std::size_t window,
                            std::size_t shift) {
  if (shift == 0 || shift >= window) {
    throw ContractError("shift_attention_mask needs 0 < shift < window (use W-MSA for shift 0)");
  }
  if (grid_h % window != 0 || grid_w % window != 0) {
    throw ShapeError("shift_attention_mask: grid not divisible by window");
  }
  const BlockPlan plan = build_plan(WindowConfig{window, shift, grid_h, grid_w}, true);
  const std::size_t t = window * window;
  return reshape(plan.mask, {plan.mask.dim(0), t, t});
}

Tensor window_attention(const Tensor& windows, const AttentionParams& p, const Tensor& mask) {
  if (windows.rank() != 3) {
    throw ShapeError("window_attention expects [nW, T, C], got " + shape_str(windows.shape()));
  }
  const std::size_t nw = windows.dim(0);
  const std::size_t t = windows.dim(1);
  const std::size_t c = windows.dim(2);
  const std::size_t heads = p.num_heads;
  if (heads == 0 || c % heads != 0 || p.dim() != c) {
    throw ShapeError("window_attention: channels " + std::to_string(c) + " vs " +
                     std::to_string(heads) + " heads and projection " +
                     shape_str(p.proj_weight.shape()));
  }
  if (t != p.window * p.window) {
    throw ShapeError("window_attention: " + std::to_string(t) + " tokens per window, expected " +
                     std::to_string(p.window * p.window));
  }
  const std::size_t d = c / heads;

  Tensor qkv = linear(windows, p.qkv_weight, p.qkv_bias);                       // [nW, T, 3C]
  qkv = permute(reshape(qkv, {nw, t, 3, heads, d}), {2, 0, 3, 1, 4});           // [3, nW, H, T, d]
  Tensor q = scale(reshape(slice(qkv, 0, 0, 1), {nw, heads, t, d}),
                   1.0 / std::sqrt(static_cast<double>(d)));
  Tensor k = reshape(slice(qkv, 0, 1, 1), {nw, heads, t, d});
  Tensor v = reshape(slice(qkv, 0, 2, 1), {nw, heads, t, d});

  Tensor logits = matmul(q, permute(k, {0, 1, 3, 2}));  // [nW, H, T, T]
  Tensor bias = permute(gather_rows(p.bias_table, p.bias_index, {t, t, heads}), {2, 0, 1});
  logits = add(logits, bias);
  if (mask.defined()) {
    if (mask.numel() != nw * t * t) {
      throw ShapeError("window_attention: mask " + shape_str(mask.shape()) + " for " +
                       std::to_string(nw) + " windows of " + std::to_string(t));
    }
    logits = add(logits, mask.rank() == 4 ? mask : reshape(mask, {nw, 1, t, t}));
  }
  Tensor attn = softmax_lastdim(logits);
  Tensor out = matmul(attn, v);                                   // [nW, H, T, d]
  out = reshape(permute(out, {0, 2, 1, 3}), {nw, t, c});
  return linear(out, p.proj_weight, p.proj_bias);
}

Tensor swin_block(const Tensor& x, const SwinBlockParams& p, const WindowConfig& cfg,
                  bool shifted) {
  check_grid(x, "swin_block");
  if (x.dim(0) != cfg.grid_h || x.dim(1) != cfg.grid_w) {
    throw ShapeError("swin_block: input " + shape_str(x.shape()) + " vs window config grid " +
                     std::to_string(cfg.grid_h) + "x" + std::to_string(cfg.grid_w));
  }
  cfg.validate();
  const std::size_t c = x.dim(2);
  const std::size_t t = cfg.window * cfg.window;
  const BlockPlan& plan = plan_for(cfg, shifted && cfg.shift > 0);

  Tensor y = layer_norm(x, p.ln1_gamma, p.ln1_beta);
  // Pad, shift and partition in one gather; the inverse gather crops again.
  y = gather_rows(y, plan.to_windows, {cfg.num_windows(), t, c});
  y = window_attention(y, p.attn, plan.mask);
  y = gather_rows(y, plan.from_windows, x.shape());
  Tensor z = add(x, y);

  Tensor m = layer_norm(z, p.ln2_gamma, p.ln2_beta);
  m = linear(gelu(linear(m, p.fc1_weight, p.fc1_bias)), p.fc2_weight, p.fc2_bias);
  return add(z, m);
}

Tensor swin_block_pair(const Tensor& x, const SwinBlockParams& regular,
                       const SwinBlockParams& shifted, const WindowConfig& cfg) {
  return swin_block(swin_block(x, regular, cfg, false), shifted, cfg, true);
}

Tensor patch_merge(const Tensor& x, const Tensor& weight) {
  check_grid(x, "patch_merge");
  const std::size_t h = x.dim(0);
  const std::size_t w = x.dim(1);
  const std::size_t c = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("patch_merge needs even grid dims, got " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2;
  const std::size_t ow = w / 2;
  auto index = std::make_shared<std::vector<std::int64_t>>(oh * ow * 4);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t col = 0; col < ow; ++col) {
      for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t sr = 2 * r + q / 2;
        const std::size_t sc = 2 * col + q % 2;
        (*index)[(r * ow + col) * 4 + q] = static_cast<std::int64_t>(sr * w + sc);
      }
    }
  }
  Tensor merged = gather_rows(x, std::move(index), {oh, ow, 4 * c});
  return linear(merged, weight);
}

Tensor patch_expand(const Tensor& x, const Tensor& weight) {
  check_grid(x, "patch_expand");
  const std::size_t h = x.dim(0);
  const std::size_t w = x.dim(1);
  if (weight.rank() != 2 || weight.dim(1) % 4 != 0) {
    throw ShapeError("patch_expand weight must be [C, 4C'], got " + shape_str(weight.shape()));
  }
  const std::size_t c_out = weight.dim(1) / 4;
  Tensor y = linear(x, weight);                 // [h, w, 4C']
  y = reshape(y, {h * w * 4, c_out});
  auto index = std::make_shared<std::vector<std::int64_t>>(4 * h * w);
  const std::size_t ow = 2 * w;
  for (std::size_t r = 0; r < 2 * h; ++r) {
    for (std::size_t col = 0; col < ow; ++col) {
      const std::size_t q = (r % 2) * 2 + col % 2;
      (*index)[r * ow + col] = static_cast<std::int64_t>(((r / 2) * w + col / 2) * 4 + q);
    }
  }
  return gather_rows(y, std::move(index), {2 * h, 2 * w, c_out});
}

}  // namespace swin
}  // namespace dbswin
