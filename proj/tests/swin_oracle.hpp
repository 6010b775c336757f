#pragma once

// Direct per-token evaluation of a Swin block with a zeroed MLP, written from
// the geometric definition: a query attends to the real tokens that share its
// (possibly shifted) window and are contiguous with it in the unshifted image.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dbswin/swin.hpp"

namespace dbswin::testing {

// x [h, w, C] -> x + proj(attention(LN(x))) evaluated token by token.
inline std::vector<double> brute_force_block(const Tensor& x, const swin::SwinBlockParams& p,
                                             std::size_t window, bool shifted) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t heads = p.attn.num_heads, d = c / heads;
  const std::size_t hp = (h + window - 1) / window * window;
  const std::size_t wp = (w + window - 1) / window * window;
  const std::size_t s = shifted ? window / 2 : 0;
  const auto xd = x.data();

  std::vector<double> ln(h * w * c);
  for (std::size_t t = 0; t < h * w; ++t) {
    double mean = 0, var = 0;
    for (std::size_t k = 0; k < c; ++k) mean += xd[t * c + k];
    mean /= static_cast<double>(c);
    for (std::size_t k = 0; k < c; ++k) var += (xd[t * c + k] - mean) * (xd[t * c + k] - mean);
    var /= static_cast<double>(c);
    for (std::size_t k = 0; k < c; ++k) {
      ln[t * c + k] = (xd[t * c + k] - mean) / std::sqrt(var + 1e-5) * p.ln1_gamma.at(k) +
                      p.ln1_beta.at(k);
    }
  }
  // qkv[t][j] for j in [0, 3C)
  std::vector<double> qkv(h * w * 3 * c);
  for (std::size_t t = 0; t < h * w; ++t) {
    for (std::size_t j = 0; j < 3 * c; ++j) {
      double acc = p.attn.qkv_bias.at(j);
      for (std::size_t k = 0; k < c; ++k) acc += ln[t * c + k] * p.attn.qkv_weight.at(k * 3 * c + j);
      qkv[t * 3 * c + j] = acc;
    }
  }
  auto window_of = [&](std::size_t r, std::size_t col) {
    const std::size_t rs = (r + hp - s) % hp, cs = (col + wp - s) % wp;
    return std::array<std::size_t, 4>{rs / window, cs / window, r < s ? 1u : 0u,
                                      col < s ? 1u : 0u};
  };
  const std::size_t span = 2 * window - 1;

  std::vector<double> out(xd.begin(), xd.end());
  std::vector<double> head_out(c);
  for (std::size_t qr = 0; qr < h; ++qr) {
    for (std::size_t qc = 0; qc < w; ++qc) {
      const std::size_t qt = qr * w + qc;
      const auto qw = window_of(qr, qc);
      std::vector<std::size_t> keys;
      for (std::size_t kr = 0; kr < h; ++kr) {
        for (std::size_t kc = 0; kc < w; ++kc) {
          if (window_of(kr, kc) == qw) keys.push_back(kr * w + kc);
        }
      }
      for (std::size_t hd = 0; hd < heads; ++hd) {
        std::vector<double> logit(keys.size());
        double mx = -INFINITY;
        for (std::size_t i = 0; i < keys.size(); ++i) {
          const std::size_t kt = keys[i];
          double dot = 0;
          for (std::size_t e = 0; e < d; ++e) {
            dot += qkv[qt * 3 * c + hd * d + e] * qkv[kt * 3 * c + c + hd * d + e];
          }
          const auto dr = static_cast<std::ptrdiff_t>(qr) - static_cast<std::ptrdiff_t>(kt / w);
          const auto dc = static_cast<std::ptrdiff_t>(qc) - static_cast<std::ptrdiff_t>(kt % w);
          const auto row = static_cast<std::size_t>((dr + static_cast<std::ptrdiff_t>(window) - 1) *
                                                        static_cast<std::ptrdiff_t>(span) +
                                                    dc + static_cast<std::ptrdiff_t>(window) - 1);
          logit[i] = dot / std::sqrt(static_cast<double>(d)) + p.attn.bias_table.at(row * heads + hd);
          mx = std::max(mx, logit[i]);
        }
        double z = 0;
        for (double& l : logit) z += (l = std::exp(l - mx));
        for (std::size_t e = 0; e < d; ++e) {
          double acc = 0;
          for (std::size_t i = 0; i < keys.size(); ++i) {
            acc += logit[i] / z * qkv[keys[i] * 3 * c + 2 * c + hd * d + e];
          }
          head_out[hd * d + e] = acc;
        }
      }
      for (std::size_t j = 0; j < c; ++j) {
        double acc = p.attn.proj_bias.at(j);
        for (std::size_t k = 0; k < c; ++k) acc += head_out[k] * p.attn.proj_weight.at(k * c + j);
        out[qt * c + j] += acc;
      }
    }
  }
  return out;
}

// Block with every parameter randomized except a zero MLP output.
inline swin::SwinBlockParams random_attention_block(std::size_t c, std::size_t heads,
                                                    std::size_t window, Rng& rng) {
  swin::SwinBlockParams p = swin::init_block(c, heads, window, 2, rng);
  for (Tensor* t : {&p.ln1_gamma, &p.ln1_beta, &p.attn.qkv_weight, &p.attn.qkv_bias,
                    &p.attn.proj_weight, &p.attn.proj_bias, &p.attn.bias_table}) {
    for (double& v : t->mutable_data()) v = rng.uniform(-1.0, 1.0);
  }
  for (double& v : p.fc2_weight.mutable_data()) v = 0.0;
  for (double& v : p.fc2_bias.mutable_data()) v = 0.0;
  return p;
}

}  // namespace dbswin::testing
