#include <algorithm>
#include <cmath>
#include <numeric>

#include "dbswin/kernels.hpp"
#include "dbswin/tensor.hpp"

namespace dbswin {

namespace {

using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;

bool serial_backend() { return kernels::active_backend() == kernels::Backend::kSerial; }

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  if (serial_backend()) {
    kernels::serial::gemm_nn_acc(m, n, k, a, b, c);
  } else {
    kernels::parallel::gemm_nn_acc(m, n, k, a, b, c);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  if (serial_backend()) {
    kernels::serial::gemm_nt_acc(m, n, k, a, b, c);
  } else {
    kernels::parallel::gemm_nt_acc(m, n, k, a, b, c);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  if (serial_backend()) {
    kernels::serial::gemm_tn_acc(m, n, k, a, b, c);
  } else {
    kernels::parallel::gemm_tn_acc(m, n, k, a, b, c);
  }
}

// Row-major strides of `shape`.
std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Numpy broadcasting of two shapes. Returns the output shape and, for each
// output element, the flat source index in each operand.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;
};

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Flat index into an operand of shape `src` for every element of `out`.
std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
  const std::size_t r = out.size();
  const std::size_t off = r - src.size();
  const auto src_strides = strides_of(src);
  std::vector<std::size_t> eff(r, 0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    eff[i + off] = src[i] == 1 ? 0 : src_strides[i];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t cur = 0;
  for (std::size_t e = 0; e < n; ++e) {
    idx[e] = cur;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      cur += eff[d];
      if (counter[d] < out[d]) break;
      cur -= eff[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

Broadcast make_broadcast(const Shape& a, const Shape& b) {
  Broadcast bc;
  bc.out = broadcast_shape(a, b);
  bc.ia = broadcast_index(a, bc.out);
  bc.ib = broadcast_index(b, bc.out);
  return bc;
}

enum class BinaryKind { kAdd, kSub, kMul };

const char* binary_name(BinaryKind kind) {
  switch (kind) {
    case BinaryKind::kAdd:
      return "add";
    case BinaryKind::kSub:
      return "sub";
    case BinaryKind::kMul:
      return "mul";
  }
  return "binary";
}

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  auto fwd = [kind](double x, double y) {
    switch (kind) {
      case BinaryKind::kAdd:
        return x + y;
      case BinaryKind::kSub:
        return x - y;
      case BinaryKind::kMul:
        return x * y;
    }
    return 0.0;
  };

  if (a.shape() == b.shape()) {
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i], bd[i]);
    Tensor res = make_result(a.shape(), std::move(out), {a, b});
    record_op(binary_name(kind), {a, b}, res, [ai = a.impl(), bi = b.impl(), ri = res.impl(), kind] {
      const auto& g = ri->grad;
      if (ai->requires_grad) {
        auto ga = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += kind == BinaryKind::kMul ? g[i] * bi->data[i] : g[i];
        }
      }
      if (bi->requires_grad) {
        auto gb = bi->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (kind) {
            case BinaryKind::kAdd:
              gb[i] += g[i];
              break;
            case BinaryKind::kSub:
              gb[i] -= g[i];
              break;
            case BinaryKind::kMul:
              gb[i] += g[i] * ai->data[i];
              break;
          }
        }
      }
    });
    return res;
  }

  auto bc = std::make_shared<Broadcast>(make_broadcast(a.shape(), b.shape()));
  const std::size_t n = bc->ia.size();
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[bc->ia[i]], bd[bc->ib[i]]);
  Tensor res = make_result(bc->out, std::move(out), {a, b});
  record_op(binary_name(kind), {a, b}, res, [ai = a.impl(), bi = b.impl(), ri = res.impl(), bc, kind] {
    const auto& g = ri->grad;
    if (ai->requires_grad) {
      auto ga = ai->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[bc->ia[i]] += kind == BinaryKind::kMul ? g[i] * bi->data[bc->ib[i]] : g[i];
      }
    }
    if (bi->requires_grad) {
      auto gb = bi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        switch (kind) {
          case BinaryKind::kAdd:
            gb[bc->ib[i]] += g[i];
            break;
          case BinaryKind::kSub:
            gb[bc->ib[i]] -= g[i];
            break;
          case BinaryKind::kMul:
            gb[bc->ib[i]] += g[i] * ai->data[bc->ia[i]];
            break;
        }
      }
    }
  });
  return res;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t n = b.dim(-1);
  if (b.dim(-2) != k) {
    throw ShapeError("matmul inner dims differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch_out;
  try {
    batch_out = broadcast_shape(batch_a, batch_b);
  } catch (const ShapeError&) {
    throw ShapeError("matmul batch dims differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  // Batch offsets (in matrices) of each operand for every output batch entry.
  auto ba = std::make_shared<std::vector<std::size_t>>(broadcast_index(batch_a, batch_out));
  auto bb = std::make_shared<std::vector<std::size_t>>(broadcast_index(batch_b, batch_out));
  const std::size_t nb = ba->size();

  Shape out_shape = batch_out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(nb * m * n, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  if (batch_b.empty() && batch_a == batch_out) {
    gemm_nn(nb * m, n, k, ad, bd, out);
  } else {
    for (std::size_t i = 0; i < nb; ++i) {
      gemm_nn(m, n, k, ad.subspan((*ba)[i] * m * k, m * k), bd.subspan((*bb)[i] * k * n, k * n),
              std::span<double>(out).subspan(i * m * n, m * n));
    }
  }
  Tensor res = make_result(std::move(out_shape), std::move(out), {a, b});
  record_op("matmul", {a, b}, res, [ai = a.impl(), bi = b.impl(), ri = res.impl(), ba, bb, m, n, k] {
    const std::span<const double> g = ri->grad;
    const std::size_t count = ba->size();
    if (ai->requires_grad) {
      auto ga = ai->ensure_grad();
      for (std::size_t i = 0; i < count; ++i) {
        gemm_nt(m, k, n, g.subspan(i * m * n, m * n),
                std::span<const double>(bi->data).subspan((*bb)[i] * k * n, k * n),
                ga.subspan((*ba)[i] * m * k, m * k));
      }
    }
    if (bi->requires_grad) {
      auto gb = bi->ensure_grad();
      for (std::size_t i = 0; i < count; ++i) {
        gemm_tn(k, n, m, std::span<const double>(ai->data).subspan((*ba)[i] * m * k, m * k),
                g.subspan(i * m * n, m * n), gb.subspan((*bb)[i] * k * n, k * n));
      }
    }
  });
  return res;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.rank() != 2 || x.dim(-1) != w.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  const std::size_t in = w.dim(0);
  const std::size_t outd = w.dim(1);
  if (bias.defined() && (bias.numel() != outd)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  const std::size_t rows = x.numel() / in;
  std::vector<double> out(rows * outd, 0.0);
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(bd.begin(), bd.end(), out.begin() + static_cast<std::ptrdiff_t>(r * outd));
    }
  }
  gemm_nn(rows, outd, in, x.data(), w.data(), out);
  Shape shape = x.shape();
  shape.back() = outd;
  Tensor res = make_result(std::move(shape), std::move(out), {x, w, bias});
  record_op("linear", {x, w, bias}, res,
            [xi = x.impl(), wi = w.impl(), bi = bias.defined() ? bias.impl() : nullptr,
             ri = res.impl(), rows, in, outd] {
              const std::span<const double> g = ri->grad;
              if (xi->requires_grad) gemm_nt(rows, in, outd, g, wi->data, xi->ensure_grad());
              if (wi->requires_grad) gemm_tn(in, outd, rows, xi->data, g, wi->ensure_grad());
              if (bi && bi->requires_grad) {
                auto gb = bi->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                  for (std::size_t j = 0; j < outd; ++j) gb[j] += g[r * outd + j];
                }
              }
            });
  return res;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul); }

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  Tensor res = make_result(x.shape(), std::move(out), {x});
  record_op("scale", {x}, res, [xi = x.impl(), ri = res.impl(), factor] {
    auto gx = xi->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * ri->grad[i];
  });
  return res;
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t cols = x.dim(-1);
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  if (serial_backend()) {
    kernels::serial::softmax_rows(rows, cols, x.data(), out);
  } else {
    kernels::parallel::softmax_rows(rows, cols, x.data(), out);
  }
  Tensor res = make_result(x.shape(), std::move(out), {x});
  record_op("softmax", {x}, res, [xi = x.impl(), ri = res.impl(), rows, cols] {
    if (serial_backend()) {
      kernels::serial::softmax_rows_backward_acc(rows, cols, ri->data, ri->grad, xi->ensure_grad());
    } else {
      kernels::parallel::softmax_rows_backward_acc(rows, cols, ri->data, ri->grad,
                                                   xi->ensure_grad());
    }
  });
  return res;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " vs gamma " +
                     shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  if (serial_backend()) {
    kernels::serial::layer_norm_rows(rows, d, x.data(), gamma.data(), beta.data(), eps, out, *xhat,
                                     *rstd);
  } else {
    kernels::parallel::layer_norm_rows(rows, d, x.data(), gamma.data(), beta.data(), eps, out,
                                       *xhat, *rstd);
  }
  Tensor res = make_result(x.shape(), std::move(out), {x, gamma, beta});
  record_op("layer_norm", {x, gamma, beta}, res,
            [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), ri = res.impl(), xhat, rstd,
             rows, d] {
              // dx is always computed; gamma/beta buffers are discarded when untracked.
              std::vector<double> scratch_x;
              std::vector<double> scratch_g;
              std::vector<double> scratch_b;
              std::span<double> dx;
              std::span<double> dg;
              std::span<double> db;
              if (xi->requires_grad) {
                dx = xi->ensure_grad();
              } else {
                scratch_x.assign(xi->data.size(), 0.0);
                dx = scratch_x;
              }
              if (gi->requires_grad) {
                dg = gi->ensure_grad();
              } else {
                scratch_g.assign(d, 0.0);
                dg = scratch_g;
              }
              if (bi->requires_grad) {
                db = bi->ensure_grad();
              } else {
                scratch_b.assign(d, 0.0);
                db = scratch_b;
              }
              if (serial_backend()) {
                kernels::serial::layer_norm_rows_backward_acc(rows, d, *xhat, *rstd, gi->data,
                                                              ri->grad, dx, dg, db);
              } else {
                kernels::parallel::layer_norm_rows_backward_acc(rows, d, *xhat, *rstd, gi->data,
                                                                ri->grad, dx, dg, db);
              }
            });
  return res;
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  if (serial_backend()) {
    kernels::serial::gelu(x.data(), out);
  } else {
    kernels::parallel::gelu(x.data(), out);
  }
  Tensor res = make_result(x.shape(), std::move(out), {x});
  record_op("gelu", {x}, res, [xi = x.impl(), ri = res.impl()] {
    if (serial_backend()) {
      kernels::serial::gelu_backward_acc(xi->data, ri->grad, xi->ensure_grad());
    } else {
      kernels::parallel::gelu_backward_acc(xi->data, ri->grad, xi->ensure_grad());
    }
  });
  return res;
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xd[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  Tensor res = make_result(x.shape(), std::move(out), {x});
  record_op("sigmoid", {x}, res, [xi = x.impl(), ri = res.impl()] {
    auto gx = xi->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double y = ri->data[i];
      gx[i] += ri->grad[i] * y * (1.0 - y);
    }
  });
  return res;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor res = make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                           {x});
  record_op("reshape", {x}, res, [xi = x.impl(), ri = res.impl()] {
    auto gx = xi->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ri->grad[i];
  });
  return res;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  if (order.size() != r) {
    throw ShapeError("permute order has " + std::to_string(order.size()) + " entries for " +
                     shape_str(x.shape()));
  }
  std::vector<bool> seen(r, false);
  for (std::size_t o : order) {
    if (o >= r || seen[o]) throw ShapeError("permute order is not a permutation");
    seen[o] = true;
  }
  const auto in_strides = strides_of(x.shape());
  Shape out_shape(r);
  std::vector<std::size_t> eff(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[order[i]];
    eff[i] = in_strides[order[i]];
  }
  const std::size_t n = x.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<std::size_t> counter(r, 0);
    std::size_t cur = 0;
    for (std::size_t e = 0; e < n; ++e) {
      (*src)[e] = cur;
      for (std::size_t d = r; d-- > 0;) {
        ++counter[d];
        cur += eff[d];
        if (counter[d] < out_shape[d]) break;
        cur -= eff[d] * counter[d];
        counter[d] = 0;
      }
    }
  }
  std::vector<double> out(n);
  const auto xd = x.data();
  for (std::size_t e = 0; e < n; ++e) out[e] = xd[(*src)[e]];
  Tensor res = make_result(std::move(out_shape), std::move(out), {x});
  record_op("permute", {x}, res, [xi = x.impl(), ri = res.impl(), src] {
    auto gx = xi->ensure_grad();
    for (std::size_t e = 0; e < src->size(); ++e) gx[(*src)[e]] += ri->grad[e];
  });
  return res;
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_lastdim of nothing");
  const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead) {
      throw ShapeError("concat_lastdim: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    widths.push_back(p.dim(-1));
    total += p.dim(-1);
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto pd = parts[pi].data();
    const std::size_t w = widths[pi];
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  Tensor res = Tensor::from_data(std::move(shape), std::move(out));
  const bool track = active_tape() != nullptr &&
                     std::any_of(parts.begin(), parts.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
  if (track) {
    res.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    for (const Tensor& p : parts) inputs.push_back(p.impl());
    active_tape()->record("concat", inputs, res.impl(), [inputs, ri = res.impl(), widths, rows, total] {
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
        const std::size_t w = widths[pi];
        if (inputs[pi]->requires_grad) {
          auto g = inputs[pi]->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) g[r * w + j] += ri->grad[r * total + off + j];
          }
        }
        off += w;
      }
    });
  }
  return res;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.shape()[axis]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t dim = x.shape()[axis];
  std::vector<double> out(outer * length * inner);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((o * dim + start) * inner),
                length * inner, out.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  }
  Shape shape = x.shape();
  shape[axis] = length;
  Tensor res = make_result(std::move(shape), std::move(out), {x});
  record_op("slice", {x}, res, [xi = x.impl(), ri = res.impl(), outer, inner, dim, start, length] {
    auto gx = xi->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t e = 0; e < length * inner; ++e) {
        gx[(o * dim + start) * inner + e] += ri->grad[o * length * inner + e];
      }
    }
  });
  return res;
}

Tensor gather_rows(const Tensor& x, IndexMap index, Shape out_shape) {
  const std::size_t c = x.dim(-1);
  const std::size_t rows_in = x.numel() / c;
  if (shape_numel(out_shape) != index->size() * c) {
    throw ShapeError("gather_rows: " + std::to_string(index->size()) + " rows of width " +
                     std::to_string(c) + " into " + shape_str(out_shape));
  }
  std::vector<double> out(index->size() * c, 0.0);
  const auto xd = x.data();
  for (std::size_t r = 0; r < index->size(); ++r) {
    const std::int64_t src = (*index)[r];
    if (src < 0) continue;
    if (static_cast<std::size_t>(src) >= rows_in) {
      throw ShapeError("gather_rows: row " + std::to_string(src) + " out of range for " +
                       shape_str(x.shape()));
    }
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(src) * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  Tensor res = make_result(std::move(out_shape), std::move(out), {x});
  record_op("gather_rows", {x}, res, [xi = x.impl(), ri = res.impl(), index, c] {
    auto gx = xi->ensure_grad();
    for (std::size_t r = 0; r < index->size(); ++r) {
      const std::int64_t src = (*index)[r];
      if (src < 0) continue;
      double* dst = gx.data() + static_cast<std::size_t>(src) * c;
      const double* g = ri->grad.data() + r * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
    }
  });
  return res;
}

Tensor gather(const Tensor& x, Shape out_shape, IndexMap index) {
  if (shape_numel(out_shape) != index->size()) {
    throw ShapeError("gather: " + std::to_string(index->size()) + " indices into " +
                     shape_str(out_shape));
  }
  std::vector<double> out(index->size(), 0.0);
  const auto xd = x.data();
  for (std::size_t i = 0; i < index->size(); ++i) {
    const std::int64_t src = (*index)[i];
    if (src < 0) continue;
    if (static_cast<std::size_t>(src) >= xd.size()) {
      throw ShapeError("gather: index " + std::to_string(src) + " out of range for " +
                       shape_str(x.shape()));
    }
    out[i] = xd[static_cast<std::size_t>(src)];
  }
  Tensor res = make_result(std::move(out_shape), std::move(out), {x});
  record_op("gather", {x}, res, [xi = x.impl(), ri = res.impl(), index] {
    auto gx = xi->ensure_grad();
    for (std::size_t i = 0; i < index->size(); ++i) {
      const std::int64_t src = (*index)[i];
      if (src >= 0) gx[static_cast<std::size_t>(src)] += ri->grad[i];
    }
  });
  return res;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor res = make_result({1}, {s}, {x});
  record_op("sum", {x}, res, [xi = x.impl(), ri = res.impl()] {
    auto gx = xi->ensure_grad();
    const double g = ri->grad[0];
    for (double& v : gx) v += g;
  });
  return res;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_rows(const Tensor& x) {
  const std::size_t c = x.dim(-1);
  const std::size_t rows = x.numel() / c;
  std::vector<double> out(c, 0.0);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[j] += xd[r * c + j];
  }
  const double inv = 1.0 / static_cast<double>(rows);
  for (double& v : out) v *= inv;
  Tensor res = make_result({1, c}, std::move(out), {x});
  record_op("mean_rows", {x}, res, [xi = x.impl(), ri = res.impl(), rows, c, inv] {
    auto gx = xi->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += ri->grad[j] * inv;
    }
  });
  return res;
}

}  // namespace dbswin
