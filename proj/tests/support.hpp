#pragma once

// Test oracles shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dbswin/rng.hpp"
#include "dbswin/tensor.hpp"

namespace dbswin::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = scale * rng.uniform(-1.0, 1.0);
  return Tensor::parameter(shape, std::move(v));
}

inline double rel_err(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

struct FdReport {
  double max_rel_err = 0;
  std::size_t checked = 0;
};

// Central differences of L = sum(f(inputs) * probe) against the tape gradient
// for every element of every input (or `max_per_input` sampled elements).
inline FdReport finite_difference_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    double h = 1e-5, double floor = 1e-4, std::size_t max_per_input = 0, std::uint64_t seed = 17) {
  Rng rng(seed);
  Tensor probe;
  {
    const Tensor out = f(inputs);
    std::vector<double> w(out.numel());
    for (double& x : w) x = rng.uniform(-1.0, 1.0);
    probe = Tensor::from_data(out.shape(), std::move(w));
  }
  auto objective = [&] {
    const Tensor out = f(inputs);
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out.data()[i] * probe.data()[i];
    return s;
  };
  for (auto& t : inputs) t.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(f(inputs), probe)));
  }
  FdReport rep;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<std::size_t> idx;
    if (max_per_input == 0 || max_per_input >= t.numel()) {
      for (std::size_t i = 0; i < t.numel(); ++i) idx.push_back(i);
    } else {
      for (std::size_t k = 0; k < max_per_input; ++k) idx.push_back(rng.below(t.numel()));
    }
    for (std::size_t i : idx) {
      const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
      double& x = t.mutable_data()[i];
      const double orig = x;
      x = orig + h;
      const double up = objective();
      x = orig - h;
      const double down = objective();
      x = orig;
      const double e = rel_err(analytic, (up - down) / (2.0 * h), floor);
      rep.max_rel_err = std::isfinite(e) ? std::max(rep.max_rel_err, e) : INFINITY;
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace dbswin::testing
