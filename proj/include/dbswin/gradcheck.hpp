#pragma once

// Central finite differences against the tape gradient of a whole model.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dbswin/model.hpp"

namespace dbswin::gradcheck {

struct Options {
  std::size_t num_params = 24;
  double step = 1e-5;
  std::uint64_t seed = 3;
  std::size_t image_size = 32;
  // Denominator floor of the relative error.
  double floor = 1e-6;
};

struct Entry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct Result {
  std::vector<Entry> entries;
  double max_rel_err = 0;
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Loss = bce(model(image), mask) on one synthetic scene; samples `num_params`
// (parameter, element) pairs and compares both gradients.
Result check_model(const model::ModelConfig& config, const Options& options = {});

}  // namespace dbswin::gradcheck
