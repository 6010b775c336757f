#pragma once

#include <string>
#include <vector>

#include "dbswin/rng.hpp"
#include "dbswin/tensor.hpp"

namespace dbswin {

// A trainable tensor with a stable name (checkpoint key). `decay` is false for
// layer-norm affines, biases and bias tables, which skip weight decay.
struct NamedParam {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

using ParamList = std::vector<NamedParam>;

// Weight [fan_in, fan_out] drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor init_linear_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor init_zeros(Shape shape);
Tensor init_ones(Shape shape);

std::size_t total_numel(const ParamList& params);

}  // namespace dbswin
