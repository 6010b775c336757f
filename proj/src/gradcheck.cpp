#include "dbswin/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dbswin/data.hpp"
#include "dbswin/training.hpp"

namespace dbswin::gradcheck {

double relative_error(double analytic, double numeric, double floor) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / den;
}

Result check_model(const model::ModelConfig& config, const Options& options) {
  model::Model net(config);
  data::SyntheticRoadConfig scfg;
  scfg.size = options.image_size;
  scfg.channels = config.in_channels;
  scfg.max_width = std::min(scfg.max_width, static_cast<double>(options.image_size) / 4.0);
  scfg.min_width = std::min(scfg.min_width, scfg.max_width);
  scfg.seed = options.seed;
  const data::Sample sample = data::generate_synthetic(scfg);
  const Tensor image = data::image_to_tensor(sample.image);
  const Tensor mask = data::mask_to_tensor(sample.mask);

  auto loss_value = [&] { return training::bce_with_logits(net.forward(image), mask).item(); };

  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(training::bce_with_logits(net.forward(image), mask));
  }

  Rng rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  ParamList& params = net.params();
  Result result;
  for (std::size_t k = 0; k < options.num_params; ++k) {
    NamedParam& p = params[rng.below(params.size())];
    const std::size_t idx = rng.below(p.tensor.numel());
    Entry e;
    e.param = p.name;
    e.index = idx;
    e.analytic = p.tensor.has_grad() ? p.tensor.grad()[idx] : 0.0;
    double& w = p.tensor.mutable_data()[idx];
    const double orig = w;
    w = orig + options.step;
    const double up = loss_value();
    w = orig - options.step;
    const double down = loss_value();
    w = orig;
    e.numeric = (up - down) / (2.0 * options.step);
    e.rel_err = relative_error(e.analytic, e.numeric, options.floor);
    result.max_rel_err = std::isfinite(e.rel_err) ? std::max(result.max_rel_err, e.rel_err)
                                                  : std::numeric_limits<double>::infinity();
    result.entries.push_back(std::move(e));
  }
  return result;
}

}  // namespace dbswin::gradcheck
