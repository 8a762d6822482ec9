#include "ngmf/optim.h"

#include <algorithm>
#include <cmath>

#include "ngmf/error.h"

namespace ngmf {

double warmup_lr(const AdamWOptions& options, std::int64_t step) {
  if (options.warmup_steps <= 0) return options.peak_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(options.warmup_steps);
  return options.peak_lr * std::min(1.0, frac);
}

AdamW::AdamW(const ModelConfig& config, AdamWOptions options)
    : options_(options), m_(ModelParams::zeros(config)), v_(ModelParams::zeros(config)) {
  if (!(options_.peak_lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (options_.beta1 < 0.0 || options_.beta1 >= 1.0 || options_.beta2 < 0.0 || options_.beta2 >= 1.0) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
}

double AdamW::step(ModelParams& params, ModelParams& grads) {
  auto p = params.named();
  auto g = grads.named();
  auto m = m_.named();
  auto v = v_.named();
  for (const auto& entry : g) {
    if (!entry.value->all_finite()) {
      ++skipped_;
      return 0.0;
    }
  }
  ++step_;
  const double lr = warmup_lr(options_, step_);
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto& pw = p[k].value->data();
    const auto& gw = g[k].value->data();
    auto& mw = m[k].value->data();
    auto& vw = v[k].value->data();
    const double decay = p[k].decay ? options_.weight_decay : 0.0;
    for (std::size_t i = 0; i < pw.size(); ++i) {
      mw[i] = options_.beta1 * mw[i] + (1.0 - options_.beta1) * gw[i];
      vw[i] = options_.beta2 * vw[i] + (1.0 - options_.beta2) * gw[i] * gw[i];
      const double update = (mw[i] / c1) / (std::sqrt(vw[i] / c2) + options_.eps);
      pw[i] -= lr * (update + decay * pw[i]);
    }
  }
  return lr;
}

}  // namespace ngmf
