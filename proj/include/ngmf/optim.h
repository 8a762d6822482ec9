#pragma once

#include <cstdint>

#include "ngmf/model.h"

namespace ngmf {

struct AdamWOptions {
  double peak_lr = 1e-3;
  int warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Linear warmup to the peak, constant afterwards. `step` counts from 1.
double warmup_lr(const AdamWOptions& options, std::int64_t step);

class AdamW {
 public:
  AdamW(const ModelConfig& config, AdamWOptions options);

  // Applies one update and returns the learning rate used. Non-finite
  // gradients leave params and moments untouched, bump skipped() and return 0.
  double step(ModelParams& params, ModelParams& grads);

  std::int64_t steps() const { return step_; }
  std::int64_t skipped() const { return skipped_; }
  const AdamWOptions& options() const { return options_; }

  ModelParams& first_moment() { return m_; }
  ModelParams& second_moment() { return v_; }
  void set_steps(std::int64_t steps) { step_ = steps; }

 private:
  AdamWOptions options_;
  ModelParams m_;
  ModelParams v_;
  std::int64_t step_ = 0;
  std::int64_t skipped_ = 0;
};

}  // namespace ngmf
