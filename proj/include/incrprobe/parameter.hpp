#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "incrprobe/matrix.hpp"

namespace incrprobe {

/// Trainable array plus its gradient and AMSGrad optimizer state.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix init)
      : name(std::move(name)),
        value(std::move(init)),
        grad(value.rows(), value.cols()),
        m(value.rows(), value.cols()),
        v(value.rows(), value.cols()),
        vhat_max(value.rows(), value.cols()) {}

  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;
  Matrix v;
  Matrix vhat_max;
  std::uint64_t step_count = 0;

  void zero_grad() { grad.set_zero(); }
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam step with the AMSGrad running maximum of the second moment.
/// Throws NumericError naming the offending parameter if any gradient is
/// non-finite; in that case no parameter is modified. Gradients are zeroed
/// after a successful step.
void adam_amsgrad_step(std::span<Parameter* const> params, const AdamConfig& cfg);

}  // namespace incrprobe
