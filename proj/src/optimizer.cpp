#include <cmath>

#include "incrprobe/error.hpp"
#include "incrprobe/parameter.hpp"

namespace incrprobe {

void adam_amsgrad_step(std::span<Parameter* const> params, const AdamConfig& cfg) {
  for (const Parameter* p : params) {
    if (!p->grad.all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + p->name + "'");
    }
  }
  for (Parameter* p : params) {
    p->step_count += 1;
    const double t = static_cast<double>(p->step_count);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->m[i] = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g;
      p->v[i] = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g * g;
      p->vhat_max[i] = std::max(p->vhat_max[i], p->v[i]);
      const double step = (p->m[i] / bc1) / (std::sqrt(p->vhat_max[i] / bc2) + cfg.eps);
      p->value[i] -= cfg.lr * step;
    }
    p->zero_grad();
  }
}

}  // namespace incrprobe
