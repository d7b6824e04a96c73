#include "umind/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace umind::nn {

void Adam::sync_shapes(const ParameterStore& params) {
  const auto n = static_cast<std::size_t>(params.size());
  m_.resize(n);
  v_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix& value = params[static_cast<int>(i)].value;
    for (Matrix* buf : {&m_[i], &v_[i]}) {
      if (buf->rows() == value.rows() && buf->cols() == value.cols()) continue;
      Matrix grown = Matrix::Zero(value.rows(), value.cols());
      const auto r = std::min(buf->rows(), value.rows());
      const auto c = std::min(buf->cols(), value.cols());
      grown.topLeftCorner(r, c) = buf->topLeftCorner(r, c);
      *buf = std::move(grown);
    }
  }
}

Real Adam::step(ParameterStore& params, Real lr) {
  sync_shapes(params);
  Real sq = 0.0;
  for (const auto& p : params) {
    if (p.grad.size() != 0) sq += p.grad.squaredNorm();
  }
  const Real norm = std::sqrt(sq);
  const Real clip = (config_.grad_clip > 0.0 && norm > config_.grad_clip)
                        ? config_.grad_clip / norm
                        : 1.0;
  ++steps_;
  const Real bc1 = 1.0 - std::pow(config_.beta1, static_cast<Real>(steps_));
  const Real bc2 = 1.0 - std::pow(config_.beta2, static_cast<Real>(steps_));
  for (int i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    Matrix& m = m_[static_cast<std::size_t>(i)];
    Matrix& v = v_[static_cast<std::size_t>(i)];
    if (p.grad.size() != 0) {
      m = config_.beta1 * m + (1.0 - config_.beta1) * clip * p.grad;
      v = config_.beta2 * v + (1.0 - config_.beta2) * (clip * p.grad).cwiseAbs2();
    } else {
      m *= config_.beta1;
      v *= config_.beta2;
    }
    if (lr == 0.0) continue;
    if (config_.weight_decay > 0.0) p.value *= (1.0 - lr * config_.weight_decay);
    p.value.array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.eps);
    round_to_float(p.value);
  }
  return norm;
}

Real cosine_schedule(long step, Real peak, long warmup, long total, Real floor_ratio) {
  if (warmup > 0 && step < warmup) {
    return peak * static_cast<Real>(step + 1) / static_cast<Real>(warmup);
  }
  if (total <= warmup) return peak;
  const Real progress = std::clamp(
      static_cast<Real>(step - warmup) / static_cast<Real>(total - warmup), 0.0, 1.0);
  const Real cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return peak * (floor_ratio + (1.0 - floor_ratio) * cosine);
}

Real multistep_schedule(long step, Real base, const std::vector<int>& milestones,
                        Real gamma, long steps_per_epoch) {
  const long epoch = steps_per_epoch > 0 ? step / steps_per_epoch : step;
  Real lr = base;
  for (int m : milestones) {
    if (epoch >= m) lr *= gamma;
  }
  return lr;
}

}  // namespace umind::nn
