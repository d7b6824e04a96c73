#pragma once

#include <vector>

#include "umind/nn/graph.hpp"

namespace umind::nn {

struct AdamConfig {
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real weight_decay = 0.0;  // decoupled (AdamW)
  Real grad_clip = 0.0;     // global-norm clip; 0 disables
};

// AdamW over a ParameterStore. Moments are indexed like the store.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Applies one update from Parameter::grad (missing grads count as zero),
  // then rounds the parameters back onto the float32 grid. Returns the
  // pre-clip global gradient norm.
  Real step(ParameterStore& params, Real lr);

  long steps() const { return steps_; }
  void set_steps(long steps) { steps_ = steps; }
  const AdamConfig& config() const { return config_; }

  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

  // Ensures moment buffers match the current parameter shapes, zero-filling
  // any newly added rows or columns.
  void sync_shapes(const ParameterStore& params);

 private:
  AdamConfig config_;
  long steps_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

// Linear warmup to `peak`, then cosine decay to `peak * floor_ratio` at `total`.
Real cosine_schedule(long step, Real peak, long warmup, long total, Real floor_ratio);

// Step decay by `gamma` at each milestone, measured in epochs of
// `steps_per_epoch` optimizer steps.
Real multistep_schedule(long step, Real base, const std::vector<int>& milestones,
                        Real gamma, long steps_per_epoch);

}  // namespace umind::nn
