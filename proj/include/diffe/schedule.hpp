#pragma once

#include <vector>

#include "diffe/rng.hpp"
#include "diffe/tensor.hpp"

namespace diffe {

enum class ScheduleKind { linear };

// Precomputed corruption schedule: betas[t-1] drives step t, alphas = 1-beta,
// alpha_bars = running product. alpha_bars is strictly decreasing.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  double beta(int t) const { return betas[static_cast<size_t>(t - 1)]; }
  double alpha(int t) const { return alphas[static_cast<size_t>(t - 1)]; }
  double alpha_bar(int t) const { return alpha_bars[static_cast<size_t>(t - 1)]; }
};

// Linear beta ramp from beta_start to beta_end inclusive.
NoiseSchedule build_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02,
                             ScheduleKind kind = ScheduleKind::linear);

// Closed-form sample of the corruption at stage t:
//   sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise.
// The caller supplies standard-normal noise (reparameterization), so training
// can reuse draws and tests can inject fixed noise. Returns a plain leaf.
Tensor forward_sample(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& schedule);

// Batch variant with one stage per sample; x0 and noise are [B,C,L].
Tensor forward_sample_batch(const Tensor& x0, const std::vector<int>& t, const Tensor& noise,
                            const NoiseSchedule& schedule);

// Uniform draw from {1, ..., T}.
int sample_timestep(Rng& rng, int T);

}  // namespace diffe
