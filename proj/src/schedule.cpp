#include "diffe/schedule.hpp"

#include <cmath>
#include <string>

#include "diffe/errors.hpp"

namespace diffe {

NoiseSchedule build_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
  if (T < 1) throw ConfigError("build_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ConfigError("build_schedule: need 0 < beta_start <= beta_end < 1");
  if (kind != ScheduleKind::linear) throw ConfigError("build_schedule: unknown schedule kind");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<size_t>(T));
  s.alphas.resize(static_cast<size_t>(T));
  s.alpha_bars.resize(static_cast<size_t>(T));
  double bar = 1.0;
  for (int t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.betas[static_cast<size_t>(t)] = beta;
    s.alphas[static_cast<size_t>(t)] = 1.0 - beta;
    bar *= 1.0 - beta;
    s.alpha_bars[static_cast<size_t>(t)] = bar;
  }
  return s;
}

namespace {

void validate_stage(int t, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.T)
    throw IndexError("diffusion stage t=" + std::to_string(t) + " outside [1," + std::to_string(schedule.T) + "]");
}

}  // namespace

Tensor forward_sample(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& schedule) {
  validate_stage(t, schedule);
  if (x0.shape() != noise.shape())
    throw DimensionError("forward_sample: noise shape " + shape_str(noise.shape()) + " does not match x0 " +
                         shape_str(x0.shape()));
  const double ab = schedule.alpha_bar(t);
  const double cs = std::sqrt(ab);
  const double cn = std::sqrt(1.0 - ab);
  Tensor out(x0.shape());
  auto xv = x0.values();
  auto nv = noise.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = cs * xv[i] + cn * nv[i];
  check_finite(ov, "forward_sample");
  return out;
}

Tensor forward_sample_batch(const Tensor& x0, const std::vector<int>& t, const Tensor& noise,
                            const NoiseSchedule& schedule) {
  if (x0.ndim() != 3) throw DimensionError("forward_sample_batch: expected [B,C,L]");
  if (x0.shape() != noise.shape()) throw DimensionError("forward_sample_batch: noise shape mismatch");
  const int B = x0.dim(0);
  if (static_cast<int>(t.size()) != B) throw DimensionError("forward_sample_batch: need one stage per sample");
  const int stride = x0.numel() / B;
  Tensor out(x0.shape());
  auto xv = x0.values();
  auto nv = noise.values();
  auto ov = out.values();
  for (int b = 0; b < B; ++b) {
    validate_stage(t[static_cast<size_t>(b)], schedule);
    const double ab = schedule.alpha_bar(t[static_cast<size_t>(b)]);
    const double cs = std::sqrt(ab);
    const double cn = std::sqrt(1.0 - ab);
    const size_t off = static_cast<size_t>(b) * stride;
    for (int i = 0; i < stride; ++i) ov[off + i] = cs * xv[off + i] + cn * nv[off + i];
  }
  check_finite(ov, "forward_sample_batch");
  return out;
}

int sample_timestep(Rng& rng, int T) {
  if (T < 1) throw ConfigError("sample_timestep: T must be >= 1");
  return rng.uniform_int(1, T);
}

}  // namespace diffe
