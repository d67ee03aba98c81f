#pragma once

#include <cstdint>
#include <vector>

#include "diffe/dataset.hpp"

namespace diffe {

// Class-conditioned surrogate generator: every trial is an amplitude-
// modulated high-gamma burst with a class-specific carrier and channel
// topography, on top of 1/f background noise and mains interference.
struct SynthSpec {
  int n_classes = 13;
  int trials_per_class = 100;
  int channels = 8;  // 64 supported
  double fs = 250.0;
  double epoch_s = 2.0;
  double carrier_lo = 72.0;  // class carriers spaced evenly in [lo, hi]
  double carrier_hi = 122.0;
  double burst_amp = 1.0;
  double pink_noise = 1.0;
  double line_noise = 0.5;
  double line_freq = 60.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Carrier frequency of class k under `spec`.
double class_carrier(const SynthSpec& spec, int k);

// Continuous recording with one event per trial, deterministic per seed.
ContinuousRecording generate(const SynthSpec& spec);

// Small 2-class set with widely separated carriers and high SNR, already
// epoched; linearly separable in bandpower features.
EpochedDataset generate_separable_toy(int n_per_class, std::uint64_t seed);

}  // namespace diffe
