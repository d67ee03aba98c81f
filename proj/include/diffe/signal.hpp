#pragma once

#include <span>
#include <string>
#include <vector>

#include "diffe/dataset.hpp"

namespace diffe {

// Second-order IIR section, a0 normalized to 1.
struct Biquad {
  double b0 = 0, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

// Butterworth designs via analog prototype + bilinear transform, returned as
// cascaded biquads. `order` is the prototype order (a bandpass of order n has
// 2n poles). Frequencies in Hz.
std::vector<Biquad> butterworth_lowpass(int order, double fc, double fs);
std::vector<Biquad> butterworth_highpass(int order, double fc, double fs);
std::vector<Biquad> butterworth_bandpass(int order, double lo, double hi, double fs);

// RBJ-style notch at f0 with quality factor q.
Biquad notch_biquad(double f0, double q, double fs);

// Zero-phase (forward-backward) application of a biquad cascade with
// odd-reflection edge padding and per-section steady-state initialization.
std::vector<double> sosfiltfilt(const std::vector<Biquad>& sections, std::span<const double> x);

// Amplitude of the `freq` component via a single-bin DFT: 2|X(f)|/N.
// Measurement helper for spectra; shares no code with the filters.
double tone_amplitude(std::span<const double> x, double freq, double fs);

// --- preprocessing chain -------------------------------------------------

struct PipelineConfig {
  double bandpass_lo = 0.5;
  double bandpass_hi = 125.0;
  std::vector<double> notch_freqs = {60.0, 120.0};
  double notch_q = 30.0;
  int filter_order = 4;
  std::string artifact_removal = "none";  // placeholder stage, "none" only
  bool band_select = true;
  double band_lo = 70.0;
  double band_hi = 124.0;
  double epoch_s = 2.0;
  double baseline_s = 0.5;

  void validate() const;
};

// Per-channel zero-phase Butterworth bandpass. An upper edge at or just
// below Nyquist is clamped to 0.99*Nyquist; an edge beyond Nyquist is a
// config error.
ContinuousRecording bandpass_filter(const ContinuousRecording& x, double lo = 0.5, double hi = 125.0,
                                    int order = 4);

// Zero-phase notch per frequency per channel; frequencies at or above
// Nyquist are skipped with a warning on stderr.
ContinuousRecording notch_filter(const ContinuousRecording& x, const std::vector<double>& freqs = {60.0, 120.0},
                                 double q = 30.0);

// Subtracts the instantaneous cross-channel mean at every sample.
ContinuousRecording common_average_reference(const ContinuousRecording& x);

// Zero-phase Butterworth bandpass to the configured high-gamma band.
ContinuousRecording band_select(const ContinuousRecording& x, double lo = 70.0, double hi = 124.0, int order = 4);

// Artifact-removal stage. Synthetic data carries no EOG/EMG channels, so the
// only supported mode is the identity; the stage exists to keep the chain
// order explicit.
ContinuousRecording artifact_removal_hook(const ContinuousRecording& x, const std::string& mode = "none");

struct EpochResult {
  EpochedDataset dataset;
  int skipped_events = 0;
};

// Cuts [event, event + window) trials and subtracts each channel's mean over
// [event - baseline, event). Events too close to either edge are skipped and
// counted.
EpochResult epoch_and_baseline(const ContinuousRecording& x, double window_s = 2.0, double baseline_s = 0.5);

// Fixed-order chain: bandpass -> notch -> CAR -> artifact hook ->
// band_select (optional) -> epoch_and_baseline.
EpochResult preprocess(const ContinuousRecording& x, const PipelineConfig& config);

}  // namespace diffe
