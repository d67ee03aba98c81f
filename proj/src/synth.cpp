#include "diffe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "diffe/rng.hpp"

namespace diffe {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

// Paul Kellet's pink-noise filter cascade: white noise shaped by a bank of
// first-order lowpasses approximating a 1/f spectrum across the audio band.
class PinkNoise {
 public:
  explicit PinkNoise(std::uint64_t seed) : rng_(seed) {}

  double next() {
    const double white = rng_.normal();
    b0_ = 0.99886 * b0_ + white * 0.0555179;
    b1_ = 0.99332 * b1_ + white * 0.0750759;
    b2_ = 0.96900 * b2_ + white * 0.1538520;
    b3_ = 0.86650 * b3_ + white * 0.3104856;
    b4_ = 0.55000 * b4_ + white * 0.5329522;
    b5_ = -0.7616 * b5_ - white * 0.0168980;
    const double pink = b0_ + b1_ + b2_ + b3_ + b4_ + b5_ + b6_ + white * 0.5362;
    b6_ = white * 0.115926;
    return pink * 0.11;  // keeps the variance near 1
  }

 private:
  Rng rng_;
  double b0_ = 0, b1_ = 0, b2_ = 0, b3_ = 0, b4_ = 0, b5_ = 0, b6_ = 0;
};

// Stream tags for seed derivation; all randomness flows from spec.seed.
enum : std::uint64_t { kStreamOrder = 1, kStreamWeights = 2, kStreamLine = 3, kStreamTrial = 4, kStreamPink = 5 };

std::vector<std::vector<double>> class_weights(const SynthSpec& spec) {
  Rng rng(mix_seed(spec.seed, kStreamWeights));
  std::vector<std::vector<double>> w(static_cast<size_t>(spec.n_classes),
                                     std::vector<double>(static_cast<size_t>(spec.channels)));
  for (auto& row : w) {
    double mean = 0.0;
    for (double& v : row) {
      v = rng.normal();
      mean += v;
    }
    mean /= static_cast<double>(row.size());
    double norm = 0.0;
    for (double& v : row) {
      v -= mean;  // zero-mean across channels so CAR keeps the signature
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1.0;
    for (double& v : row) v /= norm;
  }
  return w;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_classes < 2) throw ConfigError("data.n_classes must be >= 2");
  if (trials_per_class < 1) throw ConfigError("data.trials_per_class must be >= 1");
  if (channels < 2) throw ConfigError("data.channels must be >= 2");
  if (!(fs > 0.0)) throw ConfigError("data.fs must be positive");
  if (!(epoch_s > 0.0)) throw ConfigError("data.epoch_s must be positive");
  if (!(carrier_lo > 0.0) || !(carrier_lo <= carrier_hi))
    throw ConfigError("data.carrier_lo/carrier_hi must satisfy 0 < lo <= hi");
  if (carrier_hi >= fs / 2.0)
    throw ConfigError("data.carrier_hi " + std::to_string(carrier_hi) + " Hz must stay below Nyquist " +
                      std::to_string(fs / 2.0) + " Hz");
  if (burst_amp < 0.0 || pink_noise < 0.0 || line_noise < 0.0)
    throw ConfigError("data amplitudes must be non-negative");
  if (!(line_freq > 0.0) || line_freq >= fs / 2.0) throw ConfigError("data.line_freq must lie below Nyquist");
}

double class_carrier(const SynthSpec& spec, int k) {
  if (k < 0 || k >= spec.n_classes) throw IndexError("class_carrier: class out of range");
  if (spec.n_classes == 1) return spec.carrier_lo;
  return spec.carrier_lo + (spec.carrier_hi - spec.carrier_lo) * static_cast<double>(k) / (spec.n_classes - 1);
}

ContinuousRecording generate(const SynthSpec& spec) {
  spec.validate();
  const int L = static_cast<int>(std::lround(spec.epoch_s * spec.fs));
  const std::int64_t lead = static_cast<std::int64_t>(std::lround(1.0 * spec.fs));
  const std::int64_t stride = static_cast<std::int64_t>(std::lround((spec.epoch_s + 1.0) * spec.fs));
  const int n_trials = spec.n_classes * spec.trials_per_class;
  const std::int64_t total = lead + static_cast<std::int64_t>(n_trials) * stride + lead;

  ContinuousRecording rec;
  rec.fs = spec.fs;
  rec.provenance = "diffe-synth v1 seed=" + std::to_string(spec.seed);
  rec.class_names.reserve(static_cast<size_t>(spec.n_classes));
  for (int k = 0; k < spec.n_classes; ++k) rec.class_names.push_back("class_" + std::to_string(k));
  rec.channel_names.reserve(static_cast<size_t>(spec.channels));
  for (int c = 0; c < spec.channels; ++c) rec.channel_names.push_back("ch_" + std::to_string(c));
  rec.data.assign(static_cast<size_t>(spec.channels), std::vector<double>(static_cast<size_t>(total), 0.0));

  // 1/f background, one independent stream per channel
  if (spec.pink_noise > 0.0) {
    for (int c = 0; c < spec.channels; ++c) {
      PinkNoise pink(mix_seed(spec.seed, mix_seed(kStreamPink, static_cast<std::uint64_t>(c))));
      auto& ch = rec.data[static_cast<size_t>(c)];
      for (auto& v : ch) v = spec.pink_noise * pink.next();
    }
  }

  // mains interference, common phase with mild per-channel gain spread
  if (spec.line_noise > 0.0) {
    Rng line_rng(mix_seed(spec.seed, kStreamLine));
    const double phase = line_rng.uniform(0.0, kTwoPi);
    std::vector<double> gain(static_cast<size_t>(spec.channels));
    for (double& g : gain) g = 1.0 + 0.1 * (line_rng.uniform() - 0.5);
    const double w = kTwoPi * spec.line_freq / spec.fs;
    for (int c = 0; c < spec.channels; ++c) {
      auto& ch = rec.data[static_cast<size_t>(c)];
      const double a = spec.line_noise * gain[static_cast<size_t>(c)];
      for (std::int64_t i = 0; i < total; ++i) ch[static_cast<size_t>(i)] += a * std::sin(w * i + phase);
    }
  }

  // balanced, shuffled label sequence
  std::vector<int> order(static_cast<size_t>(n_trials));
  for (int i = 0; i < n_trials; ++i) order[static_cast<size_t>(i)] = i % spec.n_classes;
  Rng order_rng(mix_seed(spec.seed, kStreamOrder));
  for (int i = n_trials - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(order_rng.uniform_int(0, i))]);

  const auto weights = class_weights(spec);
  for (int i = 0; i < n_trials; ++i) {
    const int cls = order[static_cast<size_t>(i)];
    const std::int64_t onset = lead + static_cast<std::int64_t>(i) * stride;
    rec.events.emplace_back(onset, cls);
    Rng trial_rng(mix_seed(spec.seed, mix_seed(kStreamTrial, static_cast<std::uint64_t>(i))));
    const double phase = trial_rng.uniform(0.0, kTwoPi);
    const double f = class_carrier(spec, cls);
    const double w = kTwoPi * f / spec.fs;
    for (int c = 0; c < spec.channels; ++c) {
      const double a = spec.burst_amp * weights[static_cast<size_t>(cls)][static_cast<size_t>(c)];
      if (a == 0.0) continue;
      auto& ch = rec.data[static_cast<size_t>(c)];
      for (int j = 0; j < L; ++j) {
        const double env = 0.5 * (1.0 - std::cos(kTwoPi * j / (L - 1)));  // Hann burst
        ch[static_cast<size_t>(onset + j)] += a * env * std::sin(w * j + phase);
      }
    }
  }
  return rec;
}

EpochedDataset generate_separable_toy(int n_per_class, std::uint64_t seed) {
  if (n_per_class < 10) throw ConfigError("generate_separable_toy: n_per_class must be >= 10");
  const int C = 2;
  const double fs = 250.0;
  const int L = 500;
  const double carriers[2] = {80.0, 110.0};
  const double mix[2][2] = {{1.0, 0.35}, {0.35, 1.0}};

  EpochedDataset d;
  d.channels = C;
  d.L = L;
  d.fs = fs;
  d.class_names = {"toy_low", "toy_high"};
  d.provenance = "diffe-toy v1 seed=" + std::to_string(seed);
  d.n = 2 * n_per_class;
  d.epochs.resize(static_cast<size_t>(d.n) * C * L);
  d.labels.resize(static_cast<size_t>(d.n));

  Rng rng(mix_seed(seed, 7));
  for (int i = 0; i < d.n; ++i) {
    const int cls = i % 2;  // exactly balanced
    d.labels[static_cast<size_t>(i)] = cls;
    const double phase = rng.uniform(0.0, kTwoPi);
    const double w = kTwoPi * carriers[cls] / fs;
    double* trial = d.trial(i);
    for (int c = 0; c < C; ++c) {
      for (int j = 0; j < L; ++j) {
        const double env = 0.5 * (1.0 - std::cos(kTwoPi * j / (L - 1)));
        trial[static_cast<size_t>(c) * L + j] = mix[cls][c] * env * std::sin(w * j + phase) + 0.25 * rng.normal();
      }
    }
  }
  return d;
}

}  // namespace diffe
