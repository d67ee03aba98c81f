#include "diffe/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numeric>

#include "diffe/tensor.hpp"

namespace diffe {

namespace {

constexpr double kPi = 3.14159265358979323846;

using cplx = std::complex<double>;

// Butterworth prototype poles in the left half-plane, upper half only;
// conjugates are implied. Even orders have no real pole.
std::vector<cplx> prototype_poles_upper(int order) {
  if (order < 1) throw ConfigError("butterworth: order must be >= 1");
  if (order % 2 != 0) throw ConfigError("butterworth: odd orders not supported by this cascade builder");
  std::vector<cplx> poles;
  for (int k = 1; k <= order / 2; ++k) {
    const double theta = kPi * (2.0 * k + order - 1.0) / (2.0 * order);
    poles.push_back(cplx(std::cos(theta), std::sin(theta)));
  }
  return poles;
}

double prewarp(double f_hz, double fs) { return 2.0 * fs * std::tan(kPi * f_hz / fs); }

cplx bilinear_pole(cplx s, double fs) { return (2.0 * fs + s) / (2.0 * fs - s); }

// Denominator of the section holding the conjugate pair (z, conj z).
void pole_pair_to_denominator(cplx z, Biquad& q) {
  q.a1 = -2.0 * z.real();
  q.a2 = std::norm(z);
}

double cascade_magnitude(const std::vector<Biquad>& sections, double omega) {
  const cplx z = std::polar(1.0, omega);
  const cplx zi = 1.0 / z;
  cplx h = 1.0;
  for (const Biquad& s : sections)
    h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
  return std::abs(h);
}

void normalize_gain(std::vector<Biquad>& sections, double omega_ref) {
  const double mag = cascade_magnitude(sections, omega_ref);
  if (!(mag > 0.0) || !std::isfinite(mag)) throw NumericError("butterworth: degenerate gain at reference");
  const double per_section = std::pow(1.0 / mag, 1.0 / static_cast<double>(sections.size()));
  for (Biquad& s : sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
  }
}

void check_band(double f, double fs, const char* what) {
  if (!(f > 0.0) || !(f < fs / 2.0))
    throw ConfigError(std::string(what) + ": frequency " + std::to_string(f) + " Hz outside (0, " +
                      std::to_string(fs / 2.0) + ")");
}

}  // namespace

std::vector<Biquad> butterworth_lowpass(int order, double fc, double fs) {
  check_band(fc, fs, "butterworth_lowpass");
  const double wc = prewarp(fc, fs);
  std::vector<Biquad> sections;
  for (cplx p : prototype_poles_upper(order)) {
    Biquad q;
    q.b0 = 1.0;
    q.b1 = 2.0;
    q.b2 = 1.0;  // both zeros at z = -1
    pole_pair_to_denominator(bilinear_pole(p * wc, fs), q);
    sections.push_back(q);
  }
  normalize_gain(sections, 0.0);
  return sections;
}

std::vector<Biquad> butterworth_highpass(int order, double fc, double fs) {
  check_band(fc, fs, "butterworth_highpass");
  const double wc = prewarp(fc, fs);
  std::vector<Biquad> sections;
  for (cplx p : prototype_poles_upper(order)) {
    Biquad q;
    q.b0 = 1.0;
    q.b1 = -2.0;
    q.b2 = 1.0;  // both zeros at z = +1
    pole_pair_to_denominator(bilinear_pole(wc / p, fs), q);
    sections.push_back(q);
  }
  normalize_gain(sections, kPi);
  return sections;
}

std::vector<Biquad> butterworth_bandpass(int order, double lo, double hi, double fs) {
  check_band(lo, fs, "butterworth_bandpass");
  check_band(hi, fs, "butterworth_bandpass");
  if (!(lo < hi)) throw ConfigError("butterworth_bandpass: lo must be below hi");
  const double w1 = prewarp(lo, fs);
  const double w2 = prewarp(hi, fs);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;
  std::vector<Biquad> sections;
  for (cplx p : prototype_poles_upper(order)) {
    // lowpass-to-bandpass: roots of s^2 - bw*p*s + w0^2
    const cplx bp = bw * p;
    const cplx disc = std::sqrt(bp * bp - 4.0 * w0sq);
    for (cplx s : {(bp + disc) * 0.5, (bp - disc) * 0.5}) {
      Biquad q;
      q.b0 = 1.0;
      q.b1 = 0.0;
      q.b2 = -1.0;  // zeros at z = +1 and z = -1
      pole_pair_to_denominator(bilinear_pole(s, fs), q);
      sections.push_back(q);
    }
  }
  // reference at the digital image of the analog center frequency
  const double omega_ref = 2.0 * std::atan(std::sqrt(w0sq) / (2.0 * fs));
  normalize_gain(sections, omega_ref);
  return sections;
}

Biquad notch_biquad(double f0, double q, double fs) {
  check_band(f0, fs, "notch_biquad");
  if (!(q > 0.0)) throw ConfigError("notch_biquad: q must be positive");
  const double w0 = 2.0 * kPi * f0 / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = 1.0 / a0;
  s.b1 = -2.0 * c / a0;
  s.b2 = 1.0 / a0;
  s.a1 = -2.0 * c / a0;
  s.a2 = (1.0 - alpha) / a0;
  return s;
}

namespace {

// Steady-state (step-response) initial conditions for one DF2T section,
// per unit input.
void section_zi(const Biquad& s, double& zi1, double& zi2) {
  const double den = 1.0 + s.a1 + s.a2;
  const double yss = den != 0.0 ? (s.b0 + s.b1 + s.b2) / den : 0.0;
  zi1 = yss - s.b0;
  zi2 = s.b2 - s.a2 * yss;
}

void lfilter_inplace(const Biquad& s, std::vector<double>& x) {
  double zi1, zi2;
  section_zi(s, zi1, zi2);
  double s1 = zi1 * x[0];
  double s2 = zi2 * x[0];
  for (double& v : x) {
    const double in = v;
    const double y = s.b0 * in + s1;
    s1 = s.b1 * in - s.a1 * y + s2;
    s2 = s.b2 * in - s.a2 * y;
    v = y;
  }
}

}  // namespace

std::vector<double> sosfiltfilt(const std::vector<Biquad>& sections, std::span<const double> x) {
  const size_t n = x.size();
  if (n == 0) return {};
  if (sections.empty()) return {x.begin(), x.end()};
  const size_t padlen = std::min(n - 1, 3 * (2 * sections.size() + 1));
  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  for (const Biquad& s : sections) lfilter_inplace(s, ext);
  std::reverse(ext.begin(), ext.end());
  for (const Biquad& s : sections) lfilter_inplace(s, ext);
  std::reverse(ext.begin(), ext.end());

  std::vector<double> out(ext.begin() + static_cast<std::ptrdiff_t>(padlen),
                          ext.begin() + static_cast<std::ptrdiff_t>(padlen + n));
  check_finite(out, "sosfiltfilt");
  return out;
}

double tone_amplitude(std::span<const double> x, double freq, double fs) {
  if (x.empty()) throw DataError("tone_amplitude: empty signal");
  const double w = 2.0 * kPi * freq / fs;
  double re = 0.0, im = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    re += x[i] * std::cos(w * static_cast<double>(i));
    im -= x[i] * std::sin(w * static_cast<double>(i));
  }
  const double scale = freq == 0.0 ? 1.0 : 2.0;
  return scale * std::hypot(re, im) / static_cast<double>(x.size());
}

void PipelineConfig::validate() const {
  if (!(bandpass_lo > 0.0) || !(bandpass_lo < bandpass_hi))
    throw ConfigError("pipeline.bandpass_lo must satisfy 0 < lo < hi");
  if (!(notch_q > 0.0)) throw ConfigError("pipeline.notch_q must be positive");
  if (filter_order < 2 || filter_order % 2 != 0) throw ConfigError("pipeline.filter_order must be even and >= 2");
  if (artifact_removal != "none") throw ConfigError("pipeline.artifact_removal: only 'none' is supported");
  if (band_select && !(band_lo > 0.0 && band_lo < band_hi))
    throw ConfigError("pipeline.band_lo/band_hi must satisfy 0 < lo < hi");
  if (!(epoch_s > 0.0)) throw ConfigError("pipeline.epoch_s must be positive");
  if (baseline_s < 0.0) throw ConfigError("pipeline.baseline_s must be non-negative");
}

namespace {

ContinuousRecording apply_per_channel(const ContinuousRecording& x, const std::vector<Biquad>& sections) {
  ContinuousRecording out = x;
  for (auto& ch : out.data) ch = sosfiltfilt(sections, ch);
  return out;
}

// Upper band edges at Nyquist are legal via a documented clamp to
// 0.99*Nyquist; above Nyquist is a configuration error.
double clamp_upper_edge(double hi, double fs, const char* what) {
  const double nyquist = fs / 2.0;
  if (hi > nyquist)
    throw ConfigError(std::string(what) + ": upper edge " + std::to_string(hi) + " Hz above Nyquist " +
                      std::to_string(nyquist));
  const double ceiling = 0.99 * nyquist;
  return std::min(hi, ceiling);
}

}  // namespace

ContinuousRecording bandpass_filter(const ContinuousRecording& x, double lo, double hi, int order) {
  x.validate();
  const double hi_eff = clamp_upper_edge(hi, x.fs, "bandpass_filter");
  if (!(lo > 0.0) || !(lo < hi_eff)) throw ConfigError("bandpass_filter: need 0 < lo < hi < Nyquist");
  return apply_per_channel(x, butterworth_bandpass(order, lo, hi_eff, x.fs));
}

ContinuousRecording notch_filter(const ContinuousRecording& x, const std::vector<double>& freqs, double q) {
  x.validate();
  std::vector<Biquad> sections;
  for (double f : freqs) {
    if (f >= x.fs / 2.0) {
      std::fprintf(stderr, "notch_filter: skipping %.6g Hz (at or above Nyquist %.6g Hz)\n", f, x.fs / 2.0);
      continue;
    }
    sections.push_back(notch_biquad(f, q, x.fs));
  }
  if (sections.empty()) return x;
  return apply_per_channel(x, sections);
}

ContinuousRecording common_average_reference(const ContinuousRecording& x) {
  x.validate();
  const int C = x.channels();
  if (C < 2) throw ConfigError("common_average_reference: needs at least 2 channels");
  ContinuousRecording out = x;
  const auto len = x.samples();
  for (std::int64_t i = 0; i < len; ++i) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += x.data[static_cast<size_t>(c)][static_cast<size_t>(i)];
    mean /= C;
    for (int c = 0; c < C; ++c) out.data[static_cast<size_t>(c)][static_cast<size_t>(i)] -= mean;
  }
  return out;
}

ContinuousRecording band_select(const ContinuousRecording& x, double lo, double hi, int order) {
  x.validate();
  const double hi_eff = clamp_upper_edge(hi, x.fs, "band_select");
  if (!(lo > 0.0) || !(lo < hi_eff)) throw ConfigError("band_select: need 0 < lo < hi < Nyquist");
  return apply_per_channel(x, butterworth_bandpass(order, lo, hi_eff, x.fs));
}

ContinuousRecording artifact_removal_hook(const ContinuousRecording& x, const std::string& mode) {
  if (mode != "none") throw ConfigError("artifact_removal_hook: only 'none' is supported");
  return x;
}

EpochResult epoch_and_baseline(const ContinuousRecording& x, double window_s, double baseline_s) {
  x.validate();
  const int C = x.channels();
  const auto len = x.samples();
  const int L = static_cast<int>(std::lround(window_s * x.fs));
  const int Lb = static_cast<int>(std::lround(baseline_s * x.fs));
  if (L < 1) throw ConfigError("epoch_and_baseline: window too short for sampling rate");

  EpochResult res;
  EpochedDataset& d = res.dataset;
  d.channels = C;
  d.L = L;
  d.fs = x.fs;
  d.class_names = x.class_names;
  d.provenance = x.provenance;

  for (const auto& [idx, cls] : x.events) {
    if (idx < Lb || idx + L > len) {
      ++res.skipped_events;
      continue;
    }
    for (int c = 0; c < C; ++c) {
      const auto& ch = x.data[static_cast<size_t>(c)];
      double baseline = 0.0;
      if (Lb > 0) {
        for (int i = 0; i < Lb; ++i) baseline += ch[static_cast<size_t>(idx - Lb + i)];
        baseline /= Lb;
      }
      for (int i = 0; i < L; ++i) d.epochs.push_back(ch[static_cast<size_t>(idx + i)] - baseline);
    }
    d.labels.push_back(cls);
    ++d.n;
  }
  if (res.skipped_events > 0)
    std::fprintf(stderr, "epoch_and_baseline: skipped %d event(s) too close to the recording edge\n",
                 res.skipped_events);
  d.validate();
  return res;
}

EpochResult preprocess(const ContinuousRecording& x, const PipelineConfig& config) {
  config.validate();
  ContinuousRecording r = bandpass_filter(x, config.bandpass_lo, config.bandpass_hi, config.filter_order);
  r = notch_filter(r, config.notch_freqs, config.notch_q);
  r = common_average_reference(r);
  r = artifact_removal_hook(r, config.artifact_removal);
  if (config.band_select) r = band_select(r, config.band_lo, config.band_hi, config.filter_order);
  return epoch_and_baseline(r, config.epoch_s, config.baseline_s);
}

}  // namespace diffe
