// Acceptance suite: one self-checking scenario per release gate, each
// printing a single PASS/FAIL line. Run with no arguments for the fast
// gates; pass criterion numbers (e.g. "7") or "all" to select.
//
//   1 gradient correctness of all four networks
//   2 diffusion schedule math and composition equivalence
//   3 loss composition during a smoke training run
//   4 preprocessing filter responses and re-referencing
//   5 macro AUC against the pairwise counting oracle
//   6 learning sanity on the separable toy set
//   7 ablation trend on the default synthetic dataset (long)
//   8 rerun determinism of training artifacts
//   9 container and checkpoint format round trips

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "diffe/ablate.hpp"
#include "diffe/config.hpp"
#include "diffe/metrics.hpp"
#include "diffe/networks.hpp"
#include "diffe/ops.hpp"
#include "diffe/schedule.hpp"
#include "diffe/signal.hpp"
#include "diffe/synth.hpp"
#include "diffe/training.hpp"

using namespace diffe;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

int g_failures = 0;

struct Criterion {
  int id;
  const char* title;
  std::function<bool(std::string&)> run;
};

void report(int id, const char* title, bool ok, const std::string& detail, double seconds) {
  std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", id, title, seconds,
              detail.empty() ? "" : " — ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

NetworkConfig miniature_net() {
  NetworkConfig c;
  c.in_channels = 2;
  c.n_classes = 3;
  c.denoiser_base = 4;
  c.denoiser_mults = {1, 1, 2, 2};
  c.time_embed_dim = 8;
  c.encoder_base = 4;
  c.latent_dim = 16;
  c.decoder_widths = {8, 8, 4, 4};
  c.tap_channels = 2;
  c.classifier_hidden = 8;
  return c;
}

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal();
  return t;
}

std::vector<Tensor> tensors_of(const std::vector<NamedParam>& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

// --- 1: gradient correctness -------------------------------------------------

bool criterion_gradients(std::string& detail) {
  const NetworkConfig cfg = miniature_net();
  const NoiseSchedule sched = build_schedule(8, 1e-4, 0.02);
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    DiffEModel m = DiffEModel::build(cfg, Ablation::full, seed);
    Tensor x0 = random_tensor({1, 2, 32}, rng);
    Tensor x_t = forward_sample(x0, 4, random_tensor({1, 2, 32}, rng), sched);
    Tensor z = random_tensor({1, cfg.latent_dim}, rng);

    auto check = [&worst](auto fn, std::vector<Tensor> inputs) {
      worst = std::max(worst, grad_check(fn, std::move(inputs), 1e-5));
    };
    check([&](const std::vector<Tensor>&) { return m.denoiser->forward(x_t, {4}, sched).x0_hat; },
          tensors_of(m.denoiser->parameters()));
    check([&](const std::vector<Tensor>&) { return m.encoder.forward(x0).z; },
          tensors_of(m.encoder.parameters()));
    check(
        [&](const std::vector<Tensor>&) {
          auto den = m.denoiser->forward(x_t, {4}, sched);
          auto enc = m.encoder.forward(x0);
          return m.decoder->forward(enc.features, den.taps, x0, den.x0_hat);
        },
        tensors_of(m.decoder->parameters()));
    check([&](const std::vector<Tensor>&) { return m.classifier.forward(z); },
          tensors_of(m.classifier.parameters()));
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "max relative error %.3g (limit 1e-5), 20 seeds", worst);
  detail = buf;
  return worst < 1e-5;
}

// --- 2: diffusion math ----------------------------------------------------------

bool criterion_diffusion(std::string& detail) {
  const int T = 50;
  NoiseSchedule s = build_schedule(T, 1e-4, 0.02);
  double worst_ab = 0.0;
  for (int t = 1; t <= T; ++t) {
    double prod = 1.0;
    for (int u = 1; u <= t; ++u) prod *= 1.0 - s.beta(u);
    worst_ab = std::max(worst_ab, std::fabs(s.alpha_bar(t) - prod));
  }
  if (worst_ab >= 1e-12) {
    detail = "alpha_bar deviates from the product oracle by " + std::to_string(worst_ab);
    return false;
  }

  // sequential corruption vs closed form, 3 standard errors over 1e4 draws
  Rng rng(2024);
  const int n = 10000;
  const std::vector<double> x0 = {1.5, -0.75, 0.25, 2.0};
  double worst_sigmas = 0.0;
  for (int t : {1, T / 2, T}) {
    std::vector<double> mean(x0.size(), 0.0), m2(x0.size(), 0.0);
    for (int draw = 0; draw < n; ++draw) {
      std::vector<double> x = x0;
      for (int u = 1; u <= t; ++u) {
        const double keep = std::sqrt(1.0 - s.beta(u));
        const double add = std::sqrt(s.beta(u));
        for (double& v : x) v = keep * v + add * rng.normal();
      }
      for (size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - mean[i];
        mean[i] += d / (draw + 1);
        m2[i] += d * (x[i] - mean[i]);
      }
    }
    const double ab = s.alpha_bar(t);
    const double want_var = 1.0 - ab;
    for (size_t i = 0; i < x0.size(); ++i) {
      const double se_mean = std::sqrt(want_var / n);
      worst_sigmas = std::max(worst_sigmas, std::fabs(mean[i] - std::sqrt(ab) * x0[i]) / se_mean);
      const double var = m2[i] / (n - 1);
      const double se_var = want_var * std::sqrt(2.0 / (n - 1));
      worst_sigmas = std::max(worst_sigmas, std::fabs(var - want_var) / se_var);
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "alpha_bar max err %.2e; worst moment deviation %.2f sigma (limit 3)", worst_ab,
                worst_sigmas);
  detail = buf;
  return worst_sigmas < 3.0;
}

// --- 3: loss composition ---------------------------------------------------------

bool criterion_loss_composition(std::string& detail) {
  EpochedDataset toy = generate_separable_toy(20, 33);
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 16;
  tc.T = 10;
  tc.seed = 12;
  tc.alpha = 0.1;
  double worst = 0.0;
  long steps = 0;
  fit(tc, miniature_net(), toy, std::nullopt, [&](int, long, const StepComponents& c) {
    worst = std::max(worst, std::fabs(c.total - (c.cae + 0.1 * c.cls)));
    ++steps;
  });
  char buf[96];
  std::snprintf(buf, sizeof buf, "max |total-(cae+0.1*cls)| = %.2e over %ld steps (limit 1e-12)", worst, steps);
  detail = buf;
  return steps > 0 && worst < 1e-12;
}

// --- 4: filters ----------------------------------------------------------------------

bool criterion_filters(std::string& detail) {
  const double fs = 250.0;
  auto tone = [&](double freq) {
    ContinuousRecording r;
    r.fs = fs;
    r.data.assign(3, std::vector<double>(2500));
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 2500; ++i)
        r.data[static_cast<size_t>(c)][static_cast<size_t>(i)] =
            std::sin(2.0 * 3.14159265358979323846 * freq * i / fs + 0.3 * c);
    return r;
  };

  const double notch60 = tone_amplitude(notch_filter(tone(60.0), {60.0, 120.0}, 30.0).data[0], 60.0, fs);
  const double low10 = tone_amplitude(band_select(tone(10.0), 70.0, 124.0, 4).data[0], 10.0, fs);
  const double mid90 = tone_amplitude(band_select(tone(90.0), 70.0, 124.0, 4).data[0], 90.0, fs);

  Rng rng(5);
  ContinuousRecording noise;
  noise.fs = fs;
  noise.data.assign(4, std::vector<double>(1000));
  for (auto& ch : noise.data)
    for (double& v : ch) v = rng.normal();
  double car_worst = 0.0;
  ContinuousRecording car = common_average_reference(noise);
  for (size_t i = 0; i < 1000; ++i) {
    double mean = 0.0;
    for (int c = 0; c < 4; ++c) mean += car.data[static_cast<size_t>(c)][i];
    car_worst = std::max(car_worst, std::fabs(mean / 4.0));
  }

  char buf[160];
  std::snprintf(buf, sizeof buf, "notch60 %.1f dB, band_select 10Hz %.1f dB, 90Hz gain %.4f, CAR mean %.1e",
                -20.0 * std::log10(std::max(notch60, 1e-30)), -20.0 * std::log10(std::max(low10, 1e-30)), mid90,
                car_worst);
  detail = buf;
  return notch60 <= 0.1 && low10 <= 0.1 && std::fabs(mid90 - 1.0) <= 0.05 && car_worst <= 1e-12;
}

// --- 5: AUC oracle ---------------------------------------------------------------------

double auc_pairwise_macro(const Tensor& scores, const std::vector<int>& labels) {
  const int N = scores.dim(0), K = scores.dim(1);
  auto sv = scores.values();
  double macro = 0.0;
  for (int k = 0; k < K; ++k) {
    double wins = 0.0;
    long n1 = 0, n0 = 0;
    for (int i = 0; i < N; ++i) {
      if (labels[static_cast<size_t>(i)] != k) continue;
      ++n1;
      for (int j = 0; j < N; ++j) {
        if (labels[static_cast<size_t>(j)] == k) continue;
        const double si = sv[static_cast<size_t>(i) * K + k];
        const double sj = sv[static_cast<size_t>(j) * K + k];
        wins += si > sj ? 1.0 : (si == sj ? 0.5 : 0.0);
      }
    }
    n0 = N - n1;
    macro += wins / (static_cast<double>(n1) * static_cast<double>(n0));
  }
  return 100.0 * macro / K;
}

bool criterion_auc(std::string& detail) {
  int exact = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Rng rng(seed);
    const int n = 5 + rng.uniform_int(0, 95);
    const int K = 2 + rng.uniform_int(0, 4);
    Tensor scores({n, K});
    std::vector<int> labels(static_cast<size_t>(n));
    for (double& v : scores.values()) v = 0.5 * rng.uniform_int(-3, 3);  // ties likely
    for (int i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = i % K;
    if (auc_ovr_macro(scores, labels) == auc_pairwise_macro(scores, labels)) ++exact;
  }
  detail = std::to_string(exact) + "/50 instances exactly equal";
  return exact == 50;
}

// --- 6: learning sanity -------------------------------------------------------------------

bool criterion_toy_learning(std::string& detail) {
  EpochedDataset toy = generate_separable_toy(50, 404);

  // independent oracle: logistic regression on carrier bandpower
  const std::vector<double> freqs = {80.0, 110.0};
  const int n = toy.n;
  std::vector<std::vector<double>> feats;
  for (int i = 0; i < n; ++i) {
    std::vector<double> f;
    for (int c = 0; c < toy.channels; ++c) {
      std::span<const double> row(toy.trial(i) + static_cast<size_t>(c) * toy.L, static_cast<size_t>(toy.L));
      for (double fr : freqs) f.push_back(tone_amplitude(row, fr, toy.fs));
    }
    feats.push_back(std::move(f));
  }
  std::vector<double> w(feats[0].size(), 0.0);
  double b = 0.0;
  for (int it = 0; it < 500; ++it) {
    std::vector<double> gw(w.size(), 0.0);
    double gb = 0.0;
    for (int i = 0; i < n; ++i) {
      double z = b;
      for (size_t j = 0; j < w.size(); ++j) z += w[j] * feats[static_cast<size_t>(i)][j];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double d = p - toy.labels[static_cast<size_t>(i)];
      for (size_t j = 0; j < w.size(); ++j) gw[j] += d * feats[static_cast<size_t>(i)][j];
      gb += d;
    }
    for (size_t j = 0; j < w.size(); ++j) w[j] -= 2.0 * gw[j] / n;
    b -= 2.0 * gb / n;
  }
  int oracle_hits = 0;
  for (int i = 0; i < n; ++i) {
    double z = b;
    for (size_t j = 0; j < w.size(); ++j) z += w[j] * feats[static_cast<size_t>(i)][j];
    oracle_hits += (z > 0.0 ? 1 : 0) == toy.labels[static_cast<size_t>(i)];
  }
  const double oracle_acc = static_cast<double>(oracle_hits) / n;

  NetworkConfig nc;
  nc.denoiser_base = 8;
  nc.denoiser_mults = {1, 1, 2, 2};
  nc.time_embed_dim = 32;
  nc.encoder_base = 8;
  nc.latent_dim = 32;
  nc.decoder_widths = {16, 16, 8, 8};
  nc.tap_channels = 4;
  nc.classifier_hidden = 64;
  TrainConfig tc;
  tc.epochs = 50;
  tc.batch_size = 16;
  tc.T = 50;
  tc.seed = 7;
  FitResult r = fit(tc, nc, toy);
  double best_test = 0.0;
  for (const auto& rec : r.history.records) best_test = std::max(best_test, rec.test_acc);

  char buf[128];
  std::snprintf(buf, sizeof buf, "oracle %.1f%% (needs >= 99), Diff-E best test %.1f%% (needs >= 95)",
                100.0 * oracle_acc, 100.0 * best_test);
  detail = buf;
  return oracle_acc >= 0.99 && best_test >= 0.95;
}

// --- 7: desk-scale ablation trend ------------------------------------------------------------

bool criterion_trend(std::string& detail) {
  SynthSpec spec;  // library defaults: 13 classes x 100 trials, 8 channels, fs 250
  ContinuousRecording rec = generate(spec);
  PipelineConfig pc;
  EpochedDataset data = preprocess(rec, pc).dataset;

  RunConfig base;
  base.train.epochs = 10;
  base.train.T = 50;
  const auto runs = run_ablation(base, data, {1, 2, 3}, 2);

  double acc[3] = {0, 0, 0}, auc[3] = {0, 0, 0};
  for (const auto& r : runs) {
    const int a = r.arm == Ablation::full ? 0 : (r.arm == Ablation::no_ddpm ? 1 : 2);
    acc[a] += r.report.accuracy_pct / 3.0;
    auc[a] += r.report.auc_pct / 3.0;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "mean acc full=%.1f no_ddpm=%.1f enc_only=%.1f (chance 7.7, need full >= 30.8 and "
                "full >= no_ddpm >= enc_only); mean auc %.1f/%.1f/%.1f (enc_only lowest)",
                acc[0], acc[1], acc[2], auc[0], auc[1], auc[2]);
  detail = buf;
  const bool acc_ok = acc[0] >= 30.8 && acc[0] >= acc[1] && acc[1] >= acc[2];
  const bool auc_ok = auc[2] <= auc[0] && auc[2] <= auc[1];
  return acc_ok && auc_ok;
}

// --- 8: determinism ----------------------------------------------------------------------------

bool criterion_determinism(std::string& detail) {
  EpochedDataset toy = generate_separable_toy(16, 55);
  RunConfig cfg;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 8;
  cfg.train.T = 10;
  cfg.train.seed = 91;
  cfg.model = miniature_net();

  auto one_run = [&](std::string& csv, std::string& report_json) {
    FitResult r = fit(cfg.train, cfg.model, toy);
    csv = r.history.to_csv();
    report_json = evaluate_model(r.model, r.split.test, cfg.train.seed, cfg.to_json()).to_json().dump(2);
  };
  std::string csv1, csv2, rep1, rep2;
  one_run(csv1, rep1);
  one_run(csv2, rep2);
  detail = csv1 == csv2 ? "history and report byte-identical across reruns" : "artifacts differ between reruns";
  return csv1 == csv2 && rep1 == rep2;
}

// --- 9: format round trips ------------------------------------------------------------------------

bool criterion_formats(std::string& detail) {
  const fs::path dir = fs::temp_directory_path() / "diffe_acceptance";
  fs::create_directories(dir);
  bool ok = true;
  std::string why;

  // dataset container
  EpochedDataset d = generate_separable_toy(10, 77);
  const fs::path dpath = dir / "toy.bin";
  save_dataset(d, dpath);
  EpochedDataset d2 = load_dataset(dpath);
  const fs::path dpath2 = dir / "toy2.bin";
  save_dataset(d2, dpath2);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  if (slurp(dpath) != slurp(dpath2)) {
    ok = false;
    why = "dataset round trip not byte-stable";
  }

  // checkpoint
  DiffEModel m = DiffEModel::build(miniature_net(), Ablation::full, 5);
  const fs::path cpath = dir / "model.diffe";
  save_checkpoint(m, cpath);
  DiffEModel m2 = load_checkpoint(cpath);
  const auto pa = m.all_parameters();
  const auto pb = m2.all_parameters();
  for (size_t i = 0; i < pa.size() && ok; ++i) {
    auto va = pa[i].tensor.values();
    auto vb = pb[i].tensor.values();
    if (!std::equal(va.begin(), va.end(), vb.begin())) {
      ok = false;
      why = "checkpoint parameters differ after reload";
    }
  }

  // corruption must surface as FormatError (CLI exit code 2)
  fs::resize_file(dpath, fs::file_size(dpath) - 5);
  try {
    load_dataset(dpath);
    ok = false;
    why = "truncated dataset loaded silently";
  } catch (const FormatError&) {
  }
  fs::resize_file(cpath, fs::file_size(cpath) - 5);
  try {
    load_checkpoint(cpath);
    ok = false;
    why = "truncated checkpoint loaded silently";
  } catch (const FormatError&) {
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  detail = ok ? "dataset and checkpoint round-trip bit-exactly; corruption raises format errors" : why;
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<Criterion> criteria = {
      {1, "gradient correctness (finite differences, 4 networks, 20 seeds)", criterion_gradients},
      {2, "diffusion schedule math and composition equivalence", criterion_diffusion},
      {3, "loss composition total == cae + 0.1*cls at every smoke-run step", criterion_loss_composition},
      {4, "preprocessing filter responses and common average reference", criterion_filters},
      {5, "macro AUC equals the pairwise counting oracle", criterion_auc},
      {6, "learning sanity on the separable toy set", criterion_toy_learning},
      {7, "ablation trend on the default synthetic dataset", criterion_trend},
      {8, "rerun determinism of history CSV and report JSON", criterion_determinism},
      {9, "container and checkpoint round trips, corruption detection", criterion_formats},
  };

  std::set<int> wanted;
  bool all = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "all") == 0)
      all = true;
    else
      wanted.insert(std::atoi(argv[i]));
  }
  if (!all && wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 8, 9};  // fast set; 7 runs in its own lane

  for (const auto& c : criteria) {
    if (!all && !wanted.count(c.id)) continue;
    std::string detail;
    bool ok = false;
    const auto t0 = clk::now();
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    report(c.id, c.title, ok, detail, std::chrono::duration<double>(clk::now() - t0).count());
  }
  return g_failures == 0 ? 0 : 1;
}
