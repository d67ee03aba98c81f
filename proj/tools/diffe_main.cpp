// diffe — synthetic data generation, preprocessing, training and evaluation
// for the Diff-E time-series classifier.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "diffe/ablate.hpp"
#include "diffe/config.hpp"
#include "diffe/dataset.hpp"
#include "diffe/metrics.hpp"
#include "diffe/networks.hpp"
#include "diffe/signal.hpp"
#include "diffe/synth.hpp"
#include "diffe/training.hpp"

namespace {

using diffe::RunConfig;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

json load_config_doc(const CommonOpts& opts) {
  json doc = json::object();
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) throw diffe::IoError("cannot open config " + opts.config_path);
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw diffe::ConfigError(opts.config_path + ": invalid JSON: " + e.what());
    }
  }
  for (const std::string& o : opts.overrides) diffe::apply_override(doc, o);
  return doc;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw diffe::IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw diffe::IoError("failed writing " + path.string());
}

std::filesystem::path make_run_dir(const std::string& out_dir, const std::string& run_dir, std::uint64_t seed) {
  std::filesystem::path dir;
  if (!run_dir.empty()) {
    dir = run_dir;
  } else {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm_utc);
    dir = std::filesystem::path(out_dir) / (std::string(stamp) + "_" + std::to_string(seed));
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw diffe::IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  return dir;
}

diffe::EpochedDataset load_epoched(const std::string& path) {
  if (diffe::dataset_kind(path) == "continuous")
    throw diffe::ConfigError(path + " holds a continuous recording; run `diffe preprocess` first");
  return diffe::load_dataset(path);
}

int cmd_generate(const CommonOpts& common, const std::string& out_path) {
  RunConfig cfg = RunConfig::from_json(load_config_doc(common));
  diffe::ContinuousRecording rec = diffe::generate(cfg.data);
  diffe::save_recording(rec, out_path);
  std::vector<int> counts(static_cast<size_t>(cfg.data.n_classes), 0);
  for (const auto& [idx, cls] : rec.events) ++counts[static_cast<size_t>(cls)];
  std::printf("wrote %s: %zu trials, %d channels, %lld samples, fs %.6g Hz\n", out_path.c_str(),
              rec.events.size(), rec.channels(), static_cast<long long>(rec.samples()), rec.fs);
  std::printf("class counts:");
  for (int c : counts) std::printf(" %d", c);
  std::printf("\n");
  return kExitOk;
}

int cmd_preprocess(const CommonOpts& common, const std::string& in_path, const std::string& out_path) {
  RunConfig cfg = RunConfig::from_json(load_config_doc(common));
  diffe::ContinuousRecording rec = diffe::load_recording(in_path);
  diffe::EpochResult res = diffe::preprocess(rec, cfg.pipeline);
  diffe::save_dataset(res.dataset, out_path);
  std::printf("wrote %s: %d epochs of %d x %d at fs %.6g Hz (%d event(s) skipped)\n", out_path.c_str(),
              res.dataset.n, res.dataset.channels, res.dataset.L, res.dataset.fs, res.skipped_events);
  return kExitOk;
}

int cmd_train(const CommonOpts& common, const std::string& data_path, const std::string& out_dir,
              const std::string& run_dir) {
  RunConfig cfg = RunConfig::from_json(load_config_doc(common));
  diffe::EpochedDataset dataset = load_epoched(data_path);
  cfg.model.in_channels = dataset.channels;
  cfg.model.n_classes = dataset.n_classes();

  const std::filesystem::path dir = make_run_dir(out_dir, run_dir, cfg.train.seed);
  const auto config_echo = cfg.to_json();
  write_text(dir / "config.json", config_echo.dump(2) + "\n");

  diffe::FitResult result = diffe::fit(cfg.train, cfg.model, dataset, dir / "checkpoint.diffe");
  write_text(dir / "history.csv", result.history.to_csv());
  diffe::save_checkpoint(result.model, dir / "checkpoint.diffe");

  diffe::RunReport report = diffe::evaluate_model(result.model, result.split.test, cfg.train.seed, config_echo);
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");

  std::printf("run %s: ablation=%s epochs=%d test accuracy %.2f%%, macro AUC %.2f%%\n", dir.string().c_str(),
              to_string(cfg.train.ablation).c_str(), cfg.train.epochs, report.accuracy_pct, report.auc_pct);
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path, const std::string& out_path) {
  diffe::DiffEModel model = diffe::load_checkpoint(checkpoint_path);
  diffe::EpochedDataset dataset = load_epoched(data_path);
  if (dataset.channels != model.config.in_channels || dataset.n_classes() != model.config.n_classes)
    throw diffe::ConfigError("dataset (" + std::to_string(dataset.channels) + " ch, " +
                             std::to_string(dataset.n_classes()) + " classes) does not match checkpoint (" +
                             std::to_string(model.config.in_channels) + " ch, " +
                             std::to_string(model.config.n_classes) + " classes)");
  nlohmann::ordered_json echo;
  echo["model"] = {{"in_channels", model.config.in_channels},
                   {"n_classes", model.config.n_classes},
                   {"latent_dim", model.config.latent_dim}};
  echo["train"] = {{"ablation", to_string(model.ablation)}};
  diffe::RunReport report = diffe::evaluate_model(model, dataset, 0, echo);
  if (!out_path.empty()) write_text(out_path, report.to_json().dump(2) + "\n");
  std::printf("accuracy %.2f%%, macro AUC %.2f%% over %d trials\n", report.accuracy_pct, report.auc_pct,
              report.n_test);
  return kExitOk;
}

int cmd_ablate(const CommonOpts& common, const std::string& data_path, const std::string& out_dir,
               const std::vector<std::uint64_t>& seeds, int jobs) {
  RunConfig cfg = RunConfig::from_json(load_config_doc(common));
  diffe::EpochedDataset dataset = load_epoched(data_path);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw diffe::IoError("cannot create " + out_dir + ": " + ec.message());

  const auto runs = diffe::run_ablation(cfg, dataset, seeds, jobs);
  std::vector<diffe::RunReport> reports;
  for (const auto& run : runs) {
    const std::filesystem::path dir =
        std::filesystem::path(out_dir) / (to_string(run.arm) + "_seed" + std::to_string(run.seed));
    std::filesystem::create_directories(dir, ec);
    if (ec) throw diffe::IoError("cannot create " + dir.string() + ": " + ec.message());
    write_text(dir / "config.json", run.report.config_echo.dump(2) + "\n");
    write_text(dir / "history.csv", run.history.to_csv());
    write_text(dir / "report.json", run.report.to_json().dump(2) + "\n");
    diffe::save_checkpoint(*run.model, dir / "checkpoint.diffe");
    reports.push_back(run.report);
  }
  const diffe::AblationTable table = diffe::ablation_report(reports);
  write_text(std::filesystem::path(out_dir) / "ablation.csv", table.to_csv());
  write_text(std::filesystem::path(out_dir) / "ablation.txt", table.to_text());
  std::fputs(table.to_text().c_str(), stdout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diff-E: diffusion-conditioned autoencoder training on multichannel time series"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string data_path, out_path, in_path, out_dir = "runs", run_dir, checkpoint_path;
  std::string seeds_arg = "1";
  int jobs = 1;

  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file");
    sub->add_option("--set", common.overrides, "override, e.g. --set train.alpha=0.1")->take_all();
  };

  CLI::App* generate = app.add_subcommand("generate", "synthesize a continuous recording");
  add_common(generate);
  generate->add_option("--out", out_path, "output dataset file")->required();
  generate->add_option("--seed", [&common](const std::vector<std::string>& v) {
    common.overrides.push_back("data.seed=" + v.back());
    return true;
  }, "shorthand for --set data.seed=N");

  CLI::App* preprocess = app.add_subcommand("preprocess", "filter, re-reference and epoch a recording");
  add_common(preprocess);
  preprocess->add_option("--in", in_path, "continuous recording file")->required();
  preprocess->add_option("--out", out_path, "output epoched dataset")->required();

  CLI::App* train = app.add_subcommand("train", "train one model and evaluate on the held-out split");
  add_common(train);
  train->add_option("--data", data_path, "epoched dataset file")->required();
  train->add_option("--out-dir", out_dir, "parent for timestamped run directories");
  train->add_option("--run-dir", run_dir, "exact run directory (overrides --out-dir)");
  train->add_option("--seed", [&common](const std::vector<std::string>& v) {
    common.overrides.push_back("train.seed=" + v.back());
    return true;
  }, "shorthand for --set train.seed=N");
  train->add_option("--epochs", [&common](const std::vector<std::string>& v) {
    common.overrides.push_back("train.epochs=" + v.back());
    return true;
  }, "shorthand for --set train.epochs=N");
  train->add_option("--ablation", [&common](const std::vector<std::string>& v) {
    common.overrides.push_back("train.ablation=" + v.back());
    return true;
  }, "full | no_ddpm | no_ddpm_no_decoder");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--data", data_path, "epoched dataset file")->required();
  eval->add_option("--out", out_path, "write the report JSON here");

  CLI::App* ablate = app.add_subcommand("ablate", "train all ablation arms over one or more seeds");
  add_common(ablate);
  ablate->add_option("--data", data_path, "epoched dataset file")->required();
  ablate->add_option("--out-dir", out_dir, "output directory")->required();
  ablate->add_option("--seeds", seeds_arg, "comma-separated repetition seeds, e.g. 1,2,3");
  ablate->add_option("--jobs", jobs, "seeds trained in parallel (results are unaffected)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (generate->parsed()) return cmd_generate(common, out_path);
    if (preprocess->parsed()) return cmd_preprocess(common, in_path, out_path);
    if (train->parsed()) return cmd_train(common, data_path, out_dir, run_dir);
    if (eval->parsed()) return cmd_eval(checkpoint_path, data_path, out_path);
    if (ablate->parsed()) {
      std::vector<std::uint64_t> seeds;
      std::string token;
      for (char ch : seeds_arg + ",") {
        if (ch == ',') {
          if (!token.empty()) seeds.push_back(std::stoull(token));
          token.clear();
        } else {
          token += ch;
        }
      }
      return cmd_ablate(common, data_path, out_dir, seeds, jobs);
    }
  } catch (const diffe::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const diffe::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const diffe::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
