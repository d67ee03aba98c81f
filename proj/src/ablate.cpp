#include "diffe/ablate.hpp"

#include <atomic>
#include <thread>

namespace diffe {

std::vector<AblationRun> run_ablation(const RunConfig& base, const EpochedDataset& dataset,
                                      const std::vector<std::uint64_t>& seeds, int jobs) {
  if (seeds.empty()) throw ConfigError("run_ablation: need at least one seed");
  if (jobs < 1) throw ConfigError("run_ablation: jobs must be >= 1");
  dataset.validate();

  const std::vector<Ablation> arms = {Ablation::full, Ablation::no_ddpm, Ablation::no_ddpm_no_decoder};
  std::vector<AblationRun> results(seeds.size() * arms.size());

  auto run_seed = [&](size_t seed_idx) {
    for (size_t ai = 0; ai < arms.size(); ++ai) {
      RunConfig cfg = base;
      cfg.train.seed = seeds[seed_idx];
      cfg.train.ablation = arms[ai];
      cfg.model.in_channels = dataset.channels;
      cfg.model.n_classes = dataset.n_classes();
      FitResult fit_result = fit(cfg.train, cfg.model, dataset);
      AblationRun& slot = results[seed_idx * arms.size() + ai];
      slot.arm = arms[ai];
      slot.seed = seeds[seed_idx];
      slot.report = evaluate_model(fit_result.model, fit_result.split.test, cfg.train.seed, cfg.to_json());
      slot.history = std::move(fit_result.history);
      slot.model = std::move(fit_result.model);
    }
  };

  if (jobs == 1 || seeds.size() == 1) {
    for (size_t i = 0; i < seeds.size(); ++i) run_seed(i);
  } else {
    std::atomic<size_t> next{0};
    auto worker = [&]() {
      for (size_t i = next.fetch_add(1); i < seeds.size(); i = next.fetch_add(1)) run_seed(i);
    };
    std::vector<std::thread> pool;
    const size_t n_threads = std::min<size_t>(static_cast<size_t>(jobs), seeds.size());
    pool.reserve(n_threads);
    for (size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return results;
}

}  // namespace diffe
