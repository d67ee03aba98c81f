#pragma once

#include <cstdint>
#include <vector>

#include "diffe/config.hpp"
#include "diffe/metrics.hpp"
#include "diffe/training.hpp"

namespace diffe {

struct AblationRun {
  Ablation arm = Ablation::full;
  std::uint64_t seed = 0;
  RunReport report;
  TrainHistory history;
  std::optional<DiffEModel> model;
};

// Trains every (seed, arm) pair on the shared dataset and evaluates each on
// its held-out split. The three arms of one seed run sequentially on the
// same split; distinct seeds may run on parallel threads (each run is
// single-threaded and deterministic, so `jobs` never changes results).
// Results are ordered seed-major, arms in full/no_ddpm/no_ddpm_no_decoder
// order.
std::vector<AblationRun> run_ablation(const RunConfig& base, const EpochedDataset& dataset,
                                      const std::vector<std::uint64_t>& seeds, int jobs = 1);

}  // namespace diffe
