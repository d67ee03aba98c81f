#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffe/dataset.hpp"
#include "diffe/networks.hpp"
#include "diffe/tensor.hpp"

namespace diffe {

// Percentage of argmax hits; score ties break toward the lowest class index.
double accuracy(const Tensor& scores, const std::vector<int>& labels);

// One-vs-rest macro AUC as a percentage. Per class, the binary AUC is the
// Mann-Whitney rank statistic with 0.5 credit for ties. Every class must
// appear in the labels.
double auc_ovr_macro(const Tensor& scores, const std::vector<int>& labels);

// confusion[true][pred]; trace/N equals accuracy/100 exactly.
std::vector<std::vector<int>> confusion_matrix(const Tensor& scores, const std::vector<int>& labels);

struct RunReport {
  double accuracy_pct = 0;
  double auc_pct = 0;
  std::vector<std::vector<int>> confusion;
  std::vector<double> per_class_accuracy_pct;
  int n_test = 0;
  std::uint64_t seed = 0;
  nlohmann::ordered_json config_echo;  // fully resolved run config

  nlohmann::ordered_json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
};

// Scores a dataset with the inference path and assembles the report.
RunReport evaluate_model(const DiffEModel& model, const EpochedDataset& dataset, std::uint64_t seed,
                         nlohmann::ordered_json config_echo);

// Mean and population std of accuracy/AUC per ablation arm, rows ordered
// full, no_ddpm, no_ddpm_no_decoder. All runs must share the dataset
// config; within one repetition seed the arms must share the split.
struct AblationRow {
  std::string arm;
  int runs = 0;
  double acc_mean = 0, acc_std = 0;
  double auc_mean = 0, auc_std = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  std::string to_csv() const;
  std::string to_text() const;  // aligned columns
};

AblationTable ablation_report(const std::vector<RunReport>& runs);

}  // namespace diffe
