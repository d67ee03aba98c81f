#include "diffe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

namespace diffe {

namespace {

void validate_eval_inputs(const Tensor& scores, const std::vector<int>& labels) {
  if (scores.ndim() != 2) throw DimensionError("metrics: scores must be [N,K]");
  const int N = scores.dim(0), K = scores.dim(1);
  if (N < 1) throw DataError("metrics: empty input");
  if (static_cast<int>(labels.size()) != N) throw DimensionError("metrics: labels do not match scores");
  for (int y : labels)
    if (y < 0 || y >= K) throw DataError("metrics: label " + std::to_string(y) + " out of range");
}

int argmax_row(const double* row, int K) {
  int best = 0;
  for (int k = 1; k < K; ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

}  // namespace

double accuracy(const Tensor& scores, const std::vector<int>& labels) {
  validate_eval_inputs(scores, labels);
  const int N = scores.dim(0), K = scores.dim(1);
  auto sv = scores.values();
  int hits = 0;
  for (int i = 0; i < N; ++i)
    if (argmax_row(&sv[static_cast<size_t>(i) * K], K) == labels[static_cast<size_t>(i)]) ++hits;
  return 100.0 * hits / N;
}

double auc_ovr_macro(const Tensor& scores, const std::vector<int>& labels) {
  validate_eval_inputs(scores, labels);
  const int N = scores.dim(0), K = scores.dim(1);
  std::vector<int> counts(static_cast<size_t>(K), 0);
  for (int y : labels) ++counts[static_cast<size_t>(y)];
  std::string missing;
  for (int k = 0; k < K; ++k)
    if (counts[static_cast<size_t>(k)] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(k);
  if (!missing.empty()) throw DataError("auc_ovr_macro: classes absent from labels: " + missing);

  auto sv = scores.values();
  std::vector<int> order(static_cast<size_t>(N));
  std::vector<double> rank(static_cast<size_t>(N));
  double macro = 0.0;
  for (int k = 0; k < K; ++k) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return sv[static_cast<size_t>(a) * K + k] < sv[static_cast<size_t>(b) * K + k];
    });
    // average ranks over tied blocks (1-based)
    int i = 0;
    while (i < N) {
      int j = i + 1;
      while (j < N &&
             sv[static_cast<size_t>(order[static_cast<size_t>(j)]) * K + k] ==
                 sv[static_cast<size_t>(order[static_cast<size_t>(i)]) * K + k])
        ++j;
      const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
      for (int m = i; m < j; ++m) rank[static_cast<size_t>(order[static_cast<size_t>(m)])] = avg;
      i = j;
    }
    const double n1 = counts[static_cast<size_t>(k)];
    const double n0 = static_cast<double>(N) - n1;
    double rank_sum = 0.0;
    for (int m = 0; m < N; ++m)
      if (labels[static_cast<size_t>(m)] == k) rank_sum += rank[static_cast<size_t>(m)];
    macro += (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
  }
  return 100.0 * macro / K;
}

std::vector<std::vector<int>> confusion_matrix(const Tensor& scores, const std::vector<int>& labels) {
  validate_eval_inputs(scores, labels);
  const int N = scores.dim(0), K = scores.dim(1);
  auto sv = scores.values();
  std::vector<std::vector<int>> m(static_cast<size_t>(K), std::vector<int>(static_cast<size_t>(K), 0));
  for (int i = 0; i < N; ++i)
    ++m[static_cast<size_t>(labels[static_cast<size_t>(i)])]
       [static_cast<size_t>(argmax_row(&sv[static_cast<size_t>(i) * K], K))];
  return m;
}

nlohmann::ordered_json RunReport::to_json() const {
  nlohmann::ordered_json j;
  j["accuracy_pct"] = accuracy_pct;
  j["auc_pct"] = auc_pct;
  j["per_class_accuracy_pct"] = per_class_accuracy_pct;
  j["confusion"] = confusion;
  j["n_test"] = n_test;
  j["seed"] = seed;
  j["config"] = config_echo;
  return j;
}

RunReport RunReport::from_json(const nlohmann::json& j) {
  RunReport r;
  try {
    r.accuracy_pct = j.at("accuracy_pct").get<double>();
    r.auc_pct = j.at("auc_pct").get<double>();
    r.per_class_accuracy_pct = j.at("per_class_accuracy_pct").get<std::vector<double>>();
    r.confusion = j.at("confusion").get<std::vector<std::vector<int>>>();
    r.n_test = j.at("n_test").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_echo = j.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run report: ") + e.what());
  }
  return r;
}

RunReport evaluate_model(const DiffEModel& model, const EpochedDataset& dataset, std::uint64_t seed,
                         nlohmann::ordered_json config_echo) {
  dataset.validate();
  if (dataset.n < 1) throw DataError("evaluate_model: empty dataset");
  const int K = model.config.n_classes;
  Tensor scores({dataset.n, K});
  auto out = scores.values();
  const size_t per = static_cast<size_t>(dataset.channels) * dataset.L;
  for (int start = 0; start < dataset.n; start += 64) {
    const int stop = std::min(dataset.n, start + 64);
    Tensor x({stop - start, dataset.channels, dataset.L});
    auto xv = x.values();
    for (int i = start; i < stop; ++i)
      std::copy_n(dataset.trial(i), per, &xv[static_cast<size_t>(i - start) * per]);
    Tensor s = model.infer_scores(x);
    std::copy_n(s.values().begin(), s.values().size(), out.begin() + static_cast<size_t>(start) * K);
  }

  RunReport r;
  r.accuracy_pct = accuracy(scores, dataset.labels);
  r.auc_pct = auc_ovr_macro(scores, dataset.labels);
  r.confusion = confusion_matrix(scores, dataset.labels);
  r.n_test = dataset.n;
  r.seed = seed;
  r.config_echo = std::move(config_echo);
  r.per_class_accuracy_pct.assign(static_cast<size_t>(K), 0.0);
  for (int k = 0; k < K; ++k) {
    const auto& row = r.confusion[static_cast<size_t>(k)];
    const int total = std::accumulate(row.begin(), row.end(), 0);
    r.per_class_accuracy_pct[static_cast<size_t>(k)] =
        total > 0 ? 100.0 * row[static_cast<size_t>(k)] / total : 0.0;
  }
  return r;
}

namespace {

std::string arm_of(const RunReport& r) {
  try {
    return r.config_echo.at("train").at("ablation").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("ablation_report: run config lacks train.ablation");
  }
}

void require_shared_setup(const std::vector<RunReport>& runs) {
  if (runs.empty()) throw ConfigError("ablation_report: no runs");
  const auto data0 = runs.front().config_echo.value("data", nlohmann::json::object());
  std::map<std::uint64_t, nlohmann::json> split_by_seed;
  for (const RunReport& r : runs) {
    if (r.config_echo.value("data", nlohmann::json::object()) != data0)
      throw ConfigError("ablation_report: runs were made from different datasets");
    nlohmann::json split;
    try {
      const auto& train = r.config_echo.at("train");
      split = {{"seed", train.at("seed")}, {"test_fraction", train.at("test_fraction")}};
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("ablation_report: run config lacks split fields");
    }
    auto [it, inserted] = split_by_seed.emplace(r.seed, split);
    if (!inserted && it->second != split)
      throw ConfigError("ablation_report: runs with seed " + std::to_string(r.seed) + " use different splits");
  }
}

}  // namespace

AblationTable ablation_report(const std::vector<RunReport>& runs) {
  require_shared_setup(runs);
  const std::vector<std::string> arm_order = {"full", "no_ddpm", "no_ddpm_no_decoder"};
  AblationTable table;
  for (const std::string& arm : arm_order) {
    std::vector<double> acc, auc;
    for (const RunReport& r : runs)
      if (arm_of(r) == arm) {
        acc.push_back(r.accuracy_pct);
        auc.push_back(r.auc_pct);
      }
    if (acc.empty()) continue;
    auto mean = [](const std::vector<double>& v) {
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    auto pop_std = [&mean](const std::vector<double>& v) {
      const double m = mean(v);
      double acc2 = 0.0;
      for (double x : v) acc2 += (x - m) * (x - m);
      return std::sqrt(acc2 / static_cast<double>(v.size()));
    };
    AblationRow row;
    row.arm = arm;
    row.runs = static_cast<int>(acc.size());
    row.acc_mean = mean(acc);
    row.acc_std = pop_std(acc);
    row.auc_mean = mean(auc);
    row.auc_std = pop_std(auc);
    table.rows.push_back(row);
  }
  return table;
}

std::string AblationTable::to_csv() const {
  std::string out = "arm,runs,accuracy_mean,accuracy_std,auc_mean,auc_std\n";
  char buf[256];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%.17g,%.17g,%.17g\n", r.arm.c_str(), r.runs, r.acc_mean, r.acc_std,
                  r.auc_mean, r.auc_std);
    out += buf;
  }
  return out;
}

std::string AblationTable::to_text() const {
  std::string out = "arm                  runs  accuracy (%)        auc (%)\n";
  char buf[256];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%-20s %4d  %7.2f +/- %-6.2f  %7.2f +/- %-6.2f\n", r.arm.c_str(), r.runs,
                  r.acc_mean, r.acc_std, r.auc_mean, r.auc_std);
    out += buf;
  }
  return out;
}

}  // namespace diffe
