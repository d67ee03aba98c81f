#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "diffe/errors.hpp"

namespace diffe {

// Continuous multichannel signal with task-onset events.
struct ContinuousRecording {
  std::vector<std::vector<double>> data;  // [channel][sample]
  double fs = 0.0;
  std::vector<std::string> channel_names;
  std::vector<std::pair<std::int64_t, int>> events;  // (sample index, class id)
  std::vector<std::string> class_names;
  std::string provenance;

  int channels() const { return static_cast<int>(data.size()); }
  std::int64_t samples() const { return data.empty() ? 0 : static_cast<std::int64_t>(data[0].size()); }
  void validate() const;
};

// Labeled fixed-length trials, row-major [n][channels][L].
struct EpochedDataset {
  std::vector<double> epochs;
  int n = 0;
  int channels = 0;
  int L = 0;
  double fs = 0.0;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::string provenance;

  int n_classes() const { return static_cast<int>(class_names.size()); }
  const double* trial(int i) const { return &epochs[static_cast<size_t>(i) * channels * L]; }
  double* trial(int i) { return &epochs[static_cast<size_t>(i) * channels * L]; }
  void validate() const;
};

// On-disk container shared by raw and preprocessed datasets: one line of
// UTF-8 JSON (format_version, kind, n, channels, L, fs, class_names,
// provenance, events for continuous data) terminated by '\n', then the
// sample payload as little-endian float32 [n][channels][L], then int32
// labels[n]. Continuous recordings are stored as a single segment with the
// event list in the header.
inline constexpr int kDatasetFormatVersion = 1;

void save_dataset(const EpochedDataset& dataset, const std::filesystem::path& path);
EpochedDataset load_dataset(const std::filesystem::path& path);

void save_recording(const ContinuousRecording& recording, const std::filesystem::path& path);
ContinuousRecording load_recording(const std::filesystem::path& path);

// Peeks at the header's "kind" field ("continuous" or "epoched").
std::string dataset_kind(const std::filesystem::path& path);

}  // namespace diffe
