#include "diffe/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace diffe {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void write_f32_payload(std::ofstream& out, const std::vector<double>& values) {
  std::vector<float> buf(values.size());
  for (size_t i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void write_i32_payload(std::ofstream& out, const std::vector<int>& values) {
  std::vector<std::int32_t> buf(values.begin(), values.end());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(std::int32_t)));
}

json read_header(std::ifstream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header line");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": header is not valid JSON: " + e.what());
  }
  if (!header.is_object()) throw FormatError(path.string() + ": header must be a JSON object");
  if (!header.contains("format_version") || !header["format_version"].is_number_integer())
    throw FormatError(path.string() + ": header lacks format_version");
  const int version = header["format_version"].get<int>();
  if (version != kDatasetFormatVersion)
    throw FormatError(path.string() + ": unsupported format_version " + std::to_string(version) + ", expected " +
                      std::to_string(kDatasetFormatVersion));
  return header;
}

std::vector<double> read_f32_payload(std::ifstream& in, size_t count, const std::filesystem::path& path) {
  std::vector<float> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
  const auto got = static_cast<size_t>(in.gcount());
  if (got != count * sizeof(float))
    throw FormatError(path.string() + ": truncated sample payload, expected " +
                      std::to_string(count * sizeof(float)) + " bytes, got " + std::to_string(got));
  std::vector<double> values(count);
  for (size_t i = 0; i < count; ++i) values[i] = static_cast<double>(buf[i]);
  return values;
}

std::vector<int> read_i32_payload(std::ifstream& in, size_t count, const std::filesystem::path& path) {
  std::vector<std::int32_t> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(std::int32_t)));
  const auto got = static_cast<size_t>(in.gcount());
  if (got != count * sizeof(std::int32_t))
    throw FormatError(path.string() + ": truncated label payload, expected " +
                      std::to_string(count * sizeof(std::int32_t)) + " bytes, got " + std::to_string(got));
  return {buf.begin(), buf.end()};
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

ordered_json common_header(const std::string& kind, int n, int channels, int L, double fs,
                           const std::vector<std::string>& class_names, const std::string& provenance) {
  ordered_json h;
  h["format_version"] = kDatasetFormatVersion;
  h["kind"] = kind;
  h["n"] = n;
  h["channels"] = channels;
  h["L"] = L;
  h["fs"] = fs;
  h["class_names"] = class_names;
  h["provenance"] = provenance;
  return h;
}

}  // namespace

void ContinuousRecording::validate() const {
  if (channels() < 1) throw DataError("recording has no channels");
  if (!(fs > 0.0)) throw ConfigError("recording sampling rate must be positive");
  const auto len = samples();
  for (const auto& ch : data)
    if (static_cast<std::int64_t>(ch.size()) != len) throw DataError("recording channels have unequal lengths");
  for (const auto& [idx, cls] : events) {
    if (idx < 0 || idx >= len) throw DataError("event index " + std::to_string(idx) + " outside recording");
    if (cls < 0 || (!class_names.empty() && cls >= static_cast<int>(class_names.size())))
      throw DataError("event class " + std::to_string(cls) + " out of range");
  }
}

void EpochedDataset::validate() const {
  if (n < 0 || channels < 1 || L < 1) throw DataError("epoched dataset has invalid dimensions");
  if (epochs.size() != static_cast<size_t>(n) * channels * L) throw DataError("epoch buffer size mismatch");
  if (labels.size() != static_cast<size_t>(n)) throw DataError("label count mismatch");
  const int K = n_classes();
  for (int y : labels)
    if (y < 0 || (K > 0 && y >= K)) throw FormatError("label " + std::to_string(y) + " out of range");
}

void save_dataset(const EpochedDataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  auto out = open_for_write(path);
  ordered_json h = common_header("epoched", dataset.n, dataset.channels, dataset.L, dataset.fs,
                                 dataset.class_names, dataset.provenance);
  const std::string header = h.dump();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.put('\n');
  write_f32_payload(out, dataset.epochs);
  write_i32_payload(out, dataset.labels);
  if (!out) throw IoError("failed writing " + path.string());
}

EpochedDataset load_dataset(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  const json h = read_header(in, path);
  if (h.value("kind", "") != "epoched")
    throw FormatError(path.string() + ": expected an epoched dataset, found kind '" + h.value("kind", "?") + "'");
  EpochedDataset d;
  try {
    d.n = h.at("n").get<int>();
    d.channels = h.at("channels").get<int>();
    d.L = h.at("L").get<int>();
    d.fs = h.at("fs").get<double>();
    d.class_names = h.at("class_names").get<std::vector<std::string>>();
    d.provenance = h.value("provenance", "");
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad header field: " + e.what());
  }
  if (d.n < 0 || d.channels < 1 || d.L < 1) throw FormatError(path.string() + ": invalid dimensions in header");
  d.epochs = read_f32_payload(in, static_cast<size_t>(d.n) * d.channels * d.L, path);
  d.labels = read_i32_payload(in, static_cast<size_t>(d.n), path);
  try {
    d.validate();
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return d;
}

void save_recording(const ContinuousRecording& recording, const std::filesystem::path& path) {
  recording.validate();
  auto out = open_for_write(path);
  const int C = recording.channels();
  const auto len = recording.samples();
  ordered_json h =
      common_header("continuous", 1, C, static_cast<int>(len), recording.fs, recording.class_names,
                    recording.provenance);
  h["channel_names"] = recording.channel_names;
  ordered_json events = ordered_json::array();
  for (const auto& [idx, cls] : recording.events) events.push_back({idx, cls});
  h["events"] = std::move(events);
  const std::string header = h.dump();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.put('\n');
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(C) * len);
  for (const auto& ch : recording.data) flat.insert(flat.end(), ch.begin(), ch.end());
  write_f32_payload(out, flat);
  write_i32_payload(out, {0});  // single segment, label unused
  if (!out) throw IoError("failed writing " + path.string());
}

ContinuousRecording load_recording(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  const json h = read_header(in, path);
  if (h.value("kind", "") != "continuous")
    throw FormatError(path.string() + ": expected a continuous recording, found kind '" + h.value("kind", "?") +
                      "'");
  ContinuousRecording r;
  int C = 0, L = 0;
  try {
    C = h.at("channels").get<int>();
    L = h.at("L").get<int>();
    r.fs = h.at("fs").get<double>();
    r.class_names = h.at("class_names").get<std::vector<std::string>>();
    r.channel_names = h.value("channel_names", std::vector<std::string>{});
    r.provenance = h.value("provenance", "");
    for (const auto& ev : h.at("events"))
      r.events.emplace_back(ev.at(0).get<std::int64_t>(), ev.at(1).get<int>());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad header field: " + e.what());
  }
  if (C < 1 || L < 1) throw FormatError(path.string() + ": invalid dimensions in header");
  const auto flat = read_f32_payload(in, static_cast<size_t>(C) * L, path);
  read_i32_payload(in, 1, path);
  r.data.assign(static_cast<size_t>(C), std::vector<double>(static_cast<size_t>(L)));
  for (int c = 0; c < C; ++c)
    std::copy_n(flat.begin() + static_cast<size_t>(c) * L, L, r.data[static_cast<size_t>(c)].begin());
  try {
    r.validate();
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return r;
}

std::string dataset_kind(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  const json h = read_header(in, path);
  return h.value("kind", "");
}

}  // namespace diffe
