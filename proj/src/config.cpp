#include "diffe/config.hpp"

#include <fstream>
#include <set>

namespace diffe {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

[[noreturn]] void bad_field(const std::string& path, const std::string& why) {
  throw ConfigError(path + ": " + why);
}

void reject_unknown(const json& obj, const std::string& section, const std::set<std::string>& known) {
  for (const auto& [key, value] : obj.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
}

template <typename T>
void read_field(const json& obj, const std::string& section, const std::string& key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    bad_field(section + "." + key, "wrong type");
  }
}

json section_or_empty(const json& doc, const std::string& name) {
  if (!doc.contains(name)) return json::object();
  const json& s = doc.at(name);
  if (!s.is_object()) throw ConfigError("config section '" + name + "' must be an object");
  return s;
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  pipeline.validate();
  model.validate();
  train.validate();
}

ordered_json RunConfig::to_json() const {
  ordered_json doc;
  ordered_json d;
  d["n_classes"] = data.n_classes;
  d["trials_per_class"] = data.trials_per_class;
  d["channels"] = data.channels;
  d["fs"] = data.fs;
  d["epoch_s"] = data.epoch_s;
  d["carrier_lo"] = data.carrier_lo;
  d["carrier_hi"] = data.carrier_hi;
  d["burst_amp"] = data.burst_amp;
  d["pink_noise"] = data.pink_noise;
  d["line_noise"] = data.line_noise;
  d["line_freq"] = data.line_freq;
  d["seed"] = data.seed;
  doc["data"] = std::move(d);

  ordered_json p;
  p["bandpass_lo"] = pipeline.bandpass_lo;
  p["bandpass_hi"] = pipeline.bandpass_hi;
  p["notch_freqs"] = pipeline.notch_freqs;
  p["notch_q"] = pipeline.notch_q;
  p["filter_order"] = pipeline.filter_order;
  p["artifact_removal"] = pipeline.artifact_removal;
  p["band_select"] = pipeline.band_select;
  p["band_lo"] = pipeline.band_lo;
  p["band_hi"] = pipeline.band_hi;
  p["epoch_s"] = pipeline.epoch_s;
  p["baseline_s"] = pipeline.baseline_s;
  doc["pipeline"] = std::move(p);

  ordered_json m;
  m["in_channels"] = model.in_channels;
  m["n_classes"] = model.n_classes;
  m["denoiser_base"] = model.denoiser_base;
  m["denoiser_mults"] = model.denoiser_mults;
  m["time_embed_dim"] = model.time_embed_dim;
  m["encoder_base"] = model.encoder_base;
  m["latent_dim"] = model.latent_dim;
  m["decoder_widths"] = model.decoder_widths;
  m["tap_channels"] = model.tap_channels;
  m["classifier_hidden"] = model.classifier_hidden;
  m["kernel"] = model.kernel;
  m["groups"] = model.groups;
  doc["model"] = std::move(m);

  ordered_json t;
  t["epochs"] = train.epochs;
  t["alpha"] = train.alpha;
  t["base_lr"] = train.base_lr;
  t["max_lr"] = train.max_lr;
  t["cycle_len"] = train.cycle_len;
  t["batch_size"] = train.batch_size;
  t["seed"] = train.seed;
  t["test_fraction"] = train.test_fraction;
  t["T"] = train.T;
  t["ablation"] = to_string(train.ablation);
  t["cae_target"] = to_string(train.cae_target);
  t["detach_taps"] = train.detach_taps;
  doc["train"] = std::move(t);

  doc["eval"] = ordered_json::object();
  return doc;
}

RunConfig RunConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
  for (const auto& [key, value] : doc.items())
    if (key != "data" && key != "pipeline" && key != "model" && key != "train" && key != "eval")
      throw ConfigError("unknown config section '" + key + "'");

  RunConfig c;

  const json d = section_or_empty(doc, "data");
  reject_unknown(d, "data",
                 {"n_classes", "trials_per_class", "channels", "fs", "epoch_s", "carrier_lo", "carrier_hi",
                  "burst_amp", "pink_noise", "line_noise", "line_freq", "seed"});
  read_field(d, "data", "n_classes", c.data.n_classes);
  read_field(d, "data", "trials_per_class", c.data.trials_per_class);
  read_field(d, "data", "channels", c.data.channels);
  read_field(d, "data", "fs", c.data.fs);
  read_field(d, "data", "epoch_s", c.data.epoch_s);
  read_field(d, "data", "carrier_lo", c.data.carrier_lo);
  read_field(d, "data", "carrier_hi", c.data.carrier_hi);
  read_field(d, "data", "burst_amp", c.data.burst_amp);
  read_field(d, "data", "pink_noise", c.data.pink_noise);
  read_field(d, "data", "line_noise", c.data.line_noise);
  read_field(d, "data", "line_freq", c.data.line_freq);
  read_field(d, "data", "seed", c.data.seed);

  const json p = section_or_empty(doc, "pipeline");
  reject_unknown(p, "pipeline",
                 {"bandpass_lo", "bandpass_hi", "notch_freqs", "notch_q", "filter_order", "artifact_removal",
                  "band_select", "band_lo", "band_hi", "epoch_s", "baseline_s"});
  read_field(p, "pipeline", "bandpass_lo", c.pipeline.bandpass_lo);
  read_field(p, "pipeline", "bandpass_hi", c.pipeline.bandpass_hi);
  read_field(p, "pipeline", "notch_freqs", c.pipeline.notch_freqs);
  read_field(p, "pipeline", "notch_q", c.pipeline.notch_q);
  read_field(p, "pipeline", "filter_order", c.pipeline.filter_order);
  read_field(p, "pipeline", "artifact_removal", c.pipeline.artifact_removal);
  read_field(p, "pipeline", "band_select", c.pipeline.band_select);
  read_field(p, "pipeline", "band_lo", c.pipeline.band_lo);
  read_field(p, "pipeline", "band_hi", c.pipeline.band_hi);
  read_field(p, "pipeline", "epoch_s", c.pipeline.epoch_s);
  read_field(p, "pipeline", "baseline_s", c.pipeline.baseline_s);

  const json m = section_or_empty(doc, "model");
  reject_unknown(m, "model",
                 {"in_channels", "n_classes", "denoiser_base", "denoiser_mults", "time_embed_dim", "encoder_base",
                  "latent_dim", "decoder_widths", "tap_channels", "classifier_hidden", "kernel", "groups"});
  read_field(m, "model", "in_channels", c.model.in_channels);
  read_field(m, "model", "n_classes", c.model.n_classes);
  read_field(m, "model", "denoiser_base", c.model.denoiser_base);
  read_field(m, "model", "denoiser_mults", c.model.denoiser_mults);
  read_field(m, "model", "time_embed_dim", c.model.time_embed_dim);
  read_field(m, "model", "encoder_base", c.model.encoder_base);
  read_field(m, "model", "latent_dim", c.model.latent_dim);
  read_field(m, "model", "decoder_widths", c.model.decoder_widths);
  read_field(m, "model", "tap_channels", c.model.tap_channels);
  read_field(m, "model", "classifier_hidden", c.model.classifier_hidden);
  read_field(m, "model", "kernel", c.model.kernel);
  read_field(m, "model", "groups", c.model.groups);

  const json t = section_or_empty(doc, "train");
  reject_unknown(t, "train",
                 {"epochs", "alpha", "base_lr", "max_lr", "cycle_len", "batch_size", "seed", "test_fraction", "T",
                  "ablation", "cae_target", "detach_taps"});
  read_field(t, "train", "epochs", c.train.epochs);
  read_field(t, "train", "alpha", c.train.alpha);
  read_field(t, "train", "base_lr", c.train.base_lr);
  read_field(t, "train", "max_lr", c.train.max_lr);
  read_field(t, "train", "cycle_len", c.train.cycle_len);
  read_field(t, "train", "batch_size", c.train.batch_size);
  read_field(t, "train", "seed", c.train.seed);
  read_field(t, "train", "test_fraction", c.train.test_fraction);
  read_field(t, "train", "T", c.train.T);
  if (t.contains("ablation")) {
    std::string s;
    read_field(t, "train", "ablation", s);
    c.train.ablation = ablation_from_string(s);
  }
  if (t.contains("cae_target")) {
    std::string s;
    read_field(t, "train", "cae_target", s);
    c.train.cae_target = cae_target_from_string(s);
  }
  read_field(t, "train", "detach_taps", c.train.detach_taps);

  const json e = section_or_empty(doc, "eval");
  reject_unknown(e, "eval", {});

  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return from_json(doc);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // unquoted strings are taken verbatim
  }
  std::string pointer = "/";
  for (char ch : path) pointer += ch == '.' ? '/' : ch;
  try {
    doc[json::json_pointer(pointer)] = value;
  } catch (const json::exception& e) {
    throw ConfigError("override '" + assignment + "': " + e.what());
  }
}

}  // namespace diffe
