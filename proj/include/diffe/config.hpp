#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "diffe/networks.hpp"
#include "diffe/signal.hpp"
#include "diffe/synth.hpp"
#include "diffe/training.hpp"

namespace diffe {

// One JSON document with sections {data, pipeline, model, train, eval}.
// Parsing is strict: unknown keys anywhere are a config error, missing keys
// take the defaults below, and the fully resolved document is echoed into
// every run directory.
struct RunConfig {
  SynthSpec data;
  PipelineConfig pipeline;
  NetworkConfig model;
  TrainConfig train;
  // `eval` carries no knobs yet; an empty object is accepted.

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::filesystem::path& path);
};

// Applies a "section.key=value" override (value parsed as JSON, falling back
// to a raw string) onto a config document.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace diffe
