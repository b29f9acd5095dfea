#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mrefine/eval.hpp"
#include "mrefine/imr.hpp"
#include "mrefine/losses.hpp"
#include "mrefine/ncc.hpp"
#include "mrefine/synthgen.hpp"

namespace mrefine {

struct EvalSettings {
  EvalOptions options;
  // Allocation only reassigns when the best ground truth reaches this box IoU.
  double alloc_min_iou = 0.0;
};

struct NccSettings {
  NccProblemConfig problem;
  NccFitConfig fit;
  std::size_t topk = 5;
};

struct RunConfig {
  SynthConfig synth;
  IMRConfig imr;
  LossConfig losses;
  NccSettings ncc;
  EvalSettings eval;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string input_dir;
  std::string output_dir;
};

// Parses and validates a config document. Missing keys keep their defaults.
// Throws ConfigError whose path() is the offending JSON path, e.g.
// "imr.iterations".
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Re-runs every constraint check; used after command-line overrides.
void validate_config(const RunConfig& config);

// Canonical echo of everything that can influence results. `jobs` and the
// directories are omitted so runs that differ only in those compare equal.
std::string effective_config_json(const RunConfig& config);

}  // namespace mrefine
