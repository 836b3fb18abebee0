#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "bkno/markov.hpp"
#include "bkno/params.hpp"

namespace bkno {

/// One fully specified scenario: deterministic matrices, nominal mode,
/// Markov chain over modes, simulation grid, initial data, RNG seed.
struct ScenarioConfig {
  OdeMatrices ode;
  ModeParams nominal;
  MarkovChainSpec markov;
  GridSpec grid;
  InitSpec init;
  ParamBounds bounds;
  std::uint64_t seed = 0;
};

/// Parse and fully validate a scenario document. Rejection is total: throws
/// parse_error (malformed document) or validation_error (named invariant)
/// without returning a partially built config.
ScenarioConfig load_config(const std::string& text);
ScenarioConfig load_config_file(const std::filesystem::path& path);

/// Serialize back to the external JSON schema (decimal doubles, 17 digits).
std::string save_config(const ScenarioConfig& cfg);

bool config_equal(const ScenarioConfig& a, const ScenarioConfig& b);

}  // namespace bkno
