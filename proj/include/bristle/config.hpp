#pragma once

// Flat key-value experiment configuration:
//
//   # comment
//   rule = "bristle"
//   bristle.alpha = 0.4
//
// Unknown keys are rejected, missing keys keep their defaults, and echo()
// prints every key so a run can be reproduced from its output directory.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bristle/sim.hpp"

namespace bristle {

enum class ExtractorKind { RandomProjection, Precomputed };

struct DataConfig {
  std::filesystem::path dir = "data/mnist";  // IDX files, standard MNIST names
  std::size_t trainLimit = 0;                // 0 keeps every sample
  std::size_t testLimit = 0;

  ExtractorKind extractor = ExtractorKind::RandomProjection;
  std::size_t featureDim = 800;
  std::uint64_t extractorSeed = 7;
  double gain = 8.0;
  double leakySlope = 0.01;
  std::size_t declaredParams = 0;  // 0: derive from the extractor
  std::filesystem::path trainFeatures, trainLabels, testFeatures, testLabels;  // precomputed kind
};

struct ExperimentConfig {
  SimulationConfig sim;
  DataConfig data;
};

/// A key = value pair exactly as written (value unquoted).
using ConfigEntry = std::pair<std::string, std::string>;

/// Splits a document into entries; throws ConfigError on syntax errors.
std::vector<ConfigEntry> parseEntries(const std::string& text);

/// Applies one entry; throws ConfigError naming the key, the value and the
/// allowed range on unknown keys or bad values.
void applyEntry(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Cross-key checks (e.g. the familiar weight must be positive at s = 0).
void validate(const ExperimentConfig& config);

ExperimentConfig parseConfig(const std::string& text);
ExperimentConfig loadConfig(const std::filesystem::path& path);

/// Every key with its resolved value, in a stable order.
std::string echo(const ExperimentConfig& config);

std::vector<std::string> configKeys();

/// Shortest round-trip decimal text, independent of locale.
std::string formatNumber(double value);

}  // namespace bristle
