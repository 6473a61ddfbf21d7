#pragma once

// Scenario and matrix execution with file outputs: metrics.csv,
// summary.json, accuracy_curve.svg per scenario; comparison.csv, cells.csv
// and one plot per rule group for a matrix.

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bristle/config.hpp"
#include "bristle/sim.hpp"

namespace bristle {

/// Reads the IDX files (or precomputed tables) and extracts features.
/// Throws FormatError/ConfigError with the offending path.
std::shared_ptr<const FeatureBank> loadFeatureBank(const DataConfig& data);

/// Memoizes loadFeatureBank by the data section of a config.
class FeatureBankCache {
 public:
  std::shared_ptr<const FeatureBank> get(const DataConfig& data);

 private:
  std::map<std::string, std::shared_ptr<const FeatureBank>> banks_;
};

struct ScenarioOutput {
  ExperimentResult result;
  std::filesystem::path dir;
};

/// Runs one scenario and writes config.txt, metrics.csv, summary.json and
/// accuracy_curve.svg under `outDir`.
ScenarioOutput runScenario(const ExperimentConfig& config, const std::filesystem::path& outDir,
                           std::shared_ptr<const FeatureBank> bank);

// CSV and JSON writers, exposed for tests.
std::string metricsCsv(const std::vector<MetricsRecord>& records);
std::string summaryJson(const ExperimentConfig& config, const ExperimentSummary& summary);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Static SVG line chart; y axis fixed to [0, 1].
std::string lineChartSvg(const std::string& title, const std::string& xLabel, const std::string& yLabel,
                         const std::vector<Series>& series);

/// Base settings plus sweep axes. In the text form an axis is written
/// `matrix.<key> = v1, v2, ...`; cells are the cartesian product in the order
/// the axes appear.
struct MatrixSpec {
  std::string name;
  std::vector<ConfigEntry> base;
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;

  std::size_t cellCount() const;
};

MatrixSpec parseMatrix(const std::string& text);
MatrixSpec loadMatrix(const std::filesystem::path& path);

struct MatrixCell {
  std::string label;  // directory name
  std::vector<ConfigEntry> assignment;
  ExperimentConfig config;
};

/// Resolves every cell; throws ConfigError if any cell is invalid.
std::vector<MatrixCell> expandMatrix(const MatrixSpec& spec);

struct MatrixOutcome {
  std::size_t cells = 0;
  std::size_t failed = 0;
};

/// Runs every cell into `outDir/<cell label>`. A failing cell is reported in
/// cells.csv and on stderr without stopping the others.
MatrixOutcome runMatrix(const MatrixSpec& spec, const std::filesystem::path& outDir,
                        const std::vector<ConfigEntry>& overrides = {});

/// The evaluation grids: transfer learning, i.i.d. and non-i.i.d. Byzantine
/// runs, attacker fractions, class coverage and connection ratios.
std::vector<MatrixSpec> paperMatrixPresets(const std::filesystem::path& dataDir);

}  // namespace bristle
