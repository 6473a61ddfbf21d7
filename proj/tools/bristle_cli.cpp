// bristle: run one scenario, a matrix of scenarios, or the evaluation preset.
//
//   bristle run scenario.cfg --out results/run1
//   bristle matrix grid.cfg --out results/grid
//   bristle paper-matrix --data data/mnist --out results/paper
//
// BRISTLE_SEED and BRISTLE_THREADS override the seed and thread count of
// every scenario.

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bristle/config.hpp"
#include "bristle/runner.hpp"

namespace {

std::vector<bristle::ConfigEntry> envOverrides() {
  std::vector<bristle::ConfigEntry> out;
  if (const char* seed = std::getenv("BRISTLE_SEED")) out.emplace_back("seed", seed);
  if (const char* threads = std::getenv("BRISTLE_THREADS")) out.emplace_back("threads", threads);
  return out;
}

int runOne(const std::string& configPath, const std::string& outDir, const std::string& dataDir) {
  bristle::ExperimentConfig config = bristle::loadConfig(configPath);
  if (!dataDir.empty()) bristle::applyEntry(config, "data.dir", dataDir);
  for (const auto& [key, value] : envOverrides()) bristle::applyEntry(config, key, value);
  bristle::validate(config);
  std::cout << bristle::echo(config) << std::flush;
  const auto out = bristle::runScenario(config, outDir, bristle::loadFeatureBank(config.data));
  const auto& s = out.result.summary;
  std::cout << "final_accuracy = " << s.finalAccuracy << "\ntotal_bytes_sent = " << s.totalBytesSent << "\n";
  return 0;
}

int runGrid(const bristle::MatrixSpec& spec, const std::string& outDir, std::vector<bristle::ConfigEntry> overrides) {
  for (auto& entry : envOverrides()) overrides.push_back(std::move(entry));
  std::cout << spec.name << ": " << spec.cellCount() << " cells\n" << std::flush;
  const auto outcome = bristle::runMatrix(spec, outDir, overrides);
  std::cout << spec.name << ": " << outcome.cells - outcome.failed << " of " << outcome.cells << " cells ok\n";
  return outcome.failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized learning simulator with Byzantine-resilient aggregation"};
  app.require_subcommand(1);

  std::string configPath, outDir, dataDir;

  auto* run = app.add_subcommand("run", "run one scenario");
  run->add_option("config", configPath, "scenario config")->required()->check(CLI::ExistingFile);
  run->add_option("--out", outDir, "output directory")->required();
  run->add_option("--data", dataDir, "MNIST directory, overrides data.dir");

  auto* matrix = app.add_subcommand("matrix", "run every cell of a matrix config");
  matrix->add_option("config", configPath, "matrix config")->required()->check(CLI::ExistingFile);
  matrix->add_option("--out", outDir, "output directory")->required();
  matrix->add_option("--data", dataDir, "MNIST directory, overrides data.dir");

  auto* paper = app.add_subcommand("paper-matrix", "run the full evaluation preset");
  paper->add_option("--data", dataDir, "MNIST directory")->required()->check(CLI::ExistingDirectory);
  paper->add_option("--out", outDir, "output directory")->required();
  std::vector<std::string> only;
  paper->add_option("--only", only, "run only the named groups");
  std::size_t iterations = 0;
  paper->add_option("--iterations", iterations, "override max_iterations");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return runOne(configPath, outDir, dataDir);
    if (*matrix) {
      std::vector<bristle::ConfigEntry> overrides;
      if (!dataDir.empty()) overrides.emplace_back("data.dir", dataDir);
      return runGrid(bristle::loadMatrix(configPath), outDir, overrides);
    }
    int status = 0;
    std::vector<bristle::ConfigEntry> overrides;
    if (iterations) overrides.emplace_back("max_iterations", std::to_string(iterations));
    for (const auto& spec : bristle::paperMatrixPresets(dataDir)) {
      if (!only.empty() && std::find(only.begin(), only.end(), spec.name) == only.end()) continue;
      status |= runGrid(spec, outDir + "/" + spec.name, overrides);
    }
    return status;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
