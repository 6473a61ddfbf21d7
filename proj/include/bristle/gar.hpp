#pragma once

// Gradient aggregation rules: (own model, received models, local evaluation
// data) -> new own model.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bristle/model.hpp"

namespace bristle {

struct ReceivedModel {
  std::size_t sender = 0;
  OutputLayer model;
};

/// Read-only view handed to a rule for one aggregation.
struct AggregationInput {
  std::size_t ownId = 0;
  const OutputLayer& own;
  std::span<const ReceivedModel> received;
  const Batch& evalData;                 // the peer's integration set
  std::span<const int> familiarClasses;  // sorted
  std::uint64_t seed = 0;                // fresh per peer and round
};

void requireSameShape(const AggregationInput& input);

/// Unweighted coordinate mean of own and received models.
OutputLayer fedAvg(const AggregationInput& input);

/// Coordinate-wise median; even counts average the two middle values.
OutputLayer coordinateMedian(const AggregationInput& input);

struct KrumCandidate {
  std::size_t sender = 0;
  const OutputLayer* model = nullptr;
};

/// Krum score of every candidate: sum of squared distances to its n - b - 2
/// nearest other candidates. Throws ConfigError when n < b + 3.
std::vector<double> krumScores(std::span<const KrumCandidate> candidates, std::size_t b);
/// Index of the lowest-scoring candidate, ties to the lowest sender id.
std::size_t krumSelect(std::span<const KrumCandidate> candidates, std::size_t b);
/// Krum over own and received models.
OutputLayer krum(const AggregationInput& input, std::size_t b);

/// Per coordinate, drop the b largest and b smallest values and average the
/// rest. Throws ConfigError when n <= 2b.
OutputLayer bridgeTrimmedMean(const AggregationInput& input, std::size_t b);

struct MoziConfig {
  double rho = 0.5;
  std::size_t lossBatch = 25;
};

/// Distance filter keeping the ceil(rho * m) received models nearest to own,
/// then a loss filter against own loss on a sampled local batch (falling back
/// to the lowest-loss candidate); returns the mean of survivors and own.
OutputLayer mozi(const AggregationInput& input, const MoziConfig& config);

class AggregationRule {
 public:
  virtual ~AggregationRule() = default;
  virtual std::string name() const = 0;
  virtual std::map<std::string, double> hyperparameters() const { return {}; }
  virtual OutputLayer aggregate(const AggregationInput& input) const = 0;
};

}  // namespace bristle
