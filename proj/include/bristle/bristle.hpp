#pragma once

// Bristle aggregation: a distance-based prioritizer narrows the received
// models to at most beta candidates, then a performance-based integrator
// merges their class-specific parameters (CSPs) weighted by per-class F1.

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bristle/gar.hpp"
#include "bristle/model.hpp"

namespace bristle {

struct DbpConfig {
  double alpha = 0.4;     // exploration-exploitation ratio in [0, 1]
  std::size_t beta = 30;  // max models forwarded to the integrator
};

struct PbiConfig {
  std::size_t phi = 3;  // best familiar classes used for certainty
  double eta = 10.0;
  double omegaFa1 = 10.0;
  double omegaFa2 = 4.0;
  double omegaFo1 = 10.0;
  double omegaFo2 = 4.0;
  std::size_t kappa = 10;
  // Sum only the finite discrepancies for the foreign weight instead of
  // letting a single -inf zero it.
  bool foreignSumSkipNegInf = false;
};

inline constexpr double kWorse = -std::numeric_limits<double>::infinity();

struct DbpFractions {
  double low = 0.0;
  double medium = 0.0;
  double high = 0.0;
};

/// ((1-a)^2, -2a^2 + 2a, a^2). Throws ValidationError outside [0, 1].
DbpFractions dbpFractions(double alpha);

/// Sizes of the low/medium/high distance bands for m models: as equal as
/// possible, remainders to the lower bands.
std::array<std::size_t, 3> bandSizes(std::size_t m);

/// Per-band draw counts for `total` models: fractions * total rounded by
/// largest remainder, then any band shortfall redistributed over the bands
/// with spare members in proportion to their fractions.
std::array<std::size_t, 3> bandTargets(const DbpFractions& fractions, const std::array<std::size_t, 3>& sizes,
                                       std::size_t total);

/// Positions into `received` of the min(beta, m) prioritized models.
std::vector<std::size_t> prioritize(const OutputLayer& own, std::span<const ReceivedModel> received,
                                    const DbpConfig& config, std::mt19937_64& rng);

/// Per-class F1 of own (row 0) and each prioritized model (rows 1..).
struct F1Matrix {
  std::vector<int> classes;  // familiar classes, one column each
  Eigen::MatrixXd values;

  std::size_t models() const { return static_cast<std::size_t>(values.rows()); }
};

/// Empty when integration must be deferred: no familiar class, or a familiar
/// class with fewer than kappa evaluation samples.
std::optional<F1Matrix> measureF1(const OutputLayer& own, std::span<const OutputLayer* const> prioritized,
                                  const Batch& evalData, std::span<const int> familiarClasses, std::size_t kappa);

/// max(mean - population std, 0) over the phi largest entries.
double certainty(std::span<const double> f1Row, std::size_t phi);

/// (|other - own| * eta)^3 when other >= own, else kWorse.
double discrepancy(double f1Other, double f1Own, double eta);

/// max(0, w1 / (1 + exp(-s / 100)) - w2) * r, with kWorse mapping to 0.
double sigmoidWeight(double s, double r, double omega1, double omega2);

/// sigmoidWeight of the summed discrepancies of all familiar classes.
double foreignWeight(std::span<const double> discRow, double r, double omega1, double omega2,
                     bool skipNegInf = false);

/// Weighted CSP average with own weight 1. `familiarWeights` is models x
/// familiar classes (column order as `familiarClasses`); `foreignWeights` has
/// one entry per model and applies to every other class.
OutputLayer integrate(const OutputLayer& own, std::span<const OutputLayer* const> models,
                      const Eigen::MatrixXd& familiarWeights, std::span<const double> foreignWeights,
                      std::span<const int> familiarClasses);

/// Everything the integrator decided, for inspection.
struct BristleTrace {
  bool deferred = false;
  std::vector<std::size_t> prioritized;  // positions into input.received
  F1Matrix f1;
  std::vector<double> certainty;          // per prioritized model
  Eigen::MatrixXd discrepancy;            // prioritized x familiar
  Eigen::MatrixXd familiarWeights;        // prioritized x familiar
  std::vector<double> foreignWeights;     // per prioritized model
};

OutputLayer bristleAggregate(const AggregationInput& input, const DbpConfig& dbp, const PbiConfig& pbi,
                             BristleTrace* trace = nullptr);

}  // namespace bristle
