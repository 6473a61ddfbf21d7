#include "bristle/bristle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bristle/error.hpp"

namespace bristle {

namespace {

// Adds `amount` units over the bands in proportion to `weights`, by largest
// remainder (ties to the lower band), never exceeding `capacity`.
std::array<std::size_t, 3> apportion(std::size_t amount, const std::array<double, 3>& weights,
                                     const std::array<std::size_t, 3>& capacity) {
  std::array<std::size_t, 3> out{};
  const double total = weights[0] + weights[1] + weights[2];
  if (amount == 0 || total <= 0.0) return out;
  std::array<double, 3> remainder{};
  std::size_t given = 0;
  for (std::size_t g = 0; g < 3; ++g) {
    const double exact = static_cast<double>(amount) * weights[g] / total;
    out[g] = std::min(capacity[g], static_cast<std::size_t>(std::floor(exact)));
    remainder[g] = exact - std::floor(exact);
    given += out[g];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t g : order) {
    if (given >= amount) break;
    if (out[g] < capacity[g] && weights[g] > 0.0) {
      ++out[g];
      ++given;
    }
  }
  return out;
}

}  // namespace

DbpFractions dbpFractions(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha " + std::to_string(alpha) + " outside [0, 1]");
  return {(1.0 - alpha) * (1.0 - alpha), -2.0 * alpha * alpha + 2.0 * alpha, alpha * alpha};
}

std::array<std::size_t, 3> bandSizes(std::size_t m) {
  const std::size_t base = m / 3;
  const std::size_t extra = m % 3;
  return {base + (extra > 0), base + (extra > 1), base};
}

std::array<std::size_t, 3> bandTargets(const DbpFractions& fractions, const std::array<std::size_t, 3>& sizes,
                                       std::size_t total) {
  const std::array<double, 3> f{fractions.low, fractions.medium, fractions.high};
  const std::size_t supply = sizes[0] + sizes[1] + sizes[2];
  total = std::min(total, supply);

  constexpr std::size_t kUnbounded = static_cast<std::size_t>(-1);
  std::array<std::size_t, 3> targets = apportion(total, f, {kUnbounded, kUnbounded, kUnbounded});
  std::size_t assigned = targets[0] + targets[1] + targets[2];
  // Floating error in the fractions can leave a unit unplaced.
  for (std::size_t g = 0; assigned < total && g < 3; ++g) {
    if (f[g] > 0.0) {
      ++targets[g];
      ++assigned;
    }
  }

  std::size_t deficit = 0;
  for (std::size_t g = 0; g < 3; ++g) {
    if (targets[g] > sizes[g]) {
      deficit += targets[g] - sizes[g];
      targets[g] = sizes[g];
    }
  }
  while (deficit > 0) {
    std::array<std::size_t, 3> spare{};
    std::array<double, 3> weights{};
    for (std::size_t g = 0; g < 3; ++g) {
      spare[g] = sizes[g] - targets[g];
      weights[g] = spare[g] > 0 ? f[g] : 0.0;
    }
    if (weights[0] + weights[1] + weights[2] <= 0.0) {
      for (std::size_t g = 0; g < 3; ++g) weights[g] = static_cast<double>(spare[g]);
    }
    std::array<std::size_t, 3> extra = apportion(deficit, weights, spare);
    std::size_t placed = extra[0] + extra[1] + extra[2];
    if (placed == 0) {
      // Remainders all rounded away; give one unit to the first band with room.
      for (std::size_t g = 0; g < 3; ++g) {
        if (spare[g] > 0) {
          extra[g] = 1;
          placed = 1;
          break;
        }
      }
    }
    for (std::size_t g = 0; g < 3; ++g) targets[g] += extra[g];
    deficit -= placed;
  }
  return targets;
}

std::vector<std::size_t> prioritize(const OutputLayer& own, std::span<const ReceivedModel> received,
                                    const DbpConfig& config, std::mt19937_64& rng) {
  const std::size_t m = received.size();
  if (m == 0) return {};
  const DbpFractions fractions = dbpFractions(config.alpha);

  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(m);
  for (std::size_t i = 0; i < m; ++i) order.emplace_back(squaredDistance(own, received[i].model), i);
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    if (received[a.second].sender != received[b.second].sender) {
      return received[a.second].sender < received[b.second].sender;
    }
    return a.second < b.second;
  });

  const auto sizes = bandSizes(m);
  const auto targets = bandTargets(fractions, sizes, std::min(config.beta, m));
  std::vector<std::size_t> out;
  std::size_t start = 0;
  for (std::size_t g = 0; g < 3; ++g) {
    std::vector<std::size_t> band;
    for (std::size_t k = start; k < start + sizes[g]; ++k) band.push_back(order[k].second);
    start += sizes[g];
    std::shuffle(band.begin(), band.end(), rng);
    out.insert(out.end(), band.begin(), band.begin() + static_cast<std::ptrdiff_t>(targets[g]));
  }
  return out;
}

std::optional<F1Matrix> measureF1(const OutputLayer& own, std::span<const OutputLayer* const> prioritized,
                                  const Batch& evalData, std::span<const int> familiarClasses, std::size_t kappa) {
  if (familiarClasses.empty()) return std::nullopt;
  for (int cls : familiarClasses) {
    const auto support = std::count(evalData.labels.begin(), evalData.labels.end(), cls);
    if (static_cast<std::size_t>(support) < kappa) return std::nullopt;
  }

  F1Matrix out;
  out.classes.assign(familiarClasses.begin(), familiarClasses.end());
  out.values.resize(static_cast<Eigen::Index>(prioritized.size() + 1), static_cast<Eigen::Index>(familiarClasses.size()));
  auto fill = [&](Eigen::Index row, const OutputLayer& model) {
    const std::vector<int> predicted = classify(model, evalData.features);
    for (std::size_t c = 0; c < familiarClasses.size(); ++c) {
      out.values(row, static_cast<Eigen::Index>(c)) = f1Score(predicted, evalData.labels, familiarClasses[c]);
    }
  };
  fill(0, own);
  for (std::size_t m = 0; m < prioritized.size(); ++m) fill(static_cast<Eigen::Index>(m + 1), *prioritized[m]);
  return out;
}

double certainty(std::span<const double> f1Row, std::size_t phi) {
  if (f1Row.empty()) throw ValidationError("certainty of an empty F1 row");
  std::vector<double> best(f1Row.begin(), f1Row.end());
  std::sort(best.begin(), best.end(), std::greater<>());
  best.resize(std::clamp<std::size_t>(phi, 1, best.size()));
  const double n = static_cast<double>(best.size());
  const double mean = std::accumulate(best.begin(), best.end(), 0.0) / n;
  double var = 0.0;
  for (double v : best) var += (v - mean) * (v - mean);
  return std::max(mean - std::sqrt(var / n), 0.0);
}

double discrepancy(double f1Other, double f1Own, double eta) {
  if (f1Other < f1Own) return kWorse;
  const double gap = std::abs(f1Other - f1Own) * eta;
  return gap * gap * gap;
}

double sigmoidWeight(double s, double r, double omega1, double omega2) {
  if (s == kWorse) return 0.0;
  return std::max(0.0, omega1 / (1.0 + std::exp(-s / 100.0)) - omega2) * r;
}

double foreignWeight(std::span<const double> discRow, double r, double omega1, double omega2, bool skipNegInf) {
  double sum = 0.0;
  bool anyFinite = false;
  for (double d : discRow) {
    if (d == kWorse) {
      if (!skipNegInf) return sigmoidWeight(kWorse, r, omega1, omega2);
      continue;
    }
    sum += d;
    anyFinite = true;
  }
  if (!anyFinite && !discRow.empty()) return 0.0;
  return sigmoidWeight(sum, r, omega1, omega2);
}

OutputLayer integrate(const OutputLayer& own, std::span<const OutputLayer* const> models,
                      const Eigen::MatrixXd& familiarWeights, std::span<const double> foreignWeights,
                      std::span<const int> familiarClasses) {
  if (static_cast<std::size_t>(familiarWeights.rows()) != models.size() ||
      static_cast<std::size_t>(familiarWeights.cols()) != familiarClasses.size() ||
      foreignWeights.size() != models.size()) {
    throw ShapeError("integration weights do not match models and classes");
  }
  for (const OutputLayer* m : models) {
    if (!m->sameShape(own)) throw ShapeError("integrating a differently shaped model");
  }
  std::vector<int> column(static_cast<std::size_t>(own.classes()), -1);
  for (std::size_t j = 0; j < familiarClasses.size(); ++j) column[static_cast<std::size_t>(familiarClasses[j])] = static_cast<int>(j);

  OutputLayer out = own;
  for (int c = 0; c < own.classes(); ++c) {
    const int j = column[static_cast<std::size_t>(c)];
    double weightSum = 0.0;
    Eigen::RowVectorXd row = own.weights.row(c);
    double bias = own.biases(c);
    for (std::size_t m = 0; m < models.size(); ++m) {
      const double w = j >= 0 ? familiarWeights(static_cast<Eigen::Index>(m), j) : foreignWeights[m];
      if (w < 0.0) throw ValidationError("negative integration weight");
      if (w == 0.0) continue;
      row += w * models[m]->weights.row(c);
      bias += w * models[m]->biases(c);
      weightSum += w;
    }
    if (weightSum == 0.0) continue;
    out.weights.row(c) = row / (1.0 + weightSum);
    out.biases(c) = bias / (1.0 + weightSum);
  }
  return out;
}

OutputLayer bristleAggregate(const AggregationInput& input, const DbpConfig& dbp, const PbiConfig& pbi,
                             BristleTrace* trace) {
  requireSameShape(input);
  BristleTrace local;
  BristleTrace& t = trace ? *trace : local;
  t = BristleTrace{};
  if (input.received.empty()) return input.own;

  std::mt19937_64 rng(input.seed);
  t.prioritized = prioritize(input.own, input.received, dbp, rng);
  std::vector<const OutputLayer*> models;
  for (std::size_t pos : t.prioritized) models.push_back(&input.received[pos].model);

  std::optional<F1Matrix> f1 = measureF1(input.own, models, input.evalData, input.familiarClasses, pbi.kappa);
  if (!f1) {
    t.deferred = true;
    return input.own;
  }
  t.f1 = std::move(*f1);

  const auto n = static_cast<Eigen::Index>(models.size());
  const auto k = static_cast<Eigen::Index>(t.f1.classes.size());
  t.discrepancy.resize(n, k);
  t.familiarWeights.resize(n, k);
  t.certainty.resize(models.size());
  t.foreignWeights.resize(models.size());
  for (Eigen::Index m = 0; m < n; ++m) {
    const Eigen::RowVectorXd row = t.f1.values.row(m + 1);
    const double r = certainty(std::span<const double>(row.data(), static_cast<std::size_t>(k)), pbi.phi);
    t.certainty[static_cast<std::size_t>(m)] = r;
    for (Eigen::Index c = 0; c < k; ++c) {
      const double s = discrepancy(t.f1.values(m + 1, c), t.f1.values(0, c), pbi.eta);
      t.discrepancy(m, c) = s;
      t.familiarWeights(m, c) = sigmoidWeight(s, r, pbi.omegaFa1, pbi.omegaFa2);
    }
    const Eigen::RowVectorXd disc = t.discrepancy.row(m);
    t.foreignWeights[static_cast<std::size_t>(m)] =
        foreignWeight(std::span<const double>(disc.data(), static_cast<std::size_t>(k)), r, pbi.omegaFo1,
                      pbi.omegaFo2, pbi.foreignSumSkipNegInf);
  }
  return integrate(input.own, models, t.familiarWeights, t.foreignWeights, t.f1.classes);
}

}  // namespace bristle
