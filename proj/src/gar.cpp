#include "bristle/gar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bristle/error.hpp"

namespace bristle {

namespace {

std::vector<const OutputLayer*> allModels(const AggregationInput& input) {
  std::vector<const OutputLayer*> models{&input.own};
  for (const ReceivedModel& r : input.received) models.push_back(&r.model);
  return models;
}

// Applies `reduce` to the n values of every coordinate. `reduce` may reorder
// the scratch vector it is given.
template <typename Reduce>
OutputLayer coordinatewise(const std::vector<const OutputLayer*>& models, Reduce reduce) {
  OutputLayer out = *models.front();
  std::vector<double> values(models.size());
  const Eigen::Index weightCount = out.weights.size();
  for (Eigen::Index k = 0; k < weightCount; ++k) {
    for (std::size_t m = 0; m < models.size(); ++m) values[m] = models[m]->weights.data()[k];
    out.weights.data()[k] = reduce(values);
  }
  for (Eigen::Index k = 0; k < out.biases.size(); ++k) {
    for (std::size_t m = 0; m < models.size(); ++m) values[m] = models[m]->biases[k];
    out.biases[k] = reduce(values);
  }
  return out;
}

OutputLayer meanOf(const std::vector<const OutputLayer*>& models) {
  OutputLayer out = *models.front();
  for (std::size_t m = 1; m < models.size(); ++m) {
    out.weights += models[m]->weights;
    out.biases += models[m]->biases;
  }
  const double n = static_cast<double>(models.size());
  out.weights /= n;
  out.biases /= n;
  return out;
}

}  // namespace

void requireSameShape(const AggregationInput& input) {
  for (const ReceivedModel& r : input.received) {
    if (!r.model.sameShape(input.own)) {
      throw ValidationError("model from peer " + std::to_string(r.sender) + " has a different shape");
    }
  }
}

OutputLayer fedAvg(const AggregationInput& input) {
  requireSameShape(input);
  if (input.received.empty()) return input.own;
  return meanOf(allModels(input));
}

OutputLayer coordinateMedian(const AggregationInput& input) {
  requireSameShape(input);
  if (input.received.empty()) return input.own;
  return coordinatewise(allModels(input), [](std::vector<double>& v) {
    const std::size_t n = v.size();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) return *mid;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + *mid);
  });
}

std::vector<double> krumScores(std::span<const KrumCandidate> candidates, std::size_t b) {
  const std::size_t n = candidates.size();
  if (n < b + 3) {
    throw ConfigError("krum needs at least b + 3 = " + std::to_string(b + 3) + " models, got " + std::to_string(n));
  }
  const std::size_t nearest = n - b - 2;
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist[i][j] = dist[j][i] = squaredDistance(*candidates[i].model, *candidates[j].model);
    }
  }
  std::vector<double> scores(n);
  std::vector<double> others;
  for (std::size_t i = 0; i < n; ++i) {
    others.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(dist[i][j]);
    }
    std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(nearest), others.end());
    scores[i] = std::accumulate(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(nearest), 0.0);
  }
  return scores;
}

std::size_t krumSelect(std::span<const KrumCandidate> candidates, std::size_t b) {
  const std::vector<double> scores = krumScores(candidates, b);
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] < scores[best] || (scores[i] == scores[best] && candidates[i].sender < candidates[best].sender)) {
      best = i;
    }
  }
  return best;
}

OutputLayer krum(const AggregationInput& input, std::size_t b) {
  requireSameShape(input);
  std::vector<KrumCandidate> candidates{{input.ownId, &input.own}};
  for (const ReceivedModel& r : input.received) candidates.push_back({r.sender, &r.model});
  return *candidates[krumSelect(candidates, b)].model;
}

OutputLayer bridgeTrimmedMean(const AggregationInput& input, std::size_t b) {
  requireSameShape(input);
  const std::size_t n = input.received.size() + 1;
  if (n <= 2 * b) {
    throw ConfigError("trimmed mean with b = " + std::to_string(b) + " needs more than " + std::to_string(2 * b) +
                      " models, got " + std::to_string(n));
  }
  if (b == 0) return fedAvg(input);
  return coordinatewise(allModels(input), [b](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (std::size_t i = b; i < v.size() - b; ++i) sum += v[i];
    return sum / static_cast<double>(v.size() - 2 * b);
  });
}

OutputLayer mozi(const AggregationInput& input, const MoziConfig& config) {
  requireSameShape(input);
  if (!(config.rho > 0.0 && config.rho <= 1.0)) throw ConfigError("mozi rho must lie in (0, 1]");
  if (input.received.empty()) return input.own;
  if (input.evalData.size() == 0) throw ValidationError("mozi needs local evaluation data");

  // Stage 1: nearest ceil(rho * m) by Euclidean distance to own.
  const std::size_t m = input.received.size();
  std::vector<std::pair<double, std::size_t>> byDistance;
  byDistance.reserve(m);
  for (std::size_t i = 0; i < m; ++i) byDistance.emplace_back(squaredDistance(input.own, input.received[i].model), i);
  std::sort(byDistance.begin(), byDistance.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return input.received[a.second].sender < input.received[b.second].sender;
  });
  const auto keep = std::min(m, static_cast<std::size_t>(std::ceil(config.rho * static_cast<double>(m) - 1e-12)));

  // Stage 2: loss on a sampled local batch, compared with own loss.
  std::vector<std::size_t> rows(input.evalData.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::mt19937_64 rng(input.seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(std::min(rows.size(), config.lossBatch));
  Batch sample;
  sample.features.resize(static_cast<Eigen::Index>(rows.size()), input.evalData.features.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    sample.features.row(static_cast<Eigen::Index>(r)) = input.evalData.features.row(static_cast<Eigen::Index>(rows[r]));
    sample.labels.push_back(input.evalData.labels[rows[r]]);
  }

  const double ownLoss = meanNll(input.own, sample);
  std::vector<const OutputLayer*> survivors{&input.own};
  double bestLoss = 0.0;
  const OutputLayer* best = nullptr;
  for (std::size_t k = 0; k < keep; ++k) {
    const OutputLayer& candidate = input.received[byDistance[k].second].model;
    const double loss = meanNll(candidate, sample);
    if (loss <= ownLoss) survivors.push_back(&candidate);
    if (best == nullptr || loss < bestLoss) {
      best = &candidate;
      bestLoss = loss;
    }
  }
  if (survivors.size() == 1) survivors.push_back(best);
  return meanOf(survivors);
}

}  // namespace bristle
