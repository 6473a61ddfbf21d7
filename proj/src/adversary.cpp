#include "bristle/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "bristle/error.hpp"
#include "bristle/gar.hpp"
#include "bristle/rules.hpp"

namespace bristle {

std::string toString(AttackKind kind) {
  switch (kind) {
    case AttackKind::None: return "none";
    case AttackKind::LabelFlip: return "label-flip";
    case AttackKind::AdditiveNoise: return "additive-noise";
    case AttackKind::KrumAttack: return "krum-attack";
    case AttackKind::TrimmedMeanAttack: return "trimmed-mean-attack";
  }
  return "none";
}

AttackKind parseAttackKind(const std::string& text) {
  for (AttackKind k : {AttackKind::None, AttackKind::LabelFlip, AttackKind::AdditiveNoise, AttackKind::KrumAttack,
                       AttackKind::TrimmedMeanAttack}) {
    if (toString(k) == text) return k;
  }
  throw ConfigError("unknown attack '" + text +
                    "' (expected none, label-flip, additive-noise, krum-attack or trimmed-mean-attack)");
}

int labelFlip(int label, int classes) {
  if (label < 0 || label >= classes) throw ValidationError("label outside class range");
  return (label + 1) % classes;
}

OutputLayer additiveNoiseModel(int classes, int features, double mu0, double sigma, std::mt19937_64& rng) {
  if (!(mu0 > 0.0) || sigma < 0.0) throw ValidationError("noise attack needs mu0 > 0 and sigma >= 0");
  const Eigen::Index n = static_cast<Eigen::Index>(classes) * (features + 1);
  const Eigen::Index firstHalf = n / 2;
  Eigen::VectorXd params(n);
  if (sigma == 0.0) {
    params.head(firstHalf).setConstant(-mu0);
    params.tail(n - firstHalf).setConstant(mu0);
  } else {
    std::normal_distribution<double> low(-mu0, sigma);
    std::normal_distribution<double> high(mu0, sigma);
    for (Eigen::Index i = 0; i < n; ++i) params(i) = i < firstHalf ? low(rng) : high(rng);
  }
  return unflatten(params, classes, features);
}

OutputLayer meanModel(std::span<const OutputLayer> models) {
  if (models.empty()) throw ValidationError("mean of no models");
  OutputLayer out = models.front();
  for (std::size_t i = 1; i < models.size(); ++i) {
    out.weights += models[i].weights;
    out.biases += models[i].biases;
  }
  out.weights /= static_cast<double>(models.size());
  out.biases /= static_cast<double>(models.size());
  return out;
}

KrumAttackResult krumAttackModel(std::span<const OutputLayer> benign, const OutputLayer& previousMean,
                                 std::size_t copies, std::size_t b, const AttackParams& params,
                                 std::mt19937_64& rng) {
  if (benign.size() < 2) {
    const OutputLayer& shape = benign.empty() ? previousMean : benign.front();
    return {additiveNoiseModel(shape.classes(), shape.features(), params.noiseMean, params.noiseStd, rng), 0.0,
            false};
  }
  const OutputLayer mean = meanModel(benign);
  Eigen::VectorXd direction = flatten(previousMean) - flatten(mean);
  if (direction.norm() == 0.0) direction = -flatten(mean);
  if (direction.norm() == 0.0) direction = -Eigen::VectorXd::Ones(direction.size());
  direction.normalize();

  const Eigen::VectorXd base = flatten(mean);
  copies = std::max<std::size_t>(copies, 1);
  const std::size_t models = benign.size() + copies;
  const std::size_t trim = feasibleKrumB(models, b);

  auto candidateAt = [&](double lambda) { return unflatten(base + lambda * direction, mean.classes(), mean.features()); };
  for (double lambda = params.lambdaInit; lambda >= params.lambdaMin; lambda /= 2.0) {
    OutputLayer candidate = candidateAt(lambda);
    std::vector<KrumCandidate> pool;
    for (std::size_t i = 0; i < benign.size(); ++i) pool.push_back({i, &benign[i]});
    for (std::size_t c = 0; c < copies; ++c) pool.push_back({benign.size() + c, &candidate});
    if (models >= 3 && krumSelect(pool, trim) >= benign.size()) return {std::move(candidate), lambda, true};
  }
  return {candidateAt(params.lambdaMin), params.lambdaMin, false};
}

OutputLayer trimmedMeanAttackModel(std::span<const OutputLayer> benign, const OutputLayer& previousMean, double delta,
                                   double epsilon) {
  if (!(delta > 0.0)) throw ValidationError("trimmed-mean attack needs delta > 0");
  const OutputLayer mean = meanModel(benign);
  const Eigen::VectorXd previous = flatten(previousMean);
  const Eigen::VectorXd center = flatten(mean);
  std::vector<Eigen::VectorXd> flat;
  for (const OutputLayer& m : benign) flat.push_back(flatten(m));

  Eigen::VectorXd out(center.size());
  for (Eigen::Index j = 0; j < center.size(); ++j) {
    double lo = flat.front()(j);
    double hi = lo;
    for (const Eigen::VectorXd& v : flat) {
      lo = std::min(lo, v(j));
      hi = std::max(hi, v(j));
    }
    const double push = delta * (hi - lo + epsilon);
    out(j) = center(j) - previous(j) >= 0.0 ? lo - push : hi + push;
  }
  return unflatten(out, mean.classes(), mean.features());
}

}  // namespace bristle
