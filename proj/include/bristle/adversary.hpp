#pragma once

// Byzantine behaviours. Label-flip attackers run the honest pipeline on
// relabelled data; the other kinds craft a model each round. The Krum and
// trimmed-mean attacks see every benign model of the current round.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "bristle/model.hpp"

namespace bristle {

enum class AttackKind { None, LabelFlip, AdditiveNoise, KrumAttack, TrimmedMeanAttack };

std::string toString(AttackKind kind);
/// Accepts none | label-flip | additive-noise | krum-attack | trimmed-mean-attack.
AttackKind parseAttackKind(const std::string& text);

struct AttackParams {
  double noiseMean = 0.05;  // mu0
  double noiseStd = 0.01;   // sigma
  double lambdaInit = 10.0;
  double lambdaMin = 1e-5;
  double delta = 1.0;
  double epsilon = 1e-6;  // epsilon0
};

/// (label + 1) mod classes.
int labelFlip(int label, int classes);

/// First floor(N/2) flattened parameters ~ N(-mu0, sigma^2), the remaining
/// ceil(N/2) ~ N(+mu0, sigma^2).
OutputLayer additiveNoiseModel(int classes, int features, double mu0, double sigma, std::mt19937_64& rng);

/// Coordinate mean of `models` (which must be non-empty).
OutputLayer meanModel(std::span<const OutputLayer> models);

struct KrumAttackResult {
  OutputLayer model;
  double lambda = 0.0;
  bool accepted = false;  // a simulated Krum picked the candidate
};

/// Steps from the benign mean against the benign movement since
/// `previousMean`, halving lambda until a Krum run over the benign models plus
/// `copies` candidate copies (trimming `b`) selects a copy, or lambda drops
/// below lambdaMin. Fewer than two benign models fall back to additive noise.
KrumAttackResult krumAttackModel(std::span<const OutputLayer> benign, const OutputLayer& previousMean,
                                 std::size_t copies, std::size_t b, const AttackParams& params,
                                 std::mt19937_64& rng);

/// Per coordinate: below the benign minimum when the benign mean moved up
/// (or stayed), above the maximum otherwise, by delta * (range + epsilon).
OutputLayer trimmedMeanAttackModel(std::span<const OutputLayer> benign, const OutputLayer& previousMean, double delta,
                                   double epsilon);

}  // namespace bristle
