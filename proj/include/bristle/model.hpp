#pragma once

// Softmax output layer over frozen features: prediction, Adam training on
// mean negative log-likelihood with an L2 penalty, evaluation, and the
// canonical wire encoding used for byte accounting.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace bristle {

/// Row-major sample table: one feature vector per row, 32-bit storage.
using FeatureTable = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// The trainable (and exchanged) part of the network. Row c of `weights`
/// together with `biases[c]` form the class-specific parameters of class c.
struct OutputLayer {
  Eigen::MatrixXd weights;  // classes x features
  Eigen::VectorXd biases;   // classes

  static OutputLayer zeros(int classes, int features);

  int classes() const { return static_cast<int>(weights.rows()); }
  int features() const { return static_cast<int>(weights.cols()); }
  std::size_t parameterCount() const {
    return static_cast<std::size_t>(classes()) * static_cast<std::size_t>(features() + 1);
  }
  bool sameShape(const OutputLayer& other) const {
    return classes() == other.classes() && features() == other.features();
  }
  bool allFinite() const { return weights.allFinite() && biases.allFinite(); }

  bool operator==(const OutputLayer& other) const {
    return sameShape(other) && weights == other.weights && biases == other.biases;
  }
};

/// Flattened parameter order: weights row by row, then the bias vector.
Eigen::VectorXd flatten(const OutputLayer& layer);
OutputLayer unflatten(const Eigen::VectorXd& params, int classes, int features);

/// Euclidean distance over the concatenated weights and biases.
double squaredDistance(const OutputLayer& a, const OutputLayer& b);
double distance(const OutputLayer& a, const OutputLayer& b);

struct AdamConfig {
  double learningRate = 0.001;
  double l2 = 0.005;  // applied to weights only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  Eigen::MatrixXd weightMoment1, weightMoment2;
  Eigen::VectorXd biasMoment1, biasMoment2;
  std::uint64_t step = 0;

  static OptimizerState init(const OutputLayer& shape, const AdamConfig& config);
};

/// Labelled samples as matrix rows.
struct Batch {
  Eigen::MatrixXd features;  // samples x features
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct Gradient {
  Eigen::MatrixXd weights;
  Eigen::VectorXd biases;
};

/// Class probabilities for one feature vector.
Eigen::VectorXd predict(const OutputLayer& layer, const Eigen::VectorXd& features);

/// Row-wise class probabilities.
Eigen::MatrixXd predictProbabilities(const OutputLayer& layer, const Eigen::MatrixXd& features);

/// Arg-max class per row (ties resolve to the lowest class id).
std::vector<int> classify(const OutputLayer& layer, const Eigen::MatrixXd& features);
std::vector<int> classify(const OutputLayer& layer, const FeatureTable& features);

double meanNll(const OutputLayer& layer, const Batch& batch);
/// Gradient of the mean NLL alone, i.e. mean(softmax - onehot) outer features.
Gradient nllGradient(const OutputLayer& layer, const Batch& batch);
/// meanNll + l2 * ||weights||^2.
double objective(const OutputLayer& layer, const Batch& batch, double l2);
/// nllGradient plus 2 * l2 * weights.
Gradient objectiveGradient(const OutputLayer& layer, const Batch& batch, double l2);

struct TrainStepResult {
  OutputLayer layer;
  OptimizerState optimizer;
};

/// One Adam step on the batch objective. Throws ValidationError for an empty
/// batch or out-of-range labels, ShapeError for a feature-width mismatch.
TrainStepResult trainStep(const OutputLayer& layer, const OptimizerState& optimizer, const Batch& batch);

struct EvalReport {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::map<int, double> perClassF1;             // only classes with support >= 1
  std::map<int, std::size_t> perClassSupport;
};

/// One-vs-rest F1 from predicted and true labels; 0 when precision + recall is 0.
double f1Score(std::span<const int> predicted, std::span<const int> truth, int cls);

/// Accuracy plus per-class F1 for `classes` (every class seen in the data when
/// omitted).
EvalReport evaluate(const OutputLayer& layer, const Batch& data,
                    const std::optional<std::vector<int>>& classes = std::nullopt);

/// Fraction of rows classified correctly.
double accuracy(const OutputLayer& layer, const FeatureTable& features, std::span<const int> labels);

// Wire format: little-endian u32 classes, u32 features, then classes*features
// weights row by row, then the biases, all as little-endian float32.
std::size_t serializedSize(int classes, int features);
std::vector<std::uint8_t> serialize(const OutputLayer& layer);
OutputLayer deserialize(std::span<const std::uint8_t> bytes);

}  // namespace bristle
