#include "bristle/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "bristle/error.hpp"

namespace bristle {

namespace {

void requireWidth(const OutputLayer& layer, Eigen::Index width) {
  if (width != layer.features()) {
    throw ShapeError("feature width " + std::to_string(width) + " does not match layer width " +
                     std::to_string(layer.features()));
  }
}

void requireLabels(const OutputLayer& layer, const Batch& batch) {
  if (batch.labels.empty()) throw ValidationError("batch is empty");
  if (static_cast<Eigen::Index>(batch.labels.size()) != batch.features.rows()) {
    throw ValidationError("batch has " + std::to_string(batch.features.rows()) + " rows but " +
                          std::to_string(batch.labels.size()) + " labels");
  }
  for (int label : batch.labels) {
    if (label < 0 || label >= layer.classes()) {
      throw ValidationError("label " + std::to_string(label) + " outside [0, " +
                            std::to_string(layer.classes()) + ")");
    }
  }
}

// Numerically stable row-wise softmax, in place.
void softmaxRows(Eigen::MatrixXd& logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

Eigen::MatrixXd logitsOf(const OutputLayer& layer, const Eigen::MatrixXd& features) {
  Eigen::MatrixXd logits = features * layer.weights.transpose();
  logits.rowwise() += layer.biases.transpose();
  return logits;
}

template <typename Derived>
int argmaxRow(const Eigen::MatrixBase<Derived>& row) {
  Eigen::Index best = 0;
  row.maxCoeff(&best);  // first maximal index
  return static_cast<int>(best);
}

void putU32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t getU32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

void putF32(std::vector<std::uint8_t>& out, double v) {
  putU32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

}  // namespace

OutputLayer OutputLayer::zeros(int classes, int features) {
  if (classes < 2 || features < 1) {
    throw ValidationError("output layer needs >= 2 classes and >= 1 feature");
  }
  return {Eigen::MatrixXd::Zero(classes, features), Eigen::VectorXd::Zero(classes)};
}

Eigen::VectorXd flatten(const OutputLayer& layer) {
  const Eigen::Index c = layer.classes();
  const Eigen::Index f = layer.features();
  Eigen::VectorXd out(c * f + c);
  for (Eigen::Index r = 0; r < c; ++r) out.segment(r * f, f) = layer.weights.row(r).transpose();
  out.tail(c) = layer.biases;
  return out;
}

OutputLayer unflatten(const Eigen::VectorXd& params, int classes, int features) {
  if (params.size() != static_cast<Eigen::Index>(classes) * (features + 1)) {
    throw ShapeError("flat parameter vector has wrong length");
  }
  OutputLayer layer = OutputLayer::zeros(classes, features);
  for (int r = 0; r < classes; ++r) {
    layer.weights.row(r) = params.segment(static_cast<Eigen::Index>(r) * features, features).transpose();
  }
  layer.biases = params.tail(classes);
  return layer;
}

double squaredDistance(const OutputLayer& a, const OutputLayer& b) {
  if (!a.sameShape(b)) throw ShapeError("distance between differently shaped layers");
  return (a.weights - b.weights).squaredNorm() + (a.biases - b.biases).squaredNorm();
}

double distance(const OutputLayer& a, const OutputLayer& b) { return std::sqrt(squaredDistance(a, b)); }

OptimizerState OptimizerState::init(const OutputLayer& shape, const AdamConfig& config) {
  OptimizerState s;
  s.config = config;
  s.weightMoment1 = Eigen::MatrixXd::Zero(shape.classes(), shape.features());
  s.weightMoment2 = s.weightMoment1;
  s.biasMoment1 = Eigen::VectorXd::Zero(shape.classes());
  s.biasMoment2 = s.biasMoment1;
  return s;
}

Eigen::VectorXd predict(const OutputLayer& layer, const Eigen::VectorXd& features) {
  requireWidth(layer, features.size());
  Eigen::MatrixXd logits = (layer.weights * features + layer.biases).transpose();
  softmaxRows(logits);
  return logits.row(0).transpose();
}

Eigen::MatrixXd predictProbabilities(const OutputLayer& layer, const Eigen::MatrixXd& features) {
  requireWidth(layer, features.cols());
  Eigen::MatrixXd probs = logitsOf(layer, features);
  softmaxRows(probs);
  return probs;
}

std::vector<int> classify(const OutputLayer& layer, const Eigen::MatrixXd& features) {
  requireWidth(layer, features.cols());
  const Eigen::MatrixXd logits = logitsOf(layer, features);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) out[static_cast<std::size_t>(r)] = argmaxRow(logits.row(r));
  return out;
}

std::vector<int> classify(const OutputLayer& layer, const FeatureTable& features) {
  requireWidth(layer, features.cols());
  const Eigen::MatrixXf weights = layer.weights.cast<float>();
  const Eigen::RowVectorXf biases = layer.biases.cast<float>().transpose();
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  // Blocked so the logits buffer stays small for large test sets.
  constexpr Eigen::Index kBlock = 2048;
  for (Eigen::Index start = 0; start < features.rows(); start += kBlock) {
    const Eigen::Index n = std::min(kBlock, features.rows() - start);
    Eigen::MatrixXf logits = features.middleRows(start, n) * weights.transpose();
    logits.rowwise() += biases;
    for (Eigen::Index r = 0; r < n; ++r) out[static_cast<std::size_t>(start + r)] = argmaxRow(logits.row(r));
  }
  return out;
}

double meanNll(const OutputLayer& layer, const Batch& batch) {
  requireLabels(layer, batch);
  requireWidth(layer, batch.features.cols());
  const Eigen::MatrixXd logits = logitsOf(layer, batch.features);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    const double lse = peak + std::log((logits.row(r).array() - peak).exp().sum());
    total += lse - logits(r, batch.labels[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(batch.size());
}

Gradient nllGradient(const OutputLayer& layer, const Batch& batch) {
  requireLabels(layer, batch);
  requireWidth(layer, batch.features.cols());
  Eigen::MatrixXd delta = logitsOf(layer, batch.features);
  softmaxRows(delta);
  for (std::size_t r = 0; r < batch.size(); ++r) delta(static_cast<Eigen::Index>(r), batch.labels[r]) -= 1.0;
  delta /= static_cast<double>(batch.size());
  return {delta.transpose() * batch.features, delta.colwise().sum().transpose()};
}

double objective(const OutputLayer& layer, const Batch& batch, double l2) {
  return meanNll(layer, batch) + l2 * layer.weights.squaredNorm();
}

Gradient objectiveGradient(const OutputLayer& layer, const Batch& batch, double l2) {
  Gradient g = nllGradient(layer, batch);
  g.weights += 2.0 * l2 * layer.weights;
  return g;
}

TrainStepResult trainStep(const OutputLayer& layer, const OptimizerState& optimizer, const Batch& batch) {
  const AdamConfig& cfg = optimizer.config;
  const Gradient g = objectiveGradient(layer, batch, cfg.l2);

  TrainStepResult out{layer, optimizer};
  OptimizerState& s = out.optimizer;
  s.step += 1;
  s.weightMoment1 = cfg.beta1 * s.weightMoment1 + (1.0 - cfg.beta1) * g.weights;
  s.weightMoment2 = cfg.beta2 * s.weightMoment2 + (1.0 - cfg.beta2) * g.weights.cwiseAbs2();
  s.biasMoment1 = cfg.beta1 * s.biasMoment1 + (1.0 - cfg.beta1) * g.biases;
  s.biasMoment2 = cfg.beta2 * s.biasMoment2 + (1.0 - cfg.beta2) * g.biases.cwiseAbs2();

  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  out.layer.weights.array() -=
      cfg.learningRate * (s.weightMoment1.array() / c1) / ((s.weightMoment2.array() / c2).sqrt() + cfg.epsilon);
  out.layer.biases.array() -=
      cfg.learningRate * (s.biasMoment1.array() / c1) / ((s.biasMoment2.array() / c2).sqrt() + cfg.epsilon);
  return out;
}

double f1Score(std::span<const int> predicted, std::span<const int> truth, int cls) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == cls;
    const bool t = truth[i] == cls;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp == 0) return 0.0;  // P + R == 0, or P and R both 0
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

EvalReport evaluate(const OutputLayer& layer, const Batch& data, const std::optional<std::vector<int>>& classes) {
  requireLabels(layer, data);
  const std::vector<int> predicted = classify(layer, data.features);

  EvalReport report;
  report.total = data.size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    report.correct += predicted[i] == data.labels[i];
    report.perClassSupport[data.labels[i]] += 1;
  }
  report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.total);

  std::vector<int> wanted;
  if (classes) {
    wanted = *classes;
  } else {
    for (const auto& [cls, support] : report.perClassSupport) wanted.push_back(cls);
  }
  for (int cls : wanted) {
    if (report.perClassSupport.contains(cls)) report.perClassF1[cls] = f1Score(predicted, data.labels, cls);
  }
  return report;
}

double accuracy(const OutputLayer& layer, const FeatureTable& features, std::span<const int> labels) {
  if (labels.empty()) throw ValidationError("accuracy over an empty set");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw ValidationError("feature rows and labels differ in count");
  }
  const std::vector<int> predicted = classify(layer, features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::size_t serializedSize(int classes, int features) {
  return 8 + 4 * static_cast<std::size_t>(classes) * static_cast<std::size_t>(features + 1);
}

std::vector<std::uint8_t> serialize(const OutputLayer& layer) {
  std::vector<std::uint8_t> out;
  out.reserve(serializedSize(layer.classes(), layer.features()));
  putU32(out, static_cast<std::uint32_t>(layer.classes()));
  putU32(out, static_cast<std::uint32_t>(layer.features()));
  for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) putF32(out, layer.weights(r, c));
  }
  for (Eigen::Index r = 0; r < layer.biases.size(); ++r) putF32(out, layer.biases(r));
  return out;
}

OutputLayer deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("serialized layer shorter than its header");
  const std::uint32_t classes = getU32(bytes, 0);
  const std::uint32_t features = getU32(bytes, 4);
  if (classes < 2 || features < 1 || classes > (1u << 20) || features > (1u << 24)) {
    throw FormatError("serialized layer header has implausible shape");
  }
  if (bytes.size() != serializedSize(static_cast<int>(classes), static_cast<int>(features))) {
    throw FormatError("serialized layer length does not match its header");
  }
  OutputLayer layer = OutputLayer::zeros(static_cast<int>(classes), static_cast<int>(features));
  std::size_t at = 8;
  auto next = [&] {
    const float v = std::bit_cast<float>(getU32(bytes, at));
    at += 4;
    return static_cast<double>(v);
  };
  for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = next();
  }
  for (Eigen::Index r = 0; r < layer.biases.size(); ++r) layer.biases(r) = next();
  return layer;
}

}  // namespace bristle
