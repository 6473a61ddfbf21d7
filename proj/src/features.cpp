#include "bristle/features.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "bristle/error.hpp"

namespace bristle {

namespace {

std::vector<std::uint8_t> readAll(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t bigEndian32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

std::uint32_t littleEndian32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return std::uint32_t{b[at]} | (std::uint32_t{b[at + 1]} << 8) | (std::uint32_t{b[at + 2]} << 16) |
         (std::uint32_t{b[at + 3]} << 24);
}

void writeLittle32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 24)};
  out.write(b.data(), 4);
}

}  // namespace

ZScoreStats zScoreStats(const RawDataset& data) {
  if (data.size() == 0) throw ValidationError("z-score statistics of an empty dataset");
  const Eigen::MatrixXd x = data.inputs.cast<double>();
  ZScoreStats stats;
  stats.mean = x.colwise().mean().transpose();
  stats.stddev = ((x.rowwise() - stats.mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
  for (Eigen::Index j = 0; j < stats.stddev.size(); ++j) {
    if (stats.stddev(j) == 0.0) stats.stddev(j) = 1.0;
  }
  return stats;
}

std::pair<RawDataset, ZScoreStats> zScoreNormalize(const RawDataset& data, const std::optional<ZScoreStats>& stats) {
  if (data.size() == 0) throw ValidationError("cannot normalize an empty dataset");
  ZScoreStats s = stats ? *stats : zScoreStats(data);
  if (s.mean.size() != data.inputs.cols() || s.stddev.size() != data.inputs.cols()) {
    throw ShapeError("z-score statistics do not match the dataset width");
  }
  RawDataset out = data;
  const Eigen::RowVectorXf mean = s.mean.cast<float>().transpose();
  const Eigen::RowVectorXf inv = s.stddev.cwiseInverse().cast<float>().transpose();
  out.inputs.rowwise() -= mean;
  out.inputs.array().rowwise() *= inv.array();
  return {std::move(out), std::move(s)};
}

RawDataset loadIdx(const std::filesystem::path& imagesPath, const std::filesystem::path& labelsPath, Split split) {
  const std::vector<std::uint8_t> images = readAll(imagesPath);
  const std::vector<std::uint8_t> labels = readAll(labelsPath);

  if (images.size() < 16 || bigEndian32(images, 0) != 0x00000803) {
    throw FormatError(imagesPath.string() + ": not an IDX image file");
  }
  if (labels.size() < 8 || bigEndian32(labels, 0) != 0x00000801) {
    throw FormatError(labelsPath.string() + ": not an IDX label file");
  }
  const std::size_t count = bigEndian32(images, 4);
  const std::size_t rows = bigEndian32(images, 8);
  const std::size_t cols = bigEndian32(images, 12);
  const std::size_t labelCount = bigEndian32(labels, 4);
  if (count != labelCount) {
    throw FormatError("image count " + std::to_string(count) + " != label count " + std::to_string(labelCount));
  }
  const std::size_t dim = rows * cols;
  if (images.size() != 16 + count * dim) throw FormatError(imagesPath.string() + ": truncated or oversized");
  if (labels.size() != 8 + count) throw FormatError(labelsPath.string() + ": truncated or oversized");

  RawDataset out;
  out.split = split;
  out.inputs.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  out.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* px = images.data() + 16 + i * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      out.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<float>(px[j]) / 255.0f;
    }
    out.labels[i] = labels[8 + i];
  }
  return out;
}

LabeledFeatures loadPrecomputed(const std::filesystem::path& featuresPath, const std::filesystem::path& labelsPath) {
  const std::vector<std::uint8_t> bytes = readAll(featuresPath);
  if (bytes.size() < 16 || !std::equal(bytes.begin(), bytes.begin() + 4, "BRFE")) {
    throw FormatError(featuresPath.string() + ": missing BRFE magic");
  }
  if (littleEndian32(bytes, 4) != kFeatureFileVersion) {
    throw FormatError(featuresPath.string() + ": unsupported BRFE version");
  }
  const std::size_t n = littleEndian32(bytes, 8);
  const std::size_t f = littleEndian32(bytes, 12);
  if (f == 0 || bytes.size() != 16 + 4 * n * f) throw FormatError(featuresPath.string() + ": length mismatch");
  const std::vector<std::uint8_t> labels = readAll(labelsPath);
  if (labels.size() != n) throw FormatError(labelsPath.string() + ": expected " + std::to_string(n) + " labels");

  LabeledFeatures out;
  out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::bit_cast<float>(littleEndian32(bytes, 16 + 4 * (i * f + j)));
    }
  }
  out.labels.assign(labels.begin(), labels.end());
  return out;
}

void savePrecomputed(const LabeledFeatures& data, const std::filesystem::path& featuresPath,
                     const std::filesystem::path& labelsPath) {
  std::ofstream out(featuresPath, std::ios::binary);
  if (!out) throw FormatError("cannot write " + featuresPath.string());
  out.write("BRFE", 4);
  writeLittle32(out, kFeatureFileVersion);
  writeLittle32(out, static_cast<std::uint32_t>(data.features.rows()));
  writeLittle32(out, static_cast<std::uint32_t>(data.features.cols()));
  for (Eigen::Index i = 0; i < data.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
      writeLittle32(out, std::bit_cast<std::uint32_t>(data.features(i, j)));
    }
  }
  std::ofstream lab(labelsPath, std::ios::binary);
  if (!lab) throw FormatError("cannot write " + labelsPath.string());
  for (int label : data.labels) lab.put(static_cast<char>(label));
}

FeatureExtractor FeatureExtractor::randomProjection(const ProjectionParams& params) {
  if (params.inputDim < 1 || params.featureDim < 1) throw ValidationError("projection dimensions must be positive");
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> normal(0.0, params.gain / std::sqrt(static_cast<double>(params.inputDim)));
  FeatureTable projection(params.featureDim, params.inputDim);
  for (Eigen::Index i = 0; i < projection.rows(); ++i) {
    for (Eigen::Index j = 0; j < projection.cols(); ++j) projection(i, j) = static_cast<float>(normal(rng));
  }
  FeatureExtractor fe;
  fe.kind_ = Kind::RandomProjection;
  fe.table_ = std::make_shared<const FeatureTable>(std::move(projection));
  fe.leakySlope_ = params.leakySlope;
  fe.declaredParams_ = static_cast<std::size_t>(params.featureDim) * static_cast<std::size_t>(params.inputDim);
  return fe;
}

FeatureExtractor FeatureExtractor::precomputed(FeatureTable table, std::size_t declaredParamCount) {
  FeatureExtractor fe;
  fe.kind_ = Kind::Precomputed;
  fe.table_ = std::make_shared<const FeatureTable>(std::move(table));
  fe.declaredParams_ = declaredParamCount;
  return fe;
}

int FeatureExtractor::featureDim() const {
  return static_cast<int>(kind_ == Kind::RandomProjection ? table_->rows() : table_->cols());
}

int FeatureExtractor::inputDim() const {
  return kind_ == Kind::RandomProjection ? static_cast<int>(table_->cols()) : 0;
}

const FeatureTable& FeatureExtractor::projection() const {
  if (kind_ != Kind::RandomProjection) throw ValidationError("precomputed extractor has no projection");
  return *table_;
}

Eigen::VectorXf FeatureExtractor::extract(std::span<const float> raw) const {
  if (kind_ != Kind::RandomProjection) throw ValidationError("precomputed extractor is indexed by sample id");
  if (static_cast<Eigen::Index>(raw.size()) != table_->cols()) {
    throw ShapeError("raw input of width " + std::to_string(raw.size()) + ", extractor expects " +
                     std::to_string(table_->cols()));
  }
  const Eigen::Map<const Eigen::VectorXf> x(raw.data(), static_cast<Eigen::Index>(raw.size()));
  Eigen::VectorXf z = *table_ * x;
  const float slope = static_cast<float>(leakySlope_);
  return z.unaryExpr([slope](float v) { return v > 0.0f ? v : slope * v; });
}

Eigen::VectorXf FeatureExtractor::lookup(std::size_t sampleId) const {
  if (kind_ != Kind::Precomputed) throw ValidationError("projection extractor has no stored rows");
  if (sampleId >= static_cast<std::size_t>(table_->rows())) throw ValidationError("sample id out of range");
  return table_->row(static_cast<Eigen::Index>(sampleId)).transpose();
}

FeatureTable FeatureExtractor::extractAll(const FeatureTable& raw) const {
  if (kind_ == Kind::Precomputed) {
    if (raw.rows() != table_->rows()) throw ShapeError("precomputed table row count differs from dataset");
    return *table_;
  }
  if (raw.cols() != table_->cols()) throw ShapeError("raw table width does not match the projection");
  FeatureTable out(raw.rows(), table_->rows());
  constexpr Eigen::Index kBlock = 4096;
  const float slope = static_cast<float>(leakySlope_);
  for (Eigen::Index start = 0; start < raw.rows(); start += kBlock) {
    const Eigen::Index n = std::min(kBlock, raw.rows() - start);
    out.middleRows(start, n).noalias() = raw.middleRows(start, n) * table_->transpose();
  }
  out = out.unaryExpr([slope](float v) { return v > 0.0f ? v : slope * v; });
  return out;
}

}  // namespace bristle
