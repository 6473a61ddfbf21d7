#pragma once

// Frozen feature front-end. Peers share an identical, immutable extractor;
// only the output layer on top of it is trained.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bristle/model.hpp"

namespace bristle {

enum class Split { Train, Test };

struct RawDataset {
  FeatureTable inputs;  // samples x raw dimension
  std::vector<int> labels;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  int dimension() const { return static_cast<int>(inputs.cols()); }
};

struct ZScoreStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;  // population; zero entries already replaced by 1
};

ZScoreStats zScoreStats(const RawDataset& data);

/// Normalizes per column. Without `stats`, they are computed from `data`
/// itself; pass the training stats when normalizing a test split.
std::pair<RawDataset, ZScoreStats> zScoreNormalize(const RawDataset& data,
                                                   const std::optional<ZScoreStats>& stats = std::nullopt);

/// Reads an MNIST-layout IDX image/label pair; pixels scaled to [0, 1].
/// Throws FormatError on bad magic numbers, truncation or count mismatch.
RawDataset loadIdx(const std::filesystem::path& imagesPath, const std::filesystem::path& labelsPath,
                   Split split = Split::Train);

/// Features plus labels, as produced by an extractor or read from disk.
struct LabeledFeatures {
  FeatureTable features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  int dimension() const { return static_cast<int>(features.cols()); }
};

// BRFE precomputed-feature file: "BRFE", u32 version, u32 N, u32 F (all
// little-endian), then N*F little-endian float32 row by row. The labels live
// in a parallel file of N bytes.
inline constexpr std::uint32_t kFeatureFileVersion = 1;

LabeledFeatures loadPrecomputed(const std::filesystem::path& featuresPath, const std::filesystem::path& labelsPath);
void savePrecomputed(const LabeledFeatures& data, const std::filesystem::path& featuresPath,
                     const std::filesystem::path& labelsPath);

class FeatureExtractor {
 public:
  enum class Kind { Precomputed, RandomProjection };

  struct ProjectionParams {
    int inputDim = 784;
    int featureDim = 800;
    std::uint64_t seed = 7;
    double gain = 8.0;  // entries ~ N(0, gain^2 / inputDim)
    double leakySlope = 0.01;
  };

  /// Seeded projection followed by leaky ReLU; the projection matrix is drawn
  /// once at construction and never changes.
  static FeatureExtractor randomProjection(const ProjectionParams& params);

  /// Table lookup by sample id. `declaredParamCount` stands in for the size of
  /// the frozen network that produced the table.
  static FeatureExtractor precomputed(FeatureTable table, std::size_t declaredParamCount);

  Kind kind() const { return kind_; }
  int featureDim() const;
  /// Raw input width; 0 for precomputed extractors.
  int inputDim() const;
  std::size_t declaredParamCount() const { return declaredParams_; }

  /// Random-projection kind only.
  Eigen::VectorXf extract(std::span<const float> raw) const;
  /// Precomputed kind only: the stored row for `sampleId`.
  Eigen::VectorXf lookup(std::size_t sampleId) const;

  /// Row-wise extraction of a whole raw table (random projection), or the
  /// stored table itself when `raw` has as many rows (precomputed).
  FeatureTable extractAll(const FeatureTable& raw) const;

  const FeatureTable& projection() const;

 private:
  FeatureExtractor() = default;

  Kind kind_ = Kind::RandomProjection;
  std::shared_ptr<const FeatureTable> table_;  // projection (F x D) or stored features (N x F)
  double leakySlope_ = 0.01;
  std::size_t declaredParams_ = 0;
};

}  // namespace bristle
