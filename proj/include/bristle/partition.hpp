#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bristle/model.hpp"

namespace bristle {

/// Sample ids into a shared feature table, with the labels as this owner sees
/// them (a label-flip attacker sees transformed labels).
struct SampleSet {
  std::vector<std::size_t> ids;
  std::vector<int> labels;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  void push(std::size_t id, int label) {
    ids.push_back(id);
    labels.push_back(label);
  }
};

/// Materializes the rows of `set` as a double-precision batch.
Batch gather(const FeatureTable& table, const SampleSet& set);
Batch gather(const FeatureTable& table, const SampleSet& set, std::span<const std::size_t> positions);

struct Shard {
  int cls = 0;
  int index = 0;  // position of this holder among the class's holders
  std::vector<std::size_t> sampleIds;
};

struct ShardAssignment {
  int classes = 0;
  int shardsPerPeer = 0;
  double classCoverage = 1.0;
  std::vector<std::vector<Shard>> perPeer;

  std::vector<int> classesOf(std::size_t peer) const;
};

struct PartitionOptions {
  double classCoverage = 1.0;
  /// 0 splits every class evenly over its holders.
  std::size_t samplesPerClassPerPeer = 0;
  /// Random class sets instead of the consecutive {i, i+1, ...} mod C layout.
  bool randomClasses = false;
  std::uint64_t seed = 0;
};

/// Peer i holds classes {i, i+1, ..., i+k-1} mod C with k = coverage * C;
/// each class's samples are shuffled and split evenly over its holders.
/// Shards of one class never overlap. Throws ConfigError when the coverage is
/// not a positive whole class count or a class cannot feed all its holders.
ShardAssignment assignShards(std::span<const int> labels, int classes, std::size_t peers,
                             const PartitionOptions& options);

struct PeerData {
  SampleSet trainPool;
  SampleSet integrationSet;  // never trained on
  std::vector<int> familiarClasses;  // sorted
};

/// Holds out up to `kappa` random samples per class for integration. A class
/// with fewer than kappa samples gives all but one of them and is not
/// familiar. Throws ValidationError for an empty sample set or kappa < 1.
PeerData splitPeerData(const SampleSet& samples, std::size_t kappa, std::uint64_t seed);

}  // namespace bristle
