#include "bristle/partition.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "bristle/error.hpp"

namespace bristle {

Batch gather(const FeatureTable& table, const SampleSet& set) {
  std::vector<std::size_t> all(set.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return gather(table, set, all);
}

Batch gather(const FeatureTable& table, const SampleSet& set, std::span<const std::size_t> positions) {
  Batch batch;
  batch.features.resize(static_cast<Eigen::Index>(positions.size()), table.cols());
  batch.labels.reserve(positions.size());
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const std::size_t pos = positions[r];
    batch.features.row(static_cast<Eigen::Index>(r)) =
        table.row(static_cast<Eigen::Index>(set.ids[pos])).cast<double>();
    batch.labels.push_back(set.labels[pos]);
  }
  return batch;
}

std::vector<int> ShardAssignment::classesOf(std::size_t peer) const {
  std::vector<int> out;
  for (const Shard& s : perPeer.at(peer)) out.push_back(s.cls);
  return out;
}

ShardAssignment assignShards(std::span<const int> labels, int classes, std::size_t peers,
                             const PartitionOptions& options) {
  if (peers == 0) throw ConfigError("partition needs at least one peer");
  if (classes < 2) throw ConfigError("partition needs at least two classes");
  const double exact = options.classCoverage * classes;
  const int perPeer = static_cast<int>(std::lround(exact));
  if (!(options.classCoverage > 0.0 && options.classCoverage <= 1.0) || perPeer < 1 ||
      std::abs(exact - perPeer) > 1e-9) {
    throw ConfigError("class_coverage " + std::to_string(options.classCoverage) + " times " +
                      std::to_string(classes) + " classes is not a positive whole class count");
  }

  std::mt19937_64 rng(options.seed);
  std::vector<std::vector<int>> peerClasses(peers);
  for (std::size_t p = 0; p < peers; ++p) {
    if (options.randomClasses) {
      std::vector<int> all(static_cast<std::size_t>(classes));
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      peerClasses[p].assign(all.begin(), all.begin() + perPeer);
      std::sort(peerClasses[p].begin(), peerClasses[p].end());
    } else {
      for (int k = 0; k < perPeer; ++k) {
        peerClasses[p].push_back(static_cast<int>((p + static_cast<std::size_t>(k)) % static_cast<std::size_t>(classes)));
      }
    }
  }

  std::vector<std::vector<std::size_t>> byClass(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw ValidationError("label outside class range");
    byClass[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::vector<std::vector<std::size_t>> holders(static_cast<std::size_t>(classes));
  for (std::size_t p = 0; p < peers; ++p) {
    for (int c : peerClasses[p]) holders[static_cast<std::size_t>(c)].push_back(p);
  }

  ShardAssignment out;
  out.classes = classes;
  out.shardsPerPeer = perPeer;
  out.classCoverage = options.classCoverage;
  out.perPeer.resize(peers);
  for (int c = 0; c < classes; ++c) {
    auto& pool = byClass[static_cast<std::size_t>(c)];
    const auto& who = holders[static_cast<std::size_t>(c)];
    if (who.empty()) continue;
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t shardSize =
        options.samplesPerClassPerPeer > 0 ? options.samplesPerClassPerPeer : pool.size() / who.size();
    if (shardSize == 0 || shardSize * who.size() > pool.size()) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) + " samples, " +
                        std::to_string(who.size()) + " holders need " + std::to_string(shardSize) + " each");
    }
    for (std::size_t h = 0; h < who.size(); ++h) {
      Shard shard{c, static_cast<int>(h), {}};
      shard.sampleIds.assign(pool.begin() + static_cast<std::ptrdiff_t>(h * shardSize),
                             pool.begin() + static_cast<std::ptrdiff_t>((h + 1) * shardSize));
      std::sort(shard.sampleIds.begin(), shard.sampleIds.end());
      out.perPeer[who[h]].push_back(std::move(shard));
    }
  }
  for (auto& shards : out.perPeer) {
    std::sort(shards.begin(), shards.end(), [](const Shard& a, const Shard& b) { return a.cls < b.cls; });
  }
  return out;
}

PeerData splitPeerData(const SampleSet& samples, std::size_t kappa, std::uint64_t seed) {
  if (samples.empty()) throw ValidationError("cannot split an empty shard");
  if (kappa < 1) throw ValidationError("kappa must be at least 1");

  std::map<int, std::vector<std::size_t>> byClass;  // label -> positions
  for (std::size_t i = 0; i < samples.size(); ++i) byClass[samples.labels[i]].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<bool> heldOut(samples.size(), false);
  PeerData out;
  for (auto& [cls, positions] : byClass) {
    std::shuffle(positions.begin(), positions.end(), rng);
    const std::size_t take = positions.size() >= kappa ? kappa : positions.size() - 1;
    for (std::size_t k = 0; k < take; ++k) heldOut[positions[k]] = true;
    if (take >= kappa) out.familiarClasses.push_back(cls);
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (heldOut[i] ? out.integrationSet : out.trainPool).push(samples.ids[i], samples.labels[i]);
  }
  return out;
}

}  // namespace bristle
