#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <vector>

#include "bristle/error.hpp"
#include "bristle/partition.hpp"

using namespace bristle;

namespace {

// `perClass` samples of each of `classes` labels, interleaved.
std::vector<int> balancedLabels(int classes, int perClass) {
  std::vector<int> labels;
  for (int i = 0; i < perClass; ++i)
    for (int c = 0; c < classes; ++c) labels.push_back(c);
  return labels;
}

SampleSet sampleSet(std::initializer_list<std::pair<int, int>> classCounts) {
  SampleSet s;
  std::size_t id = 100;
  for (auto [cls, count] : classCounts)
    for (int i = 0; i < count; ++i) s.push(id++, cls);
  return s;
}

}  // namespace

TEST_CASE("coverage 0.4 gives peer 3 the classes 3 to 6") {
  const auto labels = balancedLabels(10, 40);
  PartitionOptions o;
  o.classCoverage = 0.4;
  const ShardAssignment a = assignShards(labels, 10, 10, o);
  CHECK(a.shardsPerPeer == 4);
  CHECK(a.classesOf(3) == std::vector<int>{3, 4, 5, 6});
  CHECK(a.classesOf(8) == std::vector<int>{0, 1, 8, 9});
}

TEST_CASE("coverage 0.2 gives peer 9 the classes 9 and 0") {
  const auto labels = balancedLabels(10, 20);
  PartitionOptions o;
  o.classCoverage = 0.2;
  const ShardAssignment a = assignShards(labels, 10, 10, o);
  CHECK(a.classesOf(9) == std::vector<int>{0, 9});
}

TEST_CASE("full coverage gives every peer every class") {
  const auto labels = balancedLabels(10, 30);
  const ShardAssignment a = assignShards(labels, 10, 10, PartitionOptions{});
  for (std::size_t p = 0; p < 10; ++p) {
    CHECK(a.classesOf(p).size() == 10);
    for (const Shard& s : a.perPeer[p]) CHECK(s.sampleIds.size() == 3);
  }
}

TEST_CASE("shards are disjoint, label-pure and drawn from the dataset for any seed") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> label(0, 9);
  std::vector<int> labels(2000);
  for (int& l : labels) l = label(rng);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (double coverage : {0.2, 0.4, 1.0}) {
      for (bool random : {false, true}) {
        PartitionOptions o;
        o.classCoverage = coverage;
        o.randomClasses = random;
        o.seed = seed;
        const ShardAssignment a = assignShards(labels, 10, 10, o);
        std::set<std::size_t> seen;
        std::size_t total = 0;
        for (const auto& shards : a.perPeer) {
          CHECK(shards.size() == static_cast<std::size_t>(a.shardsPerPeer));
          for (const Shard& s : shards) {
            for (std::size_t id : s.sampleIds) {
              REQUIRE(id < labels.size());
              CHECK(labels[id] == s.cls);
              seen.insert(id);
              ++total;
            }
          }
        }
        CHECK(seen.size() == total);
      }
    }
  }
}

TEST_CASE("partition is seed deterministic") {
  const auto labels = balancedLabels(10, 50);
  PartitionOptions o;
  o.classCoverage = 0.4;
  o.seed = 5;
  const auto a = assignShards(labels, 10, 10, o);
  const auto b = assignShards(labels, 10, 10, o);
  for (std::size_t p = 0; p < 10; ++p)
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.perPeer[p][k].sampleIds == b.perPeer[p][k].sampleIds);
}

TEST_CASE("explicit samples per class caps the shard size") {
  const auto labels = balancedLabels(10, 40);
  PartitionOptions o;
  o.classCoverage = 0.4;
  o.samplesPerClassPerPeer = 7;
  const auto a = assignShards(labels, 10, 10, o);
  for (const auto& shards : a.perPeer)
    for (const Shard& s : shards) CHECK(s.sampleIds.size() == 7);
  o.samplesPerClassPerPeer = 11;  // four holders need 44 of 40
  CHECK_THROWS_AS(assignShards(labels, 10, 10, o), ConfigError);
}

TEST_CASE("invalid coverage and undersized classes are configuration errors") {
  const auto labels = balancedLabels(10, 40);
  PartitionOptions o;
  o.classCoverage = 0.35;
  CHECK_THROWS_AS(assignShards(labels, 10, 10, o), ConfigError);
  o.classCoverage = 0.0;
  CHECK_THROWS_AS(assignShards(labels, 10, 10, o), ConfigError);
  o.classCoverage = 1.0;
  CHECK_THROWS_AS(assignShards(balancedLabels(10, 3), 10, 10, o), ConfigError);
  CHECK_THROWS_AS(assignShards(labels, 10, 0, o), ConfigError);
}

TEST_CASE("100 samples of one class with kappa 10 split 10 / 90") {
  const PeerData d = splitPeerData(sampleSet({{4, 100}}), 10, 3);
  CHECK(d.integrationSet.size() == 10);
  CHECK(d.trainPool.size() == 90);
  CHECK(d.familiarClasses == std::vector<int>{4});
}

TEST_CASE("a class with 5 samples and kappa 10 is not familiar") {
  const PeerData d = splitPeerData(sampleSet({{1, 5}, {2, 30}}), 10, 3);
  CHECK(d.familiarClasses == std::vector<int>{2});
  CHECK(d.integrationSet.size() == 14);
  CHECK(d.trainPool.size() == 21);
}

TEST_CASE("split sets are disjoint and cover the input") {
  const SampleSet s = sampleSet({{0, 12}, {3, 40}, {7, 9}, {9, 10}});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PeerData d = splitPeerData(s, 10, seed);
    std::set<std::size_t> all(d.trainPool.ids.begin(), d.trainPool.ids.end());
    for (std::size_t id : d.integrationSet.ids) CHECK(all.insert(id).second);
    CHECK(all == std::set<std::size_t>(s.ids.begin(), s.ids.end()));
    // familiar classes are exactly those with kappa integration samples
    std::map<int, std::size_t> held;
    for (int l : d.integrationSet.labels) ++held[l];
    std::vector<int> expected;
    for (auto [cls, n] : held)
      if (n >= 10) expected.push_back(cls);
    CHECK(d.familiarClasses == expected);
    CHECK(d.familiarClasses == std::vector<int>{0, 3, 9});
  }
}

TEST_CASE("splitPeerData rejects empty input and kappa 0") {
  CHECK_THROWS_AS(splitPeerData(SampleSet{}, 10, 0), ValidationError);
  CHECK_THROWS_AS(splitPeerData(sampleSet({{0, 3}}), 0, 0), ValidationError);
}

TEST_CASE("gather materializes the requested rows") {
  FeatureTable t(4, 2);
  t << 0, 1, 10, 11, 20, 21, 30, 31;
  SampleSet s;
  s.push(2, 5);
  s.push(0, 6);
  const Batch all = gather(t, s);
  CHECK(all.features(0, 1) == 21.0);
  CHECK(all.features(1, 0) == 0.0);
  CHECK(all.labels == std::vector<int>{5, 6});
  const std::vector<std::size_t> pos{1};
  const Batch one = gather(t, s, pos);
  CHECK(one.size() == 1);
  CHECK(one.labels[0] == 6);
}
