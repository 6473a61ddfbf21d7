#pragma once

// Synchronous round simulator. Each round every honest-pipeline peer trains
// one mini-batch, aggregates what arrived last round, and sends its model to
// its out-neighbours; crafting attackers emit after seeing the round's benign
// models. Messages are delivered at the next round boundary.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "bristle/adversary.hpp"
#include "bristle/features.hpp"
#include "bristle/gar.hpp"
#include "bristle/model.hpp"
#include "bristle/partition.hpp"
#include "bristle/rules.hpp"

namespace bristle {

/// Stream seed for (master, a, b, c); splitmix64 mixing.
std::uint64_t deriveSeed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

struct Topology {
  std::vector<std::vector<std::size_t>> out;  // sorted out-neighbours, no self-edges

  std::size_t peers() const { return out.size(); }
  std::vector<std::size_t> inDegrees() const;
};

/// Every peer draws ceil(ratio * (n - 1)) random out-neighbours among all
/// other peers. With `attackersToAllBenign`, benign peers draw
/// ceil(ratio * (benign - 1)) among benign peers only and every attacker sends
/// to every benign peer. Throws ConfigError for a ratio outside (0, 1] or one
/// that yields no neighbours.
Topology buildTopology(std::size_t peers, double connectionRatio, const std::vector<bool>& isAttacker,
                       bool attackersToAllBenign, std::uint64_t seed);

/// True when the benign-only subgraph is strongly connected.
bool benignStronglyConnected(const Topology& topology, const std::vector<bool>& isAttacker);

/// Attacker ids: evenly spread over [0, peers) or the highest ids.
enum class AttackerPlacement { Spread, Last };
std::vector<bool> placeAttackers(std::size_t peers, std::size_t attackers, AttackerPlacement placement);

/// Train and test features shared read-only by every peer.
struct FeatureBank {
  LabeledFeatures train;
  LabeledFeatures test;
  int classes = 10;
  std::size_t declaredExtractorParams = 0;
};

/// What an honest peer sends each round: the model right after its local
/// training step, or the model after aggregation.
enum class ShareMode { Trained, Aggregated };

struct SimulationConfig {
  std::size_t peers = 10;
  double connectionRatio = 1.0;
  double byzantineFraction = 0.5;  // of all peers; ignored when attack is None
  AttackKind attack = AttackKind::LabelFlip;
  AttackParams attackParams;
  AttackerPlacement placement = AttackerPlacement::Spread;
  bool attackersToAllBenign = false;
  // Off: label-flip peers keep the true labels (control runs).
  bool flipLabels = true;
  ShareMode share = ShareMode::Trained;

  std::size_t batchSize = 5;
  AdamConfig adam;
  std::size_t maxIterations = 300;
  std::size_t evalInterval = 10;

  RuleConfig rule;
  double classCoverage = 0.4;
  std::size_t samplesPerClassPerPeer = 0;
  bool randomClasses = false;

  double dropProbability = 0.0;
  bool includeAttackersInAccuracy = false;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  std::size_t attackerCount() const;
};

enum class Role { Benign, LabelFlip, Crafting };

struct PeerState {
  std::size_t id = 0;
  Role role = Role::Benign;
  OutputLayer model;
  OutputLayer outgoing;  // what this peer sends at the end of the round
  OptimizerState optimizer;
  PeerData data;
  Batch integrationBatch;
  std::vector<ReceivedModel> inbox;
  std::vector<std::size_t> batchOrder;  // positions into data.trainPool
  std::size_t batchCursor = 0;
  std::mt19937_64 batchRng;
  std::uint64_t bytesSent = 0;
};

struct MetricsRecord {
  std::size_t iteration = 0;
  std::size_t peerId = 0;
  double accuracy = 0.0;
  std::uint64_t bytesSentCumulative = 0;
};

struct RoundStats {
  std::size_t sent = 0;
  std::size_t dropped = 0;
  std::size_t delivered = 0;
  std::uint64_t bytes = 0;
};

struct ExperimentSummary {
  std::size_t benignPeers = 0;
  std::size_t attackers = 0;
  double initialAccuracy = 0.0;
  double finalAccuracy = 0.0;  // mean over benign peers after the last round
  std::optional<std::size_t> iterationsTo70;
  std::optional<std::size_t> iterationsTo90;
  std::uint64_t totalBytesSent = 0;
  std::size_t payloadBytes = 0;
  std::size_t messagesSent = 0;
  std::size_t messagesDropped = 0;
  bool benignConnected = true;
};

class Simulator {
 public:
  /// Throws ConfigError for inconsistent settings.
  Simulator(const SimulationConfig& config, std::shared_ptr<const FeatureBank> bank);

  /// Advances one round and returns its message statistics.
  RoundStats step();

  std::size_t round() const { return round_; }
  const std::vector<PeerState>& peers() const { return peers_; }
  const Topology& topology() const { return topology_; }
  const SimulationConfig& config() const { return config_; }
  std::size_t payloadBytes() const;

  /// Ids whose accuracy is reported (benign peers unless configured otherwise).
  std::vector<std::size_t> reportedPeers() const;
  /// Global test accuracy of the reported peers' current models.
  std::vector<MetricsRecord> measure() const;

 private:
  void honestStep(PeerState& peer);
  Batch nextBatch(PeerState& peer);
  std::vector<OutputLayer> craftAttacks();

  SimulationConfig config_;
  std::shared_ptr<const FeatureBank> bank_;
  std::unique_ptr<AggregationRule> rule_;
  Topology topology_;
  std::vector<PeerState> peers_;
  OutputLayer previousBenignMean_;
  std::size_t round_ = 0;
};

struct ExperimentResult {
  std::vector<MetricsRecord> records;  // every evalInterval rounds
  ExperimentSummary summary;
};

ExperimentResult runExperiment(const SimulationConfig& config, std::shared_ptr<const FeatureBank> bank);

/// Mean accuracy per sampled iteration, in iteration order.
std::vector<std::pair<std::size_t, double>> meanAccuracyCurve(const std::vector<MetricsRecord>& records);

}  // namespace bristle
