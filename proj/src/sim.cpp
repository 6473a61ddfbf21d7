#include "bristle/sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "bristle/error.hpp"
#include "parallel.hpp"

namespace bristle {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed-stream tags.
enum Stream : std::uint64_t { kPartition = 1, kSplit, kBatch, kAggregate, kDrop, kNoise, kCraft, kTopology };

void sampleWithout(std::vector<std::size_t> pool, std::size_t k, std::mt19937_64& rng, std::vector<std::size_t>& out) {
  std::shuffle(pool.begin(), pool.end(), rng);
  out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(std::min(k, pool.size())));
  std::sort(out.begin(), out.end());
}

std::size_t neighbourCount(double ratio, std::size_t others) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(others) - 1e-9));
}

}  // namespace

std::uint64_t deriveSeed(std::uint64_t master, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix64(splitmix64(splitmix64(splitmix64(master) ^ a) ^ b) ^ c);
}

std::vector<std::size_t> Topology::inDegrees() const {
  std::vector<std::size_t> deg(out.size(), 0);
  for (const auto& targets : out) {
    for (std::size_t t : targets) ++deg[t];
  }
  return deg;
}

Topology buildTopology(std::size_t peers, double connectionRatio, const std::vector<bool>& isAttacker,
                       bool attackersToAllBenign, std::uint64_t seed) {
  if (!(connectionRatio > 0.0 && connectionRatio <= 1.0)) {
    throw ConfigError("connection_ratio " + std::to_string(connectionRatio) + " outside (0, 1]");
  }
  if (isAttacker.size() != peers) throw ConfigError("attacker mask does not cover every peer");
  std::vector<std::size_t> benign;
  for (std::size_t p = 0; p < peers; ++p) {
    if (!isAttacker[p]) benign.push_back(p);
  }
  if (benign.empty()) throw ConfigError("topology needs at least one benign peer");

  Topology topo;
  topo.out.resize(peers);
  std::mt19937_64 rng(seed);
  const std::size_t k = attackersToAllBenign ? neighbourCount(connectionRatio, benign.size() - 1)
                                             : neighbourCount(connectionRatio, peers - 1);
  if (k == 0) throw ConfigError("connection_ratio yields zero neighbours per peer");

  for (std::size_t p = 0; p < peers; ++p) {
    if (attackersToAllBenign && isAttacker[p]) {
      topo.out[p] = benign;
      continue;
    }
    std::vector<std::size_t> pool;
    for (std::size_t q = 0; q < peers; ++q) {
      if (q != p && (!attackersToAllBenign || !isAttacker[q])) pool.push_back(q);
    }
    sampleWithout(std::move(pool), k, rng, topo.out[p]);
  }
  return topo;
}

bool benignStronglyConnected(const Topology& topology, const std::vector<bool>& isAttacker) {
  std::vector<std::size_t> benign;
  for (std::size_t p = 0; p < topology.peers(); ++p) {
    if (!isAttacker[p]) benign.push_back(p);
  }
  if (benign.size() <= 1) return true;

  auto reachesAll = [&](bool reverse) {
    std::vector<std::vector<std::size_t>> adj(topology.peers());
    for (std::size_t a = 0; a < topology.peers(); ++a) {
      if (isAttacker[a]) continue;
      for (std::size_t b : topology.out[a]) {
        if (isAttacker[b]) continue;
        (reverse ? adj[b] : adj[a]).push_back(reverse ? a : b);
      }
    }
    std::vector<bool> seen(topology.peers(), false);
    std::vector<std::size_t> stack{benign.front()};
    seen[benign.front()] = true;
    std::size_t count = 1;
    while (!stack.empty()) {
      const std::size_t at = stack.back();
      stack.pop_back();
      for (std::size_t next : adj[at]) {
        if (!seen[next]) {
          seen[next] = true;
          ++count;
          stack.push_back(next);
        }
      }
    }
    return count == benign.size();
  };
  return reachesAll(false) && reachesAll(true);
}

std::vector<bool> placeAttackers(std::size_t peers, std::size_t attackers, AttackerPlacement placement) {
  if (attackers > peers) throw ConfigError("more attackers than peers");
  std::vector<bool> mask(peers, false);
  for (std::size_t i = 0; i < attackers; ++i) {
    const std::size_t id = placement == AttackerPlacement::Last ? peers - attackers + i
                                                                : (2 * i + 1) * peers / (2 * attackers);
    mask[id] = true;
  }
  return mask;
}

std::size_t SimulationConfig::attackerCount() const {
  if (attack == AttackKind::None) return 0;
  return static_cast<std::size_t>(std::lround(byzantineFraction * static_cast<double>(peers)));
}

Simulator::Simulator(const SimulationConfig& config, std::shared_ptr<const FeatureBank> bank)
    : config_(config), bank_(std::move(bank)) {
  if (!bank_ || bank_->train.size() == 0 || bank_->test.size() == 0) throw ConfigError("empty feature bank");
  if (config_.peers == 0) throw ConfigError("peers must be positive");
  if (config_.batchSize == 0) throw ConfigError("batch_size must be positive");
  if (config_.evalInterval == 0) throw ConfigError("eval_interval must be positive");
  if (!(config_.dropProbability >= 0.0 && config_.dropProbability <= 1.0)) {
    throw ConfigError("drop_probability outside [0, 1]");
  }
  if (!(config_.byzantineFraction >= 0.0 && config_.byzantineFraction < 1.0)) {
    throw ConfigError("byzantine_fraction outside [0, 1)");
  }
  const std::size_t attackers = config_.attackerCount();
  if (attackers >= config_.peers) throw ConfigError("no benign peer left after placing attackers");

  rule_ = makeRule(config_.rule);
  const std::vector<bool> isAttacker = placeAttackers(config_.peers, attackers, config_.placement);
  topology_ = buildTopology(config_.peers, config_.connectionRatio, isAttacker, config_.attackersToAllBenign,
                            deriveSeed(config_.seed, kTopology));

  const int classes = bank_->classes;
  const int width = bank_->train.dimension();
  PartitionOptions partition;
  partition.classCoverage = config_.classCoverage;
  partition.samplesPerClassPerPeer = config_.samplesPerClassPerPeer;
  partition.randomClasses = config_.randomClasses;
  partition.seed = deriveSeed(config_.seed, kPartition);
  const ShardAssignment shards = assignShards(bank_->train.labels, classes, config_.peers, partition);

  const OutputLayer initial = OutputLayer::zeros(classes, width);
  previousBenignMean_ = initial;
  peers_.resize(config_.peers);
  for (std::size_t id = 0; id < config_.peers; ++id) {
    PeerState& peer = peers_[id];
    peer.id = id;
    peer.model = initial;
    peer.outgoing = initial;
    peer.optimizer = OptimizerState::init(initial, config_.adam);
    peer.batchRng.seed(deriveSeed(config_.seed, kBatch, id));
    if (!isAttacker[id]) {
      peer.role = Role::Benign;
    } else {
      peer.role = config_.attack == AttackKind::LabelFlip ? Role::LabelFlip : Role::Crafting;
    }
    if (peer.role == Role::Crafting) continue;  // crafted models need no private data

    SampleSet samples;
    for (const Shard& shard : shards.perPeer[id]) {
      for (std::size_t sample : shard.sampleIds) {
        const int label = bank_->train.labels[sample];
        samples.push(sample, peer.role == Role::LabelFlip && config_.flipLabels ? labelFlip(label, classes) : label);
      }
    }
    peer.data = splitPeerData(samples, config_.rule.pbi.kappa, deriveSeed(config_.seed, kSplit, id));
    if (!peer.data.integrationSet.empty()) peer.integrationBatch = gather(bank_->train.features, peer.data.integrationSet);
    peer.batchOrder.resize(peer.data.trainPool.size());
    std::iota(peer.batchOrder.begin(), peer.batchOrder.end(), std::size_t{0});
    std::shuffle(peer.batchOrder.begin(), peer.batchOrder.end(), peer.batchRng);
  }
}

std::size_t Simulator::payloadBytes() const {
  return serializedSize(bank_->classes, bank_->train.dimension());
}

Batch Simulator::nextBatch(PeerState& peer) {
  std::vector<std::size_t> positions;
  positions.reserve(config_.batchSize);
  while (positions.size() < config_.batchSize) {
    if (peer.batchCursor == peer.batchOrder.size()) {
      std::shuffle(peer.batchOrder.begin(), peer.batchOrder.end(), peer.batchRng);
      peer.batchCursor = 0;
    }
    positions.push_back(peer.batchOrder[peer.batchCursor++]);
  }
  return gather(bank_->train.features, peer.data.trainPool, positions);
}

void Simulator::honestStep(PeerState& peer) {
  if (!peer.batchOrder.empty()) {
    TrainStepResult trained = trainStep(peer.model, peer.optimizer, nextBatch(peer));
    peer.model = std::move(trained.layer);
    peer.optimizer = std::move(trained.optimizer);
  }
  if (config_.share == ShareMode::Trained) peer.outgoing = peer.model;
  const AggregationInput input{peer.id, peer.model, peer.inbox, peer.integrationBatch, peer.data.familiarClasses,
                               deriveSeed(config_.seed, kAggregate, round_, peer.id)};
  OutputLayer aggregated = rule_->aggregate(input);
  peer.model = std::move(aggregated);
  peer.inbox.clear();
  if (config_.share == ShareMode::Aggregated) peer.outgoing = peer.model;
}

std::vector<OutputLayer> Simulator::craftAttacks() {
  std::vector<OutputLayer> benign;
  std::size_t crafting = 0;
  for (const PeerState& p : peers_) {
    if (p.role == Role::Benign) benign.push_back(p.outgoing);
    crafting += p.role == Role::Crafting;
  }

  std::optional<OutputLayer> shared;
  std::vector<OutputLayer> out;
  const AttackParams& ap = config_.attackParams;
  for (const PeerState& p : peers_) {
    if (p.role != Role::Crafting) continue;
    std::mt19937_64 rng(deriveSeed(config_.seed, kNoise, round_, p.id));
    const int classes = bank_->classes;
    const int width = bank_->train.dimension();
    switch (config_.attack) {
      case AttackKind::KrumAttack:
        if (!shared) {
          std::mt19937_64 craftRng(deriveSeed(config_.seed, kCraft, round_));
          shared = krumAttackModel(benign, previousBenignMean_, crafting, config_.rule.krumB, ap, craftRng).model;
        }
        out.push_back(*shared);
        break;
      case AttackKind::TrimmedMeanAttack:
        if (benign.empty()) {
          out.push_back(additiveNoiseModel(classes, width, ap.noiseMean, ap.noiseStd, rng));
          break;
        }
        if (!shared) shared = trimmedMeanAttackModel(benign, previousBenignMean_, ap.delta, ap.epsilon);
        out.push_back(*shared);
        break;
      default:
        out.push_back(additiveNoiseModel(classes, width, ap.noiseMean, ap.noiseStd, rng));
        break;
    }
  }
  return out;
}

RoundStats Simulator::step() {
  ++round_;
  std::vector<std::size_t> honest;
  for (const PeerState& p : peers_) {
    if (p.role != Role::Crafting) honest.push_back(p.id);
  }
  detail::parallelFor(honest.size(), config_.threads, [&](std::size_t i) { honestStep(peers_[honest[i]]); });

  std::vector<OutputLayer> crafted = craftAttacks();
  std::size_t next = 0;
  for (PeerState& p : peers_) {
    if (p.role != Role::Crafting) continue;
    p.model = std::move(crafted[next++]);
    p.outgoing = p.model;
    p.inbox.clear();
  }

  std::vector<OutputLayer> benign;
  for (const PeerState& p : peers_) {
    if (p.role == Role::Benign) benign.push_back(p.outgoing);
  }
  if (!benign.empty()) previousBenignMean_ = meanModel(benign);

  RoundStats stats;
  const std::size_t payload = payloadBytes();
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (PeerState& sender : peers_) {
    std::mt19937_64 rng(deriveSeed(config_.seed, kDrop, round_, sender.id));
    for (std::size_t target : topology_.out[sender.id]) {
      ++stats.sent;
      stats.bytes += payload;
      sender.bytesSent += payload;
      if (config_.dropProbability > 0.0 && coin(rng) < config_.dropProbability) {
        ++stats.dropped;
        continue;
      }
      peers_[target].inbox.push_back({sender.id, sender.outgoing});
      ++stats.delivered;
    }
  }
  return stats;
}

std::vector<std::size_t> Simulator::reportedPeers() const {
  std::vector<std::size_t> ids;
  for (const PeerState& p : peers_) {
    if (p.role == Role::Benign || config_.includeAttackersInAccuracy) ids.push_back(p.id);
  }
  return ids;
}

std::vector<MetricsRecord> Simulator::measure() const {
  const std::vector<std::size_t> ids = reportedPeers();
  std::vector<MetricsRecord> records(ids.size());
  detail::parallelFor(ids.size(), config_.threads, [&](std::size_t i) {
    const PeerState& p = peers_[ids[i]];
    records[i] = {round_, p.id, accuracy(p.model, bank_->test.features, bank_->test.labels), p.bytesSent};
  });
  return records;
}

std::vector<std::pair<std::size_t, double>> meanAccuracyCurve(const std::vector<MetricsRecord>& records) {
  std::map<std::size_t, std::pair<double, std::size_t>> sums;
  for (const MetricsRecord& r : records) {
    auto& [sum, count] = sums[r.iteration];
    sum += r.accuracy;
    ++count;
  }
  std::vector<std::pair<std::size_t, double>> curve;
  for (const auto& [iteration, acc] : sums) curve.emplace_back(iteration, acc.first / static_cast<double>(acc.second));
  return curve;
}

ExperimentResult runExperiment(const SimulationConfig& config, std::shared_ptr<const FeatureBank> bank) {
  Simulator sim(config, std::move(bank));
  ExperimentResult result;
  ExperimentSummary& s = result.summary;
  for (const PeerState& p : sim.peers()) (p.role == Role::Benign ? s.benignPeers : s.attackers) += 1;
  std::vector<bool> isAttacker;
  for (const PeerState& p : sim.peers()) isAttacker.push_back(p.role != Role::Benign);
  s.benignConnected = benignStronglyConnected(sim.topology(), isAttacker);
  s.payloadBytes = sim.payloadBytes();

  auto meanOf = [](const std::vector<MetricsRecord>& rs) {
    double sum = 0.0;
    for (const MetricsRecord& r : rs) sum += r.accuracy;
    return rs.empty() ? 0.0 : sum / static_cast<double>(rs.size());
  };
  s.initialAccuracy = meanOf(sim.measure());
  s.finalAccuracy = s.initialAccuracy;

  for (std::size_t t = 1; t <= config.maxIterations; ++t) {
    const RoundStats stats = sim.step();
    s.totalBytesSent += stats.bytes;
    s.messagesSent += stats.sent;
    s.messagesDropped += stats.dropped;
    const bool sample = t % config.evalInterval == 0;
    if (!sample && t != config.maxIterations) continue;
    std::vector<MetricsRecord> now = sim.measure();
    const double mean = meanOf(now);
    if (t == config.maxIterations) s.finalAccuracy = mean;
    if (!sample) continue;
    if (!s.iterationsTo70 && mean >= 0.70) s.iterationsTo70 = t;
    if (!s.iterationsTo90 && mean >= 0.90) s.iterationsTo90 = t;
    result.records.insert(result.records.end(), now.begin(), now.end());
  }
  return result;
}

}  // namespace bristle
