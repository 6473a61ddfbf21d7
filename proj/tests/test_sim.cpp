#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <memory>
#include <random>
#include <set>
#include <vector>

#include "bristle/error.hpp"
#include "bristle/sim.hpp"

using namespace bristle;

namespace {

// Ten Gaussian clusters in 10 dimensions, class k around 3 * e_k.
std::shared_ptr<const FeatureBank> syntheticBank(int trainPerClass = 200, int testPerClass = 20) {
  auto bank = std::make_shared<FeatureBank>();
  std::mt19937_64 rng(99);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  auto fill = [&](LabeledFeatures& out, int perClass) {
    out.features.resize(10 * perClass, 10);
    int row = 0;
    for (int i = 0; i < perClass; ++i) {
      for (int k = 0; k < 10; ++k, ++row) {
        for (int j = 0; j < 10; ++j) out.features(row, j) = (j == k ? 3.0f : 0.0f) + noise(rng);
        out.labels.push_back(k);
      }
    }
  };
  fill(bank->train, trainPerClass);
  fill(bank->test, testPerClass);
  bank->classes = 10;
  return bank;
}

SimulationConfig smallConfig() {
  SimulationConfig c;
  c.classCoverage = 1.0;
  c.attack = AttackKind::None;
  c.maxIterations = 30;
  c.rule.name = "fedavg";
  return c;
}

std::vector<OutputLayer> models(const Simulator& sim) {
  std::vector<OutputLayer> out;
  for (const PeerState& p : sim.peers()) out.push_back(p.model);
  return out;
}

bool sameRecords(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].iteration != b[i].iteration || a[i].peerId != b[i].peerId || a[i].accuracy != b[i].accuracy ||
        a[i].bytesSentCumulative != b[i].bytesSentCumulative) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("ratio 1 on 10 peers is the complete directed graph") {
  const Topology t = buildTopology(10, 1.0, std::vector<bool>(10, false), false, 1);
  for (std::size_t p = 0; p < 10; ++p) {
    CHECK(t.out[p].size() == 9);
    CHECK(std::find(t.out[p].begin(), t.out[p].end(), p) == t.out[p].end());
  }
  CHECK(t.inDegrees() == std::vector<std::size_t>(10, 9));
}

TEST_CASE("ratio 0.05 on 100 peers gives 5 neighbours each") {
  const Topology t = buildTopology(100, 0.05, std::vector<bool>(100, false), false, 3);
  for (const auto& out : t.out) CHECK(out.size() == 5);
}

TEST_CASE("no self-edges or duplicates for any seed") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ratio(0.01, 1.0);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t n = 2 + seed % 30;
    const Topology t = buildTopology(n, ratio(rng), std::vector<bool>(n, false), false, seed);
    for (std::size_t p = 0; p < n; ++p) {
      CHECK(std::find(t.out[p].begin(), t.out[p].end(), p) == t.out[p].end());
      CHECK(std::set<std::size_t>(t.out[p].begin(), t.out[p].end()).size() == t.out[p].size());
      CHECK(std::is_sorted(t.out[p].begin(), t.out[p].end()));
    }
  }
}

TEST_CASE("attackers connected to every benign peer") {
  std::vector<bool> attacker(105, false);
  for (std::size_t i = 100; i < 105; ++i) attacker[i] = true;
  const Topology t = buildTopology(105, 0.05, attacker, true, 2);
  for (std::size_t p = 0; p < 100; ++p) {
    CHECK(t.out[p].size() == 5);
    for (std::size_t q : t.out[p]) CHECK_FALSE(attacker[q]);
  }
  for (std::size_t p = 100; p < 105; ++p) CHECK(t.out[p].size() == 100);
}

TEST_CASE("topology configuration errors") {
  CHECK_THROWS_AS(buildTopology(10, 0.0, std::vector<bool>(10, false), false, 1), ConfigError);
  CHECK_THROWS_AS(buildTopology(10, 1.5, std::vector<bool>(10, false), false, 1), ConfigError);
  CHECK_THROWS_AS(buildTopology(1, 1.0, std::vector<bool>(1, false), false, 1), ConfigError);
}

TEST_CASE("strong connectivity of the benign subgraph") {
  Topology ring;
  ring.out = {{1}, {2}, {0}};
  CHECK(benignStronglyConnected(ring, {false, false, false}));
  Topology chain;
  chain.out = {{1}, {2}, {}};
  CHECK_FALSE(benignStronglyConnected(chain, {false, false, false}));
  CHECK(benignStronglyConnected(chain, {false, false, true}) == false);
  Topology pair;
  pair.out = {{1}, {0}, {}};
  CHECK(benignStronglyConnected(pair, {false, false, true}));
}

TEST_CASE("attacker placement and count") {
  const auto spread = placeAttackers(10, 5, AttackerPlacement::Spread);
  const auto last = placeAttackers(10, 5, AttackerPlacement::Last);
  CHECK(spread == std::vector<bool>{false, true, false, true, false, true, false, true, false, true});
  CHECK(last == std::vector<bool>{false, false, false, false, false, true, true, true, true, true});
  const auto four = placeAttackers(10, 4, AttackerPlacement::Spread);
  CHECK(std::count(four.begin(), four.end(), true) == 4);
  SimulationConfig c;
  CHECK(c.attackerCount() == 5);
  c.byzantineFraction = 0.4;
  CHECK(c.attackerCount() == 4);
  c.attack = AttackKind::None;
  CHECK(c.attackerCount() == 0);
}

TEST_CASE("derived seeds differ per stream") {
  CHECK(deriveSeed(1, 2) == deriveSeed(1, 2));
  CHECK(deriveSeed(1, 2) != deriveSeed(1, 3));
  CHECK(deriveSeed(1, 2, 0) != deriveSeed(1, 2, 1));
  CHECK(deriveSeed(1, 2) != deriveSeed(2, 2));
}

TEST_CASE("results are identical across runs and thread counts") {
  const auto bank = syntheticBank();
  for (const char* rule : {"bristle", "mozi", "krum"}) {
    SimulationConfig c = smallConfig();
    c.rule.name = rule;
    c.attack = AttackKind::LabelFlip;
    c.byzantineFraction = 0.3;
    c.classCoverage = 0.4;
    c.dropProbability = 0.1;
    c.maxIterations = 20;
    const auto one = runExperiment(c, bank);
    c.threads = 4;
    const auto four = runExperiment(c, bank);
    const auto again = runExperiment(c, bank);
    CHECK(sameRecords(one.records, four.records));
    CHECK(sameRecords(four.records, again.records));
    CHECK(one.summary.finalAccuracy == four.summary.finalAccuracy);
  }
}

TEST_CASE("drop probability 1 isolates peers") {
  const auto bank = syntheticBank();
  std::vector<std::vector<OutputLayer>> byRule;
  for (const char* rule : {"fedavg", "median", "krum", "bridge", "mozi", "bristle"}) {
    SimulationConfig c = smallConfig();
    c.rule.name = rule;
    c.dropProbability = 1.0;
    Simulator sim(c, bank);
    for (int t = 0; t < 15; ++t) {
      const RoundStats s = sim.step();
      CHECK(s.delivered == 0);
      CHECK(s.dropped == s.sent);
      for (const PeerState& p : sim.peers()) CHECK(p.inbox.empty());
    }
    byRule.push_back(models(sim));
  }
  // with empty inboxes every rule keeps own model, so all trajectories are plain local training
  for (std::size_t r = 1; r < byRule.size(); ++r) CHECK(byRule[r] == byRule[0]);
  CHECK_FALSE(byRule[0][0] == byRule[0][1]);

  // isolated benign peers do not notice attackers
  SimulationConfig clean = smallConfig();
  clean.dropProbability = 1.0;
  SimulationConfig attacked = clean;
  attacked.attack = AttackKind::AdditiveNoise;
  Simulator a(clean, bank), b(attacked, bank);
  for (int t = 0; t < 15; ++t) {
    a.step();
    b.step();
  }
  for (const PeerState& p : b.peers()) {
    if (p.role == Role::Benign) CHECK(p.model == a.peers()[p.id].model);
  }
}

TEST_CASE("message conservation and inbox sizes") {
  const auto bank = syntheticBank();
  SimulationConfig c = smallConfig();
  c.dropProbability = 0.3;
  Simulator sim(c, bank);
  std::size_t dropped = 0;
  for (int t = 0; t < 20; ++t) {
    const RoundStats s = sim.step();
    CHECK(s.delivered == s.sent - s.dropped);
    CHECK(s.sent == 90);
    std::size_t queued = 0;
    for (const PeerState& p : sim.peers()) queued += p.inbox.size();
    CHECK(queued == s.delivered);
    dropped += s.dropped;
  }
  CHECK(dropped > 0);

  c.dropProbability = 0.0;
  Simulator full(c, bank);
  for (int t = 0; t < 3; ++t) {
    full.step();
    for (const PeerState& p : full.peers()) CHECK(p.inbox.size() == 9);
  }
}

TEST_CASE("byte accounting counts every send, attack rounds included") {
  const auto bank = syntheticBank();
  SimulationConfig c = smallConfig();
  c.attack = AttackKind::AdditiveNoise;
  c.dropProbability = 0.2;
  c.maxIterations = 40;
  const auto r = runExperiment(c, bank);
  const std::size_t payload = serializedSize(10, 10);
  CHECK(r.summary.payloadBytes == payload);
  CHECK(r.summary.totalBytesSent == 10u * 9u * 40u * payload);
  CHECK(r.summary.messagesSent == 10u * 9u * 40u);
  for (const MetricsRecord& m : r.records) CHECK(m.bytesSentCumulative == 9u * m.iteration * payload);
}

TEST_CASE("zero iterations report the initial accuracy only") {
  const auto bank = syntheticBank();
  SimulationConfig c = smallConfig();
  c.maxIterations = 0;
  const auto r = runExperiment(c, bank);
  CHECK(r.records.empty());
  CHECK(r.summary.initialAccuracy == doctest::Approx(0.1));  // zero model predicts class 0
  CHECK(r.summary.finalAccuracy == r.summary.initialAccuracy);
  CHECK(r.summary.totalBytesSent == 0);
}

TEST_CASE("300 iterations give 30 rows per benign peer and a benign mean") {
  const auto bank = syntheticBank();
  SimulationConfig c = smallConfig();
  c.attack = AttackKind::LabelFlip;
  c.maxIterations = 300;
  const auto r = runExperiment(c, bank);
  CHECK(r.summary.benignPeers == 5);
  CHECK(r.summary.attackers == 5);
  CHECK(r.records.size() == 30u * 5u);
  std::map<std::size_t, std::size_t> rows;
  for (const MetricsRecord& m : r.records) ++rows[m.peerId];
  for (const auto& [peer, n] : rows) {
    CHECK(n == 30);
    CHECK(peer % 2 == 0);  // spread placement puts attackers on odd ids
  }
  double last = 0.0;
  for (const MetricsRecord& m : r.records)
    if (m.iteration == 300) last += m.accuracy;
  CHECK(r.summary.finalAccuracy == doctest::Approx(last / 5.0).epsilon(1e-15));
  const auto curve = meanAccuracyCurve(r.records);
  CHECK(curve.size() == 30);
  CHECK(curve.back().first == 300);
  CHECK(curve.back().second == doctest::Approx(r.summary.finalAccuracy).epsilon(1e-15));
}

TEST_CASE("label-flip peers without the flip behave exactly like benign peers") {
  const auto bank = syntheticBank();
  SimulationConfig honest = smallConfig();
  honest.classCoverage = 0.4;
  honest.rule.name = "bristle";
  honest.includeAttackersInAccuracy = true;
  SimulationConfig flipped = honest;
  flipped.attack = AttackKind::LabelFlip;
  flipped.byzantineFraction = 0.4;
  flipped.flipLabels = false;
  const auto a = runExperiment(honest, bank);
  const auto b = runExperiment(flipped, bank);
  CHECK(sameRecords(a.records, b.records));
  flipped.flipLabels = true;
  CHECK_FALSE(sameRecords(a.records, runExperiment(flipped, bank).records));
}

TEST_CASE("honest peers learn the synthetic task") {
  const auto bank = syntheticBank();
  for (const char* rule : {"fedavg", "bristle"}) {
    SimulationConfig c = smallConfig();
    c.rule.name = rule;
    c.maxIterations = 100;
    CHECK(runExperiment(c, bank).summary.finalAccuracy > 0.8);
  }
}

TEST_CASE("crafted attackers send what they craft") {
  const auto bank = syntheticBank();
  for (AttackKind kind : {AttackKind::AdditiveNoise, AttackKind::KrumAttack, AttackKind::TrimmedMeanAttack}) {
    SimulationConfig c = smallConfig();
    c.attack = kind;
    c.rule.name = "median";
    Simulator sim(c, bank);
    for (int t = 0; t < 5; ++t) sim.step();
    for (const PeerState& p : sim.peers()) {
      CHECK(p.model.allFinite());
      if (p.role == Role::Crafting) {
        CHECK(p.outgoing == p.model);
        CHECK(p.data.trainPool.empty());
      }
    }
  }
}

TEST_CASE("invalid simulations are configuration errors") {
  const auto bank = syntheticBank();
  SimulationConfig c = smallConfig();
  c.rule.name = "unknown";
  CHECK_THROWS_AS(Simulator(c, bank), ConfigError);
  c = smallConfig();
  c.dropProbability = 1.5;
  CHECK_THROWS_AS(Simulator(c, bank), ConfigError);
  c = smallConfig();
  c.attack = AttackKind::LabelFlip;
  c.byzantineFraction = 0.96;
  CHECK_THROWS_AS(Simulator(c, bank), ConfigError);
  c = smallConfig();
  c.classCoverage = 0.45;
  CHECK_THROWS_AS(Simulator(c, bank), ConfigError);
  CHECK_THROWS_AS(Simulator(smallConfig(), nullptr), ConfigError);
}
