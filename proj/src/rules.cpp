#include "bristle/rules.hpp"

#include <algorithm>

#include "bristle/error.hpp"

namespace bristle {

namespace {

class FedAvgRule final : public AggregationRule {
 public:
  std::string name() const override { return "fedavg"; }
  OutputLayer aggregate(const AggregationInput& input) const override { return fedAvg(input); }
};

class MedianRule final : public AggregationRule {
 public:
  std::string name() const override { return "median"; }
  OutputLayer aggregate(const AggregationInput& input) const override { return coordinateMedian(input); }
};

class KrumRule final : public AggregationRule {
 public:
  explicit KrumRule(std::size_t b) : b_(b) {}
  std::string name() const override { return "krum"; }
  std::map<std::string, double> hyperparameters() const override { return {{"b", static_cast<double>(b_)}}; }
  OutputLayer aggregate(const AggregationInput& input) const override {
    const std::size_t n = input.received.size() + 1;
    if (n < 3) return input.own;
    return krum(input, feasibleKrumB(n, b_));
  }

 private:
  std::size_t b_;
};

class BridgeRule final : public AggregationRule {
 public:
  explicit BridgeRule(std::size_t b) : b_(b) {}
  std::string name() const override { return "bridge"; }
  std::map<std::string, double> hyperparameters() const override { return {{"b", static_cast<double>(b_)}}; }
  OutputLayer aggregate(const AggregationInput& input) const override {
    return bridgeTrimmedMean(input, feasibleTrimB(input.received.size() + 1, b_));
  }

 private:
  std::size_t b_;
};

class MoziRule final : public AggregationRule {
 public:
  explicit MoziRule(MoziConfig config) : config_(config) {}
  std::string name() const override { return "mozi"; }
  std::map<std::string, double> hyperparameters() const override {
    return {{"rho", config_.rho}, {"loss_batch", static_cast<double>(config_.lossBatch)}};
  }
  OutputLayer aggregate(const AggregationInput& input) const override {
    if (input.evalData.size() == 0) return input.own;
    return mozi(input, config_);
  }

 private:
  MoziConfig config_;
};

class BristleRule final : public AggregationRule {
 public:
  BristleRule(DbpConfig dbp, PbiConfig pbi) : dbp_(dbp), pbi_(pbi) {}
  std::string name() const override { return "bristle"; }
  std::map<std::string, double> hyperparameters() const override {
    return {{"alpha", dbp_.alpha},         {"beta", static_cast<double>(dbp_.beta)},
            {"phi", static_cast<double>(pbi_.phi)}, {"kappa", static_cast<double>(pbi_.kappa)},
            {"eta", pbi_.eta},             {"omega_fa1", pbi_.omegaFa1},
            {"omega_fa2", pbi_.omegaFa2},  {"omega_fo1", pbi_.omegaFo1},
            {"omega_fo2", pbi_.omegaFo2}};
  }
  OutputLayer aggregate(const AggregationInput& input) const override { return bristleAggregate(input, dbp_, pbi_); }

 private:
  DbpConfig dbp_;
  PbiConfig pbi_;
};

}  // namespace

const std::vector<std::string>& ruleNames() {
  static const std::vector<std::string> names{"fedavg", "median", "krum", "bridge", "mozi", "bristle"};
  return names;
}

std::size_t feasibleKrumB(std::size_t models, std::size_t b) {
  if (models < 3) return 0;
  return std::min(b, models - 3);
}

std::size_t feasibleTrimB(std::size_t models, std::size_t b) {
  if (models == 0) return 0;
  return std::min(b, (models - 1) / 2);
}

std::unique_ptr<AggregationRule> makeRule(const RuleConfig& config) {
  if (config.name == "fedavg") return std::make_unique<FedAvgRule>();
  if (config.name == "median") return std::make_unique<MedianRule>();
  if (config.name == "krum") return std::make_unique<KrumRule>(config.krumB);
  if (config.name == "bridge") return std::make_unique<BridgeRule>(config.bridgeB);
  if (config.name == "mozi") {
    if (!(config.mozi.rho > 0.0 && config.mozi.rho <= 1.0)) throw ConfigError("mozi.rho must lie in (0, 1]");
    return std::make_unique<MoziRule>(config.mozi);
  }
  if (config.name == "bristle") {
    dbpFractions(config.dbp.alpha);
    if (config.dbp.beta == 0) throw ConfigError("bristle.beta must be positive");
    if (config.pbi.phi == 0 || config.pbi.kappa == 0) throw ConfigError("bristle.phi and bristle.kappa must be positive");
    return std::make_unique<BristleRule>(config.dbp, config.pbi);
  }
  throw ConfigError("unknown rule '" + config.name + "' (expected fedavg, median, krum, bridge, mozi or bristle)");
}

}  // namespace bristle
