#include "bristle/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>

#include "bristle/error.hpp"

namespace bristle {

namespace {

struct KeySpec {
  std::string key;
  std::string allowed;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool quoted = false;
};

[[noreturn]] void reject(const std::string& key, const std::string& value, const std::string& allowed) {
  throw ConfigError(key + " = " + value + ": expected " + allowed);
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::optional<double> toDouble(const std::string& text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::uint64_t> toUnsigned(const std::string& text) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

// Real in [lo, hi], optionally open at either end.
template <typename Field>
KeySpec realKey(std::string key, Field field, double lo, double hi, bool loOpen = false, bool hiOpen = false) {
  std::string allowed = "a real in " + std::string(loOpen ? "(" : "[") +
                        (std::isinf(lo) ? "-inf" : formatNumber(lo)) + ", " +
                        (std::isinf(hi) ? "inf" : formatNumber(hi)) + (hiOpen ? ")" : "]");
  return {key, allowed,
          [=](ExperimentConfig& c, const std::string& v) {
            const auto d = toDouble(v);
            if (!d || (loOpen ? *d <= lo : *d < lo) || (hiOpen ? *d >= hi : *d > hi)) reject(key, v, allowed);
            field(c) = *d;
          },
          [=](const ExperimentConfig& c) { return formatNumber(field(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Field>
KeySpec countKey(std::string key, Field field, std::uint64_t lo) {
  std::string allowed = "an integer >= " + std::to_string(lo);
  return {key, allowed,
          [=](ExperimentConfig& c, const std::string& v) {
            const auto u = toUnsigned(v);
            if (!u || *u < lo) reject(key, v, allowed);
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(*u);
          },
          [=](const ExperimentConfig& c) { return std::to_string(field(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Field>
KeySpec boolKey(std::string key, Field field) {
  return {key, "true or false",
          [=](ExperimentConfig& c, const std::string& v) {
            if (v == "true") {
              field(c) = true;
            } else if (v == "false") {
              field(c) = false;
            } else {
              reject(key, v, "true or false");
            }
          },
          [=](const ExperimentConfig& c) { return std::string(field(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); }};
}

template <typename Field>
KeySpec pathKey(std::string key, Field field) {
  return {key, "a path",
          [=](ExperimentConfig& c, const std::string& v) { field(c) = v; },
          [=](const ExperimentConfig& c) { return field(const_cast<ExperimentConfig&>(c)).string(); }, true};
}

template <typename Enum>
KeySpec enumKey(std::string key, std::vector<std::pair<std::string, Enum>> names,
                std::function<Enum&(ExperimentConfig&)> field) {
  std::string allowed = "one of";
  for (std::size_t i = 0; i < names.size(); ++i) allowed += (i ? ", " : " ") + names[i].first;
  return {key, allowed,
          [=](ExperimentConfig& c, const std::string& v) {
            for (const auto& [name, value] : names) {
              if (name == v) {
                field(c) = value;
                return;
              }
            }
            reject(key, v, allowed);
          },
          [=](const ExperimentConfig& c) {
            for (const auto& [name, value] : names) {
              if (value == field(const_cast<ExperimentConfig&>(c))) return name;
            }
            return std::string("?");
          },
          true};
}

const std::vector<KeySpec>& specs() {
  constexpr double inf = std::numeric_limits<double>::infinity();
  using C = ExperimentConfig;
  static const std::vector<KeySpec> all = [] {
    std::vector<KeySpec> s;
    s.push_back(countKey("seed", [](C& c) -> std::uint64_t& { return c.sim.seed; }, 0));
    s.push_back(countKey("threads", [](C& c) -> std::size_t& { return c.sim.threads; }, 1));
    s.push_back(countKey("peers", [](C& c) -> std::size_t& { return c.sim.peers; }, 1));
    s.push_back(realKey("connection_ratio", [](C& c) -> double& { return c.sim.connectionRatio; }, 0, 1, true));
    s.push_back(realKey("byzantine_fraction", [](C& c) -> double& { return c.sim.byzantineFraction; }, 0, 1, false, true));
    s.push_back(realKey("drop_probability", [](C& c) -> double& { return c.sim.dropProbability; }, 0, 1));
    s.push_back(realKey("class_coverage", [](C& c) -> double& { return c.sim.classCoverage; }, 0, 1, true));
    s.push_back(countKey("batch_size", [](C& c) -> std::size_t& { return c.sim.batchSize; }, 1));
    s.push_back(realKey("learning_rate", [](C& c) -> double& { return c.sim.adam.learningRate; }, 0, inf));
    s.push_back(realKey("l2", [](C& c) -> double& { return c.sim.adam.l2; }, 0, inf));
    s.push_back(countKey("max_iterations", [](C& c) -> std::size_t& { return c.sim.maxIterations; }, 0));
    s.push_back(countKey("eval_interval", [](C& c) -> std::size_t& { return c.sim.evalInterval; }, 1));
    s.push_back(enumKey<std::string>(
        "rule",
        {{"fedavg", "fedavg"}, {"median", "median"}, {"krum", "krum"}, {"bridge", "bridge"}, {"mozi", "mozi"},
         {"bristle", "bristle"}},
        [](C& c) -> std::string& { return c.sim.rule.name; }));
    s.push_back(enumKey<AttackKind>("attack",
                                    {{"none", AttackKind::None},
                                     {"label-flip", AttackKind::LabelFlip},
                                     {"additive-noise", AttackKind::AdditiveNoise},
                                     {"krum-attack", AttackKind::KrumAttack},
                                     {"trimmed-mean-attack", AttackKind::TrimmedMeanAttack}},
                                    [](C& c) -> AttackKind& { return c.sim.attack; }));
    s.push_back(enumKey<AttackerPlacement>("attack.placement",
                                           {{"spread", AttackerPlacement::Spread}, {"last", AttackerPlacement::Last}},
                                           [](C& c) -> AttackerPlacement& { return c.sim.placement; }));
    s.push_back(boolKey("attack.to_all_benign", [](C& c) -> bool& { return c.sim.attackersToAllBenign; }));
    s.push_back(boolKey("attack.flip_labels", [](C& c) -> bool& { return c.sim.flipLabels; }));
    s.push_back(enumKey<ShareMode>("share", {{"trained", ShareMode::Trained}, {"aggregated", ShareMode::Aggregated}},
                                   [](C& c) -> ShareMode& { return c.sim.share; }));
    s.push_back(realKey("attack.noise_mean", [](C& c) -> double& { return c.sim.attackParams.noiseMean; }, 0, inf, true));
    s.push_back(realKey("attack.noise_std", [](C& c) -> double& { return c.sim.attackParams.noiseStd; }, 0, inf));
    s.push_back(realKey("attack.lambda_init", [](C& c) -> double& { return c.sim.attackParams.lambdaInit; }, 0, inf, true));
    s.push_back(realKey("attack.lambda_min", [](C& c) -> double& { return c.sim.attackParams.lambdaMin; }, 0, inf, true));
    s.push_back(realKey("attack.delta", [](C& c) -> double& { return c.sim.attackParams.delta; }, 0, inf, true));
    s.push_back(realKey("attack.epsilon", [](C& c) -> double& { return c.sim.attackParams.epsilon; }, 0, inf));
    s.push_back(countKey("krum.b", [](C& c) -> std::size_t& { return c.sim.rule.krumB; }, 0));
    s.push_back(countKey("bridge.b", [](C& c) -> std::size_t& { return c.sim.rule.bridgeB; }, 0));
    s.push_back(realKey("mozi.rho", [](C& c) -> double& { return c.sim.rule.mozi.rho; }, 0, 1, true));
    s.push_back(countKey("mozi.loss_batch", [](C& c) -> std::size_t& { return c.sim.rule.mozi.lossBatch; }, 1));
    s.push_back(realKey("bristle.alpha", [](C& c) -> double& { return c.sim.rule.dbp.alpha; }, 0, 1));
    s.push_back(countKey("bristle.beta", [](C& c) -> std::size_t& { return c.sim.rule.dbp.beta; }, 1));
    s.push_back(countKey("bristle.phi", [](C& c) -> std::size_t& { return c.sim.rule.pbi.phi; }, 1));
    s.push_back(countKey("bristle.kappa", [](C& c) -> std::size_t& { return c.sim.rule.pbi.kappa; }, 1));
    s.push_back(realKey("bristle.eta", [](C& c) -> double& { return c.sim.rule.pbi.eta; }, 0, inf, true));
    s.push_back(realKey("bristle.omega_fa1", [](C& c) -> double& { return c.sim.rule.pbi.omegaFa1; }, 0, inf));
    s.push_back(realKey("bristle.omega_fa2", [](C& c) -> double& { return c.sim.rule.pbi.omegaFa2; }, -inf, inf));
    s.push_back(realKey("bristle.omega_fo1", [](C& c) -> double& { return c.sim.rule.pbi.omegaFo1; }, 0, inf));
    s.push_back(realKey("bristle.omega_fo2", [](C& c) -> double& { return c.sim.rule.pbi.omegaFo2; }, -inf, inf));
    s.push_back(boolKey("bristle.foreign_sum_skip_neg_inf",
                        [](C& c) -> bool& { return c.sim.rule.pbi.foreignSumSkipNegInf; }));
    s.push_back(countKey("partition.samples_per_class", [](C& c) -> std::size_t& { return c.sim.samplesPerClassPerPeer; }, 0));
    s.push_back(boolKey("partition.random_classes", [](C& c) -> bool& { return c.sim.randomClasses; }));
    s.push_back(boolKey("metrics.include_attackers", [](C& c) -> bool& { return c.sim.includeAttackersInAccuracy; }));
    s.push_back(pathKey("data.dir", [](C& c) -> std::filesystem::path& { return c.data.dir; }));
    s.push_back(countKey("data.train_limit", [](C& c) -> std::size_t& { return c.data.trainLimit; }, 0));
    s.push_back(countKey("data.test_limit", [](C& c) -> std::size_t& { return c.data.testLimit; }, 0));
    s.push_back(enumKey<ExtractorKind>("extractor",
                                       {{"random-projection", ExtractorKind::RandomProjection},
                                        {"precomputed", ExtractorKind::Precomputed}},
                                       [](C& c) -> ExtractorKind& { return c.data.extractor; }));
    s.push_back(countKey("extractor.features", [](C& c) -> std::size_t& { return c.data.featureDim; }, 1));
    s.push_back(countKey("extractor.seed", [](C& c) -> std::uint64_t& { return c.data.extractorSeed; }, 0));
    s.push_back(realKey("extractor.gain", [](C& c) -> double& { return c.data.gain; }, 0, inf, true));
    s.push_back(realKey("extractor.leaky_slope", [](C& c) -> double& { return c.data.leakySlope; }, 0, 1));
    s.push_back(countKey("extractor.declared_params", [](C& c) -> std::size_t& { return c.data.declaredParams; }, 0));
    s.push_back(pathKey("extractor.train_features", [](C& c) -> std::filesystem::path& { return c.data.trainFeatures; }));
    s.push_back(pathKey("extractor.train_labels", [](C& c) -> std::filesystem::path& { return c.data.trainLabels; }));
    s.push_back(pathKey("extractor.test_features", [](C& c) -> std::filesystem::path& { return c.data.testFeatures; }));
    s.push_back(pathKey("extractor.test_labels", [](C& c) -> std::filesystem::path& { return c.data.testLabels; }));
    return s;
  }();
  return all;
}

}  // namespace

std::string formatNumber(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::vector<ConfigEntry> parseEntries(const std::string& text) {
  std::vector<ConfigEntry> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    std::string body = line;
    bool inQuote = false;
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body[i] == '"') inQuote = !inQuote;
      if (body[i] == '#' && !inQuote) {
        body.resize(i);
        break;
      }
    }
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineNo) + ": expected key = value");
    std::string key = trim(body.substr(0, eq));
    std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineNo) + ": missing key");
    const auto quotes = std::count(value.begin(), value.end(), '"');
    if (quotes % 2 != 0) throw ConfigError("line " + std::to_string(lineNo) + ": unbalanced quotes");
    // A single quoted token loses its quotes; lists of quoted items are left to the list splitter.
    if (quotes == 2 && value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    entries.emplace_back(std::move(key), std::move(value));
  }
  return entries;
}

void applyEntry(ExperimentConfig& config, const std::string& key, const std::string& value) {
  for (const KeySpec& spec : specs()) {
    if (spec.key == key) {
      spec.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

void validate(const ExperimentConfig& config) {
  const PbiConfig& pbi = config.sim.rule.pbi;
  if (!(pbi.omegaFa1 / 2.0 - pbi.omegaFa2 > 0.0)) {
    throw ConfigError("bristle.omega_fa1 / 2 - bristle.omega_fa2 = " + formatNumber(pbi.omegaFa1 / 2.0 - pbi.omegaFa2) +
                      ": expected > 0 so equally performing classes get a positive weight");
  }
  if (config.sim.attackParams.lambdaMin > config.sim.attackParams.lambdaInit) {
    throw ConfigError("attack.lambda_min exceeds attack.lambda_init");
  }
  if (config.data.extractor == ExtractorKind::Precomputed &&
      (config.data.trainFeatures.empty() || config.data.trainLabels.empty() || config.data.testFeatures.empty() ||
       config.data.testLabels.empty())) {
    throw ConfigError("extractor = precomputed needs extractor.{train,test}_{features,labels}");
  }
}

ExperimentConfig parseConfig(const std::string& text) {
  ExperimentConfig config;
  for (const auto& [key, value] : parseEntries(text)) applyEntry(config, key, value);
  validate(config);
  return config;
}

ExperimentConfig loadConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parseConfig(text.str());
}

std::string echo(const ExperimentConfig& config) {
  std::string out;
  for (const KeySpec& spec : specs()) {
    const std::string value = spec.get(config);
    out += spec.key + " = " + (spec.quoted ? "\"" + value + "\"" : value) + "\n";
  }
  return out;
}

std::vector<std::string> configKeys() {
  std::vector<std::string> keys;
  for (const KeySpec& spec : specs()) keys.push_back(spec.key);
  return keys;
}

}  // namespace bristle
