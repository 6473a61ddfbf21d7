#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <locale>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bristle/config.hpp"
#include "bristle/error.hpp"
#include "bristle/runner.hpp"

using namespace bristle;
namespace fs = std::filesystem;

namespace {

std::string readFile(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Minimal XML well-formedness check: balanced, properly nested tags, quoted
// attributes, no stray '<' or '&' in text.
bool wellFormedXml(const std::string& doc, std::string& why) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  bool sawRoot = false;
  while (i < doc.size()) {
    if (doc[i] == '&') {
      const auto semi = doc.find(';', i);
      const std::string ent = semi == std::string::npos ? "" : doc.substr(i, semi - i + 1);
      if (ent != "&amp;" && ent != "&lt;" && ent != "&gt;" && ent != "&quot;" && ent != "&apos;") {
        why = "bad entity at " + std::to_string(i);
        return false;
      }
      i = semi + 1;
      continue;
    }
    if (doc[i] != '<') {
      ++i;
      continue;
    }
    if (doc.compare(i, 2, "<?") == 0) {
      const auto end = doc.find("?>", i);
      if (end == std::string::npos) return why = "unterminated declaration", false;
      i = end + 2;
      continue;
    }
    const auto end = doc.find('>', i);
    if (end == std::string::npos) return why = "unterminated tag", false;
    std::string tag = doc.substr(i + 1, end - i - 1);
    i = end + 1;
    if (tag.empty()) return why = "empty tag", false;
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return why = "mismatched </" + tag.substr(1) + ">", false;
      stack.pop_back();
      continue;
    }
    const bool selfClosing = tag.back() == '/';
    if (selfClosing) tag.pop_back();
    const std::string name = tag.substr(0, tag.find_first_of(" \t\n"));
    // attributes: name="value" pairs
    std::size_t q = name.size();
    while (q < tag.size()) {
      while (q < tag.size() && std::isspace(static_cast<unsigned char>(tag[q]))) ++q;
      if (q >= tag.size()) break;
      const auto eq = tag.find('=', q);
      if (eq == std::string::npos || eq + 1 >= tag.size() || tag[eq + 1] != '"') return why = "unquoted attribute in <" + name + ">", false;
      const auto close = tag.find('"', eq + 2);
      if (close == std::string::npos) return why = "unterminated attribute", false;
      if (tag.substr(eq + 2, close - eq - 2).find('<') != std::string::npos) return why = "'<' in attribute", false;
      q = close + 1;
    }
    if (stack.empty()) {
      if (sawRoot) return why = "second root element", false;
      sawRoot = true;
    }
    if (!selfClosing) stack.push_back(name);
  }
  if (!stack.empty()) return why = "unclosed <" + stack.back() + ">", false;
  return sawRoot || (why = "no root element", false);
}

// Decimal comma everywhere the global locale is consulted.
struct CommaPunct : std::numpunct<char> {
  char do_decimal_point() const override { return ','; }
  char do_thousands_sep() const override { return '.'; }
  std::string do_grouping() const override { return "\3"; }
};

// Writes a small separable feature bank as BRFE files and returns config
// entries pointing at it.
std::vector<ConfigEntry> writeBank(const fs::path& dir) {
  fs::create_directories(dir);
  std::mt19937_64 rng(4);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  auto make = [&](int perClass) {
    LabeledFeatures d;
    d.features.resize(10 * perClass, 10);
    int row = 0;
    for (int i = 0; i < perClass; ++i)
      for (int k = 0; k < 10; ++k, ++row) {
        for (int j = 0; j < 10; ++j) d.features(row, j) = (j == k ? 3.0f : 0.0f) + noise(rng);
        d.labels.push_back(k);
      }
    return d;
  };
  savePrecomputed(make(200), dir / "train.brfe", dir / "train.labels");
  savePrecomputed(make(20), dir / "test.brfe", dir / "test.labels");
  return {{"extractor", "precomputed"},
          {"extractor.train_features", (dir / "train.brfe").string()},
          {"extractor.train_labels", (dir / "train.labels").string()},
          {"extractor.test_features", (dir / "test.brfe").string()},
          {"extractor.test_labels", (dir / "test.labels").string()},
          {"extractor.declared_params", "1000000"}};
}

fs::path scratch(const char* name) {
  const fs::path dir = fs::temp_directory_path() / (std::string("bristle_test_config_") + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("empty document gives the default experiment parameters") {
  const ExperimentConfig c = parseConfig("");
  const SimulationConfig& s = c.sim;
  CHECK(s.peers == 10);
  CHECK(s.connectionRatio == 1.0);
  CHECK(s.byzantineFraction == 0.5);
  CHECK(s.batchSize == 5);
  CHECK(s.adam.learningRate == 0.001);
  CHECK(s.adam.l2 == 0.005);
  CHECK(s.maxIterations == 300);
  CHECK(s.rule.dbp.alpha == 0.4);
  CHECK(s.rule.dbp.beta == 30);
  CHECK(s.rule.pbi.phi == 3);
  CHECK(s.rule.pbi.kappa == 10);
  CHECK(s.rule.pbi.eta == 10.0);
  CHECK(s.rule.pbi.omegaFa1 == 10.0);
  CHECK(s.rule.pbi.omegaFa2 == 4.0);
  CHECK(s.rule.pbi.omegaFo1 == 10.0);
  CHECK(s.rule.pbi.omegaFo2 == 4.0);
  CHECK(s.classCoverage == 0.4);
  CHECK(s.rule.krumB == 4);
  CHECK(s.rule.bridgeB == 4);
  CHECK(s.rule.mozi.rho == 0.5);
  CHECK(s.rule.name == "bristle");
  CHECK(s.evalInterval == 10);
  CHECK(s.dropProbability == 0.0);
  CHECK_FALSE(s.rule.pbi.foreignSumSkipNegInf);
}

TEST_CASE("out-of-range alpha names the key, the value and the range") {
  try {
    parseConfig("bristle.alpha = 1.5\n");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bristle.alpha") != std::string::npos);
    CHECK(msg.find("1.5") != std::string::npos);
    CHECK(msg.find("[0, 1]") != std::string::npos);
  }
}

TEST_CASE("type and key errors") {
  CHECK_THROWS_AS(parseConfig("peers = ten"), ConfigError);
  CHECK_THROWS_AS(parseConfig("peers = -3"), ConfigError);
  CHECK_THROWS_AS(parseConfig("peers = 0"), ConfigError);
  CHECK_THROWS_AS(parseConfig("alpah = 0.3"), ConfigError);
  CHECK_THROWS_AS(parseConfig("rule = bulyan"), ConfigError);
  CHECK_THROWS_AS(parseConfig("connection_ratio = 0"), ConfigError);
  CHECK_THROWS_AS(parseConfig("just some text"), ConfigError);
  CHECK_THROWS_AS(parseConfig("rule = \"fedavg"), ConfigError);
  CHECK_THROWS_AS(parseConfig("metrics.include_attackers = yes"), ConfigError);
  CHECK_THROWS_AS(parseConfig("bristle.omega_fa2 = 5"), ConfigError);  // 10/2 - 5 = 0
  CHECK_THROWS_AS(parseConfig("attack.lambda_min = 20"), ConfigError);
  CHECK_THROWS_AS(parseConfig("extractor = precomputed"), ConfigError);
}

TEST_CASE("comments, quotes and whitespace") {
  const ExperimentConfig c = parseConfig(
      "# scenario\n"
      "  rule = \"krum\"   # trailing comment\n"
      "\n"
      "krum.b=2\n"
      "data.dir = \"/tmp/with#hash\"\n"
      "attack = additive-noise\r\n");
  CHECK(c.sim.rule.name == "krum");
  CHECK(c.sim.rule.krumB == 2);
  CHECK(c.data.dir == "/tmp/with#hash");
  CHECK((c.sim.attack == AttackKind::AdditiveNoise));
  const auto list = parseEntries("matrix.data.dir = \"/a,b\", \"/c\"");
  CHECK(list[0].second == "\"/a,b\", \"/c\"");
}

TEST_CASE("echo lists every key and parses back to the same config") {
  ExperimentConfig c = parseConfig("rule = \"bristle\"\nbristle.alpha = 0.25\nseed = 42\nmozi.rho = 0.3\n");
  const std::string text = echo(c);
  CHECK(text.find("rule = \"bristle\"") != std::string::npos);
  CHECK(lines(text).size() == configKeys().size());
  for (const std::string& key : configKeys()) CHECK(text.find(key + " = ") != std::string::npos);
  const ExperimentConfig back = parseConfig(text);
  CHECK(echo(back) == text);
  CHECK(back.sim.rule.dbp.alpha == 0.25);
  CHECK(back.sim.seed == 42);
  for (const std::string& rule : {"fedavg", "median", "krum", "bridge", "mozi", "bristle"}) {
    CHECK(parseConfig(echo(parseConfig("rule = \"" + rule + "\""))).sim.rule.name == rule);
  }
}

TEST_CASE("numbers are written shortest round-trip with a dot") {
  CHECK(formatNumber(0.1) == "0.1");
  CHECK(formatNumber(1e-05) == "1e-05");
  CHECK(formatNumber(300) == "300");
  CHECK(std::stod(formatNumber(0.1 + 0.2)) == 0.1 + 0.2);
}

TEST_CASE("matrix of 6 rules by 4 attacks has 24 cells") {
  const MatrixSpec spec = parseMatrix(
      "matrix.name = grid\n"
      "max_iterations = 50\n"
      "matrix.rule = fedavg, median, krum, bridge, mozi, bristle\n"
      "matrix.attack = label-flip, additive-noise, krum-attack, trimmed-mean-attack\n");
  CHECK(spec.name == "grid");
  CHECK(spec.cellCount() == 24);
  const auto cells = expandMatrix(spec);
  REQUIRE(cells.size() == 24);
  CHECK(cells[0].config.sim.rule.name == "fedavg");
  CHECK((cells[1].config.sim.attack == AttackKind::AdditiveNoise));
  CHECK(cells[4].config.sim.rule.name == "median");
  CHECK(cells[23].config.sim.maxIterations == 50);
  std::set<std::string> labels;
  for (const auto& c : cells) labels.insert(c.label);
  CHECK(labels.size() == 24);
  CHECK_THROWS_AS(expandMatrix(parseMatrix("matrix.bristle.alpha = 0.2, 1.5\n")), ConfigError);
}

TEST_CASE("preset grids cover every rule") {
  const auto presets = paperMatrixPresets("data/mnist");
  std::set<std::string> names;
  for (const auto& p : presets) {
    names.insert(p.name);
    REQUIRE_FALSE(p.axes.empty());
    CHECK(p.axes[0].first == "rule");
    CHECK(p.axes[0].second.size() == 6);
    CHECK_NOTHROW(expandMatrix(p));
  }
  CHECK(names.count("byzantine_iid"));
  CHECK(names.count("byzantine_noniid"));
  CHECK(names.count("attacker_fraction"));
  for (const auto& p : presets) {
    if (p.name == "byzantine_iid") CHECK(p.cellCount() == 24);
    if (p.name == "attacker_fraction") CHECK(p.cellCount() == 24);
  }
}

TEST_CASE("CSV output is locale independent") {
  std::vector<MetricsRecord> records{{10, 0, 0.123456789, 320480}, {10, 1, 1.0, 320480}};
  const std::string plain = metricsCsv(records);
  const std::locale previous = std::locale::global(std::locale(std::locale::classic(), new CommaPunct));
  const std::string comma = metricsCsv(records);
  std::ostringstream probe;
  probe << 0.5;
  std::locale::global(previous);
  CHECK(probe.str() == "0,5");  // the locale really was active
  CHECK(comma == plain);
  CHECK(lines(plain)[0] == "iteration,peer_id,accuracy,bytes_sent_cum");
  CHECK(lines(plain)[1] == "10,0,0.123457,320480");
  CHECK(lines(plain)[2] == "10,1,1.000000,320480");
}

TEST_CASE("SVG charts are well-formed XML") {
  std::string why;
  const std::string svg = lineChartSvg("a < b & \"c\"", "iteration", "accuracy",
                                       {{"bristle", {{0, 0.1}, {10, 0.5}, {20, 0.9}}}, {"fedavg", {}}});
  CHECK_MESSAGE(wellFormedXml(svg, why), why);
  CHECK_FALSE(wellFormedXml("<svg><g></svg>", why));
  CHECK_FALSE(wellFormedXml("<svg a=1/>", why));
}

TEST_CASE("scenario output files") {
  const fs::path dir = scratch("scenario");
  ExperimentConfig c;
  for (const auto& [k, v] : writeBank(dir / "bank")) applyEntry(c, k, v);
  applyEntry(c, "max_iterations", "30");
  applyEntry(c, "attack", "label-flip");
  validate(c);
  const auto bank = loadFeatureBank(c.data);
  CHECK(bank->classes == 10);
  CHECK(bank->declaredExtractorParams == 1000000);

  const auto out = runScenario(c, dir / "run", bank);
  for (const char* f : {"config.txt", "metrics.csv", "summary.json", "accuracy_curve.svg"})
    CHECK(fs::exists(dir / "run" / f));
  const auto rows = lines(readFile(dir / "run" / "metrics.csv"));
  CHECK(rows.size() == 1 + 3 * 5);
  std::string why;
  CHECK_MESSAGE(wellFormedXml(readFile(dir / "run" / "accuracy_curve.svg"), why), why);

  const auto json = nlohmann::json::parse(readFile(dir / "run" / "summary.json"));
  CHECK(json.at("rule") == "bristle");
  CHECK(json.at("benign_peers") == 5);
  CHECK(json.at("final_accuracy").get<double>() == out.result.summary.finalAccuracy);

  // the echoed config reproduces the run byte for byte
  ExperimentConfig again = loadConfig(dir / "run" / "config.txt");
  applyEntry(again, "threads", "3");
  runScenario(again, dir / "rerun", loadFeatureBank(again.data));
  CHECK(readFile(dir / "rerun" / "metrics.csv") == readFile(dir / "run" / "metrics.csv"));
}

TEST_CASE("unreadable data names the path") {
  ExperimentConfig c;
  applyEntry(c, "data.dir", "/nonexistent/mnist");
  try {
    loadFeatureBank(c.data);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("/nonexistent/mnist") != std::string::npos);
  }
}

TEST_CASE("matrix run writes cells, comparison rows and per-group plots; a failing cell does not stop the rest") {
  const fs::path dir = scratch("matrix");
  std::string text = "matrix.name = small\nmax_iterations = 20\nattack = label-flip\nbyzantine_fraction = 0.3\n";
  for (const auto& [k, v] : writeBank(dir / "bank")) text += k + " = \"" + v + "\"\n";
  text += "matrix.rule = fedavg, bristle\n";
  text += "matrix.extractor.test_labels = \"" + (dir / "bank" / "test.labels").string() + "\", \"" +
          (dir / "missing.labels").string() + "\"\n";
  const MatrixSpec spec = parseMatrix(text);
  CHECK(spec.cellCount() == 4);
  const MatrixOutcome outcome = runMatrix(spec, dir / "out");
  CHECK(outcome.cells == 4);
  CHECK(outcome.failed == 2);

  const auto comparison = lines(readFile(dir / "out" / "comparison.csv"));
  CHECK(comparison[0] == "cell,rule,extractor.test_labels,iteration,mean_accuracy");
  CHECK(comparison.size() == 1 + 2 * 2);  // two good cells, two sampling points each
  const auto cells = lines(readFile(dir / "out" / "cells.csv"));
  CHECK(cells[0] == "cell,rule,extractor.test_labels,status,final_accuracy,iterations_to_90,total_bytes_sent");
  CHECK(cells.size() == 5);
  std::size_t ok = 0, failed = 0;
  for (std::size_t i = 1; i < cells.size(); ++i) {
    ok += cells[i].find(",ok,") != std::string::npos;
    failed += cells[i].find("failed: ") != std::string::npos;
  }
  CHECK(ok == 2);
  CHECK(failed == 2);
  std::size_t plots = 0, cellDirs = 0;
  for (const auto& entry : fs::directory_iterator(dir / "out")) {
    plots += entry.path().extension() == ".svg";
    cellDirs += entry.is_directory() && fs::exists(entry.path() / "metrics.csv");
  }
  CHECK(plots == 1);
  CHECK(cellDirs == 2);
}

TEST_CASE("shipped example configs parse and expand") {
  const fs::path dir = fs::path(BRISTLE_SOURCE_DIR) / "configs";
  REQUIRE(fs::is_directory(dir));
  std::size_t seen = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".cfg") continue;
    ++seen;
    CAPTURE(entry.path().string());
    const MatrixSpec spec = loadMatrix(entry.path());
    CHECK_NOTHROW(expandMatrix(spec));
    if (spec.axes.empty()) CHECK_NOTHROW(loadConfig(entry.path()));
  }
  CHECK(seen >= 2);
}
