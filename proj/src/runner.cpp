#include "bristle/runner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bristle/error.hpp"

namespace bristle {

namespace fs = std::filesystem;

namespace {

const char* kTrainImages = "train-images-idx3-ubyte";
const char* kTrainLabels = "train-labels-idx1-ubyte";
const char* kTestImages = "t10k-images-idx3-ubyte";
const char* kTestLabels = "t10k-labels-idx1-ubyte";

void writeFile(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void ensureDir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
}

RawDataset truncate(RawDataset data, std::size_t limit) {
  if (limit == 0 || limit >= data.size()) return data;
  data.inputs.conservativeResize(static_cast<Eigen::Index>(limit), Eigen::NoChange);
  data.labels.resize(limit);
  return data;
}

LabeledFeatures truncate(LabeledFeatures data, std::size_t limit) {
  if (limit == 0 || limit >= data.size()) return data;
  data.features.conservativeResize(static_cast<Eigen::Index>(limit), Eigen::NoChange);
  data.labels.resize(limit);
  return data;
}

int classCount(const LabeledFeatures& train, const LabeledFeatures& test) {
  int top = 1;
  for (int y : train.labels) top = std::max(top, y);
  for (int y : test.labels) top = std::max(top, y);
  return top + 1;
}

std::string xmlEscape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  return out;
}

std::vector<std::string> splitList(const std::string& text) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    if (first == std::string::npos) throw ConfigError("empty entry in list '" + text + "'");
    item = item.substr(first, last - first + 1);
    if (item.size() >= 2 && item.front() == '"' && item.back() == '"') item = item.substr(1, item.size() - 2);
    items.push_back(item);
  }
  if (items.empty()) throw ConfigError("empty list");
  return items;
}

// Quotes a CSV field when it holds a separator, quote or line break.
std::string csvField(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

Series curveSeries(const std::string& name, const std::vector<MetricsRecord>& records) {
  Series s{name, {}};
  for (const auto& [t, acc] : meanAccuracyCurve(records)) s.points.emplace_back(static_cast<double>(t), acc);
  return s;
}

}  // namespace

std::shared_ptr<const FeatureBank> loadFeatureBank(const DataConfig& data) {
  auto bank = std::make_shared<FeatureBank>();
  if (data.extractor == ExtractorKind::Precomputed) {
    bank->train = truncate(loadPrecomputed(data.trainFeatures, data.trainLabels), data.trainLimit);
    bank->test = truncate(loadPrecomputed(data.testFeatures, data.testLabels), data.testLimit);
    if (bank->train.dimension() != bank->test.dimension()) {
      throw FormatError("train and test feature widths differ: " + data.trainFeatures.string() + ", " +
                        data.testFeatures.string());
    }
    bank->declaredExtractorParams = data.declaredParams;
  } else {
    RawDataset train = truncate(loadIdx(data.dir / kTrainImages, data.dir / kTrainLabels, Split::Train), data.trainLimit);
    RawDataset test = truncate(loadIdx(data.dir / kTestImages, data.dir / kTestLabels, Split::Test), data.testLimit);
    auto [trainZ, stats] = zScoreNormalize(train);
    auto [testZ, unused] = zScoreNormalize(test, stats);
    FeatureExtractor::ProjectionParams params;
    params.inputDim = trainZ.dimension();
    params.featureDim = static_cast<int>(data.featureDim);
    params.seed = data.extractorSeed;
    params.gain = data.gain;
    params.leakySlope = data.leakySlope;
    const FeatureExtractor extractor = FeatureExtractor::randomProjection(params);
    bank->train = {extractor.extractAll(trainZ.inputs), std::move(trainZ.labels)};
    bank->test = {extractor.extractAll(testZ.inputs), std::move(testZ.labels)};
    bank->declaredExtractorParams = data.declaredParams ? data.declaredParams : extractor.declaredParamCount();
  }
  bank->classes = classCount(bank->train, bank->test);
  return bank;
}

std::shared_ptr<const FeatureBank> FeatureBankCache::get(const DataConfig& data) {
  ExperimentConfig probe;
  probe.data = data;
  const std::string full = echo(probe);
  std::string key;
  std::istringstream in(full);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("data.", 0) == 0 || line.rfind("extractor", 0) == 0) key += line + "\n";
  }
  auto it = banks_.find(key);
  if (it != banks_.end()) return it->second;
  auto bank = loadFeatureBank(data);
  banks_.emplace(key, bank);
  return bank;
}

std::string metricsCsv(const std::vector<MetricsRecord>& records) {
  std::string out = "iteration,peer_id,accuracy,bytes_sent_cum\n";
  for (const MetricsRecord& r : records) {
    out += std::to_string(r.iteration) + "," + std::to_string(r.peerId) + "," + fixed(r.accuracy, 6) + "," +
           std::to_string(r.bytesSentCumulative) + "\n";
  }
  return out;
}

std::string summaryJson(const ExperimentConfig& config, const ExperimentSummary& s) {
  nlohmann::ordered_json j;
  j["rule"] = config.sim.rule.name;
  j["attack"] = toString(config.sim.attack);
  j["peers"] = config.sim.peers;
  j["benign_peers"] = s.benignPeers;
  j["attackers"] = s.attackers;
  j["class_coverage"] = config.sim.classCoverage;
  j["connection_ratio"] = config.sim.connectionRatio;
  j["seed"] = config.sim.seed;
  j["iterations"] = config.sim.maxIterations;
  j["initial_accuracy"] = s.initialAccuracy;
  j["final_accuracy"] = s.finalAccuracy;
  j["iterations_to_70"] = s.iterationsTo70 ? nlohmann::ordered_json(*s.iterationsTo70) : nlohmann::ordered_json();
  j["iterations_to_90"] = s.iterationsTo90 ? nlohmann::ordered_json(*s.iterationsTo90) : nlohmann::ordered_json();
  j["payload_bytes"] = s.payloadBytes;
  j["total_bytes_sent"] = s.totalBytesSent;
  j["messages_sent"] = s.messagesSent;
  j["messages_dropped"] = s.messagesDropped;
  j["benign_strongly_connected"] = s.benignConnected;
  return j.dump(2) + "\n";
}

std::string lineChartSvg(const std::string& title, const std::string& xLabel, const std::string& yLabel,
                         const std::vector<Series>& series) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const double width = 720, height = 440, left = 60, right = 170, top = 40, bottom = 50;
  const double plotW = width - left - right, plotH = height - top - bottom;
  double xMax = 1.0;
  for (const Series& s : series)
    for (const auto& p : s.points) xMax = std::max(xMax, p.first);
  auto px = [&](double x) { return left + plotW * x / xMax; };
  auto py = [&](double y) { return top + plotH * (1.0 - std::clamp(y, 0.0, 1.0)); };

  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(width, 0) + "\" height=\"" + fixed(height, 0) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fixed(left + plotW / 2, 1) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         xmlEscape(title) + "</text>\n";
  for (int i = 0; i <= 10; ++i) {
    const double y = py(i / 10.0);
    svg += "<line x1=\"" + fixed(left, 1) + "\" y1=\"" + fixed(y, 1) + "\" x2=\"" + fixed(left + plotW, 1) +
           "\" y2=\"" + fixed(y, 1) + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<text x=\"" + fixed(left - 6, 1) + "\" y=\"" + fixed(y + 4, 1) + "\" text-anchor=\"end\">" +
           fixed(i / 10.0, 1) + "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double xv = xMax * i / 5.0;
    svg += "<text x=\"" + fixed(px(xv), 1) + "\" y=\"" + fixed(top + plotH + 18, 1) + "\" text-anchor=\"middle\">" +
           fixed(xv, 0) + "</text>\n";
  }
  svg += "<rect x=\"" + fixed(left, 1) + "\" y=\"" + fixed(top, 1) + "\" width=\"" + fixed(plotW, 1) + "\" height=\"" +
         fixed(plotH, 1) + "\" fill=\"none\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + fixed(left + plotW / 2, 1) + "\" y=\"" + fixed(height - 12, 1) + "\" text-anchor=\"middle\">" +
         xmlEscape(xLabel) + "</text>\n";
  svg += "<text x=\"16\" y=\"" + fixed(top + plotH / 2, 1) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fixed(top + plotH / 2, 1) + ")\">" + xmlEscape(yLabel) + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const std::string color = palette[k % std::size(palette)];
    std::string points;
    for (const auto& [x, y] : series[k].points) points += fixed(px(x), 2) + "," + fixed(py(y), 2) + " ";
    if (!points.empty()) points.pop_back();
    svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(k);
    svg += "<line x1=\"" + fixed(left + plotW + 12, 1) + "\" y1=\"" + fixed(ly, 1) + "\" x2=\"" +
           fixed(left + plotW + 32, 1) + "\" y2=\"" + fixed(ly, 1) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fixed(left + plotW + 38, 1) + "\" y=\"" + fixed(ly + 4, 1) + "\">" +
           xmlEscape(series[k].name) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

ScenarioOutput runScenario(const ExperimentConfig& config, const fs::path& outDir,
                           std::shared_ptr<const FeatureBank> bank) {
  ensureDir(outDir);
  ScenarioOutput out{runExperiment(config.sim, std::move(bank)), outDir};
  writeFile(outDir / "config.txt", echo(config));
  writeFile(outDir / "metrics.csv", metricsCsv(out.result.records));
  writeFile(outDir / "summary.json", summaryJson(config, out.result.summary));
  const std::string title = config.sim.rule.name + ", " + toString(config.sim.attack);
  writeFile(outDir / "accuracy_curve.svg",
            lineChartSvg(title, "iteration", "mean benign accuracy", {curveSeries(config.sim.rule.name, out.result.records)}));
  return out;
}

std::size_t MatrixSpec::cellCount() const {
  std::size_t n = 1;
  for (const auto& axis : axes) n *= axis.second.size();
  return n;
}

MatrixSpec parseMatrix(const std::string& text) {
  MatrixSpec spec;
  const std::string prefix = "matrix.";
  const std::vector<std::string> known = configKeys();
  for (auto& [key, value] : parseEntries(text)) {
    if (key == "matrix.name") {
      spec.name = value;
    } else if (key.rfind(prefix, 0) == 0) {
      std::string target = key.substr(prefix.size());
      if (std::find(known.begin(), known.end(), target) == known.end()) {
        throw ConfigError("unknown key '" + target + "' in " + key);
      }
      for (const auto& axis : spec.axes) {
        if (axis.first == target) throw ConfigError("duplicate axis " + key);
      }
      spec.axes.emplace_back(std::move(target), splitList(value));
    } else {
      spec.base.emplace_back(std::move(key), std::move(value));
    }
  }
  return spec;
}

MatrixSpec loadMatrix(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read matrix config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  MatrixSpec spec = parseMatrix(text.str());
  if (spec.name.empty()) spec.name = path.stem().string();
  return spec;
}

std::vector<MatrixCell> expandMatrix(const MatrixSpec& spec) {
  std::vector<MatrixCell> cells;
  const std::size_t total = spec.cellCount();
  for (std::size_t index = 0; index < total; ++index) {
    MatrixCell cell;
    std::size_t rest = index;
    // Last axis varies fastest.
    std::vector<std::size_t> pick(spec.axes.size());
    for (std::size_t a = spec.axes.size(); a-- > 0;) {
      pick[a] = rest % spec.axes[a].second.size();
      rest /= spec.axes[a].second.size();
    }
    for (const auto& [key, value] : spec.base) applyEntry(cell.config, key, value);
    for (std::size_t a = 0; a < spec.axes.size(); ++a) {
      const std::string& key = spec.axes[a].first;
      const std::string& value = spec.axes[a].second[pick[a]];
      applyEntry(cell.config, key, value);
      cell.assignment.emplace_back(key, value);
      if (!cell.label.empty()) cell.label += "__";
      cell.label += sanitize(key) + "-" + sanitize(value);
    }
    if (cell.label.empty()) cell.label = "cell";
    validate(cell.config);
    cells.push_back(std::move(cell));
  }
  return cells;
}

MatrixOutcome runMatrix(const MatrixSpec& spec, const fs::path& outDir, const std::vector<ConfigEntry>& overrides) {
  std::vector<MatrixCell> cells = expandMatrix(spec);
  for (MatrixCell& cell : cells) {
    for (const auto& [key, value] : overrides) applyEntry(cell.config, key, value);
    validate(cell.config);
  }
  ensureDir(outDir);

  std::vector<std::string> axisKeys;
  for (const auto& axis : spec.axes) axisKeys.push_back(axis.first);

  std::string comparison = "cell";
  std::string cellsCsv = "cell";
  for (const std::string& k : axisKeys) {
    comparison += "," + csvField(k);
    cellsCsv += "," + csvField(k);
  }
  comparison += ",iteration,mean_accuracy\n";
  cellsCsv += ",status,final_accuracy,iterations_to_90,total_bytes_sent\n";

  // Group key: every axis value except the rule, so a group's plot compares rules.
  std::map<std::string, std::vector<Series>> groups;
  std::vector<std::string> groupOrder;

  FeatureBankCache cache;
  MatrixOutcome outcome;
  outcome.cells = cells.size();
  for (const MatrixCell& cell : cells) {
    std::string axisValues;
    std::string group;
    for (const auto& [key, value] : cell.assignment) {
      axisValues += "," + csvField(value);
      if (key != "rule") group += (group.empty() ? "" : "__") + sanitize(key) + "-" + sanitize(value);
    }
    if (group.empty()) group = "all";
    try {
      std::cerr << "[" << spec.name << "] " << cell.label << "\n";
      ScenarioOutput out = runScenario(cell.config, outDir / cell.label, cache.get(cell.config.data));
      const ExperimentSummary& s = out.result.summary;
      for (const auto& [t, acc] : meanAccuracyCurve(out.result.records)) {
        comparison += cell.label + axisValues + "," + std::to_string(t) + "," + fixed(acc, 6) + "\n";
      }
      cellsCsv += cell.label + axisValues + ",ok," + fixed(s.finalAccuracy, 6) + "," +
                  (s.iterationsTo90 ? std::to_string(*s.iterationsTo90) : std::string()) + "," +
                  std::to_string(s.totalBytesSent) + "\n";
      if (!groups.count(group)) groupOrder.push_back(group);
      groups[group].push_back(curveSeries(cell.config.sim.rule.name, out.result.records));
    } catch (const std::exception& e) {
      ++outcome.failed;
      std::cerr << "cell " << cell.label << " failed: " << e.what() << "\n";
      std::string reason = e.what();
      std::replace(reason.begin(), reason.end(), '\n', ' ');
      cellsCsv += cell.label + axisValues + "," + csvField("failed: " + reason) + ",,,\n";
    }
  }
  writeFile(outDir / "comparison.csv", comparison);
  writeFile(outDir / "cells.csv", cellsCsv);
  for (const std::string& group : groupOrder) {
    writeFile(outDir / ("comparison_" + group + ".svg"),
              lineChartSvg(spec.name + " " + group, "iteration", "mean benign accuracy", groups[group]));
  }
  return outcome;
}

std::vector<MatrixSpec> paperMatrixPresets(const fs::path& dataDir) {
  const std::string allRules = "fedavg, median, krum, bridge, mozi, bristle";
  const std::string allAttacks = "label-flip, additive-noise, krum-attack, trimmed-mean-attack";
  auto make = [&](std::string name, std::vector<ConfigEntry> base,
                  std::vector<std::pair<std::string, std::string>> axes) {
    MatrixSpec spec;
    spec.name = std::move(name);
    spec.base.emplace_back("data.dir", dataDir.string());
    for (auto& entry : base) spec.base.push_back(std::move(entry));
    spec.axes.emplace_back("rule", splitList(allRules));
    for (auto& [key, values] : axes) spec.axes.emplace_back(key, splitList(values));
    return spec;
  };
  std::vector<MatrixSpec> presets;
  presets.push_back(make("transfer_iid", {{"class_coverage", "1"}, {"attack", "none"}}, {}));
  presets.push_back(make("byzantine_iid", {{"class_coverage", "1"}}, {{"attack", allAttacks}}));
  presets.push_back(make("noniid", {{"attack", "none"}}, {}));
  presets.push_back(make("byzantine_noniid", {}, {{"attack", allAttacks}}));
  presets.push_back(make("attacker_fraction", {{"attack", "label-flip"}}, {{"byzantine_fraction", "0.1, 0.3, 0.5, 0.7"}}));
  presets.push_back(make("class_coverage", {{"attack", "label-flip"}, {"byzantine_fraction", "0.3"}},
                         {{"class_coverage", "0.2, 0.6"}}));
  // 100 benign peers plus as many attackers as each benign peer has benign
  // neighbours; every attacker reaches every benign peer.
  for (const auto& [ratio, attackers] : {std::pair{"0.02", 2}, std::pair{"0.05", 5}}) {
    const std::size_t peers = 100 + static_cast<std::size_t>(attackers);
    presets.push_back(make(std::string("connection_") + ratio,
                           {{"attack", "label-flip"},
                            {"peers", std::to_string(peers)},
                            {"byzantine_fraction", formatNumber(static_cast<double>(attackers) / static_cast<double>(peers))},
                            {"connection_ratio", ratio},
                            {"attack.to_all_benign", "true"}},
                           {}));
  }
  return presets;
}

}  // namespace bristle
