#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "bristle/bristle.hpp"
#include "bristle/gar.hpp"

namespace bristle {

struct RuleConfig {
  std::string name = "bristle";  // fedavg | median | krum | bridge | mozi | bristle
  std::size_t krumB = 4;
  std::size_t bridgeB = 4;
  MoziConfig mozi;
  DbpConfig dbp;
  PbiConfig pbi;
};

const std::vector<std::string>& ruleNames();

/// Throws ConfigError for an unknown name.
std::unique_ptr<AggregationRule> makeRule(const RuleConfig& config);

/// Krum and trimmed-mean adapters shrink b when an inbox is too small for the
/// configured value (e.g. after message drops): the largest b the model
/// count admits, or own model unchanged when even b = 0 is infeasible.
std::size_t feasibleKrumB(std::size_t models, std::size_t b);
std::size_t feasibleTrimB(std::size_t models, std::size_t b);

}  // namespace bristle
