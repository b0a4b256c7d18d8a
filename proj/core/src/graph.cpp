#include "gcanet/graph.hpp"

namespace gcanet {
namespace {

thread_local MacCounter* active_counter = nullptr;
thread_local std::vector<std::string> layer_stack;

}  // namespace

void MacCounter::add(const std::string& scope, CostKind kind, std::int64_t amount) {
  auto [it, inserted] = costs_.try_emplace(scope, std::array<std::int64_t, 3>{0, 0, 0});
  if (inserted) order_.push_back(scope);
  it->second[static_cast<int>(kind)] += amount;
}

std::int64_t MacCounter::total(CostKind kind) const {
  std::int64_t sum = 0;
  for (const auto& [_, c] : costs_) sum += c[static_cast<int>(kind)];
  return sum;
}

std::int64_t MacCounter::scope_total(std::string_view prefix, CostKind kind) const {
  std::int64_t sum = 0;
  for (const auto& [name, c] : costs_) {
    std::string_view n = name;
    if (n == prefix || (n.size() > prefix.size() && n.substr(0, prefix.size()) == prefix &&
                        n[prefix.size()] == '.')) {
      sum += c[static_cast<int>(kind)];
    }
  }
  return sum;
}

std::int64_t MacCounter::exact(const std::string& scope, CostKind kind) const {
  auto it = costs_.find(scope);
  return it == costs_.end() ? 0 : it->second[static_cast<int>(kind)];
}

CountingScope::CountingScope(MacCounter& counter) : previous_(active_counter) {
  active_counter = &counter;
}

CountingScope::~CountingScope() { active_counter = previous_; }

LayerScope::LayerScope(std::string name) { layer_stack.push_back(std::move(name)); }

LayerScope::~LayerScope() { layer_stack.pop_back(); }

std::string current_layer() {
  std::string out;
  for (const auto& part : layer_stack) {
    if (!out.empty()) out += '.';
    out += part;
  }
  return out;
}

void report_cost(CostKind kind, std::int64_t amount) {
  if (active_counter != nullptr) active_counter->add(current_layer(), kind, amount);
}

}  // namespace gcanet
