// SPDX-License-Identifier: Apache-2.0
#include "mixt/toy_task.hpp"

#include <nlohmann/json.hpp>

#include "mixt/error.hpp"
#include "mixt/random.hpp"

namespace mixt::toy {

void TaskConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kFirstFillerToken)) {
    throw Error(Errc::InvalidConfig, "task vocabulary needs at least one filler token (vocab_size >= 10)");
  }
  if (num_keys < 1) throw Error(Errc::InvalidConfig, "num_keys must be >= 1");
  if (seq_len < num_keys + 1) throw Error(Errc::InvalidConfig, "seq_len too short for the keys and the marker");
}

void to_json(nlohmann::json& j, const TaskConfig& c) {
  j = nlohmann::json{{"seq_len", c.seq_len}, {"vocab_size", c.vocab_size}, {"num_keys", c.num_keys}};
}

void from_json(const nlohmann::json& j, TaskConfig& c) {
  c.seq_len = j.value("seq_len", c.seq_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.num_keys = j.value("num_keys", c.num_keys);
}

std::vector<TaskItem> make_task(std::uint64_t seed, std::size_t size, const TaskConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t content = cfg.seq_len - 1;
  const std::uint64_t fillers = cfg.vocab_size - kFirstFillerToken;

  std::vector<TaskItem> items;
  items.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    TaskItem item;
    item.label = static_cast<int>(i % kNumLabels);
    item.tokens.resize(cfg.seq_len);
    for (std::size_t p = 0; p < content; ++p) {
      item.tokens[p] = kFirstFillerToken + static_cast<int>(rng.below(fillers));
    }
    item.tokens[content] = kQuestionToken;

    // Free key values, then the last one fixes the sum.
    std::vector<int> values(cfg.num_keys);
    int sum = 0;
    for (std::size_t k = 0; k + 1 < cfg.num_keys; ++k) {
      values[k] = static_cast<int>(rng.below(kNumLabels));
      sum += values[k];
    }
    values.back() = ((item.label - sum) % kNumLabels + kNumLabels) % kNumLabels;

    // Distinct key positions by partial Fisher-Yates over the content slots.
    std::vector<std::size_t> slots(content);
    for (std::size_t p = 0; p < content; ++p) slots[p] = p;
    for (std::size_t k = 0; k < cfg.num_keys; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng.below(content - k));
      std::swap(slots[k], slots[j]);
      item.tokens[slots[k]] = kFirstKeyToken + values[k];
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace mixt::toy
