// SPDX-License-Identifier: Apache-2.0
//
// Synthetic four-choice task. Each item is a token sequence containing
// `num_keys` key tokens among filler tokens, terminated by a question marker.
// The gold answer is the sum of the key values modulo 4.
//
// Token layout: 0..3 answer labels A..D, 4 question marker, 5..8 keys with
// values 0..3, 9.. filler.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mixt::toy {

inline constexpr int kNumLabels = 4;
inline constexpr int kQuestionToken = 4;
inline constexpr int kFirstKeyToken = 5;
inline constexpr int kFirstFillerToken = 9;

struct TaskConfig {
  std::size_t seq_len = 8;
  std::size_t vocab_size = 16;
  std::size_t num_keys = 2;

  void validate() const;
};

void to_json(nlohmann::json& j, const TaskConfig& c);
void from_json(const nlohmann::json& j, TaskConfig& c);

struct TaskItem {
  std::vector<int> tokens;
  int label = 0;
};

// Item i carries label i % 4, so every label count differs by at most one.
std::vector<TaskItem> make_task(std::uint64_t seed, std::size_t size, const TaskConfig& cfg = {});

}  // namespace mixt::toy
