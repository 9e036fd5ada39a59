// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mixt {

enum class Direction { BackToFront, FrontToBack };

std::string_view to_string(Direction d) noexcept;
// Accepts "b2f"/"back-to-front" and "f2b"/"front-to-back".
Direction parse_direction(std::string_view s);

// Which transformer blocks have all seven linear maps replaced.
struct CompressionPlan {
  std::size_t n_b = 0;
  Direction direction = Direction::BackToFront;
  std::size_t n_t = 4;
  std::size_t d = 2;

  // Sorted indices of the replaced blocks in a model with `num_blocks` blocks.
  // Throws PlanInvalid when n_b > num_blocks.
  std::vector<std::size_t> replaced_blocks(std::size_t num_blocks) const;
};

void to_json(nlohmann::json& j, const CompressionPlan& p);
void from_json(const nlohmann::json& j, CompressionPlan& p);

}  // namespace mixt
