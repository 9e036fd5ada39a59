// SPDX-License-Identifier: Apache-2.0
#include "mixt/plan.hpp"

#include <string>

#include <nlohmann/json.hpp>

#include "mixt/error.hpp"

namespace mixt {

std::string_view to_string(Direction d) noexcept {
  return d == Direction::BackToFront ? "back-to-front" : "front-to-back";
}

Direction parse_direction(std::string_view s) {
  if (s == "b2f" || s == "back-to-front") return Direction::BackToFront;
  if (s == "f2b" || s == "front-to-back") return Direction::FrontToBack;
  throw Error(Errc::ParseError, "unknown direction '" + std::string(s) + "'");
}

std::vector<std::size_t> CompressionPlan::replaced_blocks(std::size_t num_blocks) const {
  if (n_b > num_blocks) {
    throw Error(Errc::PlanInvalid, "n_b = " + std::to_string(n_b) + " exceeds " + std::to_string(num_blocks) + " blocks");
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_b; ++i) {
    out.push_back(direction == Direction::BackToFront ? num_blocks - n_b + i : i);
  }
  return out;
}

void to_json(nlohmann::json& j, const CompressionPlan& p) {
  j = nlohmann::json{{"n_b", p.n_b}, {"direction", to_string(p.direction)}, {"n_t", p.n_t}, {"d", p.d}};
}

void from_json(const nlohmann::json& j, CompressionPlan& p) {
  p.n_b = j.value("n_b", p.n_b);
  if (j.contains("direction")) p.direction = parse_direction(j.at("direction").get<std::string>());
  p.n_t = j.value("n_t", p.n_t);
  p.d = j.value("d", p.d);
}

}  // namespace mixt
