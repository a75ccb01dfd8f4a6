#include "seuforge/fault.hpp"

#include <algorithm>
#include <bit>

#include "json.hpp"
#include "seuforge/error.hpp"

namespace seuforge {

std::string fault_to_json(const FaultSpec& spec) {
  nlohmann::ordered_json j = {{"pset", spec.pset},
                              {"element", spec.element},
                              {"bit", spec.bit},
                              {"encoding", std::string(to_string(spec.encoding))},
                              {"seed_ordinal", spec.seed_ordinal}};
  return j.dump();
}

FaultSpec fault_from_json(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    return {j.at("pset").get<int>(), j.at("element").get<std::size_t>(), j.at("bit").get<int>(),
            encoding_from_string(j.at("encoding").get<std::string>()), j.value("seed_ordinal", std::uint64_t{0})};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad fault record: ") + e.what());
  }
}

std::uint32_t flip_bit_f32(std::uint32_t pattern, int bit) {
  if (bit < 0 || bit > 31) fail(ErrorCode::kOutOfRange, "f32 bit " + std::to_string(bit) + " outside 0..31");
  return pattern ^ (1u << bit);
}

float flip_bit_f32(float value, int bit) { return std::bit_cast<float>(flip_bit_f32(std::bit_cast<std::uint32_t>(value), bit)); }

std::uint32_t flip_bit_int(std::uint32_t pattern, int bit, int width) {
  if (width != 8 && width != 32) fail(ErrorCode::kInvalidArgument, "integer width must be 8 or 32");
  if (bit < 0 || bit >= width) {
    fail(ErrorCode::kOutOfRange,
         "i" + std::to_string(width) + " bit " + std::to_string(bit) + " outside 0.." + std::to_string(width - 1));
  }
  if (width == 8 && pattern > 0xFFu) fail(ErrorCode::kInvalidArgument, "pattern wider than 8 bits");
  return pattern ^ (1u << bit);
}

std::int32_t decode_int(std::uint32_t pattern, int width) {
  if (width == 8) return static_cast<std::int8_t>(static_cast<std::uint8_t>(pattern));
  return static_cast<std::int32_t>(pattern);
}

void validate_fault(const ModelGraph& graph, const FaultSpec& spec) {
  const auto& p = graph.pset(spec.pset);
  if (spec.element >= p.tensor.size()) {
    fail(ErrorCode::kOutOfRange, "element " + std::to_string(spec.element) + " outside p" + std::to_string(spec.pset) +
                                     " of " + std::to_string(p.tensor.size()) + " elements");
  }
  if (spec.encoding != p.tensor.encoding()) {
    fail(ErrorCode::kInvalidArgument, "fault encoding " + std::string(to_string(spec.encoding)) + " but p" +
                                          std::to_string(spec.pset) + " holds " +
                                          std::string(to_string(p.tensor.encoding())));
  }
  const int width = bit_width(spec.encoding);
  if (spec.bit < 0 || spec.bit >= width) {
    fail(ErrorCode::kOutOfRange, "bit " + std::to_string(spec.bit) + " outside 0.." + std::to_string(width - 1) +
                                     " for " + std::string(to_string(spec.encoding)));
  }
}

RevertToken FaultInjector::apply(const FaultSpec& spec) {
  validate_fault(*graph_, spec);
  auto& t = graph_->pset(spec.pset).tensor;
  const std::uint32_t original = t.bits(spec.element);
  const std::uint32_t flipped = spec.encoding == Encoding::kF32 ? flip_bit_f32(original, spec.bit)
                                                                : flip_bit_int(original, spec.bit, bit_width(spec.encoding));
  t.set_bits(spec.element, flipped);
  const RevertToken token{next_serial_++};
  stack_.push_back({token.serial, spec.pset, spec.element, original});
  return token;
}

void FaultInjector::revert(RevertToken token) {
  if (token.serial == 0 || token.serial >= next_serial_) fail(ErrorCode::kState, "revert token was never issued");
  if (stack_.empty() || stack_.back().serial != token.serial) {
    const bool outstanding = std::any_of(stack_.begin(), stack_.end(), [&](const Entry& e) { return e.serial == token.serial; });
    if (outstanding) fail(ErrorCode::kState, "out-of-order revert: newer faults are still applied");
    fail(ErrorCode::kState, "revert token already used");
  }
  const Entry e = stack_.back();
  stack_.pop_back();
  graph_->pset(e.pset).tensor.set_bits(e.element, e.original);
}

void FaultInjector::revert_all() {
  while (!stack_.empty()) revert({stack_.back().serial});
}

bool ParamFilter::matches(const ParamSet& p) const {
  if (everything) return true;
  if (roles.empty() && psets.empty()) return false;
  const bool role_ok = roles.empty() || std::find(roles.begin(), roles.end(), p.role) != roles.end();
  const bool pset_ok = psets.empty() || std::find(psets.begin(), psets.end(), p.index) != psets.end();
  return role_ok && pset_ok;
}

std::uint64_t fault_space_size(const ModelGraph& graph, const ParamFilter& filter) {
  std::uint64_t n = 0;
  for (const auto& p : graph.params) {
    if (filter.matches(p)) n += static_cast<std::uint64_t>(p.tensor.size()) * bit_width(p.tensor.encoding());
  }
  return n;
}

}  // namespace seuforge
