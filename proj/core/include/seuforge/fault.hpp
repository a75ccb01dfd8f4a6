#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "seuforge/model.hpp"
#include "seuforge/tensor.hpp"

namespace seuforge {

/// Address of one stored bit. Bits are numbered from the LSB: for f32, 31 is
/// the sign and 23..30 the exponent.
struct FaultSpec {
  int pset = 1;
  std::size_t element = 0;
  int bit = 0;
  Encoding encoding = Encoding::kF32;
  /// Position of this fault in the campaign's pre-generated list.
  std::uint64_t seed_ordinal = 0;

  friend bool operator==(const FaultSpec&, const FaultSpec&) = default;
};

std::string fault_to_json(const FaultSpec& spec);
FaultSpec fault_from_json(std::string_view line);

std::uint32_t flip_bit_f32(std::uint32_t pattern, int bit);
float flip_bit_f32(float value, int bit);
/// Toggles `bit` of a `width`-bit two's-complement word (8 or 32). The
/// pattern is the zero-extended stored word.
std::uint32_t flip_bit_int(std::uint32_t pattern, int bit, int width);
/// Sign-extends a `width`-bit pattern.
std::int32_t decode_int(std::uint32_t pattern, int width);

/// Checks that `spec` addresses an existing bit of `graph`.
void validate_fault(const ModelGraph& graph, const FaultSpec& spec);

struct RevertToken {
  std::uint64_t serial = 0;
};

/// Applies bit-flips in place and undoes them exactly. Outstanding faults
/// form a stack: tokens must be reverted newest first, and each only once.
class FaultInjector {
 public:
  explicit FaultInjector(ModelGraph& graph) : graph_(&graph) {}

  RevertToken apply(const FaultSpec& spec);
  void revert(RevertToken token);
  void revert_all();
  std::size_t depth() const { return stack_.size(); }
  ModelGraph& graph() { return *graph_; }

 private:
  struct Entry {
    std::uint64_t serial;
    int pset;
    std::size_t element;
    std::uint32_t original;
  };
  ModelGraph* graph_;
  std::vector<Entry> stack_;
  std::uint64_t next_serial_ = 1;
};

/// Selects parameter sets. A set matches when its role is listed (or roles
/// is empty) and its p-index is listed (or psets is empty); a filter with
/// both lists empty selects nothing unless `everything` is set.
struct ParamFilter {
  std::vector<ParamRole> roles;
  std::vector<int> psets;
  bool everything = false;

  static ParamFilter all() { return {{}, {}, true}; }
  bool matches(const ParamSet& p) const;
};

/// Sum over selected sets of elements * bit width.
std::uint64_t fault_space_size(const ModelGraph& graph, const ParamFilter& filter);

}  // namespace seuforge
