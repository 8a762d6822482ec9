#pragma once

#include <cstdint>
#include <vector>

namespace ngmf {

struct MaskOptions {
  double mask_rate = 0.15;
  double replace_mask = 0.8;    // share of selected positions set to [MASK]
  double replace_random = 0.1;  // share set to a uniformly drawn regular id
};

struct MaskedInput {
  std::vector<int> ids;      // corrupted copy
  std::vector<int> labels;   // original id at selected positions, -1 elsewhere
  std::vector<std::size_t> positions;
};

// Selects each non-special position independently with probability
// mask_rate. Random replacements are drawn from [kNumSpecialTokens, vocab_size).
// Deterministic in `seed`.
MaskedInput mlm_mask(const std::vector<int>& ids, const MaskOptions& options, int vocab_size,
                     std::uint64_t seed);

}  // namespace ngmf
