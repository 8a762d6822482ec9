#include "ngmf/mlm.h"

#include <random>

#include "ngmf/error.h"
#include "ngmf/model.h"

namespace ngmf {
namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

MaskedInput mlm_mask(const std::vector<int>& ids, const MaskOptions& options, int vocab_size,
                     std::uint64_t seed) {
  if (!(options.mask_rate >= 0.0 && options.mask_rate <= 1.0)) throw ConfigError("mask_rate must lie in [0, 1]");
  if (options.replace_mask < 0.0 || options.replace_random < 0.0 ||
      options.replace_mask + options.replace_random > 1.0) {
    throw ConfigError("mask replacement shares must be non-negative and sum to at most 1");
  }
  MaskedInput out{ids, std::vector<int>(ids.size(), -1), {}};
  std::mt19937_64 rng(seed);
  const int regular = vocab_size - kNumSpecialTokens;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < kNumSpecialTokens) continue;
    if (uniform01(rng) >= options.mask_rate) continue;
    out.labels[i] = ids[i];
    out.positions.push_back(i);
    const double r = uniform01(rng);
    if (r < options.replace_mask) {
      out.ids[i] = kMaskId;
    } else if (r < options.replace_mask + options.replace_random && regular > 0) {
      out.ids[i] = kNumSpecialTokens + static_cast<int>(rng() % static_cast<std::uint64_t>(regular));
    }
  }
  return out;
}

}  // namespace ngmf
