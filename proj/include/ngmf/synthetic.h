#pragma once

#include <cstdint>
#include <vector>

#include "ngmf/remi.h"

namespace ngmf {

// Toy corpus with planted repeats: each sequence loops one bar-long motif
// from a small bank. Motifs use disjoint pitch ranges.
struct SyntheticOptions {
  int sequences = 32;
  int motifs = 4;
  int notes_per_bar = 4;
  int min_bars = 5;
  int max_bars = 7;
  EventSet set = EventSet::kCp4;
  std::uint64_t seed = 7;
};

std::vector<RemiSequence> synthetic_corpus(const SyntheticOptions& options = {});

}  // namespace ngmf
