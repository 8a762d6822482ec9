#include "ngmf/synthetic.h"

#include <random>

#include "ngmf/error.h"

namespace ngmf {

std::vector<RemiSequence> synthetic_corpus(const SyntheticOptions& o) {
  if (o.sequences <= 0 || o.motifs <= 0 || o.notes_per_bar <= 0 || o.notes_per_bar > 16 || o.min_bars <= 0 ||
      o.max_bars < o.min_bars || o.motifs * 8 > 80) {
    throw ConfigError("invalid synthetic corpus options");
  }
  std::mt19937_64 rng(o.seed);
  constexpr int kDurations[] = {120, 240, 480, 960};
  constexpr int kVelocities[] = {46, 66, 86, 106};

  struct Note {
    int pitch, duration, velocity;
  };
  std::vector<std::vector<Note>> bank(static_cast<std::size_t>(o.motifs));
  for (int m = 0; m < o.motifs; ++m) {
    for (int n = 0; n < o.notes_per_bar; ++n) {
      bank[static_cast<std::size_t>(m)].push_back({40 + 8 * m + static_cast<int>(rng() % 8),
                                                   kDurations[rng() % 4], kVelocities[rng() % 4]});
    }
  }

  const int step = 16 / o.notes_per_bar;
  std::vector<RemiSequence> corpus;
  for (int s = 0; s < o.sequences; ++s) {
    const auto& motif = bank[static_cast<std::size_t>(s % o.motifs)];
    const int bars = o.min_bars + static_cast<int>(rng() % static_cast<std::uint64_t>(o.max_bars - o.min_bars + 1));
    RemiSequence seq;
    seq.source_id = "synthetic:" + std::to_string(s + 1);
    for (int b = 0; b < bars; ++b) {
      seq.events.push_back(RemiEvent::bar());
      for (int n = 0; n < o.notes_per_bar; ++n) {
        seq.events.push_back(RemiEvent::beat(n * step));
        if (o.set == EventSet::kCp7 && b == 0 && n == 0) seq.events.push_back(RemiEvent::tempo(120));
        const Note& note = motif[static_cast<std::size_t>(n)];
        seq.events.push_back(RemiEvent::pitch(note.pitch));
        seq.events.push_back(RemiEvent::duration(note.duration));
        if (o.set == EventSet::kCp7) seq.events.push_back(RemiEvent::velocity(note.velocity));
      }
    }
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

}  // namespace ngmf
