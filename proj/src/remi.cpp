#include "ngmf/remi.h"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "ngmf/error.h"

namespace ngmf {
namespace {

constexpr std::array<std::string_view, 12> kRootNames = {"C",  "C#", "D",  "D#", "E",  "F",
                                                         "F#", "G",  "G#", "A",  "A#", "B"};
constexpr std::array<std::string_view, 4> kQualityNames = {"M", "m", "7", "o"};

// Pitch-class offsets for each ChordQuality, as bit masks rooted at C.
constexpr std::array<unsigned, 4> kChordTemplates = {
    (1u << 0) | (1u << 4) | (1u << 7),               // major
    (1u << 0) | (1u << 3) | (1u << 7),               // minor
    (1u << 0) | (1u << 4) | (1u << 7) | (1u << 10),  // dominant 7
    (1u << 0) | (1u << 3) | (1u << 6),               // diminished
};

unsigned rotate_pc(unsigned mask, int root) {
  return ((mask << root) | (mask >> (12 - root))) & 0xFFFu;
}

// Parses a canonical non-negative decimal (no sign, no leading zeros).
std::optional<int> parse_canonical_int(std::string_view s) {
  if (s.empty() || s.size() > 9) return std::nullopt;
  if (s.size() > 1 && s[0] == '0') return std::nullopt;
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

[[noreturn]] void bad_event(std::string_view name, std::string_view why) {
  throw ParseError("invalid event '" + std::string(name) + "': " + std::string(why));
}

}  // namespace

std::string_view kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::kBar: return "Bar";
    case EventKind::kBeat: return "Beat";
    case EventKind::kTempo: return "Tempo";
    case EventKind::kChord: return "Chord";
    case EventKind::kPitch: return "Pitch";
    case EventKind::kDuration: return "Duration";
    case EventKind::kVelocity: return "Velocity";
  }
  return "?";
}

std::string RemiEvent::name() const {
  switch (kind) {
    case EventKind::kBar: return "Bar";
    case EventKind::kChord:
      return std::string(kRootNames.at(static_cast<std::size_t>(value))) + "_" +
             std::string(kQualityNames.at(static_cast<std::size_t>(quality)));
    default: return std::string(kind_name(kind)) + "_" + std::to_string(value);
  }
}

RemiEvent parse_event(std::string_view name) {
  if (name.empty()) bad_event(name, "empty name");
  if (name.find(kJoiner) != std::string_view::npos) {
    bad_event(name, "'+' is reserved as the merge joiner");
  }
  if (name == "Bar") return RemiEvent::bar();

  const auto us = name.rfind('_');
  if (us == std::string_view::npos) bad_event(name, "unknown event kind");
  const std::string_view head = name.substr(0, us);
  const std::string_view tail = name.substr(us + 1);

  struct Prefix {
    std::string_view text;
    EventKind kind;
    int lo;
    int hi;
  };
  static constexpr std::array<Prefix, 5> kPrefixes = {{
      {"Beat", EventKind::kBeat, 0, 4095},
      {"Tempo", EventKind::kTempo, 1, 100000},
      {"Pitch", EventKind::kPitch, 0, 127},
      {"Duration", EventKind::kDuration, 1, std::numeric_limits<int>::max()},
      {"Velocity", EventKind::kVelocity, 1, 127},
  }};
  for (const auto& p : kPrefixes) {
    if (head != p.text) continue;
    const auto v = parse_canonical_int(tail);
    if (!v) bad_event(name, "value is not a canonical integer");
    if (*v < p.lo || *v > p.hi) bad_event(name, "value out of range");
    return {p.kind, *v, {}};
  }

  const auto root = std::find(kRootNames.begin(), kRootNames.end(), head);
  const auto qual = std::find(kQualityNames.begin(), kQualityNames.end(), tail);
  if (root == kRootNames.end() || qual == kQualityNames.end()) {
    bad_event(name, "unknown event kind");
  }
  return RemiEvent::chord(static_cast<int>(root - kRootNames.begin()),
                          static_cast<ChordQuality>(qual - kQualityNames.begin()));
}

bool includes(EventSet set, EventKind kind) {
  if (set == EventSet::kCp7) return true;
  return kind == EventKind::kBar || kind == EventKind::kBeat || kind == EventKind::kPitch ||
         kind == EventKind::kDuration;
}

EventSet parse_event_set(std::string_view text) {
  if (text == "cp4" || text == "CP4") return EventSet::kCp4;
  if (text == "cp7" || text == "CP7") return EventSet::kCp7;
  throw ConfigError("unknown event set '" + std::string(text) + "' (expected cp4 or cp7)");
}

std::string_view event_set_name(EventSet set) { return set == EventSet::kCp4 ? "cp4" : "cp7"; }

std::vector<std::string> RemiSequence::names() const {
  std::vector<std::string> out;
  out.reserve(events.size());
  for (const auto& e : events) out.push_back(e.name());
  return out;
}

void validate_grammar(const RemiSequence& seq, std::optional<EventSet> set) {
  const auto fail = [&](std::size_t i, std::string_view why) {
    throw DataError(seq.source_id + ": event " + std::to_string(i) + " (" +
                    seq.events[i].name() + "): " + std::string(why));
  };
  const auto& ev = seq.events;
  if (!ev.empty() && ev.front().kind != EventKind::kBar) fail(0, "sequence must start with Bar");
  for (std::size_t i = 0; i < ev.size(); ++i) {
    const EventKind k = ev[i].kind;
    if (set && !includes(*set, k)) fail(i, "kind not in the selected event set");
    const EventKind prev = i > 0 ? ev[i - 1].kind : EventKind::kBar;
    switch (k) {
      case EventKind::kPitch:
        if (i + 1 >= ev.size() || ev[i + 1].kind != EventKind::kDuration) {
          fail(i, "Pitch must be followed by Duration");
        }
        break;
      case EventKind::kDuration:
        if (prev != EventKind::kPitch || i == 0) fail(i, "Duration must follow Pitch");
        if (set == EventSet::kCp7 && (i + 1 >= ev.size() || ev[i + 1].kind != EventKind::kVelocity)) {
          fail(i, "CP7 notes need a Velocity after Duration");
        }
        break;
      case EventKind::kVelocity:
        if (i < 2 || prev != EventKind::kDuration) fail(i, "Velocity must follow a note Duration");
        break;
      default: break;
    }
  }
}

QuantGrid QuantGrid::standard(int ticks_per_beat) {
  QuantGrid g;
  g.ticks_per_beat = ticks_per_beat;
  const int sixteenth = std::max(1, ticks_per_beat / 4);
  for (int k = 1; k <= 32; ++k) g.duration_bins.push_back(k * sixteenth);
  for (int k = 0; k < 32; ++k) g.velocity_bins.push_back(2 + 4 * k);
  for (int k = 0; k < 32; ++k) {
    g.tempo_bins.push_back(static_cast<int>(std::lround(30.0 * std::pow(10.0, k / 31.0))));
  }
  return g;
}

void QuantGrid::validate() const {
  if (ticks_per_beat <= 0) throw ConfigError("ticks_per_beat must be positive");
  if (beats_per_bar <= 0 || positions_per_bar <= 0 || positions_per_bar % beats_per_bar != 0) {
    throw ConfigError("positions_per_bar must be a positive multiple of beats_per_bar");
  }
  if (max_bars <= 0) throw ConfigError("max_bars must be positive");
  const auto check = [](const std::vector<int>& bins, const char* what) {
    if (bins.empty()) throw ConfigError(std::string(what) + " bins are empty");
    for (std::size_t i = 1; i < bins.size(); ++i) {
      if (bins[i] <= bins[i - 1]) {
        throw ConfigError(std::string(what) + " bins must be strictly increasing");
      }
    }
  };
  check(duration_bins, "duration");
  check(velocity_bins, "velocity");
  check(tempo_bins, "tempo");
}

std::int64_t QuantGrid::snap(std::int64_t tick) const {
  const std::int64_t den = ticks_per_bar();
  return (2 * tick * positions_per_bar + den) / (2 * den);
}

std::int64_t QuantGrid::position_tick(std::int64_t global_position) const {
  return global_position * ticks_per_bar() / positions_per_bar;
}

int nearest_bin(std::span<const int> bins, double value) {
  int best = bins.front();
  double best_dist = std::abs(value - best);
  for (const int b : bins.subspan(1)) {
    const double d = std::abs(value - b);
    if (d < best_dist) {
      best = b;
      best_dist = d;
    }
  }
  return best;
}

std::vector<ChordEvent> detect_chords(std::span<const NoteRecord> notes, const QuantGrid& grid) {
  grid.validate();
  const std::int64_t window = std::max(1, grid.positions_per_bar / 2);

  struct Window {
    unsigned pcs = 0;
    int lowest_pitch = 128;
    std::array<int, 12> count{};
  };
  std::map<std::int64_t, Window> windows;
  for (const auto& n : notes) {
    Window& w = windows[grid.snap(n.onset_tick) / window];
    const int pc = n.pitch % 12;
    w.pcs |= 1u << pc;
    w.count[static_cast<std::size_t>(pc)]++;
    w.lowest_pitch = std::min(w.lowest_pitch, n.pitch);
  }

  std::vector<ChordEvent> out;
  for (const auto& [index, w] : windows) {
    const int bass = w.lowest_pitch % 12;
    std::optional<ChordEvent> best;
    std::tuple<int, int, int> best_key{};
    for (int root = 0; root < 12; ++root) {
      for (std::size_t q = 0; q < kChordTemplates.size(); ++q) {
        const unsigned tmpl = rotate_pc(kChordTemplates[q], root);
        if ((w.pcs & tmpl) != tmpl) continue;
        const int score = std::popcount(tmpl) - std::popcount(w.pcs & ~tmpl);
        if (score <= 0) continue;
        // Ties go to the root the bass note supports, then the more doubled root.
        const std::tuple<int, int, int> key{score, root == bass ? 1 : 0,
                                            w.count[static_cast<std::size_t>(root)]};
        if (!best || key > best_key) {
          best = ChordEvent{index * window, root, static_cast<ChordQuality>(q)};
          best_key = key;
        }
      }
    }
    if (!best) continue;
    if (!out.empty() && out.back().root == best->root && out.back().quality == best->quality) {
      continue;
    }
    out.push_back(*best);
  }
  return out;
}

RemiSequence encode_remi(std::span<const NoteRecord> notes, std::span<const TempoChange> tempos,
                         std::span<const ChordEvent> chords, const QuantGrid& grid, EventSet set) {
  grid.validate();
  RemiSequence seq;
  if (notes.empty()) return seq;

  struct Quantized {
    std::int64_t position;
    int pitch;
    int duration;
    int velocity;
    std::size_t order;
  };
  std::vector<Quantized> q;
  q.reserve(notes.size());
  for (std::size_t i = 0; i < notes.size(); ++i) {
    const auto& n = notes[i];
    const std::int64_t pos = grid.snap(n.onset_tick);
    if (pos / grid.positions_per_bar >= grid.max_bars) {
      throw DataError("note at tick " + std::to_string(n.onset_tick) + " lies beyond bar cap " +
                      std::to_string(grid.max_bars));
    }
    q.push_back({pos, n.pitch, nearest_bin(grid.duration_bins, static_cast<double>(n.duration_tick)),
                 nearest_bin(grid.velocity_bins, n.velocity), i});
  }
  std::sort(q.begin(), q.end(), [](const Quantized& a, const Quantized& b) {
    return std::tie(a.position, a.pitch, a.order) < std::tie(b.position, b.pitch, b.order);
  });

  std::vector<TempoChange> tempo_sorted(tempos.begin(), tempos.end());
  std::stable_sort(tempo_sorted.begin(), tempo_sorted.end(),
                   [](const TempoChange& a, const TempoChange& b) { return a.tick < b.tick; });
  std::vector<ChordEvent> chord_sorted(chords.begin(), chords.end());
  std::stable_sort(chord_sorted.begin(), chord_sorted.end(),
                   [](const ChordEvent& a, const ChordEvent& b) { return a.position < b.position; });

  const bool full = set == EventSet::kCp7;
  std::optional<int> last_tempo;
  std::optional<ChordEvent> last_chord;
  std::optional<ChordEvent> pending_chord;
  std::size_t tempo_i = 0;
  std::size_t chord_i = 0;
  double current_bpm = 120.0;

  const std::int64_t last_bar = q.back().position / grid.positions_per_bar;
  std::size_t ni = 0;
  for (std::int64_t bar = 0; bar <= last_bar; ++bar) {
    seq.events.push_back(RemiEvent::bar());
    while (ni < q.size() && q[ni].position / grid.positions_per_bar == bar) {
      const std::int64_t pos = q[ni].position;
      seq.events.push_back(RemiEvent::beat(static_cast<int>(pos % grid.positions_per_bar)));
      if (full) {
        const std::int64_t tick = grid.position_tick(pos);
        while (tempo_i < tempo_sorted.size() && tempo_sorted[tempo_i].tick <= tick) {
          current_bpm = tempo_sorted[tempo_i++].bpm;
        }
        const int tbin = nearest_bin(grid.tempo_bins, current_bpm);
        if (last_tempo != tbin) {
          seq.events.push_back(RemiEvent::tempo(tbin));
          last_tempo = tbin;
        }
        while (chord_i < chord_sorted.size() && chord_sorted[chord_i].position <= pos) {
          pending_chord = chord_sorted[chord_i++];
        }
        if (pending_chord && (!last_chord || last_chord->root != pending_chord->root ||
                              last_chord->quality != pending_chord->quality)) {
          seq.events.push_back(RemiEvent::chord(pending_chord->root, pending_chord->quality));
          last_chord = pending_chord;
        }
      }
      for (; ni < q.size() && q[ni].position == pos; ++ni) {
        seq.events.push_back(RemiEvent::pitch(q[ni].pitch));
        seq.events.push_back(RemiEvent::duration(q[ni].duration));
        if (full) seq.events.push_back(RemiEvent::velocity(q[ni].velocity));
      }
    }
  }
  return seq;
}

}  // namespace ngmf
