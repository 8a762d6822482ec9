#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ngmf {

// Separator used when rendering merged tokens. No event name may contain it.
inline constexpr char kJoiner = '+';

enum class EventKind : std::uint8_t {
  kBar,
  kBeat,
  kTempo,
  kChord,
  kPitch,
  kDuration,
  kVelocity,
};

inline constexpr std::array<EventKind, 7> kAllEventKinds = {
    EventKind::kBar,   EventKind::kBeat,     EventKind::kTempo,    EventKind::kChord,
    EventKind::kPitch, EventKind::kDuration, EventKind::kVelocity,
};

std::string_view kind_name(EventKind kind);

enum class ChordQuality : std::uint8_t { kMajor, kMinor, kDominant7, kDiminished };

// One REMI event. `value` holds the beat position, tempo bin, pitch, duration
// bin, velocity bin or chord root (pitch class 0-11) depending on `kind`.
struct RemiEvent {
  EventKind kind = EventKind::kBar;
  int value = 0;
  ChordQuality quality = ChordQuality::kMajor;

  static RemiEvent bar() { return {EventKind::kBar, 0, {}}; }
  static RemiEvent beat(int pos) { return {EventKind::kBeat, pos, {}}; }
  static RemiEvent tempo(int bpm) { return {EventKind::kTempo, bpm, {}}; }
  static RemiEvent chord(int root, ChordQuality q) { return {EventKind::kChord, root, q}; }
  static RemiEvent pitch(int p) { return {EventKind::kPitch, p, {}}; }
  static RemiEvent duration(int ticks) { return {EventKind::kDuration, ticks, {}}; }
  static RemiEvent velocity(int v) { return {EventKind::kVelocity, v, {}}; }

  // "Bar", "Beat_4", "Tempo_119", "G_M", "Pitch_71", "Duration_1080", "Velocity_90".
  std::string name() const;

  friend bool operator==(const RemiEvent& a, const RemiEvent& b) {
    return a.kind == b.kind && a.value == b.value &&
           (a.kind != EventKind::kChord || a.quality == b.quality);
  }
};

// Inverse of RemiEvent::name(). Only canonical renderings are accepted, so
// parse_event(e.name()) == e and parse_event(s).name() == s.
// Throws ParseError (with `what` describing the problem) on anything else.
RemiEvent parse_event(std::string_view name);

enum class EventSet { kCp4, kCp7 };

// CP4 keeps {Bar, Beat, Pitch, Duration}; CP7 keeps all seven kinds.
bool includes(EventSet set, EventKind kind);
EventSet parse_event_set(std::string_view text);
std::string_view event_set_name(EventSet set);

struct RemiSequence {
  std::vector<RemiEvent> events;
  std::string source_id;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
  std::vector<std::string> names() const;
};

// Checks the event-order grammar: a non-empty sequence starts with Bar, every
// Pitch is immediately followed by Duration, and Velocity only ever follows a
// note's Duration. With CP7 every note carries a Velocity; with CP4 only CP4
// kinds may appear. Throws DataError naming the offending index.
void validate_grammar(const RemiSequence& seq, std::optional<EventSet> set = std::nullopt);

struct NoteRecord {
  std::int64_t onset_tick = 0;
  int pitch = 0;
  std::int64_t duration_tick = 1;
  int velocity = 64;

  friend bool operator==(const NoteRecord&, const NoteRecord&) = default;
};

struct TempoChange {
  std::int64_t tick = 0;
  double bpm = 120.0;
};

// Chord change anchored at a global grid position (bar * positions_per_bar + pos).
struct ChordEvent {
  std::int64_t position = 0;
  int root = 0;
  ChordQuality quality = ChordQuality::kMajor;

  friend bool operator==(const ChordEvent&, const ChordEvent&) = default;
};

struct QuantGrid {
  int ticks_per_beat = 480;
  int positions_per_bar = 16;
  int beats_per_bar = 4;
  std::vector<int> duration_bins;
  std::vector<int> velocity_bins;
  std::vector<int> tempo_bins;
  int max_bars = 255;

  // 16 positions per 4/4 bar; durations in 32 sixteenth-note multiples;
  // velocities in width-4 buckets over 1-127; 32 log-spaced tempi 30-300 BPM.
  static QuantGrid standard(int ticks_per_beat = 480);

  // Throws ConfigError if a bin list is empty or not strictly increasing, or
  // positions_per_bar is not a multiple of beats_per_bar.
  void validate() const;

  std::int64_t ticks_per_bar() const {
    return static_cast<std::int64_t>(ticks_per_beat) * beats_per_bar;
  }
  // Nearest global grid position (ties round up).
  std::int64_t snap(std::int64_t tick) const;
  std::int64_t position_tick(std::int64_t global_position) const;
};

// Value of the bin closest to `value`; ties pick the smaller bin.
int nearest_bin(std::span<const int> bins, double value);

// Half-bar pitch-class template matching over {major, minor, dominant-7,
// diminished}. A chord is reported only when it differs from the previous one.
std::vector<ChordEvent> detect_chords(std::span<const NoteRecord> notes, const QuantGrid& grid);

// Quantizes notes onto the grid and emits events bar by bar. Throws DataError
// when a note falls at or beyond grid.max_bars.
RemiSequence encode_remi(std::span<const NoteRecord> notes, std::span<const TempoChange> tempos,
                         std::span<const ChordEvent> chords, const QuantGrid& grid, EventSet set);

}  // namespace ngmf
