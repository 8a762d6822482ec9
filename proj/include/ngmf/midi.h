#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ngmf/remi.h"

namespace ngmf {

struct MidiPiece {
  std::vector<NoteRecord> notes;  // sorted by (onset_tick, pitch)
  std::vector<TempoChange> tempos;
  int ticks_per_beat = 480;
};

// Reads a format 0 or 1 Standard MIDI File and merges every track and channel
// into one note list. A same-pitch note still sounding when the pitch is
// struck again is cut at the new onset.
//
// Throws ParseError (message carries the byte offset) on malformed data and
// DataError when the file holds no notes.
MidiPiece parse_midi(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

// MIDI -> REMI front-end: parse, detect chords (CP7 only), encode.
RemiSequence midi_to_remi(std::span<const std::uint8_t> bytes, EventSet set,
                          const std::string& source_id);

}  // namespace ngmf
