#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ngmf/remi.h"

namespace ngmf {

// Disjoint event families: Metric = {Bar, Beat, Tempo, Chord},
// Note = {Pitch, Duration, Velocity}.
enum class Family : std::uint8_t { kMetric, kNote };

inline constexpr std::array<Family, 2> kAllFamilies = {Family::kMetric, Family::kNote};

Family family_of(EventKind kind);
std::vector<EventKind> family_members(Family family);
std::string_view family_name(Family family);

struct FamilyWord {
  Family family = Family::kMetric;
  std::vector<RemiEvent> events;
};

// Splits a REMI sequence into family words. A word ends where the family
// changes and a new word starts at every Bar, Beat and Pitch, so a metric word
// is a bar marker or one grid position's header and a note word is one note.
// Concatenating the words gives back the input.
std::vector<FamilyWord> group_families(const RemiSequence& seq);

inline constexpr std::string_view kPadSlot = "[PAD]";

// Slot layout of a compound token: CP7 = Bar, Beat, Tempo, Chord, Pitch,
// Duration, Velocity; CP4 = Bar, Beat, Pitch, Duration.
std::vector<EventKind> cp_slot_kinds(EventSet set);

struct CpToken {
  std::vector<std::string> slots;
};

// One compound token per bar marker, per position header and per note; slots
// of other kinds hold "[PAD]". Throws DataError for a kind outside `set` or a
// word repeating a slot it cannot split on.
std::vector<CpToken> encode_cp(const RemiSequence& seq, EventSet set);

}  // namespace ngmf
