#include "ngmf/compound.h"

#include <algorithm>

#include "ngmf/error.h"

namespace ngmf {
namespace {

bool starts_word(EventKind kind) {
  return kind == EventKind::kBar || kind == EventKind::kBeat || kind == EventKind::kPitch;
}

}  // namespace

Family family_of(EventKind kind) {
  switch (kind) {
    case EventKind::kPitch:
    case EventKind::kDuration:
    case EventKind::kVelocity: return Family::kNote;
    default: return Family::kMetric;
  }
}

std::vector<EventKind> family_members(Family family) {
  std::vector<EventKind> out;
  for (const EventKind k : kAllEventKinds) {
    if (family_of(k) == family) out.push_back(k);
  }
  return out;
}

std::string_view family_name(Family family) {
  return family == Family::kMetric ? "metric" : "note";
}

std::vector<FamilyWord> group_families(const RemiSequence& seq) {
  std::vector<FamilyWord> words;
  for (const RemiEvent& e : seq.events) {
    const Family f = family_of(e.kind);
    if (words.empty() || words.back().family != f || starts_word(e.kind)) {
      words.push_back({f, {}});
    }
    words.back().events.push_back(e);
  }
  return words;
}

std::vector<EventKind> cp_slot_kinds(EventSet set) {
  std::vector<EventKind> out;
  for (const EventKind k : kAllEventKinds) {
    if (includes(set, k)) out.push_back(k);
  }
  return out;
}

std::vector<CpToken> encode_cp(const RemiSequence& seq, EventSet set) {
  const std::vector<EventKind> kinds = cp_slot_kinds(set);
  const auto slot_of = [&](EventKind k) -> std::size_t {
    const auto it = std::find(kinds.begin(), kinds.end(), k);
    if (it == kinds.end()) {
      throw DataError(seq.source_id + ": " + std::string(kind_name(k)) + " is not part of " +
                      std::string(event_set_name(set)));
    }
    return static_cast<std::size_t>(it - kinds.begin());
  };
  const auto blank = [&] { return CpToken{std::vector<std::string>(kinds.size(), std::string(kPadSlot))}; };

  std::vector<CpToken> out;
  for (const FamilyWord& word : group_families(seq)) {
    bool open = false;
    bool bar_only = false;
    for (const RemiEvent& e : word.events) {
      const std::size_t slot = slot_of(e.kind);
      if (!open || starts_word(e.kind) || bar_only) {
        out.push_back(blank());
        open = true;
      } else if (out.back().slots[slot] != kPadSlot) {
        throw DataError(seq.source_id + ": compound token already has a " +
                        std::string(kind_name(e.kind)) + " slot filled at " + e.name());
      }
      out.back().slots[slot] = e.name();
      bar_only = e.kind == EventKind::kBar;
    }
  }
  return out;
}

}  // namespace ngmf
