#include <gtest/gtest.h>

#include <random>

#include "ngmf/compound.h"
#include "ngmf/corpus_io.h"
#include "ngmf/error.h"
#include "test_support.h"

namespace ngmf {
namespace {

std::vector<std::string> word_texts(const std::vector<FamilyWord>& words) {
  std::vector<std::string> out;
  for (const auto& w : words) {
    std::vector<std::string> names;
    for (const auto& e : w.events) names.push_back(e.name());
    out.push_back(join(names, " "));
  }
  return out;
}

TEST(Families, PartitionEventKinds) {
  for (EventKind k : kAllEventKinds) {
    int hits = 0;
    for (Family f : kAllFamilies) {
      for (EventKind m : family_members(f)) hits += m == k;
    }
    EXPECT_EQ(hits, 1);
  }
  EXPECT_EQ(family_of(EventKind::kChord), Family::kMetric);
  EXPECT_EQ(family_of(EventKind::kVelocity), Family::kNote);
  EXPECT_EQ(family_name(Family::kNote), "note");
}

TEST(Grouping, FragmentGivesSevenWords) {
  const auto words = group_families(testing::fragment());
  EXPECT_EQ(word_texts(words), (std::vector<std::string>{
                                   "Bar",
                                   "Beat_0 Tempo_119 G_M",
                                   "Pitch_71 Duration_1080 Velocity_90",
                                   "Pitch_69 Duration_1560 Velocity_90",
                                   "Bar D_7",
                                   "Pitch_71 Duration_1080 Velocity_88",
                                   "Pitch_73 Duration_1560 Velocity_90",
                               }));
  EXPECT_EQ(words[1].family, Family::kMetric);
  EXPECT_EQ(words[2].family, Family::kNote);
}

TEST(Grouping, EmptyAndSingle) {
  EXPECT_TRUE(group_families(RemiSequence{}).empty());
  EXPECT_EQ(group_families(testing::parse_line("Bar")).size(), 1u);
}

TEST(Grouping, ConcatenationIsLossless) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 100; ++t) {
    const auto seq = testing::random_sequence(rng, 80, "r");
    std::vector<RemiEvent> flat;
    for (const auto& w : group_families(seq)) {
      ASSERT_FALSE(w.events.empty());
      for (const auto& e : w.events) {
        EXPECT_EQ(family_of(e.kind), w.family);
        flat.push_back(e);
      }
    }
    EXPECT_EQ(flat, seq.events);
  }
}

TEST(CompoundTokens, SlotLayouts) {
  EXPECT_EQ(cp_slot_kinds(EventSet::kCp4).size(), 4u);
  EXPECT_EQ(cp_slot_kinds(EventSet::kCp7).size(), 7u);
}

TEST(CompoundTokens, MetricHeaderFillsThreeSlots) {
  const auto tokens = encode_cp(testing::parse_line("Bar Beat_0 Tempo_119 G_M"), EventSet::kCp7);
  ASSERT_EQ(tokens.size(), 2u);
  EXPECT_EQ(tokens[1].slots, (std::vector<std::string>{"[PAD]", "Beat_0", "Tempo_119", "G_M", "[PAD]", "[PAD]", "[PAD]"}));
}

TEST(CompoundTokens, FragmentGivesEightTokens) {
  const auto tokens = encode_cp(testing::fragment(), EventSet::kCp7);
  ASSERT_EQ(tokens.size(), 8u);
  EXPECT_EQ(tokens[0].slots[0], "Bar");
  for (std::size_t s = 1; s < 7; ++s) EXPECT_EQ(tokens[0].slots[s], "[PAD]");
  EXPECT_EQ(tokens[4].slots[0], "Bar");
  EXPECT_EQ(tokens[5].slots, (std::vector<std::string>{"[PAD]", "[PAD]", "[PAD]", "D_7", "[PAD]", "[PAD]", "[PAD]"}));
  EXPECT_EQ(tokens[6].slots,
            (std::vector<std::string>{"[PAD]", "[PAD]", "[PAD]", "[PAD]", "Pitch_71", "Duration_1080", "Velocity_88"}));
}

TEST(CompoundTokens, EveryEventLandsInExactlyOneSlot) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 100; ++t) {
    const auto seq = testing::random_sequence(rng, 60, "r");
    const auto tokens = encode_cp(seq, EventSet::kCp7);
    std::vector<std::string> filled;
    for (const auto& tok : tokens) {
      ASSERT_EQ(tok.slots.size(), 7u);
      for (const auto& s : tok.slots) {
        if (s != kPadSlot) filled.push_back(s);
      }
    }
    EXPECT_EQ(filled, seq.names());
  }
}

TEST(CompoundTokens, Cp4RejectsVelocityAndRepeatedSlot) {
  EXPECT_THROW(encode_cp(testing::parse_line("Bar Beat_0 Pitch_60 Duration_120 Velocity_90"), EventSet::kCp4),
               DataError);
  EXPECT_THROW(encode_cp(testing::parse_line("Bar Beat_0 Tempo_100 Tempo_120"), EventSet::kCp7), DataError);
}

}  // namespace
}  // namespace ngmf
