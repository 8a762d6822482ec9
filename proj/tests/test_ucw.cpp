#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "ngmf/corpus_io.h"
#include "ngmf/error.h"
#include "ngmf/ucw.h"
#include "oracles.h"
#include "test_support.h"

namespace ngmf {
namespace {

const std::vector<std::string> kFragmentFinal = {
    "Bar",      "Beat_0", "Tempo_119", "G_M", "Pitch_71+Duration_1080", "Velocity_90",
    "Pitch_69", "Duration_1560+Velocity_90", "Bar", "D_7", "Pitch_71+Duration_1080", "Velocity_88",
    "Pitch_73", "Duration_1560+Velocity_90"};

oracle::Corpus oracle_corpus(const std::vector<RemiSequence>& corpus) {
  oracle::Corpus out;
  for (const auto& s : corpus) out.push_back(oracle::words_of(s.names()));
  return out;
}

std::set<std::pair<std::string, std::string>> rule_set(const UcwVocab& v) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& m : v.merges) out.insert({m.left, m.right});
  return out;
}

TEST(PairCounts, FragmentFirstIteration) {
  const auto counts = count_pairs(family_word_corpus({testing::fragment()}));
  EXPECT_EQ(counts.at({"Pitch_71", "Duration_1080"}), 2);
  EXPECT_EQ(counts.at({"Duration_1560", "Velocity_90"}), 2);
  EXPECT_EQ(counts.at({"Duration_1080", "Velocity_90"}), 1);
  EXPECT_FALSE(counts.contains({"Velocity_90", "Pitch_69"}));  // crosses a word boundary
}

TEST(PairCounts, SingletonWordsGiveNothing) {
  EXPECT_TRUE(count_pairs(family_word_corpus({testing::parse_line("Bar Bar Beat_0 Beat_4")})).empty());
}

TEST(PairCounts, MatchesNaiveRecount) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    std::vector<RemiSequence> corpus = {testing::random_sequence(rng, 100, "r")};
    const auto got = count_pairs(family_word_corpus(corpus));
    const auto want = oracle::naive_pairs(oracle_corpus(corpus));
    ASSERT_EQ(got.size(), want.size());
    for (const auto& [k, v] : want) EXPECT_EQ(got.at(k), v);
  }
}

TEST(Training, FragmentLearnsTwoMerges) {
  const auto r = train_ucw({testing::fragment()}, 1000);
  EXPECT_EQ(r.vocab.base.size(), 12u);
  ASSERT_EQ(r.vocab.merges.size(), 2u);
  EXPECT_EQ(r.vocab.merges[0], (MergeRule{"Pitch_71", "Duration_1080", "Pitch_71+Duration_1080", 0}));
  EXPECT_EQ(r.vocab.merges[1], (MergeRule{"Duration_1560", "Velocity_90", "Duration_1560+Velocity_90", 1}));
  ASSERT_EQ(r.segmented.size(), 1u);
  EXPECT_EQ(r.segmented[0].tokens, kFragmentFinal);
  EXPECT_EQ(r.segmented[0].families.size(), kFragmentFinal.size());
  EXPECT_EQ(r.segmented[0].families[4], Family::kNote);
}

TEST(Training, TargetStopsEarly) {
  const auto r = train_ucw({testing::fragment()}, 13);
  ASSERT_EQ(r.vocab.merges.size(), 1u);
  EXPECT_EQ(r.vocab.size(), 13u);
}

TEST(Training, BelowBaseIsConfigError) {
  EXPECT_THROW(train_ucw({testing::fragment()}, 11), ConfigError);
}

TEST(Training, DistinctPairsGiveNoMerges) {
  const auto r = train_ucw({testing::parse_line("Bar Beat_0 Pitch_60 Duration_120 Beat_4 Pitch_62 Duration_240")}, 100);
  EXPECT_TRUE(r.vocab.merges.empty());
  EXPECT_EQ(r.vocab.size(), r.vocab.base.size());
}

TEST(Training, MatchesRecountOracle) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 30; ++t) {
    std::vector<RemiSequence> corpus;
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) corpus.push_back(testing::random_sequence(rng, 60, "s" + std::to_string(i)));
    const auto base = train_ucw(corpus, 1000).vocab.base.size();
    const auto r = train_ucw(corpus, base + 20);
    const auto o = oracle::bpe(oracle_corpus(corpus), base + 20);
    ASSERT_EQ(r.vocab.merges.size(), o.merges.size());
    for (std::size_t k = 0; k < o.merges.size(); ++k) {
      EXPECT_EQ(r.vocab.merges[k].left, o.merges[k].first);
      EXPECT_EQ(r.vocab.merges[k].right, o.merges[k].second);
    }
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      oracle::Word flat;
      for (const auto& w : o.state[s]) flat.insert(flat.end(), w.begin(), w.end());
      EXPECT_EQ(r.segmented[s].tokens, flat);
    }
  }
}

TEST(Training, RepeatedTokenPairsMergeLeftToRight) {
  // Duration runs are not grammatical, but the trainer works on any words.
  const auto r = train_ucw({testing::parse_line("Bar Beat_0 Tempo_100 Tempo_100 Tempo_100 Beat_4 Tempo_100 Tempo_100 Tempo_100")}, 100);
  ASSERT_FALSE(r.vocab.merges.empty());
  EXPECT_EQ(r.vocab.merges[0].left, "Tempo_100");
  EXPECT_EQ(r.vocab.merges[0].right, "Tempo_100");
  const auto o = oracle::bpe(oracle_corpus({testing::parse_line(
                                 "Bar Beat_0 Tempo_100 Tempo_100 Tempo_100 Beat_4 Tempo_100 Tempo_100 Tempo_100")}),
                             100);
  oracle::Word flat;
  for (const auto& w : o.state[0]) flat.insert(flat.end(), w.begin(), w.end());
  EXPECT_EQ(r.segmented[0].tokens, flat);
}

TEST(Segmentation, FragmentMatchesTrainerState) {
  const auto r = train_ucw({testing::fragment()}, 1000);
  EXPECT_EQ(segment(testing::fragment(), r.vocab).tokens, kFragmentFinal);
}

TEST(Segmentation, NoMergesIsIdentity) {
  UcwVocab v;
  for (const auto& n : testing::fragment().names()) v.base.insert(n);
  EXPECT_EQ(segment(testing::fragment(), v).tokens, testing::fragment().names());
}

TEST(Segmentation, UnknownEventPolicy) {
  const auto r = train_ucw({testing::fragment()}, 1000);
  const auto other = testing::parse_line("Bar Beat_0 Pitch_71 Duration_1080 Velocity_91", "x:1");
  try {
    segment(other, r.vocab);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("Velocity_91"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("x:1"), std::string::npos);
  }
  const auto passed = segment(other, r.vocab, UnknownEventPolicy::kPassThrough);
  EXPECT_EQ(passed.tokens, (std::vector<std::string>{"Bar", "Beat_0", "Pitch_71+Duration_1080", "Velocity_91"}));
}

TEST(Segmentation, TrainingCorpusReproducedAndMaximal) {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 30; ++t) {
    std::vector<RemiSequence> corpus;
    for (int i = 0; i < 3; ++i) corpus.push_back(testing::random_sequence(rng, 80, "s"));
    const auto r = train_ucw(corpus, 40);
    const UcwSegmenter seg(r.vocab);
    const auto rules = rule_set(r.vocab);
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      const auto out = seg.segment(corpus[s]);
      EXPECT_EQ(out.tokens, r.segmented[s].tokens);
      EXPECT_EQ(oracle::expand(out.tokens), corpus[s].names());
      // Maximality and losslessness per family word, checked against the
      // worklist formulation as a second segmenter.
      std::size_t pos = 0;
      for (const auto& word : oracle::words_of(corpus[s].names())) {
        const auto wl = oracle::worklist_segment(word, rules);
        EXPECT_TRUE(oracle::maximal(wl, rules));
        EXPECT_EQ(oracle::expand(wl), word);
        oracle::Word mine;
        std::size_t covered = 0;
        while (covered < word.size()) {
          mine.push_back(out.tokens[pos]);
          covered += split_token(out.tokens[pos++]).size();
        }
        EXPECT_TRUE(oracle::maximal(mine, rules));
      }
    }
  }
}

TEST(Segmentation, UnseenSequencesStayLossless) {
  std::mt19937_64 rng(24);
  std::vector<RemiSequence> corpus;
  for (int i = 0; i < 5; ++i) corpus.push_back(testing::random_sequence(rng, 120, "s"));
  const auto r = train_ucw(corpus, 60);
  const UcwSegmenter seg(r.vocab, UnknownEventPolicy::kPassThrough);
  for (int t = 0; t < 50; ++t) {
    const auto seq = testing::random_sequence(rng, 100, "u");
    const auto out = seg.segment(seq);
    EXPECT_EQ(oracle::expand(out.tokens), seq.names());
    EXPECT_LE(out.size(), seq.size());
  }
}

TEST(Vocab, PrefixKeepsEarliestMerges) {
  const auto r = train_ucw({testing::fragment()}, 1000);
  const auto p = r.vocab.prefix(1);
  ASSERT_EQ(p.merges.size(), 1u);
  EXPECT_EQ(p.merges[0], r.vocab.merges[0]);
  EXPECT_EQ(p.base, r.vocab.base);
  EXPECT_EQ(p.size(), 13u);
}

TEST(VocabFile, RoundTripAndHeader) {
  const auto r = train_ucw({testing::fragment()}, 1000);
  std::stringstream s;
  write_vocab(s, r.vocab);
  const std::string header = s.str().substr(0, s.str().find('\n'));
  EXPECT_EQ(header, "ucw-vocab v1 size=14");
  EXPECT_NE(s.str().find("0\tPitch_71\tDuration_1080\n"), std::string::npos);
  const auto back = read_vocab(s, "mem");
  EXPECT_EQ(back.base, r.vocab.base);
  EXPECT_EQ(back.merges, r.vocab.merges);
}

TEST(VocabFile, RejectsMalformed) {
  for (const char* bad : {"", "ucw-vocab v2 size=1\n", "ucw-vocab v1 size=3\n0\tBar\tBar\nbase\tBar\n",
                          "ucw-vocab v1 size=2\n1\tBar\tBar\nbase\tBar\n",
                          "ucw-vocab v1 size=2\n0\tBar\tBeat_0\nbase\tBar\n"}) {
    std::istringstream in(bad);
    EXPECT_THROW(read_vocab(in, "mem"), ParseError) << bad;
  }
}

TEST(SegmentedFile, RoundTrip) {
  const auto r = train_ucw({testing::fragment(), testing::fragment()}, 1000);
  std::stringstream s;
  write_segmented(s, r.segmented);
  const auto back = read_segmented(s, "mem");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], r.segmented[0]);
  EXPECT_EQ(back[1].source_id, "mem:2");
}

TEST(Tokens, SplitAndMerge) {
  EXPECT_EQ(split_token("Pitch_71+Duration_1080"), (std::vector<std::string>{"Pitch_71", "Duration_1080"}));
  EXPECT_EQ(split_token("Bar"), (std::vector<std::string>{"Bar"}));
  EXPECT_EQ(merge_text("a", "b+c"), "a+b+c");
}

}  // namespace
}  // namespace ngmf
