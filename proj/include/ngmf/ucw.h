#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ngmf/compound.h"
#include "ngmf/remi.h"

namespace ngmf {

struct MergeRule {
  std::string left;
  std::string right;
  std::string merged;  // left + '+' + right
  int rank = 0;

  friend bool operator==(const MergeRule&, const MergeRule&) = default;
};

// Learned compound-word vocabulary: the base event alphabet plus merge rules
// in the order they were learned.
struct UcwVocab {
  std::set<std::string> base;
  std::vector<MergeRule> merges;
  std::size_t target_size = 0;

  std::size_t size() const { return base.size() + merges.size(); }
  // Vocabulary restricted to its first `n` merges.
  UcwVocab prefix(std::size_t n) const;
};

struct UcwSequence {
  std::vector<std::string> tokens;
  std::vector<Family> families;
  std::string source_id;

  std::size_t size() const { return tokens.size(); }
  friend bool operator==(const UcwSequence& a, const UcwSequence& b) {
    return a.tokens == b.tokens && a.families == b.families;
  }
};

// Base event names of a merged token, e.g. "Pitch_71+Duration_1080".
std::vector<std::string> split_token(const std::string& token);
std::string merge_text(const std::string& left, const std::string& right);

using TokenWord = std::vector<std::string>;
using PairCounts = std::map<std::pair<std::string, std::string>, std::int64_t>;

// Frequencies of adjacent token pairs inside words; pairs never straddle a
// word boundary.
PairCounts count_pairs(const std::vector<std::vector<TokenWord>>& corpus);

// Family words of every sequence, rendered as base event names.
std::vector<std::vector<TokenWord>> family_word_corpus(const std::vector<RemiSequence>& corpus);

struct UcwTrainResult {
  UcwVocab vocab;
  std::vector<UcwSequence> segmented;  // corpus state after the last merge
};

// Byte-pair style merge learning inside family words. Each round merges the
// most frequent adjacent pair (ties: earliest first occurrence in corpus scan
// order) everywhere. Stops when the vocabulary reaches `target_vocab_size` or
// no pair occurs twice. Throws ConfigError if the target is below the number
// of distinct events in the corpus.
UcwTrainResult train_ucw(const std::vector<RemiSequence>& corpus, std::size_t target_vocab_size);

enum class UnknownEventPolicy { kError, kPassThrough };

// Applies a vocabulary's merges in rank order within each family word.
// Results are memoised per word, so one segmenter should be reused across a
// corpus.
class UcwSegmenter {
 public:
  explicit UcwSegmenter(const UcwVocab& vocab,
                        UnknownEventPolicy policy = UnknownEventPolicy::kError);
  ~UcwSegmenter();
  UcwSegmenter(UcwSegmenter&&) noexcept;
  UcwSegmenter& operator=(UcwSegmenter&&) noexcept;

  // Throws DataError for events outside the base alphabet under kError.
  UcwSequence segment(const RemiSequence& seq) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

UcwSequence segment(const RemiSequence& seq, const UcwVocab& vocab,
                    UnknownEventPolicy policy = UnknownEventPolicy::kError);

// Vocab file: "ucw-vocab v1 size=<n>", one "<rank>\t<left>\t<right>" line per
// merge, then one "base\t<name>" line per base event.
void write_vocab(std::ostream& out, const UcwVocab& vocab);
void write_vocab_file(const UcwVocab& vocab, const std::string& path);
UcwVocab read_vocab(std::istream& in, const std::string& source_name);
UcwVocab read_vocab_file(const std::string& path);

// Segmented corpus: one sequence per line, tokens separated by spaces.
void write_segmented(std::ostream& out, const std::vector<UcwSequence>& seqs);
std::vector<UcwSequence> read_segmented(std::istream& in, const std::string& source_name);

}  // namespace ngmf
