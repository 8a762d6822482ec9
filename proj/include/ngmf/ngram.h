#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace ngmf {

using TokenSeq = std::vector<std::string>;

struct NgramEntry {
  TokenSeq tokens;
  std::int64_t frequency = 0;
};

// Frequency-filtered table of contiguous token windows. Ids are dense and
// ordered by descending corpus frequency (ties: first occurrence).
class NgramVocab {
 public:
  NgramVocab() = default;
  NgramVocab(int n_max, std::int64_t min_freq) : n_max_(n_max), min_freq_(min_freq) {}

  int n_max() const { return n_max_; }
  std::int64_t min_freq() const { return min_freq_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const NgramEntry& entry(std::size_t id) const { return entries_.at(id); }
  const std::vector<NgramEntry>& entries() const { return entries_; }

  // Appends with the next id. Throws ConfigError for length outside [2, n_max]
  // or a frequency below min_freq, and on duplicates.
  std::size_t add(TokenSeq tokens, std::int64_t frequency);
  std::optional<std::size_t> find(const TokenSeq& tokens) const;
  std::optional<std::size_t> find(const std::string* first, std::size_t length) const;

 private:
  int n_max_ = 4;
  std::int64_t min_freq_ = 1;
  std::vector<NgramEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Counts every window of length 2..n_max in every sequence (windows may cross
// family-word boundaries) and keeps those seen at least `min_freq` times.
// Throws ConfigError if n_max < 2 or min_freq < 1.
NgramVocab harvest_ngrams(const std::vector<TokenSeq>& corpus, int n_max, std::int64_t min_freq);

// Raw (unfiltered, unsorted by frequency) window counts; exposed for reports.
struct NgramHarvestStats {
  std::size_t distinct = 0;
  std::size_t retained = 0;
};
NgramHarvestStats harvest_stats(const std::vector<TokenSeq>& corpus, const NgramVocab& vocab);

struct NgramMatch {
  std::size_t gram_id = 0;
  std::size_t slot = 0;  // column of the position matrix
  std::size_t start = 0;
  std::size_t length = 0;
  std::int64_t frequency = 0;

  friend bool operator==(const NgramMatch&, const NgramMatch&) = default;
};

// Every vocabulary gram occurring in `seq`, keeping the `max_grams` distinct
// grams with the highest corpus frequency (ties: earlier first occurrence,
// then lower id). A kept gram reports all of its occurrences. Result is
// ordered by (slot, start).
std::vector<NgramMatch> match_sequence(const TokenSeq& seq, const NgramVocab& vocab,
                                       std::size_t max_grams);

// Number of distinct grams (slots) used by a match list.
std::size_t slot_count(const std::vector<NgramMatch>& matches);

// Dense rows x cols weights, row-major. Rows are token positions, columns are
// gram slots.
struct PositionMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;

  PositionMatrix() = default;
  PositionMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), weights(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return weights[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return weights[i * cols + j]; }
};

inline constexpr double kPositionEpsilon = 1e-10;

// weight(i, slot) = corpus frequency of the slot's gram when token i lies in
// any of its occurrences. `row_offset` shifts every span (e.g. past a leading
// [CLS] row). Throws ShapeError when a span leaves the matrix.
PositionMatrix build_position_matrix(const std::vector<NgramMatch>& matches, std::size_t rows,
                                     std::size_t cols, std::size_t row_offset = 0);

// Divides each entry by (row sum + epsilon); all-zero rows stay zero.
PositionMatrix normalize_rows(const PositionMatrix& raw, double epsilon = kPositionEpsilon);

// "ngram-vocab v1 n_max=<n> min_freq=<f>" then "<id>\t<freq>\t<tok> <tok>...".
void write_ngram_vocab(std::ostream& out, const NgramVocab& vocab);
void write_ngram_vocab_file(const NgramVocab& vocab, const std::string& path);
NgramVocab read_ngram_vocab(std::istream& in, const std::string& source_name);
NgramVocab read_ngram_vocab_file(const std::string& path);

// Sparse "(row, col, weight)" triplets separated by spaces, one matrix per line.
std::string format_sparse(const PositionMatrix& m);
PositionMatrix parse_sparse(const std::string& line, std::size_t rows, std::size_t cols);

}  // namespace ngmf
