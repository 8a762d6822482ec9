#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ngmf/model.h"
#include "ngmf/remi.h"
#include "ngmf/training.h"
#include "ngmf/ucw.h"

namespace ngmf {

struct PipelineConfig {
  EventSet event_set = EventSet::kCp7;
  std::size_t ucw_vocab_size = 1000;
  int n_max = 4;
  std::int64_t ngram_min_freq = 200;
  int max_ngrams = 128;  // M; capped by the model's position table
  std::uint64_t seed = 1;
  ModelConfig model;
  int steps = 500;
  int batch_size = 8;
  double lr = 1e-3;
  int warmup_steps = 100;
  int epochs = 15;

  // Throws ConfigError for non-positive sizes.
  void validate() const;
  // Model block with vocabulary sizes filled in and max_ngrams capped.
  ModelConfig model_for(int vocab_size, int ngram_vocab_size) const;
  std::string serialize() const;
};

// Flat "key=value" lines; '#' starts a comment. Unknown keys and bad values
// throw ConfigError naming the line.
void apply_config_text(PipelineConfig& config, std::istream& in, const std::string& source_name);
void apply_config_file(PipelineConfig& config, const std::string& path);
// NGMF_SEED, when set, replaces the seed.
void apply_environment(PipelineConfig& config);

struct LoadedCorpus {
  std::vector<RemiSequence> sequences;
  std::vector<std::string> failures;  // "path: message" per unreadable file
};

// `path` may be a text corpus, a MIDI file, or a directory holding either
// (.txt, .mid, .midi; sorted by name). Per-file failures are collected rather
// than thrown; a missing path throws DataError.
LoadedCorpus load_corpus(const std::string& path, EventSet set);

// Learns the largest requested vocabulary once; smaller sizes are merge
// prefixes of it. When `cache_dir` is set, vocabularies are stored there
// keyed by a hash of the corpus content.
class VocabCache {
 public:
  explicit VocabCache(std::optional<std::string> cache_dir = std::nullopt) : dir_(std::move(cache_dir)) {}
  UcwVocab get(const std::vector<RemiSequence>& corpus, std::size_t size);
  int trainings() const { return trainings_; }

 private:
  std::optional<std::string> dir_;
  std::uint64_t hash_ = 0;
  std::optional<UcwVocab> largest_;
  int trainings_ = 0;
};

std::uint64_t corpus_hash(const std::vector<RemiSequence>& corpus);

struct LengthSummary {
  double mean = 0.0;
  double median = 0.0;
};
LengthSummary summarize(const std::vector<std::size_t>& lengths);

struct StatsRow {
  std::size_t requested_size = 0;
  std::size_t vocab_size = 0;
  std::size_t merges = 0;
  LengthSummary remi, cp, ucw;
  double ucw_over_remi = 0.0;  // total UCW tokens / total REMI events
  double ucw_over_cp = 0.0;
};

struct StatsReport {
  std::size_t sequences = 0;
  std::size_t base_size = 0;
  std::vector<StatsRow> rows;  // in ascending vocabulary size
  bool monotonic = true;       // mean UCW length never grows with vocab size
};

// The CP event set is CP4 when every event fits it, otherwise CP7.
StatsReport compute_stats(const std::vector<RemiSequence>& corpus, std::vector<std::size_t> sizes,
                          VocabCache& cache);
void print_stats(std::ostream& out, const StatsReport& report);

// Segments, encodes and truncates a corpus for the model.
std::vector<EncodedSequence> encode_corpus(const std::vector<UcwSequence>& segmented, const UcwVocab& vocab,
                                           const NgramVocab& grams, const ModelConfig& config);

}  // namespace ngmf
