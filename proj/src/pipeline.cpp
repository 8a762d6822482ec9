#include "ngmf/pipeline.h"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ngmf/compound.h"
#include "ngmf/corpus_io.h"
#include "ngmf/error.h"
#include "ngmf/midi.h"

namespace ngmf {
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T to_number(const std::string& text, const std::string& key) {
  T v{};
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("bad value for " + key + ": '" + text + "'");
  }
  return v;
}

bool is_midi_name(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".mid" || ext == ".midi";
}

void load_one(const fs::path& p, EventSet set, LoadedCorpus& out) {
  try {
    if (is_midi_name(p)) {
      const auto bytes = read_file_bytes(p.string());
      out.sequences.push_back(midi_to_remi(bytes, set, p.string()));
    } else {
      auto seqs = read_text_corpus(p.string());
      for (auto& s : seqs) {
        validate_grammar(s, set);
        out.sequences.push_back(std::move(s));
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    out.failures.push_back(p.string() + ": " + e.what());
  }
}

}  // namespace

void PipelineConfig::validate() const {
  if (ucw_vocab_size == 0) throw ConfigError("ucw_vocab_size must be positive");
  if (n_max < 2) throw ConfigError("n_max must be at least 2");
  if (ngram_min_freq < 1) throw ConfigError("ngram_min_freq must be positive");
  if (max_ngrams < 1) throw ConfigError("max_ngrams must be positive");
  if (steps < 0 || epochs < 0) throw ConfigError("steps and epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
}

ModelConfig PipelineConfig::model_for(int vocab_size, int ngram_vocab_size) const {
  ModelConfig m = model;
  m.vocab_size = vocab_size;
  m.ngram_vocab_size = ngram_vocab_size;
  m.max_ngrams = std::min(max_ngrams, m.max_seq_len);
  m.validate();
  return m;
}

std::string PipelineConfig::serialize() const {
  std::ostringstream out;
  out << "event_set=" << event_set_name(event_set) << '\n'
      << "ucw_vocab_size=" << ucw_vocab_size << '\n'
      << "n_max=" << n_max << '\n'
      << "ngram_min_freq=" << ngram_min_freq << '\n'
      << "max_ngrams=" << max_ngrams << '\n'
      << "seed=" << seed << '\n'
      << "steps=" << steps << '\n'
      << "batch_size=" << batch_size << '\n'
      << "lr=" << lr << '\n'
      << "warmup_steps=" << warmup_steps << '\n'
      << "epochs=" << epochs << '\n';
  std::istringstream model_lines(model.serialize());
  std::string line;
  while (std::getline(model_lines, line)) out << "model." << line << '\n';
  return out.str();
}

void apply_config_text(PipelineConfig& c, std::istream& in, const std::string& source_name) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const auto int_field = [](int& f) -> Setter {
    return [&f](const std::string& v, const std::string& k) { f = to_number<int>(v, k); };
  };
  const auto real_field = [](double& f) -> Setter {
    return [&f](const std::string& v, const std::string& k) {
      char* end = nullptr;
      f = std::strtod(v.c_str(), &end);
      if (v.empty() || *end != '\0') throw ConfigError("bad value for " + k + ": '" + v + "'");
    };
  };
  const std::map<std::string, Setter> setters = {
      {"event_set",
       [&](const std::string& v, const std::string&) {
         try {
           c.event_set = parse_event_set(v);
         } catch (const Error& e) {
           throw ConfigError(e.what());
         }
       }},
      {"ucw_vocab_size", [&](const std::string& v, const std::string& k) { c.ucw_vocab_size = to_number<std::size_t>(v, k); }},
      {"n_max", int_field(c.n_max)},
      {"ngram_min_freq", [&](const std::string& v, const std::string& k) { c.ngram_min_freq = to_number<std::int64_t>(v, k); }},
      {"max_ngrams", int_field(c.max_ngrams)},
      {"seed", [&](const std::string& v, const std::string& k) { c.seed = to_number<std::uint64_t>(v, k); }},
      {"steps", int_field(c.steps)},
      {"batch_size", int_field(c.batch_size)},
      {"lr", real_field(c.lr)},
      {"warmup_steps", int_field(c.warmup_steps)},
      {"epochs", int_field(c.epochs)},
      {"model.layers_main", int_field(c.model.layers_main)},
      {"model.layers_ngram", int_field(c.model.layers_ngram)},
      {"model.hidden_dim", int_field(c.model.hidden_dim)},
      {"model.heads", int_field(c.model.heads)},
      {"model.ffn_dim", int_field(c.model.ffn_dim)},
      {"model.max_seq_len", int_field(c.model.max_seq_len)},
      {"model.max_ngrams", int_field(c.model.max_ngrams)},
      {"model.vocab_size", int_field(c.model.vocab_size)},
      {"model.ngram_vocab_size", int_field(c.model.ngram_vocab_size)},
      {"model.seq_classes", int_field(c.model.seq_classes)},
      {"model.token_classes", int_field(c.model.token_classes)},
      {"model.mask_rate", real_field(c.model.mask_rate)},
      {"model.init_std", real_field(c.model.init_std)},
      {"model.ln_eps", real_field(c.model.ln_eps)},
  };
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source_name + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + "unknown key '" + key + "'");
    try {
      it->second(value, key);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void apply_config_file(PipelineConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  apply_config_text(config, in, path);
}

void apply_environment(PipelineConfig& config) {
  if (const char* s = std::getenv("NGMF_SEED"); s != nullptr && *s != '\0') {
    config.seed = to_number<std::uint64_t>(s, "NGMF_SEED");
  }
}

LoadedCorpus load_corpus(const std::string& path, EventSet set) {
  LoadedCorpus out;
  const fs::path root(path);
  std::error_code ec;
  if (fs::is_directory(root, ec)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension().string();
      if (is_midi_name(entry.path()) || ext == ".txt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) load_one(f, set, out);
    return out;
  }
  if (!fs::exists(root, ec)) throw DataError("input not found: " + path);
  load_one(root, set, out);
  return out;
}

std::uint64_t corpus_hash(const std::vector<RemiSequence>& corpus) {
  std::ostringstream text;
  format_text_corpus(text, corpus);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char ch : text.str()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

UcwVocab VocabCache::get(const std::vector<RemiSequence>& corpus, std::size_t size) {
  const std::uint64_t h = corpus_hash(corpus);
  if (h != hash_) {
    largest_.reset();
    hash_ = h;
  }
  if (!largest_ || largest_->target_size < size) {
    std::optional<std::string> file;
    if (dir_) {
      char name[64];
      std::snprintf(name, sizeof name, "ucw-%016llx-%zu.vocab", static_cast<unsigned long long>(h), size);
      file = (fs::path(*dir_) / name).string();
      // Any cached vocabulary at least as large serves through its prefix.
      std::error_code ec;
      if (fs::is_directory(*dir_, ec)) {
        char stem[40];
        std::snprintf(stem, sizeof stem, "ucw-%016llx-", static_cast<unsigned long long>(h));
        for (const auto& entry : fs::directory_iterator(*dir_)) {
          const std::string fname = entry.path().filename().string();
          if (!fname.starts_with(stem)) continue;
          std::size_t trained_to = 0;
          if (std::sscanf(fname.c_str() + std::strlen(stem), "%zu.vocab", &trained_to) != 1) continue;
          if (trained_to < size || (largest_ && trained_to <= largest_->target_size)) continue;
          largest_ = read_vocab_file(entry.path().string());
          largest_->target_size = trained_to;
        }
      }
    }
    if (!largest_ || largest_->target_size < size) {
      largest_ = train_ucw(corpus, size).vocab;
      ++trainings_;
      if (file) {
        fs::create_directories(*dir_);
        write_vocab_file(*largest_, *file);
      }
    }
  }
  if (size < largest_->base.size()) {
    throw ConfigError("vocab size " + std::to_string(size) + " is below the base alphabet of " +
                      std::to_string(largest_->base.size()));
  }
  UcwVocab v = largest_->prefix(std::min(largest_->merges.size(), size - largest_->base.size()));
  v.target_size = size;
  return v;
}

LengthSummary summarize(const std::vector<std::size_t>& lengths) {
  LengthSummary s;
  if (lengths.empty()) return s;
  std::vector<std::size_t> sorted = lengths;
  std::sort(sorted.begin(), sorted.end());
  double total = 0.0;
  for (const auto l : sorted) total += static_cast<double>(l);
  s.mean = total / static_cast<double>(sorted.size());
  const std::size_t n = sorted.size();
  s.median = n % 2 ? static_cast<double>(sorted[n / 2])
                   : 0.5 * static_cast<double>(sorted[n / 2 - 1] + sorted[n / 2]);
  return s;
}

StatsReport compute_stats(const std::vector<RemiSequence>& corpus, std::vector<std::size_t> sizes,
                          VocabCache& cache) {
  if (corpus.empty()) throw DataError("no input sequences");
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  if (sizes.empty()) throw ConfigError("no vocab sizes requested");

  bool cp4 = true;
  for (const auto& s : corpus) {
    for (const auto& e : s.events) cp4 = cp4 && includes(EventSet::kCp4, e.kind);
  }
  const EventSet set = cp4 ? EventSet::kCp4 : EventSet::kCp7;
  std::vector<std::size_t> remi_len, cp_len;
  for (const auto& s : corpus) {
    remi_len.push_back(s.size());
    cp_len.push_back(encode_cp(s, set).size());
  }
  std::size_t remi_total = 0, cp_total = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    remi_total += remi_len[i];
    cp_total += cp_len[i];
  }

  // Train once at the largest size so every smaller size is a prefix.
  const UcwVocab largest = cache.get(corpus, sizes.back());
  StatsReport report;
  report.sequences = corpus.size();
  report.base_size = largest.base.size();
  for (const std::size_t size : sizes) {
    const UcwVocab vocab = cache.get(corpus, size);
    const UcwSegmenter segmenter(vocab);
    std::vector<std::size_t> ucw_len;
    std::size_t ucw_total = 0;
    for (const auto& s : corpus) {
      ucw_len.push_back(segmenter.segment(s).size());
      ucw_total += ucw_len.back();
    }
    StatsRow row;
    row.requested_size = size;
    row.vocab_size = vocab.size();
    row.merges = vocab.merges.size();
    row.remi = summarize(remi_len);
    row.cp = summarize(cp_len);
    row.ucw = summarize(ucw_len);
    row.ucw_over_remi = remi_total ? static_cast<double>(ucw_total) / static_cast<double>(remi_total) : 0.0;
    row.ucw_over_cp = cp_total ? static_cast<double>(ucw_total) / static_cast<double>(cp_total) : 0.0;
    if (!report.rows.empty() && row.ucw.mean > report.rows.back().ucw.mean) report.monotonic = false;
    report.rows.push_back(row);
  }
  return report;
}

void print_stats(std::ostream& out, const StatsReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %-7s %-10s %-10s %-10s %-10s %-10s %-10s %-9s %-9s\n", "vocab", "merges",
                "remi_mean", "remi_med", "cp_mean", "cp_med", "ucw_mean", "ucw_med", "ucw/remi", "ucw/cp");
  out << buf;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%-8zu %-7zu %-10.2f %-10.1f %-10.2f %-10.1f %-10.2f %-10.1f %-9.4f %-9.4f\n",
                  r.vocab_size, r.merges, r.remi.mean, r.remi.median, r.cp.mean, r.cp.median, r.ucw.mean,
                  r.ucw.median, r.ucw_over_remi, r.ucw_over_cp);
    out << buf;
  }
  out << "reference band for ucw/remi at vocab 1000: 0.70-0.80\n";
  out << "##sequences=" << report.sequences << '\n';
  out << "##base_size=" << report.base_size << '\n';
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf,
                  "##vocab_size=%zu merges=%zu remi_mean=%.6f cp_mean=%.6f ucw_mean=%.6f ucw_median=%.1f "
                  "ucw_over_remi=%.6f ucw_over_cp=%.6f\n",
                  r.vocab_size, r.merges, r.remi.mean, r.cp.mean, r.ucw.mean, r.ucw.median, r.ucw_over_remi,
                  r.ucw_over_cp);
    out << buf;
  }
  out << "##reference_ucw_over_remi=0.70-0.80\n";
  out << "##monotonic=" << (report.monotonic ? "true" : "false") << '\n';
  if (!report.monotonic) out << "warning: mean UCW length grew with vocabulary size\n";
}

std::vector<EncodedSequence> encode_corpus(const std::vector<UcwSequence>& segmented, const UcwVocab& vocab,
                                           const NgramVocab& grams, const ModelConfig& config) {
  const TokenTable table(vocab);
  std::vector<EncodedSequence> out;
  out.reserve(segmented.size());
  for (const auto& s : segmented) out.push_back(encode_sequence(s, table, grams, config));
  return out;
}

}  // namespace ngmf
