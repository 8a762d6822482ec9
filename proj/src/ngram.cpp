#include "ngmf/ngram.h"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "ngmf/corpus_io.h"
#include "ngmf/error.h"

namespace ngmf {
namespace {

std::string gram_key(const std::string* first, std::size_t length) {
  std::string key;
  for (std::size_t i = 0; i < length; ++i) {
    if (i) key += ' ';
    key += first[i];
  }
  return key;
}

template <typename T>
T parse_number(std::string_view s, const std::string& what) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ParseError("bad " + what + " '" + std::string(s) + "'");
  return v;
}

}  // namespace

std::size_t NgramVocab::add(TokenSeq tokens, std::int64_t frequency) {
  if (tokens.size() < 2 || static_cast<int>(tokens.size()) > n_max_) {
    throw ConfigError("gram length " + std::to_string(tokens.size()) + " outside [2, " +
                      std::to_string(n_max_) + "]");
  }
  if (frequency < min_freq_) throw ConfigError("gram frequency below min_freq");
  std::string key = gram_key(tokens.data(), tokens.size());
  const std::size_t id = entries_.size();
  if (!index_.try_emplace(std::move(key), id).second) throw ConfigError("duplicate gram");
  entries_.push_back({std::move(tokens), frequency});
  return id;
}

std::optional<std::size_t> NgramVocab::find(const TokenSeq& tokens) const {
  return find(tokens.data(), tokens.size());
}

std::optional<std::size_t> NgramVocab::find(const std::string* first, std::size_t length) const {
  const auto it = index_.find(gram_key(first, length));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

NgramVocab harvest_ngrams(const std::vector<TokenSeq>& corpus, int n_max, std::int64_t min_freq) {
  if (n_max < 2) throw ConfigError("n_max must be at least 2");
  if (min_freq < 1) throw ConfigError("min_freq must be at least 1");

  struct Count {
    std::int64_t freq = 0;
    std::int64_t first = 0;
    const TokenSeq* seq = nullptr;
    std::size_t start = 0;
    std::size_t length = 0;
  };
  std::unordered_map<std::string, Count> counts;
  std::int64_t ordinal = 0;
  for (const TokenSeq& seq : corpus) {
    for (std::size_t start = 0; start < seq.size(); ++start) {
      for (std::size_t len = 2; len <= static_cast<std::size_t>(n_max) && start + len <= seq.size(); ++len) {
        auto [it, inserted] = counts.try_emplace(gram_key(seq.data() + start, len));
        if (inserted) it->second = {0, ordinal, &seq, start, len};
        ++it->second.freq;
        ++ordinal;
      }
    }
  }

  std::vector<const Count*> kept;
  for (const auto& [key, c] : counts) {
    if (c.freq >= min_freq) kept.push_back(&c);
  }
  std::sort(kept.begin(), kept.end(), [](const Count* a, const Count* b) {
    return std::tie(b->freq, a->first) < std::tie(a->freq, b->first);
  });

  NgramVocab vocab(n_max, min_freq);
  for (const Count* c : kept) {
    const auto first = c->seq->begin() + static_cast<std::ptrdiff_t>(c->start);
    vocab.add(TokenSeq(first, first + static_cast<std::ptrdiff_t>(c->length)), c->freq);
  }
  return vocab;
}

NgramHarvestStats harvest_stats(const std::vector<TokenSeq>& corpus, const NgramVocab& vocab) {
  std::unordered_map<std::string, int> seen;
  for (const TokenSeq& seq : corpus) {
    for (std::size_t start = 0; start < seq.size(); ++start) {
      for (std::size_t len = 2; len <= static_cast<std::size_t>(vocab.n_max()) && start + len <= seq.size(); ++len) {
        seen.try_emplace(gram_key(seq.data() + start, len), 0);
      }
    }
  }
  return {seen.size(), vocab.size()};
}

std::vector<NgramMatch> match_sequence(const TokenSeq& seq, const NgramVocab& vocab,
                                       std::size_t max_grams) {
  struct Found {
    std::size_t first_start;
    std::vector<std::size_t> starts;
  };
  std::map<std::size_t, Found> found;  // gram id -> occurrences
  for (std::size_t start = 0; start < seq.size(); ++start) {
    for (std::size_t len = 2; len <= static_cast<std::size_t>(vocab.n_max()) && start + len <= seq.size(); ++len) {
      if (const auto id = vocab.find(seq.data() + start, len)) {
        auto [it, inserted] = found.try_emplace(*id, Found{start, {}});
        it->second.starts.push_back(start);
      }
    }
  }

  std::vector<std::size_t> ids;
  for (const auto& [id, f] : found) ids.push_back(id);
  std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
    const auto fa = vocab.entry(a).frequency;
    const auto fb = vocab.entry(b).frequency;
    return std::make_tuple(-fa, found.at(a).first_start, a) < std::make_tuple(-fb, found.at(b).first_start, b);
  });
  if (ids.size() > max_grams) ids.resize(max_grams);

  std::vector<NgramMatch> out;
  for (std::size_t slot = 0; slot < ids.size(); ++slot) {
    const auto& e = vocab.entry(ids[slot]);
    for (const std::size_t start : found.at(ids[slot]).starts) {
      out.push_back({ids[slot], slot, start, e.tokens.size(), e.frequency});
    }
  }
  return out;
}

std::size_t slot_count(const std::vector<NgramMatch>& matches) {
  std::size_t n = 0;
  for (const auto& m : matches) n = std::max(n, m.slot + 1);
  return n;
}

PositionMatrix build_position_matrix(const std::vector<NgramMatch>& matches, std::size_t rows,
                                     std::size_t cols, std::size_t row_offset) {
  PositionMatrix p(rows, cols);
  for (const NgramMatch& m : matches) {
    if (m.slot >= cols) throw ShapeError("gram slot " + std::to_string(m.slot) + " >= " + std::to_string(cols));
    if (row_offset + m.start + m.length > rows) {
      throw ShapeError("gram span [" + std::to_string(m.start) + ", " + std::to_string(m.start + m.length) +
                       ") exceeds " + std::to_string(rows) + " rows");
    }
    for (std::size_t i = 0; i < m.length; ++i) {
      p.at(row_offset + m.start + i, m.slot) = static_cast<double>(m.frequency);
    }
  }
  return p;
}

PositionMatrix normalize_rows(const PositionMatrix& raw, double epsilon) {
  PositionMatrix p = raw;
  for (std::size_t i = 0; i < p.rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < p.cols; ++j) sum += p.at(i, j);
    for (std::size_t j = 0; j < p.cols; ++j) p.at(i, j) /= sum + epsilon;
  }
  return p;
}

void write_ngram_vocab(std::ostream& out, const NgramVocab& vocab) {
  out << "ngram-vocab v1 n_max=" << vocab.n_max() << " min_freq=" << vocab.min_freq() << '\n';
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    const auto& e = vocab.entry(id);
    out << id << '\t' << e.frequency << '\t' << join(e.tokens, " ") << '\n';
  }
}

void write_ngram_vocab_file(const NgramVocab& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  write_ngram_vocab(out, vocab);
}

NgramVocab read_ngram_vocab(std::istream& in, const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source_name + ": empty n-gram vocab");
  const auto header = split_ws(line);
  if (header.size() != 4 || header[0] != "ngram-vocab" || header[1] != "v1" ||
      !header[2].starts_with("n_max=") || !header[3].starts_with("min_freq=")) {
    throw ParseError(source_name + ":1: expected 'ngram-vocab v1 n_max=<n> min_freq=<f>'");
  }
  NgramVocab vocab(parse_number<int>(std::string_view(header[2]).substr(6), "n_max"),
                   parse_number<std::int64_t>(std::string_view(header[3]).substr(9), "min_freq"));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    const std::string where = source_name + ":" + std::to_string(line_no) + ": ";
    if (t2 == std::string::npos) throw ParseError(where + "expected '<id>\\t<freq>\\t<tokens>'");
    try {
      const auto id = parse_number<std::size_t>(std::string_view(line).substr(0, t1), "gram id");
      if (id != vocab.size()) throw ParseError("gram ids must be dense from 0");
      const auto freq = parse_number<std::int64_t>(std::string_view(line).substr(t1 + 1, t2 - t1 - 1), "frequency");
      vocab.add(split_ws(line.substr(t2 + 1)), freq);
    } catch (const Error& e) {
      throw ParseError(where + e.what());
    }
  }
  return vocab;
}

NgramVocab read_ngram_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open n-gram vocab " + path);
  return read_ngram_vocab(in, path);
}

std::string format_sparse(const PositionMatrix& m) {
  std::string out;
  char buf[96];
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      const double w = m.at(i, j);
      if (w == 0.0) continue;
      std::snprintf(buf, sizeof buf, "(%zu, %zu, %.17g)", i, j, w);
      if (!out.empty()) out += ' ';
      out += buf;
    }
  }
  return out;
}

PositionMatrix parse_sparse(const std::string& line, std::size_t rows, std::size_t cols) {
  PositionMatrix m(rows, cols);
  std::size_t pos = 0;
  while (true) {
    pos = line.find('(', pos);
    if (pos == std::string::npos) break;
    const auto close = line.find(')', pos);
    if (close == std::string::npos) throw ParseError("unterminated triplet in '" + line + "'");
    std::size_t i = 0, j = 0;
    double w = 0.0;
    if (std::sscanf(line.substr(pos + 1, close - pos - 1).c_str(), "%zu , %zu , %lf", &i, &j, &w) != 3) {
      throw ParseError("bad triplet in '" + line + "'");
    }
    if (i >= rows || j >= cols) throw ShapeError("triplet outside matrix bounds");
    m.at(i, j) = w;
    pos = close + 1;
  }
  return m;
}

}  // namespace ngmf
