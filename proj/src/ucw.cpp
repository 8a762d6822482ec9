#include "ngmf/ucw.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "ngmf/corpus_io.h"
#include "ngmf/error.h"

namespace ngmf {
namespace {

using Symbol = std::int32_t;
using SymbolWord = std::vector<Symbol>;

std::uint64_t pair_key(Symbol a, Symbol b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

class SymbolTable {
 public:
  Symbol intern(const std::string& text) {
    const auto [it, inserted] = ids_.try_emplace(text, static_cast<Symbol>(names_.size()));
    if (inserted) names_.push_back(text);
    return it->second;
  }
  std::optional<Symbol> find(const std::string& text) const {
    const auto it = ids_.find(text);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& name(Symbol s) const { return names_[static_cast<std::size_t>(s)]; }

 private:
  std::unordered_map<std::string, Symbol> ids_;
  std::vector<std::string> names_;
};

// Replaces every non-overlapping (a, b) scanning left to right.
bool replace_pair(SymbolWord& word, Symbol a, Symbol b, Symbol merged) {
  bool changed = false;
  std::size_t out = 0;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (i + 1 < word.size() && word[i] == a && word[i + 1] == b) {
      word[out++] = merged;
      ++i;
      changed = true;
    } else {
      word[out++] = word[i];
    }
  }
  word.resize(out);
  return changed;
}

struct SymbolWordHash {
  std::size_t operator()(const SymbolWord& w) const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (const Symbol s : w) {
      h ^= static_cast<std::uint32_t>(s);
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h);
  }
};

Family token_family(const std::string& token) {
  const auto plus = token.find(kJoiner);
  return family_of(parse_event(token.substr(0, plus)).kind);
}

}  // namespace

UcwVocab UcwVocab::prefix(std::size_t n) const {
  UcwVocab out;
  out.base = base;
  out.merges.assign(merges.begin(), merges.begin() + static_cast<std::ptrdiff_t>(std::min(n, merges.size())));
  out.target_size = out.size();
  return out;
}

std::vector<std::string> split_token(const std::string& token) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto plus = token.find(kJoiner, start);
    out.push_back(token.substr(start, plus - start));
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  return out;
}

std::string merge_text(const std::string& left, const std::string& right) {
  return left + kJoiner + right;
}

PairCounts count_pairs(const std::vector<std::vector<TokenWord>>& corpus) {
  PairCounts counts;
  for (const auto& seq : corpus) {
    for (const auto& word : seq) {
      for (std::size_t i = 0; i + 1 < word.size(); ++i) ++counts[{word[i], word[i + 1]}];
    }
  }
  return counts;
}

std::vector<std::vector<TokenWord>> family_word_corpus(const std::vector<RemiSequence>& corpus) {
  std::vector<std::vector<TokenWord>> out;
  out.reserve(corpus.size());
  for (const auto& seq : corpus) {
    std::vector<TokenWord> words;
    for (const auto& w : group_families(seq)) {
      TokenWord tw;
      for (const auto& e : w.events) tw.push_back(e.name());
      words.push_back(std::move(tw));
    }
    out.push_back(std::move(words));
  }
  return out;
}

UcwTrainResult train_ucw(const std::vector<RemiSequence>& corpus, std::size_t target_vocab_size) {
  SymbolTable symbols;
  UcwTrainResult result;
  UcwVocab& vocab = result.vocab;
  vocab.target_size = target_vocab_size;

  // Identical words share one entry; entries keep corpus first-appearance
  // order so a scan over them visits pairs in corpus scan order.
  std::vector<SymbolWord> unique_words;
  std::vector<std::int64_t> word_counts;
  std::vector<Family> word_families;
  std::unordered_map<SymbolWord, std::size_t, SymbolWordHash> word_index;
  std::vector<std::vector<std::size_t>> seq_words(corpus.size());

  for (std::size_t s = 0; s < corpus.size(); ++s) {
    for (const FamilyWord& w : group_families(corpus[s])) {
      SymbolWord sw;
      for (const RemiEvent& e : w.events) {
        const std::string name = e.name();
        vocab.base.insert(name);
        sw.push_back(symbols.intern(name));
      }
      const auto [it, inserted] = word_index.try_emplace(sw, unique_words.size());
      if (inserted) {
        unique_words.push_back(std::move(sw));
        word_counts.push_back(0);
        word_families.push_back(w.family);
      }
      ++word_counts[it->second];
      seq_words[s].push_back(it->second);
    }
  }
  if (target_vocab_size < vocab.base.size()) {
    throw ConfigError("target vocab size " + std::to_string(target_vocab_size) +
                      " is below the base vocabulary size " + std::to_string(vocab.base.size()));
  }

  struct PairStat {
    std::int64_t freq = 0;
    std::int64_t first = 0;
  };
  std::unordered_map<std::uint64_t, PairStat> stats;
  while (vocab.size() < target_vocab_size) {
    stats.clear();
    std::int64_t ordinal = 0;
    for (std::size_t w = 0; w < unique_words.size(); ++w) {
      const SymbolWord& word = unique_words[w];
      for (std::size_t i = 0; i + 1 < word.size(); ++i) {
        auto [it, inserted] = stats.try_emplace(pair_key(word[i], word[i + 1]));
        if (inserted) it->second.first = ordinal;
        it->second.freq += word_counts[w];
        ++ordinal;
      }
    }
    std::uint64_t best_key = 0;
    PairStat best{0, std::numeric_limits<std::int64_t>::max()};
    for (const auto& [key, st] : stats) {
      if (st.freq > best.freq || (st.freq == best.freq && st.first < best.first)) {
        best = st;
        best_key = key;
      }
    }
    if (best.freq < 2) break;

    const Symbol a = static_cast<Symbol>(best_key >> 32);
    const Symbol b = static_cast<Symbol>(best_key & 0xFFFFFFFFu);
    MergeRule rule{symbols.name(a), symbols.name(b), merge_text(symbols.name(a), symbols.name(b)),
                   static_cast<int>(vocab.merges.size())};
    const Symbol merged = symbols.intern(rule.merged);
    vocab.merges.push_back(std::move(rule));
    for (SymbolWord& word : unique_words) replace_pair(word, a, b, merged);
  }

  result.segmented.reserve(corpus.size());
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    UcwSequence out;
    out.source_id = corpus[s].source_id;
    for (const std::size_t w : seq_words[s]) {
      for (const Symbol sym : unique_words[w]) {
        out.tokens.push_back(symbols.name(sym));
        out.families.push_back(word_families[w]);
      }
    }
    result.segmented.push_back(std::move(out));
  }
  return result;
}

struct UcwSegmenter::Impl {
  SymbolTable symbols;
  std::unordered_map<std::uint64_t, std::pair<int, Symbol>> rules;  // pair -> (rank, merged)
  std::set<std::string> base;
  UnknownEventPolicy policy;
  mutable std::unordered_map<SymbolWord, SymbolWord, SymbolWordHash> cache;

  SymbolWord apply(const SymbolWord& word) const {
    if (const auto it = cache.find(word); it != cache.end()) return it->second;
    SymbolWord w = word;
    int floor = 0;
    while (w.size() > 1) {
      int best_rank = std::numeric_limits<int>::max();
      std::uint64_t best_key = 0;
      for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        const auto key = pair_key(w[i], w[i + 1]);
        const auto r = rules.find(key);
        if (r != rules.end() && r->second.first >= floor && r->second.first < best_rank) {
          best_rank = r->second.first;
          best_key = key;
        }
      }
      if (best_rank == std::numeric_limits<int>::max()) break;
      replace_pair(w, static_cast<Symbol>(best_key >> 32), static_cast<Symbol>(best_key & 0xFFFFFFFFu),
                   rules.at(best_key).second);
      floor = best_rank + 1;
    }
    cache.emplace(word, w);
    return w;
  }
};

UcwSegmenter::UcwSegmenter(const UcwVocab& vocab, UnknownEventPolicy policy)
    : impl_(std::make_unique<Impl>()) {
  impl_->base = vocab.base;
  impl_->policy = policy;
  for (const auto& name : vocab.base) impl_->symbols.intern(name);
  for (const MergeRule& m : vocab.merges) {
    const Symbol a = impl_->symbols.intern(m.left);
    const Symbol b = impl_->symbols.intern(m.right);
    const Symbol c = impl_->symbols.intern(m.merged);
    impl_->rules.try_emplace(pair_key(a, b), m.rank, c);
  }
}

UcwSegmenter::~UcwSegmenter() = default;
UcwSegmenter::UcwSegmenter(UcwSegmenter&&) noexcept = default;
UcwSegmenter& UcwSegmenter::operator=(UcwSegmenter&&) noexcept = default;

UcwSequence UcwSegmenter::segment(const RemiSequence& seq) const {
  UcwSequence out;
  out.source_id = seq.source_id;
  for (const FamilyWord& w : group_families(seq)) {
    SymbolWord sw;
    for (const RemiEvent& e : w.events) {
      const std::string name = e.name();
      if (!impl_->base.contains(name) && impl_->policy == UnknownEventPolicy::kError) {
        throw DataError(seq.source_id + ": event '" + name + "' is not in the base vocabulary");
      }
      sw.push_back(impl_->symbols.intern(name));
    }
    for (const Symbol s : impl_->apply(sw)) {
      out.tokens.push_back(impl_->symbols.name(s));
      out.families.push_back(w.family);
    }
  }
  return out;
}

UcwSequence segment(const RemiSequence& seq, const UcwVocab& vocab, UnknownEventPolicy policy) {
  return UcwSegmenter(vocab, policy).segment(seq);
}

void write_vocab(std::ostream& out, const UcwVocab& vocab) {
  out << "ucw-vocab v1 size=" << vocab.size() << '\n';
  for (const MergeRule& m : vocab.merges) out << m.rank << '\t' << m.left << '\t' << m.right << '\n';
  for (const std::string& b : vocab.base) out << "base\t" << b << '\n';
}

void write_vocab_file(const UcwVocab& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  write_vocab(out, vocab);
}

UcwVocab read_vocab(std::istream& in, const std::string& source_name) {
  const auto fail = [&](std::size_t line, const std::string& why) {
    throw ParseError(source_name + ":" + std::to_string(line) + ": " + why);
  };
  std::string line;
  if (!std::getline(in, line)) fail(1, "empty vocab file");
  constexpr std::string_view kHeader = "ucw-vocab v1 size=";
  if (!line.starts_with(kHeader)) fail(1, "expected header '" + std::string(kHeader) + "<n>'");
  std::size_t declared = 0;
  {
    const std::string_view num = std::string_view(line).substr(kHeader.size());
    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), declared);
    if (ec != std::errc() || p != num.data() + num.size()) fail(1, "bad size in header");
  }

  UcwVocab vocab;
  std::set<std::string> known;
  std::vector<MergeRule> merges;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() == 2 && f[0] == "base") {
      try {
        if (parse_event(f[1]).name() != f[1]) fail(line_no, "non-canonical base event");
      } catch (const ParseError& e) {
        fail(line_no, e.what());
      }
      vocab.base.insert(f[1]);
      continue;
    }
    if (f.size() != 3) fail(line_no, "expected '<rank>\\t<left>\\t<right>'");
    int rank = 0;
    auto [p, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), rank);
    if (ec != std::errc() || p != f[0].data() + f[0].size()) fail(line_no, "bad rank");
    if (rank != static_cast<int>(merges.size())) fail(line_no, "ranks must be dense from 0");
    merges.push_back({f[1], f[2], merge_text(f[1], f[2]), rank});
  }
  for (const auto& m : merges) {
    for (const std::string* side : {&m.left, &m.right}) {
      for (const auto& part : split_token(*side)) {
        if (!vocab.base.contains(part)) {
          fail(0, "merge " + std::to_string(m.rank) + " uses '" + part + "' outside the base set");
        }
      }
    }
  }
  vocab.merges = std::move(merges);
  if (vocab.size() != declared) {
    throw ParseError(source_name + ": header size " + std::to_string(declared) +
                     " does not match " + std::to_string(vocab.size()) + " entries");
  }
  vocab.target_size = declared;
  return vocab;
}

UcwVocab read_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vocab " + path);
  return read_vocab(in, path);
}

void write_segmented(std::ostream& out, const std::vector<UcwSequence>& seqs) {
  for (const auto& s : seqs) out << join(s.tokens, " ") << '\n';
}

std::vector<UcwSequence> read_segmented(std::istream& in, const std::string& source_name) {
  std::vector<UcwSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    UcwSequence seq;
    seq.source_id = source_name + ":" + std::to_string(line_no);
    seq.tokens = split_ws(line);
    if (seq.tokens.empty()) continue;
    try {
      for (const auto& t : seq.tokens) {
        for (const auto& part : split_token(t)) parse_event(part);
        seq.families.push_back(token_family(t));
      }
    } catch (const ParseError& e) {
      throw ParseError(seq.source_id + ": " + e.what());
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace ngmf
