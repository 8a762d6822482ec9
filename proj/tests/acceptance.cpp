// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli_support.h"
#include "model_fixtures.h"
#include "ngmf/corpus_io.h"
#include "ngmf/model.h"
#include "ngmf/ngram.h"
#include "ngmf/pipeline.h"
#include "ngmf/synthetic.h"
#include "ngmf/training.h"
#include "ngmf/ucw.h"
#include "oracles.h"
#include "synthetic_setup.h"
#include "test_support.h"

namespace ngmf {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

oracle::Corpus oracle_corpus(const std::vector<RemiSequence>& corpus) {
  oracle::Corpus out;
  for (const auto& s : corpus) out.push_back(oracle::words_of(s.names()));
  return out;
}

oracle::Word flatten(const std::vector<oracle::Word>& words) {
  oracle::Word flat;
  for (const auto& w : words) flat.insert(flat.end(), w.begin(), w.end());
  return flat;
}

// Golden walkthrough: two merges and the flattened final state of the
// worked example.
Outcome ac1() {
  Outcome o;
  const auto r = train_ucw({testing::fragment()}, 1000);
  const std::vector<std::pair<std::string, std::string>> merges = {{"Pitch_71", "Duration_1080"},
                                                                   {"Duration_1560", "Velocity_90"}};
  const std::vector<std::string> final_state = {
      "Bar",      "Beat_0", "Tempo_119", "G_M", "Pitch_71+Duration_1080", "Velocity_90",
      "Pitch_69", "Duration_1560+Velocity_90", "Bar", "D_7", "Pitch_71+Duration_1080", "Velocity_88",
      "Pitch_73", "Duration_1560+Velocity_90"};
  o.require(r.vocab.merges.size() == 2, "expected 2 merges, got " + std::to_string(r.vocab.merges.size()));
  for (std::size_t k = 0; o.ok && k < 2; ++k) {
    o.require(r.vocab.merges[k].left == merges[k].first && r.vocab.merges[k].right == merges[k].second,
              "merge " + std::to_string(k + 1) + " differs");
  }
  o.require(r.segmented.size() == 1 && r.segmented[0].tokens == final_state, "final state differs");
  o.require(segment(testing::fragment(), r.vocab).tokens == final_state, "segmenter differs from trainer");
  if (o.ok) o.detail = "merges=2 tokens=14/18";
  return o;
}

Outcome ac2() {
  Outcome o;
  std::mt19937_64 rng(2024);
  for (int t = 0; o.ok && t < 50; ++t) {
    std::vector<RemiSequence> corpus;
    std::size_t budget = 200;
    while (budget >= 8) {
      auto s = testing::random_sequence(rng, std::min<std::size_t>(budget, 80), "s" + std::to_string(corpus.size()));
      if (s.size() > budget) break;
      budget -= s.size();
      corpus.push_back(std::move(s));
      if (rng() % 3 == 0) break;
    }
    if (corpus.empty()) corpus.push_back(testing::fragment());
    const auto base = train_ucw(corpus, 1000).vocab.base.size();
    const auto r = train_ucw(corpus, base + 20);
    const auto want = oracle::bpe(oracle_corpus(corpus), base + 20);
    const std::string where = "corpus " + std::to_string(t) + ": ";
    o.require(r.vocab.merges.size() == want.merges.size(), where + "merge count");
    for (std::size_t k = 0; o.ok && k < want.merges.size(); ++k) {
      o.require(r.vocab.merges[k].left == want.merges[k].first && r.vocab.merges[k].right == want.merges[k].second,
                where + "merge " + std::to_string(k + 1));
    }
    const UcwSegmenter seg(r.vocab);
    for (std::size_t s = 0; o.ok && s < corpus.size(); ++s) {
      o.require(r.segmented[s].tokens == flatten(want.state[s]), where + "final state");
      o.require(seg.segment(corpus[s]).tokens == r.segmented[s].tokens, where + "segment() != final state");
    }
  }
  if (o.ok) o.detail = "50 corpora";
  return o;
}

std::vector<TokenSeq> random_token_corpus(std::mt19937_64& rng, int seqs, int max_len, int alphabet) {
  std::vector<TokenSeq> out;
  for (int s = 0; s < seqs; ++s) {
    TokenSeq seq;
    const int len = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_len));
    for (int i = 0; i < len; ++i) seq.push_back("t" + std::to_string(rng() % static_cast<std::uint64_t>(alphabet)));
    out.push_back(std::move(seq));
  }
  return out;
}

Outcome ac3() {
  Outcome o;
  std::mt19937_64 rng(3);
  for (int t = 0; o.ok && t < 20; ++t) {
    const auto corpus = random_token_corpus(rng, 8, 50, 5);
    for (int n_max = 2; o.ok && n_max <= 4; ++n_max) {
      const auto vocab = harvest_ngrams(corpus, n_max, 1);
      const auto want = oracle::window_counts(corpus, n_max);
      o.require(vocab.size() == want.size(), "distinct gram count");
      for (const auto& [toks, freq] : want) {
        const auto id = vocab.find(toks);
        o.require(id && vocab.entry(*id).frequency == freq, "frequency of " + join(toks, " "));
      }
    }
  }
  if (o.ok) o.detail = "20 corpora x n_max {2,3,4}";
  return o;
}

Outcome ac4() {
  Outcome o;
  std::mt19937_64 rng(4);
  for (int t = 0; o.ok && t < 100; ++t) {
    const auto corpus = random_token_corpus(rng, 6, 40, 3 + static_cast<int>(rng() % 4));
    const auto vocab = harvest_ngrams(corpus, 2 + static_cast<int>(rng() % 3), 1 + static_cast<std::int64_t>(rng() % 3));
    const TokenSeq& seq = corpus[rng() % corpus.size()];
    const auto matches = match_sequence(seq, vocab, 1 + rng() % 12);
    const std::size_t cols = slot_count(matches);
    const auto p = normalize_rows(build_position_matrix(matches, seq.size(), cols));
    for (std::size_t i = 0; i < p.rows; ++i) {
      double sum = 0.0;
      bool zero = true;
      for (std::size_t j = 0; j < cols; ++j) {
        sum += p.at(i, j);
        zero = zero && p.at(i, j) == 0.0;
      }
      o.require(zero || std::abs(sum - 1.0) <= 1e-6, "row sum " + fmt("%.12g", sum));
    }
    // Support oracle: rescan the sequence for every occurrence of each slot's gram.
    std::vector<std::size_t> gram_of(cols);
    for (const auto& m : matches) gram_of[m.slot] = m.gram_id;
    for (std::size_t j = 0; o.ok && j < cols; ++j) {
      const TokenSeq& g = vocab.entry(gram_of[j]).tokens;
      std::set<std::size_t> covered;
      for (std::size_t s = 0; s + g.size() <= seq.size(); ++s) {
        if (std::equal(g.begin(), g.end(), seq.begin() + static_cast<std::ptrdiff_t>(s))) {
          for (std::size_t k = 0; k < g.size(); ++k) covered.insert(s + k);
        }
      }
      for (std::size_t i = 0; i < p.rows; ++i) {
        o.require((p.at(i, j) != 0.0) == covered.contains(i), "support mismatch at slot " + std::to_string(j));
      }
    }
  }
  if (o.ok) o.detail = "100 pairs, rows 1 +- 1e-6 or zero";
  return o;
}

Outcome ac5() {
  Outcome o;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng() % 64, m = 1 + rng() % 16, dim = 1 + rng() % 32;
    Matrix h(n, dim), g(m, dim);
    PositionMatrix p(n, m);
    for (double& v : h.data()) v = d(rng);
    for (double& v : g.data()) v = d(rng);
    for (double& v : p.weights) v = rng() % 3 ? 0.0 : std::abs(d(rng));
    if (rng() % 2) p = normalize_rows(p);
    worst = std::max(worst, max_abs_diff(inject(h, g, p), oracle::inject_loop(h, g, p)));
  }
  o.require(worst <= 1e-12, "max diff " + fmt("%.3g", worst));
  if (o.ok) o.detail = "max diff " + fmt("%.3g", worst);
  return o;
}

Outcome ac6() {
  Outcome o;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelConfig c = testing::tiny_config(2, 2, 16, 4);
    const ModelParams params = ModelParams::init(c, seed);
    const Batch b = testing::random_batch(c, 100 + seed, 12, 5);
    Batch plain = b;
    plain.gram_ids.clear();
    plain.position_matrix = PositionMatrix(b.token_ids.size(), 0);
    const Matrix baseline = forward(plain, params, c).output();

    Batch zero_p = b;
    zero_p.position_matrix = PositionMatrix(b.token_ids.size(), b.gram_ids.size());
    worst = std::max(worst, max_abs_diff(forward(zero_p, params, c).output(), baseline));

    ModelConfig no_gram = c;
    no_gram.layers_ngram = 0;
    worst = std::max(worst, max_abs_diff(forward(b, ModelParams::init(no_gram, seed), no_gram).output(), baseline));
  }
  o.require(worst <= 1e-6, "max diff " + fmt("%.3g", worst));
  if (o.ok) o.detail = "max diff " + fmt("%.3g", worst);
  return o;
}

Outcome ac7() {
  Outcome o;
  const double err = testing::gradient_check_error(Task::kMlm, 7);
  o.require(err < 1e-4, "max relative error " + fmt("%.3g", err));
  if (o.ok) o.detail = "max relative error " + fmt("%.3g", err);
  return o;
}

Outcome ac8() {
  Outcome o;
  const auto s = testing::synthetic_setup(32, 4);
  std::size_t longest = 0;
  for (const auto& e : s.data) longest = std::max(longest, e.ids.size());
  o.require(s.data.size() == 32 && longest <= 64, "corpus shape");
  PretrainOptions opts;
  opts.steps = 500;
  opts.batch_size = 8;
  opts.adam.peak_lr = 1e-3;
  opts.adam.warmup_steps = 50;
  opts.seed = 1;
  const auto a = pretrain(s.data, s.config, opts);
  const auto b = pretrain(s.data, s.config, opts);
  const double acc_a = masked_accuracy(s.data, a.params, s.config, opts.mask, 99, true);
  const double acc_b = masked_accuracy(s.data, b.params, s.config, opts.mask, 99, true);
  bool same = a.log.size() == b.log.size();
  for (std::size_t i = 0; same && i < a.log.size(); ++i) same = a.log[i].loss == b.log[i].loss;
  o.require(acc_a >= 0.90, "masked accuracy " + fmt("%.4f", acc_a));
  o.require(same && acc_a == acc_b, "runs differ");
  if (o.ok) o.detail = "masked accuracy " + fmt("%.4f", acc_a) + ", repeat identical";
  return o;
}

Outcome ac9() {
  Outcome o;
  const auto corpus = synthetic_corpus();
  std::set<std::string> alphabet;
  for (const auto& s : corpus)
    for (const auto& n : s.names()) alphabet.insert(n);
  const std::size_t base = alphabet.size();
  VocabCache cache;
  const StatsReport report = compute_stats(corpus, {base, base + 50, base + 200}, cache);
  for (const auto& row : report.rows) {
    const UcwSegmenter seg(cache.get(corpus, row.requested_size));
    for (const auto& s : corpus) {
      o.require(seg.segment(s).size() <= s.size(), "UCW longer than REMI in " + s.source_id);
    }
  }
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    o.require(report.rows[i].ucw.mean <= report.rows[i - 1].ucw.mean, "mean UCW length grew");
  }
  o.require(report.monotonic, "report not monotonic");
  const StatsReport at1000 = compute_stats(corpus, {1000}, cache);
  std::string means;
  for (const auto& row : report.rows) means += (means.empty() ? "" : " ") + fmt("%.2f", row.ucw.mean);
  o.detail = "mean UCW " + means + "; at 1000: ucw/remi=" + fmt("%.3f", at1000.rows[0].ucw_over_remi) +
             " ucw/cp=" + fmt("%.3f", at1000.rows[0].ucw_over_cp) + " (reference 0.70-0.80, 1.65)";
  return o;
}

Outcome ac10() {
  Outcome o;
  const fs::path dir = testing::temp_dir("acceptance_compare");
  write_text_corpus(synthetic_corpus(), (dir / "synth.txt").string());
  std::ofstream(dir / "desk.cfg") << "event_set=cp4\nngram_min_freq=2\nsteps=500\nwarmup_steps=50\n";
  const auto p = [&](const std::string& n) { return (dir / n).string(); };
  auto r = testing::run({"train-vocab", p("synth.txt"), "-o", p("v.vocab"), "--config", p("desk.cfg")});
  o.require(r.code == 0, "train-vocab: " + r.err);
  r = testing::run({"ngrams", p("synth.txt"), "--vocab", p("v.vocab"), "-o", p("g.grams"), "--config", p("desk.cfg")});
  o.require(r.code == 0, "ngrams: " + r.err);
  std::string tails;
  for (const char* tag : {"1", "2"}) {
    if (!o.ok) break;
    r = testing::run({"pretrain", p("synth.txt"), "--vocab", p("v.vocab"), "--ngrams", p("g.grams"), "-o",
                      p(std::string("m") + tag + ".ckpt"), "--config", p("desk.cfg"), "--compare",
                      p(std::string("compare") + tag + ".tsv")});
    o.require(r.code == 0, "pretrain: " + r.err);
    const auto f = r.fields();
    if (o.ok) tails = "tail loss injected=" + f.at("tail_loss_injected") + " baseline=" + f.at("tail_loss_baseline");
  }
  if (!o.ok) return o;
  const std::string a = testing::slurp(dir / "compare1.tsv");
  const std::string b = testing::slurp(dir / "compare2.tsv");
  o.require(a.starts_with("step\tloss_injected\tloss_baseline\n"), "report header");
  o.require(std::count(a.begin(), a.end(), '\n') == 501, "report rows");
  o.require(a == b, "reports differ between runs");
  if (o.ok) o.detail = "501 lines, byte-identical; " + tails;
  return o;
}

struct Criterion {
  int id;
  const char* description;
  double budget_seconds;
  std::function<Outcome()> check;
};

}  // namespace
}  // namespace ngmf

int main() {
  using namespace ngmf;
  const std::vector<Criterion> criteria = {
      {1, "walkthrough fragment gives the two expected merges and final state", 1, ac1},
      {2, "UCW trainer and segmenter equal the recount oracle on 50 random corpora", 30, ac2},
      {3, "n-gram harvest equals sliding-window counts for n_max 2..4", 10, ac3},
      {4, "position matrix rows sum to 1 within 1e-6 or are zero; support equals occurrence spans", 5, ac4},
      {5, "matrix-form injection equals per-token sum within 1e-12", 5, ac5},
      {6, "zero position matrix or no gram layers equals plain encoder within 1e-6", 5, ac6},
      {7, "analytic gradients match central differences, max relative error < 1e-4", 60, ac7},
      {8, "desk-scale MLM reaches masked accuracy >= 0.90 in 500 steps, deterministically", 300, ac8},
      {9, "UCW never longer than REMI; mean length non-increasing over base, base+50, base+200", 60, ac9},
      {10, "pretrain --compare writes a deterministic paired loss report", 600, ac10},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.check();
    } catch (const std::exception& e) {
      out.ok = false;
      out.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (out.ok && secs > c.budget_seconds) {
      out.ok = false;
      out.detail += " (over time budget)";
    }
    failures += out.ok ? 0 : 1;
    std::printf("%s AC%d %s [%s] %.2fs/%.0fs\n", out.ok ? "PASS" : "FAIL", c.id, c.description, out.detail.c_str(),
                secs, c.budget_seconds);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
