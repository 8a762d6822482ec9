#include "ngmf/cli.h"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "ngmf/checkpoint.h"
#include "ngmf/corpus_io.h"
#include "ngmf/error.h"
#include "ngmf/ngram.h"
#include "ngmf/pipeline.h"
#include "ngmf/training.h"
#include "ngmf/ucw.h"

namespace ngmf {
namespace {

namespace fs = std::filesystem;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string event_set;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "key=value configuration file");
  cmd->add_option("--seed", f.seed, "random seed (overrides config and NGMF_SEED)");
  cmd->add_option("--event-set", f.event_set, "cp4 or cp7");
}

PipelineConfig resolve_config(const CommonFlags& f) {
  PipelineConfig c;
  if (!f.config_path.empty()) apply_config_file(c, f.config_path);
  apply_environment(c);
  if (f.seed) c.seed = *f.seed;
  if (!f.event_set.empty()) {
    try {
      c.event_set = parse_event_set(f.event_set);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  c.validate();
  return c;
}

std::vector<RemiSequence> load_inputs(const std::string& path, EventSet set, std::ostream& err) {
  LoadedCorpus loaded = load_corpus(path, set);
  if (!loaded.failures.empty()) {
    for (const auto& f : loaded.failures) err << "error: " << f << '\n';
    throw DataError("failed to read " + std::to_string(loaded.failures.size()) + " input file(s)");
  }
  if (loaded.sequences.empty()) throw DataError("no input sequences");
  return std::move(loaded.sequences);
}

UcwVocab load_vocab(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("vocab file not found: " + path);
  return read_vocab_file(path);
}

NgramVocab load_grams(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("n-gram vocab file not found: " + path);
  return read_ngram_vocab_file(path);
}

std::vector<UcwSequence> segment_all(const std::vector<RemiSequence>& corpus, const UcwVocab& vocab,
                                     UnknownEventPolicy policy = UnknownEventPolicy::kError) {
  const UcwSegmenter segmenter(vocab, policy);
  std::vector<UcwSequence> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(segmenter.segment(s));
  return out;
}

std::string vocab_text(const UcwVocab& v) {
  std::ostringstream s;
  write_vocab(s, v);
  return s.str();
}

std::string grams_text(const NgramVocab& g) {
  std::ostringstream s;
  write_ngram_vocab(s, g);
  return s.str();
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

std::size_t parse_size_spec(const std::string& spec, std::size_t base) {
  std::size_t offset = 0;
  std::string rest = spec;
  bool relative = false;
  if (rest.starts_with("base")) {
    relative = true;
    rest = rest.substr(4);
    if (rest.empty()) return base;
    if (rest[0] != '+') throw ConfigError("bad vocab size '" + spec + "'");
    rest = rest.substr(1);
  }
  try {
    std::size_t used = 0;
    offset = std::stoul(rest, &used);
    if (used != rest.size()) throw std::invalid_argument(rest);
  } catch (const std::exception&) {
    throw ConfigError("bad vocab size '" + spec + "'");
  }
  return relative ? base + offset : offset;
}

std::size_t base_alphabet_size(const std::vector<RemiSequence>& corpus) {
  std::set<std::string> names;
  for (const auto& s : corpus) {
    for (const auto& e : s.events) names.insert(e.name());
  }
  return names.size();
}

struct TokenizeArgs {
  CommonFlags common;
  std::string input, output, vocab;
  bool pass_through = false;
};

int cmd_tokenize(const TokenizeArgs& a, std::ostream& out, std::ostream& err) {
  const PipelineConfig cfg = resolve_config(a.common);
  std::optional<UcwVocab> vocab;
  if (!a.vocab.empty()) vocab = load_vocab(a.vocab);
  const auto corpus = load_inputs(a.input, cfg.event_set, err);
  std::size_t events = 0;
  for (const auto& s : corpus) events += s.size();
  auto file = open_output(a.output);
  out << "##sequences=" << corpus.size() << '\n' << "##events=" << events << '\n';
  if (vocab) {
    const auto segmented =
        segment_all(corpus, *vocab, a.pass_through ? UnknownEventPolicy::kPassThrough : UnknownEventPolicy::kError);
    write_segmented(file, segmented);
    std::size_t tokens = 0;
    for (const auto& s : segmented) tokens += s.size();
    out << "##tokens=" << tokens << '\n';
  } else {
    format_text_corpus(file, corpus);
  }
  return kExitOk;
}

struct TrainVocabArgs {
  CommonFlags common;
  std::string input, output, segmented;
  std::optional<std::size_t> size;
};

int cmd_train_vocab(const TrainVocabArgs& a, std::ostream& out, std::ostream& err) {
  const PipelineConfig cfg = resolve_config(a.common);
  const auto corpus = load_inputs(a.input, cfg.event_set, err);
  const UcwTrainResult r = train_ucw(corpus, a.size.value_or(cfg.ucw_vocab_size));
  write_vocab_file(r.vocab, a.output);
  if (!a.segmented.empty()) {
    auto file = open_output(a.segmented);
    write_segmented(file, r.segmented);
  }
  out << "##base_size=" << r.vocab.base.size() << '\n'
      << "##merges=" << r.vocab.merges.size() << '\n'
      << "##vocab_size=" << r.vocab.size() << '\n';
  return kExitOk;
}

struct NgramArgs {
  CommonFlags common;
  std::string input, output, vocab;
  std::optional<int> n_max;
  std::optional<std::int64_t> min_freq;
};

int cmd_ngrams(const NgramArgs& a, std::ostream& out, std::ostream& err) {
  const PipelineConfig cfg = resolve_config(a.common);
  std::vector<TokenSeq> corpus;
  if (!a.vocab.empty()) {
    const UcwVocab vocab = load_vocab(a.vocab);
    for (auto& s : segment_all(load_inputs(a.input, cfg.event_set, err), vocab)) corpus.push_back(std::move(s.tokens));
  } else {
    std::ifstream in(a.input);
    if (!in) throw DataError("input not found: " + a.input);
    for (auto& s : read_segmented(in, a.input)) corpus.push_back(std::move(s.tokens));
  }
  if (corpus.empty()) throw DataError("no input sequences");
  const NgramVocab grams = harvest_ngrams(corpus, a.n_max.value_or(cfg.n_max), a.min_freq.value_or(cfg.ngram_min_freq));
  write_ngram_vocab_file(grams, a.output);
  const NgramHarvestStats stats = harvest_stats(corpus, grams);
  out << "##distinct=" << stats.distinct << '\n'
      << "##retained=" << stats.retained << '\n'
      << "##discarded=" << stats.distinct - stats.retained << '\n';
  return kExitOk;
}

struct PretrainArgs {
  CommonFlags common;
  std::string input, output, vocab, grams, log, compare;
  std::optional<int> steps, batch_size, warmup;
  std::optional<double> lr;
  bool baseline = false;
};

int cmd_pretrain(const PretrainArgs& a, std::ostream& out, std::ostream& err) {
  PipelineConfig cfg = resolve_config(a.common);
  if (a.steps) cfg.steps = *a.steps;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.warmup) cfg.warmup_steps = *a.warmup;
  if (a.lr) cfg.lr = *a.lr;
  cfg.validate();
  const UcwVocab vocab = load_vocab(a.vocab);
  const NgramVocab grams = a.grams.empty() ? NgramVocab(cfg.n_max, 1) : load_grams(a.grams);
  const auto corpus = load_inputs(a.input, cfg.event_set, err);
  const TokenTable table(vocab);
  const ModelConfig model = cfg.model_for(table.size(), static_cast<int>(grams.size()));
  const auto data = encode_corpus(segment_all(corpus, vocab), vocab, grams, model);

  PretrainOptions opts;
  opts.steps = cfg.steps;
  opts.batch_size = cfg.batch_size;
  opts.adam.peak_lr = cfg.lr;
  opts.adam.warmup_steps = cfg.warmup_steps;
  opts.mask.mask_rate = model.mask_rate;
  opts.seed = cfg.seed;
  opts.inject = !a.baseline;

  std::ofstream log_file;
  if (!a.log.empty()) log_file = open_output(a.log);
  const PretrainResult r = pretrain(data, model, opts, nullptr, a.log.empty() ? nullptr : &log_file);

  if (!a.compare.empty()) {
    PretrainOptions other = opts;
    other.inject = !opts.inject;
    const PretrainResult r2 = pretrain(data, model, other);
    const auto& injected = opts.inject ? r : r2;
    const auto& baseline = opts.inject ? r2 : r;
    auto report = open_output(a.compare);
    report << "step\tloss_injected\tloss_baseline\n";
    double tail_inj = 0.0, tail_base = 0.0;
    const std::size_t n = injected.log.size();
    const std::size_t tail = std::min<std::size_t>(n, 50);
    char buf[96];
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof buf, "%lld\t%.6f\t%.6f\n", static_cast<long long>(injected.log[i].step),
                    injected.log[i].loss, baseline.log[i].loss);
      report << buf;
      if (i + tail >= n) {
        tail_inj += injected.log[i].loss;
        tail_base += baseline.log[i].loss;
      }
    }
    if (tail > 0) {
      out << "##tail_loss_injected=" << tail_inj / static_cast<double>(tail) << '\n'
          << "##tail_loss_baseline=" << tail_base / static_cast<double>(tail) << '\n';
    }
  }

  Checkpoint ckpt;
  ckpt.config = model;
  ckpt.params = r.params;
  ckpt.step = r.steps;
  ckpt.adam_m = r.adam_m;
  ckpt.adam_v = r.adam_v;
  ckpt.metadata["ucw_vocab"] = vocab_text(vocab);
  ckpt.metadata["ngram_vocab"] = grams_text(grams);
  ckpt.metadata["event_set"] = std::string(event_set_name(cfg.event_set));
  ckpt.metadata["injection"] = a.baseline ? "off" : "on";
  save_checkpoint(ckpt, a.output);

  const double acc = masked_accuracy(data, r.params, model, opts.mask, cfg.seed, opts.inject);
  out << "##sequences=" << data.size() << '\n'
      << "##steps=" << r.steps << '\n'
      << "##skipped_steps=" << r.skipped_steps << '\n'
      << "##final_loss=" << (r.log.empty() ? 0.0 : r.log.back().loss) << '\n'
      << "##masked_accuracy=" << acc << '\n';
  return kExitOk;
}

struct FinetuneArgs {
  CommonFlags common;
  std::string checkpoint, data, task, output, log;
  std::optional<int> epochs, classes;
  bool baseline = false;
};

int cmd_finetune(const FinetuneArgs& a, std::ostream& out, std::ostream&) {
  Task task;
  if (a.task == "seq" || a.task == "sequence") {
    task = Task::kSequence;
  } else if (a.task == "token") {
    task = Task::kToken;
  } else {
    throw ConfigError("unknown task '" + a.task + "' (expected seq or token)");
  }
  PipelineConfig cfg = resolve_config(a.common);
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.validate();

  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const auto vocab_it = ckpt.metadata.find("ucw_vocab");
  const auto grams_it = ckpt.metadata.find("ngram_vocab");
  if (vocab_it == ckpt.metadata.end() || grams_it == ckpt.metadata.end()) {
    throw ConfigError("checkpoint carries no vocabularies");
  }
  std::istringstream vs(vocab_it->second), gs(grams_it->second);
  const UcwVocab vocab = read_vocab(vs, a.checkpoint);
  const NgramVocab grams = read_ngram_vocab(gs, a.checkpoint);

  ModelConfig model = ckpt.config;
  const int classes = a.classes.value_or(task == Task::kSequence ? model.seq_classes : model.token_classes);
  if (classes < 1) throw ConfigError("classes must be positive");
  const auto d = static_cast<std::size_t>(model.hidden_dim);
  if (task == Task::kSequence) {
    model.seq_classes = classes;
    ckpt.params.seq_weight = Matrix(d, static_cast<std::size_t>(classes));
    ckpt.params.seq_bias = Matrix(1, static_cast<std::size_t>(classes));
  } else {
    model.token_classes = classes;
    ckpt.params.token_weight = Matrix(d, static_cast<std::size_t>(classes));
    ckpt.params.token_bias = Matrix(1, static_cast<std::size_t>(classes));
  }
  reset_head(ckpt.params, model, task, cfg.seed);

  std::ifstream in(a.data);
  if (!in) throw DataError("dataset not found: " + a.data);
  const TokenTable table(vocab);
  const UcwSegmenter segmenter(vocab);
  std::vector<LabeledExample> train, validation;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_ws(line).empty()) continue;
    const std::string where = a.data + ":" + std::to_string(line_no);
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(where + ": expected '<label>\\t<events>'");
    RemiSequence seq;
    seq.source_id = where;
    try {
      for (const auto& name : split_ws(line.substr(tab + 1))) seq.events.push_back(parse_event(name));
    } catch (const ParseError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (seq.events.empty()) throw DataError(where + ": no events");
    const UcwSequence ucw = segmenter.segment(seq);
    LabeledExample ex;
    ex.seq = encode_sequence(ucw, table, grams, model);
    const auto parse_label = [&](const std::string& text) {
      if (text == "-") return -1;
      std::size_t used = 0;
      int v = -1;
      try {
        v = std::stoi(text, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != text.size() || v < 0) throw DataError(where + ": bad label '" + text + "'");
      if (v >= classes) {
        throw DataError(where + ": label " + std::to_string(v) + " outside " + std::to_string(classes) + " classes");
      }
      return v;
    };
    const auto label_fields = split_ws(line.substr(0, tab));
    if (task == Task::kSequence) {
      if (label_fields.size() != 1) throw DataError(where + ": expected one sequence label");
      ex.sequence_label = parse_label(label_fields[0]);
    } else {
      std::vector<int> event_labels;
      for (const auto& f : label_fields) event_labels.push_back(parse_label(f));
      ex.token_labels = token_labels_for(ucw, event_labels, ex.seq.ids.size() - 1);
    }
    (is_validation(line) ? validation : train).push_back(std::move(ex));
  }
  if (train.empty() && validation.empty()) throw DataError("no input sequences");

  FinetuneOptions opts;
  opts.task = task;
  opts.epochs = cfg.epochs;
  opts.batch_size = cfg.batch_size;
  opts.adam.peak_lr = cfg.lr;
  opts.adam.warmup_steps = cfg.warmup_steps;
  opts.seed = cfg.seed;
  opts.inject = !a.baseline && ckpt.metadata["injection"] != "off";

  std::ofstream log_file;
  if (!a.log.empty()) log_file = open_output(a.log);
  const FinetuneResult r = finetune(train, validation, model, ckpt.params, opts, a.log.empty() ? nullptr : &log_file);

  ckpt.config = model;
  ckpt.params = r.params;
  ckpt.adam_m.reset();
  ckpt.adam_v.reset();
  ckpt.metadata["task"] = task == Task::kSequence ? "seq" : "token";
  save_checkpoint(ckpt, a.output);

  const double train_acc = classification_accuracy(train, r.params, model, task, opts.inject);
  const double val_acc = classification_accuracy(validation, r.params, model, task, opts.inject);
  out << "##train_examples=" << train.size() << '\n'
      << "##validation_examples=" << validation.size() << '\n'
      << "##epochs=" << cfg.epochs << '\n'
      << "##train_accuracy=" << (std::isnan(train_acc) ? std::string("nan") : std::to_string(train_acc)) << '\n'
      << "##val_accuracy=" << (std::isnan(val_acc) ? std::string("nan") : std::to_string(val_acc)) << '\n';
  return kExitOk;
}

struct StatsArgs {
  CommonFlags common;
  std::string input, sizes, cache_dir;
};

int cmd_stats(const StatsArgs& a, std::ostream& out, std::ostream& err) {
  const PipelineConfig cfg = resolve_config(a.common);
  const auto corpus = load_inputs(a.input, cfg.event_set, err);
  const std::size_t base = base_alphabet_size(corpus);
  std::vector<std::size_t> sizes;
  const std::string spec = a.sizes.empty() ? std::to_string(cfg.ucw_vocab_size) : a.sizes;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) sizes.push_back(parse_size_spec(item, base));
  }
  VocabCache cache(a.cache_dir.empty() ? std::nullopt : std::optional<std::string>(a.cache_dir));
  print_stats(out, compute_stats(corpus, sizes, cache));
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compound-word tokenizer and n-gram injected encoder for symbolic music"};
  app.require_subcommand(1);

  TokenizeArgs tok;
  auto* c_tok = app.add_subcommand("tokenize", "MIDI or text corpus to REMI text, or to UCW tokens with --vocab");
  c_tok->add_option("input", tok.input, "file or directory")->required();
  c_tok->add_option("-o,--output", tok.output)->required();
  c_tok->add_option("--vocab", tok.vocab, "UCW vocab file; enables segmentation");
  c_tok->add_flag("--pass-unknown", tok.pass_through, "keep events missing from the vocab as single tokens");
  add_common(c_tok, tok.common);

  TrainVocabArgs tv;
  auto* c_tv = app.add_subcommand("train-vocab", "learn a UCW vocabulary");
  c_tv->add_option("input", tv.input)->required();
  c_tv->add_option("-o,--output", tv.output)->required();
  c_tv->add_option("--size", tv.size, "target vocabulary size");
  c_tv->add_option("--segmented", tv.segmented, "also write the segmented corpus here");
  add_common(c_tv, tv.common);

  NgramArgs ng;
  auto* c_ng = app.add_subcommand("ngrams", "harvest the n-gram vocabulary");
  c_ng->add_option("input", ng.input, "REMI corpus (with --vocab) or segmented corpus")->required();
  c_ng->add_option("-o,--output", ng.output)->required();
  c_ng->add_option("--vocab", ng.vocab);
  c_ng->add_option("--n-max", ng.n_max);
  c_ng->add_option("--min-freq", ng.min_freq);
  add_common(c_ng, ng.common);

  PretrainArgs pt;
  auto* c_pt = app.add_subcommand("pretrain", "masked-token pretraining");
  c_pt->add_option("input", pt.input)->required();
  c_pt->add_option("-o,--output", pt.output, "checkpoint path")->required();
  c_pt->add_option("--vocab", pt.vocab)->required();
  c_pt->add_option("--ngrams", pt.grams);
  c_pt->add_option("--log", pt.log, "per-step training log");
  c_pt->add_option("--compare", pt.compare, "also train the other variant and write paired loss curves here");
  c_pt->add_option("--steps", pt.steps);
  c_pt->add_option("--batch-size", pt.batch_size);
  c_pt->add_option("--lr", pt.lr);
  c_pt->add_option("--warmup", pt.warmup);
  c_pt->add_flag("--baseline", pt.baseline, "disable n-gram injection");
  add_common(c_pt, pt.common);

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "train a classification head");
  c_ft->add_option("--checkpoint", ft.checkpoint)->required();
  c_ft->add_option("--data", ft.data, "lines of '<label(s)>\\t<events>'")->required();
  c_ft->add_option("--task", ft.task, "seq or token")->required();
  c_ft->add_option("-o,--output", ft.output)->required();
  c_ft->add_option("--epochs", ft.epochs);
  c_ft->add_option("--classes", ft.classes);
  c_ft->add_option("--log", ft.log, "per-epoch log");
  c_ft->add_flag("--baseline", ft.baseline, "disable n-gram injection");
  add_common(c_ft, ft.common);

  StatsArgs st;
  auto* c_st = app.add_subcommand("stats", "REMI / CP / UCW length report");
  c_st->add_option("input", st.input)->required();
  c_st->add_option("--sizes", st.sizes, "comma list; 'base' and 'base+N' allowed");
  c_st->add_option("--cache-dir", st.cache_dir);
  add_common(c_st, st.common);

  std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  }

  try {
    if (c_tok->parsed()) return cmd_tokenize(tok, out, err);
    if (c_tv->parsed()) return cmd_train_vocab(tv, out, err);
    if (c_ng->parsed()) return cmd_ngrams(ng, out, err);
    if (c_pt->parsed()) return cmd_pretrain(pt, out, err);
    if (c_ft->parsed()) return cmd_finetune(ft, out, err);
    if (c_st->parsed()) return cmd_stats(st, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitDataError;
  }
  return kExitConfigError;
}

}  // namespace ngmf
