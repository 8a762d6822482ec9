#include "ngmf/training.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "ngmf/error.h"

namespace ngmf {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

// Fisher-Yates with raw engine output so the order does not depend on the
// standard library's distribution implementation.
void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle(order_, rng_);
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      shuffle(order_, rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

}  // namespace

TokenTable::TokenTable(const UcwVocab& vocab) {
  const auto add = [this](const std::string& t) {
    if (ids_.emplace(t, static_cast<int>(tokens_.size())).second) tokens_.push_back(t);
  };
  for (const char* special : {"[PAD]", "[MASK]", "[CLS]"}) add(special);
  for (const auto& b : vocab.base) add(b);
  // Distinct rules can spell the same text ("a+b"+"c" vs "a"+"b+c"); keep one id.
  for (const auto& m : vocab.merges) add(m.merged);
}

std::optional<int> TokenTable::find(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int TokenTable::id(const std::string& token) const {
  if (const auto v = find(token)) return *v;
  throw DataError("token '" + token + "' is not in the vocabulary");
}

EncodedSequence encode_sequence(const UcwSequence& seq, const TokenTable& table, const NgramVocab& grams,
                                const ModelConfig& config) {
  const std::size_t keep = std::min(seq.tokens.size(), static_cast<std::size_t>(config.max_seq_len - 1));
  EncodedSequence out;
  out.source_id = seq.source_id;
  out.ids.push_back(kClsId);
  const TokenSeq kept(seq.tokens.begin(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  for (const auto& t : kept) {
    try {
      out.ids.push_back(table.id(t));
    } catch (const DataError& e) {
      throw DataError(seq.source_id + ": " + e.what());
    }
  }
  const std::size_t cols = std::min(grams.size(), static_cast<std::size_t>(config.max_ngrams));
  const auto matches = grams.empty() ? std::vector<NgramMatch>{} : match_sequence(kept, grams, cols);
  const std::size_t slots = slot_count(matches);
  out.gram_ids.assign(slots, 0);
  for (const auto& m : matches) out.gram_ids[m.slot] = static_cast<int>(m.gram_id);
  out.position_matrix = normalize_rows(build_position_matrix(matches, out.ids.size(), slots, 1));
  return out;
}

Batch make_batch(const EncodedSequence& seq, bool inject) {
  Batch b;
  b.token_ids = seq.ids;
  if (inject) {
    b.gram_ids = seq.gram_ids;
    b.position_matrix = seq.position_matrix;
  } else {
    b.position_matrix = PositionMatrix(seq.ids.size(), 0);
  }
  return b;
}

std::string format_step_log(const StepLog& log) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%lld\t%.6f\t%.4f\t%.6g", static_cast<long long>(log.step), log.loss,
                log.masked_acc, log.lr);
  return buf;
}

PretrainResult pretrain(const std::vector<EncodedSequence>& data, const ModelConfig& config,
                        const PretrainOptions& options, const ModelParams* start, std::ostream* log_out) {
  config.validate();
  if (data.empty()) throw DataError("no training sequences");
  if (options.steps < 0 || options.batch_size <= 0) throw ConfigError("steps must be >= 0 and batch_size > 0");

  PretrainResult result;
  result.params = start ? *start : ModelParams::init(config, options.seed);
  AdamW optimizer(config, options.adam);
  BatchSampler sampler(data.size(), derive_seed(options.seed, 1, 0));

  for (int step = 1; step <= options.steps; ++step) {
    std::vector<Batch> batches;
    int labeled = 0;
    for (int k = 0; k < options.batch_size; ++k) {
      const std::size_t idx = sampler.next();
      Batch b = make_batch(data[idx], options.inject);
      MaskedInput masked = mlm_mask(b.token_ids, options.mask, config.vocab_size,
                                    derive_seed(options.seed, static_cast<std::uint64_t>(step), idx * 131 + k));
      b.token_ids = std::move(masked.ids);
      b.labels = std::move(masked.labels);
      labeled += static_cast<int>(masked.positions.size());
      batches.push_back(std::move(b));
    }

    StepLog entry;
    entry.step = step;
    ModelParams grads = ModelParams::zeros(config);
    LossStats total;
    if (labeled > 0) {
      for (const Batch& b : batches) {
        const ForwardTrace trace = forward(b, result.params, config);
        const LossStats s = accumulate_loss_and_gradients(trace, Task::kMlm, result.params, config, grads,
                                                          1.0 / labeled);
        total.loss_sum += s.loss_sum;
        total.count += s.count;
        total.correct += s.correct;
      }
      entry.lr = optimizer.step(result.params, grads);
    }
    entry.loss = total.mean();
    entry.masked_acc = total.count ? static_cast<double>(total.correct) / total.count : 0.0;
    result.log.push_back(entry);
    if (log_out) *log_out << format_step_log(entry) << '\n';
  }
  result.steps = optimizer.steps();
  result.skipped_steps = optimizer.skipped();
  result.adam_m = optimizer.first_moment();
  result.adam_v = optimizer.second_moment();
  return result;
}

double masked_accuracy(const std::vector<EncodedSequence>& data, const ModelParams& params,
                       const ModelConfig& config, const MaskOptions& mask, std::uint64_t seed, bool inject) {
  int correct = 0;
  int count = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Batch b = make_batch(data[i], inject);
    MaskedInput masked = mlm_mask(b.token_ids, mask, config.vocab_size, derive_seed(seed, 0xE7A1, i));
    b.token_ids = std::move(masked.ids);
    b.labels = std::move(masked.labels);
    const LossStats s = evaluate_loss(forward(b, params, config), Task::kMlm, params);
    correct += s.correct;
    count += s.count;
  }
  return count ? static_cast<double>(correct) / count : 0.0;
}

std::vector<int> token_labels_for(const UcwSequence& seq, const std::vector<int>& event_labels,
                                  std::size_t kept_tokens) {
  std::vector<int> out{-1};
  std::size_t event = 0;
  for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
    const std::size_t width = split_token(seq.tokens[t]).size();
    if (event + width > event_labels.size()) {
      throw DataError(seq.source_id + ": " + std::to_string(event_labels.size()) + " labels for more events");
    }
    if (t < kept_tokens) out.push_back(event_labels[event]);
    event += width;
  }
  if (event != event_labels.size()) {
    throw DataError(seq.source_id + ": " + std::to_string(event_labels.size()) + " labels for " +
                    std::to_string(event) + " events");
  }
  return out;
}

bool is_validation(const std::string& key) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return splitmix64(h) % 10 == 0;
}

void reset_head(ModelParams& params, const ModelConfig& config, Task task, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x4EAD, static_cast<std::uint64_t>(task)));
  std::normal_distribution<double> dist(0.0, config.init_std);
  Matrix& w = task == Task::kSequence ? params.seq_weight
              : task == Task::kToken  ? params.token_weight
                                      : params.mlm_weight;
  Matrix& b = task == Task::kSequence ? params.seq_bias : task == Task::kToken ? params.token_bias : params.mlm_bias;
  for (double& x : w.data()) x = dist(rng);
  b.fill(0.0);
}

namespace {

Batch labeled_batch(const LabeledExample& ex, Task task, bool inject) {
  Batch b = make_batch(ex.seq, inject);
  if (task == Task::kSequence) {
    b.sequence_label = ex.sequence_label;
  } else {
    b.labels = ex.token_labels;
  }
  return b;
}

}  // namespace

double classification_accuracy(const std::vector<LabeledExample>& data, const ModelParams& params,
                               const ModelConfig& config, Task task, bool inject) {
  int correct = 0;
  int count = 0;
  for (const auto& ex : data) {
    const Batch b = labeled_batch(ex, task, inject);
    const LossStats s = evaluate_loss(forward(b, params, config), task, params);
    correct += s.correct;
    count += s.count;
  }
  return count ? static_cast<double>(correct) / count : std::numeric_limits<double>::quiet_NaN();
}

FinetuneResult finetune(const std::vector<LabeledExample>& train, const std::vector<LabeledExample>& validation,
                        const ModelConfig& config, ModelParams params, const FinetuneOptions& options,
                        std::ostream* log_out) {
  if (options.task == Task::kMlm) throw ConfigError("fine-tuning needs a classification task");
  if (options.epochs < 0 || options.batch_size <= 0) throw ConfigError("epochs must be >= 0 and batch_size > 0");
  FinetuneResult result;
  result.params = std::move(params);
  if (options.epochs > 0 && train.empty()) throw DataError("no training examples");
  AdamW optimizer(config, options.adam);
  std::mt19937_64 rng(derive_seed(options.seed, 2, 0));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle(order, rng);
    LossStats epoch_stats;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<Batch> batches;
      int labeled = 0;
      for (std::size_t k = start; k < end; ++k) {
        batches.push_back(labeled_batch(train[order[k]], options.task, options.inject));
        const Batch& b = batches.back();
        if (options.task == Task::kSequence) {
          labeled += b.sequence_label >= 0 ? 1 : 0;
        } else {
          labeled += static_cast<int>(std::count_if(b.labels.begin(), b.labels.end(), [](int l) { return l >= 0; }));
        }
      }
      if (labeled == 0) continue;
      ModelParams grads = ModelParams::zeros(config);
      for (const Batch& b : batches) {
        const ForwardTrace trace = forward(b, result.params, config);
        const LossStats s =
            accumulate_loss_and_gradients(trace, options.task, result.params, config, grads, 1.0 / labeled);
        epoch_stats.loss_sum += s.loss_sum;
        epoch_stats.count += s.count;
        epoch_stats.correct += s.correct;
      }
      optimizer.step(result.params, grads);
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = epoch_stats.mean();
    entry.train_acc = epoch_stats.count ? static_cast<double>(epoch_stats.correct) / epoch_stats.count : 0.0;
    entry.val_acc = classification_accuracy(validation, result.params, config, options.task, options.inject);
    result.log.push_back(entry);
    if (log_out) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%d\t%.6f\t%.4f\t%.4f", epoch, entry.train_loss, entry.train_acc,
                    entry.val_acc);
      *log_out << buf << '\n';
    }
  }
  return result;
}

}  // namespace ngmf
