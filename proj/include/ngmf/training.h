#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ngmf/mlm.h"
#include "ngmf/model.h"
#include "ngmf/ngram.h"
#include "ngmf/optim.h"
#include "ngmf/ucw.h"

namespace ngmf {

// Model-side token ids: [PAD], [MASK], [CLS], the base events in sorted
// order, then merged tokens by rank.
class TokenTable {
 public:
  explicit TokenTable(const UcwVocab& vocab);

  int size() const { return static_cast<int>(tokens_.size()); }
  // Throws DataError naming the token when it is not in the table.
  int id(const std::string& token) const;
  std::optional<int> find(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct EncodedSequence {
  std::vector<int> ids;  // [CLS] then at most max_seq_len - 1 tokens
  std::vector<int> gram_ids;
  PositionMatrix position_matrix;  // ids.size() x gram_ids.size(), row-normalized
  std::string source_id;
};

// Truncates, maps tokens to ids, and matches grams over the kept tokens.
EncodedSequence encode_sequence(const UcwSequence& seq, const TokenTable& table, const NgramVocab& grams,
                                const ModelConfig& config);

// Batch for one sequence; without injection the gram inputs are dropped.
Batch make_batch(const EncodedSequence& seq, bool inject);

struct PretrainOptions {
  int steps = 500;
  int batch_size = 8;
  AdamWOptions adam;
  MaskOptions mask;
  std::uint64_t seed = 1;
  bool inject = true;
};

struct StepLog {
  std::int64_t step = 0;
  double loss = 0.0;
  double masked_acc = 0.0;  // over the step's masked positions
  double lr = 0.0;
};

// "step\tloss\tmasked_acc\tlr"
std::string format_step_log(const StepLog& log);

struct PretrainResult {
  ModelParams params;
  ModelParams adam_m;
  ModelParams adam_v;
  std::int64_t steps = 0;
  std::int64_t skipped_steps = 0;
  std::vector<StepLog> log;
};

// MLM training over shuffled minibatches. Masks are drawn afresh each step
// from the seed, so runs are repeatable. `log_out` receives one line per step.
PretrainResult pretrain(const std::vector<EncodedSequence>& data, const ModelConfig& config,
                        const PretrainOptions& options, const ModelParams* start = nullptr,
                        std::ostream* log_out = nullptr);

// Fraction of masked positions predicted correctly, with evaluation masks
// drawn from `seed`.
double masked_accuracy(const std::vector<EncodedSequence>& data, const ModelParams& params,
                       const ModelConfig& config, const MaskOptions& mask, std::uint64_t seed, bool inject);

struct LabeledExample {
  EncodedSequence seq;
  int sequence_label = -1;
  std::vector<int> token_labels;  // aligned with seq.ids, -1 = ignore
};

// One label per event; each model token takes the label of its first event
// and [CLS] is unlabeled.
std::vector<int> token_labels_for(const UcwSequence& seq, const std::vector<int>& event_labels,
                                  std::size_t kept_tokens);

// Deterministic split: about one example in ten goes to validation, chosen by
// a hash of the key.
bool is_validation(const std::string& key);

struct FinetuneOptions {
  Task task = Task::kSequence;
  int epochs = 15;
  int batch_size = 8;
  AdamWOptions adam;
  std::uint64_t seed = 1;
  bool inject = true;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;  // NaN without validation data
};

struct FinetuneResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

// Fresh task-head weights drawn from `seed`; other parameters are untouched.
void reset_head(ModelParams& params, const ModelConfig& config, Task task, std::uint64_t seed);

double classification_accuracy(const std::vector<LabeledExample>& data, const ModelParams& params,
                               const ModelConfig& config, Task task, bool inject);

FinetuneResult finetune(const std::vector<LabeledExample>& train, const std::vector<LabeledExample>& validation,
                        const ModelConfig& config, ModelParams params, const FinetuneOptions& options,
                        std::ostream* log_out = nullptr);

}  // namespace ngmf
