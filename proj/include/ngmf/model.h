#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ngmf/matrix.h"
#include "ngmf/ngram.h"

namespace ngmf {

// Reserved ids at the front of every token table.
inline constexpr int kPadId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kNumSpecialTokens = 3;

struct ModelConfig {
  int layers_main = 2;
  int layers_ngram = 1;
  int hidden_dim = 32;
  int heads = 4;
  int ffn_dim = 64;
  int max_seq_len = 64;
  int max_ngrams = 8;
  int vocab_size = 0;
  int ngram_vocab_size = 0;
  int seq_classes = 2;
  int token_classes = 2;
  double mask_rate = 0.15;
  double init_std = 0.02;
  double ln_eps = 1e-5;

  // 12/6 layers, width 768, 12 heads, 512 tokens, 128 grams.
  static ModelConfig full_scale(int vocab_size, int ngram_vocab_size);

  int head_dim() const { return hidden_dim / heads; }
  // Throws ConfigError unless heads divides hidden_dim, layers_ngram <=
  // layers_main, max_ngrams <= max_seq_len and every size is positive.
  void validate() const;

  // key=value lines; parse() accepts the same and ignores unknown keys.
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln1_gain, ln1_bias;
  Matrix w1, b1, w2, b2;
  Matrix ln2_gain, ln2_bias;
};

struct NamedParam {
  std::string name;
  Matrix* value;
  bool decay;  // receives decoupled weight decay
};

struct ModelParams {
  Matrix token_embedding;     // vocab_size x d
  Matrix position_embedding;  // max_seq_len x d, shared by both stacks
  Matrix ngram_embedding;     // ngram_vocab_size x d
  std::vector<LayerParams> main_layers;
  std::vector<LayerParams> ngram_layers;
  Matrix mlm_weight, mlm_bias;
  Matrix seq_weight, seq_bias;
  Matrix token_weight, token_bias;

  static ModelParams zeros(const ModelConfig& config);
  // Main stack, embeddings and heads draw from one stream and the n-gram
  // stack from another, so the main weights do not depend on layers_ngram.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  // Stable order; zeros() and init() of one config list identical names.
  std::vector<NamedParam> named();
  std::size_t parameter_count() const;
};

struct Batch {
  std::vector<int> token_ids;            // position 0 is [CLS] for classification
  std::vector<bool> attention_mask;      // empty, or false for padding positions
  std::vector<int> gram_ids;             // matched grams, one per slot
  PositionMatrix position_matrix;        // token_ids.size() x gram_ids.size()
  std::vector<int> labels;               // per position, -1 = unlabeled
  int sequence_label = -1;

  // Throws ShapeError / DataError when sizes or ids are inconsistent.
  void validate(const ModelConfig& config) const;
};

struct LayerCache {
  Matrix input, q, k, v;
  std::vector<Matrix> probs;  // per head, N x N
  Matrix context;
  Matrix norm1_hat;
  std::vector<double> norm1_inv_std;
  Matrix norm1_out;
  Matrix ffn_pre, ffn_act;
  Matrix norm2_hat;
  std::vector<double> norm2_inv_std;
};

struct ForwardTrace {
  std::vector<Matrix> hidden;        // H_0 .. H_L of the token stack, after injection
  std::vector<Matrix> ngram_hidden;  // H^G_0 .. H^G_Lg
  std::vector<LayerCache> main_cache;
  std::vector<LayerCache> ngram_cache;
  std::vector<bool> injected;        // per main layer
  const Batch* batch = nullptr;

  const Matrix& output() const { return hidden.back(); }
};

// Emb(id_j) + PosEmb(j). Throws DataError for ids outside the table or
// sequences longer than the position table.
Matrix embed_tokens(std::span<const int> token_ids, const ModelParams& params);
// EmbNG(g_t) + PosEmb(t).
Matrix embed_ngrams(std::span<const int> gram_ids, const ModelParams& params);

// Post-norm encoder layer: LN(x + MHA(x)), then LN(h + FFN(h)). Masked keys
// (mask[j] == false) get zero attention. Throws NumericError naming `label`
// on a non-finite output. `cache` may be null.
Matrix encoder_layer(const Matrix& input, const LayerParams& layer, const ModelConfig& config,
                     std::span<const bool> mask, LayerCache* cache, const std::string& label = "layer");

// Returns d(input) and adds parameter gradients into `grads`.
Matrix encoder_layer_backward(const Matrix& d_output, const LayerParams& layer, const LayerCache& cache,
                              const ModelConfig& config, LayerParams& grads);

// hidden + P * ngram_hidden.
Matrix inject(const Matrix& hidden, const Matrix& ngram_hidden, const PositionMatrix& p);

// Token stack over the batch with the n-gram stack injected after each of the
// first layers_ngram layers. The batch must outlive the trace.
ForwardTrace forward(const Batch& batch, const ModelParams& params, const ModelConfig& config);

Matrix mlm_logits(const ForwardTrace& trace, const ModelParams& params);
// Throws DataError unless position 0 holds [CLS].
Matrix classify_sequence(const ForwardTrace& trace, const ModelParams& params);
Matrix classify_tokens(const ForwardTrace& trace, const ModelParams& params);

enum class Task { kMlm, kSequence, kToken };

struct LossStats {
  double loss_sum = 0.0;  // summed cross-entropy
  int count = 0;          // labeled positions (or 1 for a labeled sequence)
  int correct = 0;        // argmax hits

  double mean() const { return count ? loss_sum / count : 0.0; }
};

// Cross-entropy of the task head over labeled positions. Gradients of
// `weight * loss_sum` are added into `grads`.
LossStats accumulate_loss_and_gradients(const ForwardTrace& trace, Task task, const ModelParams& params,
                                        const ModelConfig& config, ModelParams& grads, double weight);

// Loss statistics without gradients.
LossStats evaluate_loss(const ForwardTrace& trace, Task task, const ModelParams& params);

struct LossAndGrad {
  double loss = 0.0;  // mean over labeled positions, 0 when there are none
  LossStats stats;
  ModelParams grads;
};

LossAndGrad loss_and_backward(const ForwardTrace& trace, Task task, const ModelParams& params,
                              const ModelConfig& config);

}  // namespace ngmf
