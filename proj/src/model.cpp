#include "ngmf/model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <sstream>

#include "ngmf/error.h"

namespace ngmf {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  fn("token_embedding", p.token_embedding, true);
  fn("position_embedding", p.position_embedding, true);
  fn("ngram_embedding", p.ngram_embedding, true);
  const auto layers = [&](auto& stack, const std::string& prefix) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
      auto& l = stack[i];
      const std::string n = prefix + "." + std::to_string(i) + ".";
      fn(n + "wq", l.wq, true);
      fn(n + "bq", l.bq, false);
      fn(n + "wk", l.wk, true);
      fn(n + "bk", l.bk, false);
      fn(n + "wv", l.wv, true);
      fn(n + "bv", l.bv, false);
      fn(n + "wo", l.wo, true);
      fn(n + "bo", l.bo, false);
      fn(n + "ln1_gain", l.ln1_gain, false);
      fn(n + "ln1_bias", l.ln1_bias, false);
      fn(n + "w1", l.w1, true);
      fn(n + "b1", l.b1, false);
      fn(n + "w2", l.w2, true);
      fn(n + "b2", l.b2, false);
      fn(n + "ln2_gain", l.ln2_gain, false);
      fn(n + "ln2_bias", l.ln2_bias, false);
    }
  };
  layers(p.main_layers, "main");
  layers(p.ngram_layers, "ngram");
  fn("mlm_weight", p.mlm_weight, true);
  fn("mlm_bias", p.mlm_bias, false);
  fn("seq_weight", p.seq_weight, true);
  fn("seq_bias", p.seq_bias, false);
  fn("token_weight", p.token_weight, true);
  fn("token_bias", p.token_bias, false);
}

LayerParams zero_layer(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.hidden_dim);
  const auto f = static_cast<std::size_t>(c.ffn_dim);
  LayerParams l;
  l.wq = Matrix(d, d);
  l.bq = Matrix(1, d);
  l.wk = Matrix(d, d);
  l.bk = Matrix(1, d);
  l.wv = Matrix(d, d);
  l.bv = Matrix(1, d);
  l.wo = Matrix(d, d);
  l.bo = Matrix(1, d);
  l.ln1_gain = Matrix(1, d);
  l.ln1_bias = Matrix(1, d);
  l.w1 = Matrix(d, f);
  l.b1 = Matrix(1, f);
  l.w2 = Matrix(f, d);
  l.b2 = Matrix(1, d);
  l.ln2_gain = Matrix(1, d);
  l.ln2_bias = Matrix(1, d);
  return l;
}

void fill_normal(Matrix& m, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : m.data()) v = dist(rng);
}

void init_layer(LayerParams& l, std::mt19937_64& rng, double stddev) {
  for (Matrix* w : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2}) fill_normal(*w, rng, stddev);
  l.ln1_gain.fill(1.0);
  l.ln2_gain.fill(1.0);
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps, Matrix& hat,
                  std::vector<double>& inv_std) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  Matrix y(n, d);
  hat = Matrix(n, d);
  inv_std.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = x.row(i);
    double mean = 0.0;
    for (const double v : r) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (const double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (r[j] - mean) * is;
      hat(i, j) = h;
      y(i, j) = gain(0, j) * h + bias(0, j);
    }
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const Matrix& hat,
                           const std::vector<double>& inv_std, Matrix& d_gain, Matrix& d_bias) {
  const std::size_t n = dy.rows();
  const std::size_t d = dy.cols();
  Matrix dx(n, d);
  std::vector<double> dhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean_dhat = 0.0;
    double mean_dhat_hat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      d_gain(0, j) += dy(i, j) * hat(i, j);
      d_bias(0, j) += dy(i, j);
      dhat[j] = dy(i, j) * gain(0, j);
      mean_dhat += dhat[j];
      mean_dhat_hat += dhat[j] * hat(i, j);
    }
    mean_dhat /= static_cast<double>(d);
    mean_dhat_hat /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx(i, j) = inv_std[i] * (dhat[j] - mean_dhat - hat(i, j) * mean_dhat_hat);
    }
  }
  return dx;
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = matmul(x, w);
  add_row_bias(y, b);
  return y;
}

// Adds the gradient of y = x w + b; returns dx.
Matrix linear_backward(const Matrix& dy, const Matrix& x, const Matrix& w, Matrix& dw, Matrix& db) {
  accumulate_matmul_at(dw, x, dy);
  accumulate_column_sums(db, dy);
  return matmul_bt(dy, w);
}

void check_finite(const Matrix& m, const std::string& label) {
  if (!m.all_finite()) throw NumericError("non-finite activation in " + label);
}

// Softmax cross-entropy of one row; writes weight * (softmax - onehot) into d_row.
double softmax_xent(std::span<const double> logits, int label, std::span<double> d_row, double weight,
                    bool& correct) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (const double v : logits) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  const auto arg = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  correct = arg == label;
  if (!d_row.empty()) {
    for (std::size_t c = 0; c < logits.size(); ++c) {
      d_row[c] = weight * std::exp(logits[c] - log_z);
    }
    d_row[static_cast<std::size_t>(label)] -= weight;
  }
  return log_z - logits[static_cast<std::size_t>(label)];
}

std::size_t checked_id(int id, std::size_t limit, const char* what) {
  if (id < 0 || static_cast<std::size_t>(id) >= limit) {
    throw DataError(std::string(what) + " id " + std::to_string(id) + " outside table of " +
                    std::to_string(limit));
  }
  return static_cast<std::size_t>(id);
}

Matrix embed(std::span<const int> ids, const Matrix& table, const Matrix& positions, const char* what) {
  const std::size_t d = table.cols();
  if (ids.size() > positions.rows()) {
    throw DataError(std::string(what) + " sequence of length " + std::to_string(ids.size()) +
                    " exceeds position table of " + std::to_string(positions.rows()));
  }
  Matrix h(ids.size(), d);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const std::size_t id = checked_id(ids[j], table.rows(), what);
    for (std::size_t c = 0; c < d; ++c) h(j, c) = table(id, c) + positions(j, c);
  }
  return h;
}

void embed_backward(std::span<const int> ids, const Matrix& dh, Matrix& d_table, Matrix& d_positions) {
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const auto id = static_cast<std::size_t>(ids[j]);
    for (std::size_t c = 0; c < dh.cols(); ++c) {
      d_table(id, c) += dh(j, c);
      d_positions(j, c) += dh(j, c);
    }
  }
}

}  // namespace

ModelConfig ModelConfig::full_scale(int vocab_size, int ngram_vocab_size) {
  ModelConfig c;
  c.layers_main = 12;
  c.layers_ngram = 6;
  c.hidden_dim = 768;
  c.heads = 12;
  c.ffn_dim = 3072;
  c.max_seq_len = 512;
  c.max_ngrams = 128;
  c.vocab_size = vocab_size;
  c.ngram_vocab_size = ngram_vocab_size;
  return c;
}

void ModelConfig::validate() const {
  const auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(layers_main, "layers_main");
  positive(hidden_dim, "hidden_dim");
  positive(heads, "heads");
  positive(ffn_dim, "ffn_dim");
  positive(max_seq_len, "max_seq_len");
  positive(max_ngrams, "max_ngrams");
  positive(seq_classes, "seq_classes");
  positive(token_classes, "token_classes");
  if (vocab_size <= kNumSpecialTokens) throw ConfigError("vocab_size must exceed the special tokens");
  if (ngram_vocab_size < 0) throw ConfigError("ngram_vocab_size must be non-negative");
  if (layers_ngram < 0 || layers_ngram > layers_main) {
    throw ConfigError("layers_ngram must lie in [0, layers_main]");
  }
  if (hidden_dim % heads != 0) throw ConfigError("hidden_dim must be divisible by heads");
  if (max_ngrams > max_seq_len) throw ConfigError("max_ngrams cannot exceed max_seq_len");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw ConfigError("mask_rate must lie in [0, 1]");
}

std::string ModelConfig::serialize() const {
  std::ostringstream out;
  out.precision(17);
  out << "layers_main=" << layers_main << '\n'
      << "layers_ngram=" << layers_ngram << '\n'
      << "hidden_dim=" << hidden_dim << '\n'
      << "heads=" << heads << '\n'
      << "ffn_dim=" << ffn_dim << '\n'
      << "max_seq_len=" << max_seq_len << '\n'
      << "max_ngrams=" << max_ngrams << '\n'
      << "vocab_size=" << vocab_size << '\n'
      << "ngram_vocab_size=" << ngram_vocab_size << '\n'
      << "seq_classes=" << seq_classes << '\n'
      << "token_classes=" << token_classes << '\n'
      << "mask_rate=" << mask_rate << '\n'
      << "init_std=" << init_std << '\n'
      << "ln_eps=" << ln_eps << '\n';
  return out.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::map<std::string, int*> ints = {
      {"layers_main", &c.layers_main}, {"layers_ngram", &c.layers_ngram},
      {"hidden_dim", &c.hidden_dim},   {"heads", &c.heads},
      {"ffn_dim", &c.ffn_dim},         {"max_seq_len", &c.max_seq_len},
      {"max_ngrams", &c.max_ngrams},   {"vocab_size", &c.vocab_size},
      {"ngram_vocab_size", &c.ngram_vocab_size}, {"seq_classes", &c.seq_classes},
      {"token_classes", &c.token_classes},
  };
  std::map<std::string, double*> reals = {
      {"mask_rate", &c.mask_rate}, {"init_std", &c.init_std}, {"ln_eps", &c.ln_eps}};
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (auto it = ints.find(key); it != ints.end()) *it->second = std::stoi(value);
      if (auto it = reals.find(key); it != reals.end()) *it->second = std::stod(value);
    } catch (const std::exception&) {
      throw ParseError("bad model config value for " + key + ": '" + value + "'");
    }
  }
  return c;
}

ModelParams ModelParams::zeros(const ModelConfig& c) {
  c.validate();
  const auto d = static_cast<std::size_t>(c.hidden_dim);
  ModelParams p;
  p.token_embedding = Matrix(static_cast<std::size_t>(c.vocab_size), d);
  p.position_embedding = Matrix(static_cast<std::size_t>(c.max_seq_len), d);
  p.ngram_embedding = Matrix(static_cast<std::size_t>(c.ngram_vocab_size), d);
  for (int i = 0; i < c.layers_main; ++i) p.main_layers.push_back(zero_layer(c));
  for (int i = 0; i < c.layers_ngram; ++i) p.ngram_layers.push_back(zero_layer(c));
  p.mlm_weight = Matrix(d, static_cast<std::size_t>(c.vocab_size));
  p.mlm_bias = Matrix(1, static_cast<std::size_t>(c.vocab_size));
  p.seq_weight = Matrix(d, static_cast<std::size_t>(c.seq_classes));
  p.seq_bias = Matrix(1, static_cast<std::size_t>(c.seq_classes));
  p.token_weight = Matrix(d, static_cast<std::size_t>(c.token_classes));
  p.token_bias = Matrix(1, static_cast<std::size_t>(c.token_classes));
  return p;
}

ModelParams ModelParams::init(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = zeros(c);
  std::mt19937_64 main_rng(seed);
  std::mt19937_64 ngram_rng(seed ^ 0x9E3779B97F4A7C15ull);
  fill_normal(p.token_embedding, main_rng, c.init_std);
  fill_normal(p.position_embedding, main_rng, c.init_std);
  for (auto& l : p.main_layers) init_layer(l, main_rng, c.init_std);
  fill_normal(p.mlm_weight, main_rng, c.init_std);
  fill_normal(p.seq_weight, main_rng, c.init_std);
  fill_normal(p.token_weight, main_rng, c.init_std);
  fill_normal(p.ngram_embedding, ngram_rng, c.init_std);
  for (auto& l : p.ngram_layers) init_layer(l, ngram_rng, c.init_std);
  return p;
}

std::vector<NamedParam> ModelParams::named() {
  std::vector<NamedParam> out;
  visit_params(*this, [&](const std::string& name, Matrix& m, bool decay) { out.push_back({name, &m, decay}); });
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit_params(*this, [&](const std::string&, const Matrix& m, bool) { n += m.size(); });
  return n;
}

void Batch::validate(const ModelConfig& config) const {
  const std::size_t n = token_ids.size();
  if (n == 0) throw DataError("empty batch");
  if (n > static_cast<std::size_t>(config.max_seq_len)) throw DataError("batch exceeds max_seq_len");
  if (!attention_mask.empty() && attention_mask.size() != n) throw ShapeError("attention mask length differs");
  if (gram_ids.size() > static_cast<std::size_t>(config.max_ngrams)) throw DataError("too many grams");
  if (position_matrix.rows != n || position_matrix.cols != gram_ids.size()) {
    if (!(gram_ids.empty() && position_matrix.cols == 0)) {
      throw ShapeError("position matrix is " + std::to_string(position_matrix.rows) + "x" +
                       std::to_string(position_matrix.cols) + ", expected " + std::to_string(n) + "x" +
                       std::to_string(gram_ids.size()));
    }
  }
  if (!labels.empty() && labels.size() != n) throw ShapeError("label count differs from token count");
}

Matrix embed_tokens(std::span<const int> token_ids, const ModelParams& params) {
  return embed(token_ids, params.token_embedding, params.position_embedding, "token");
}

Matrix embed_ngrams(std::span<const int> gram_ids, const ModelParams& params) {
  return embed(gram_ids, params.ngram_embedding, params.position_embedding, "n-gram");
}

Matrix encoder_layer(const Matrix& input, const LayerParams& layer, const ModelConfig& config,
                     std::span<const bool> mask, LayerCache* cache, const std::string& label) {
  LayerCache local;
  LayerCache& c = cache ? *cache : local;
  const std::size_t n = input.rows();
  const std::size_t d = input.cols();
  const auto heads = static_cast<std::size_t>(config.heads);
  const std::size_t dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  if (!mask.empty() && mask.size() != n) throw ShapeError("attention mask length differs");

  c.input = input;
  c.q = linear(input, layer.wq, layer.bq);
  c.k = linear(input, layer.wk, layer.bk);
  c.v = linear(input, layer.wv, layer.bv);
  c.context = Matrix(n, d);
  c.probs.assign(heads, Matrix(n, n));
  std::vector<double> scores(n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dk;
    Matrix& probs = c.probs[h];
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask.empty() && !mask[j]) continue;
        double s = 0.0;
        for (std::size_t t = 0; t < dk; ++t) s += c.q(i, off + t) * c.k(j, off + t);
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      if (mx == -std::numeric_limits<double>::infinity()) continue;
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask.empty() && !mask[j]) continue;
        probs(i, j) = std::exp(scores[j] - mx);
        z += probs(i, j);
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double p = probs(i, j) / z;
        probs(i, j) = p;
        if (p == 0.0) continue;
        for (std::size_t t = 0; t < dk; ++t) c.context(i, off + t) += p * c.v(j, off + t);
      }
    }
  }

  Matrix residual1 = linear(c.context, layer.wo, layer.bo);
  add_inplace(residual1, input);
  c.norm1_out = layer_norm(residual1, layer.ln1_gain, layer.ln1_bias, config.ln_eps, c.norm1_hat,
                           c.norm1_inv_std);
  c.ffn_pre = linear(c.norm1_out, layer.w1, layer.b1);
  c.ffn_act = c.ffn_pre;
  for (double& v : c.ffn_act.data()) v = gelu(v);
  Matrix residual2 = linear(c.ffn_act, layer.w2, layer.b2);
  add_inplace(residual2, c.norm1_out);
  Matrix out = layer_norm(residual2, layer.ln2_gain, layer.ln2_bias, config.ln_eps, c.norm2_hat,
                          c.norm2_inv_std);
  check_finite(out, label);
  return out;
}

Matrix encoder_layer_backward(const Matrix& d_output, const LayerParams& layer, const LayerCache& c,
                              const ModelConfig& config, LayerParams& g) {
  const std::size_t n = d_output.rows();
  const std::size_t d = d_output.cols();
  const auto heads = static_cast<std::size_t>(config.heads);
  const std::size_t dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  const Matrix d_res2 = layer_norm_backward(d_output, layer.ln2_gain, c.norm2_hat, c.norm2_inv_std,
                                            g.ln2_gain, g.ln2_bias);
  Matrix d_act = linear_backward(d_res2, c.ffn_act, layer.w2, g.w2, g.b2);
  for (std::size_t i = 0; i < d_act.size(); ++i) d_act.data()[i] *= gelu_grad(c.ffn_pre.data()[i]);
  Matrix d_norm1 = linear_backward(d_act, c.norm1_out, layer.w1, g.w1, g.b1);
  add_inplace(d_norm1, d_res2);
  const Matrix d_res1 = layer_norm_backward(d_norm1, layer.ln1_gain, c.norm1_hat, c.norm1_inv_std,
                                            g.ln1_gain, g.ln1_bias);
  const Matrix d_context = linear_backward(d_res1, c.context, layer.wo, g.wo, g.bo);

  Matrix dq(n, d), dk_m(n, d), dv(n, d);
  std::vector<double> d_probs(n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dk;
    const Matrix& probs = c.probs[h];
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double p = probs(i, j);
        double s = 0.0;
        for (std::size_t t = 0; t < dk; ++t) {
          s += d_context(i, off + t) * c.v(j, off + t);
          dv(j, off + t) += p * d_context(i, off + t);
        }
        d_probs[j] = s;
        dot += p * s;
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double ds = probs(i, j) * (d_probs[j] - dot) * scale;
        if (ds == 0.0) continue;
        for (std::size_t t = 0; t < dk; ++t) {
          dq(i, off + t) += ds * c.k(j, off + t);
          dk_m(j, off + t) += ds * c.q(i, off + t);
        }
      }
    }
  }

  Matrix d_input = d_res1;
  add_inplace(d_input, linear_backward(dq, c.input, layer.wq, g.wq, g.bq));
  add_inplace(d_input, linear_backward(dk_m, c.input, layer.wk, g.wk, g.bk));
  add_inplace(d_input, linear_backward(dv, c.input, layer.wv, g.wv, g.bv));
  return d_input;
}

Matrix inject(const Matrix& hidden, const Matrix& ngram_hidden, const PositionMatrix& p) {
  if (p.rows != hidden.rows() || p.cols != ngram_hidden.rows() || hidden.cols() != ngram_hidden.cols()) {
    throw ShapeError("inject: hidden " + std::to_string(hidden.rows()) + "x" + std::to_string(hidden.cols()) +
                     ", n-gram hidden " + std::to_string(ngram_hidden.rows()) + "x" +
                     std::to_string(ngram_hidden.cols()) + ", P " + std::to_string(p.rows) + "x" +
                     std::to_string(p.cols));
  }
  Matrix out = hidden;
  for (std::size_t i = 0; i < p.rows; ++i) {
    for (std::size_t t = 0; t < p.cols; ++t) {
      const double w = p.at(i, t);
      if (w == 0.0) continue;
      for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) += w * ngram_hidden(t, c);
    }
  }
  return out;
}

ForwardTrace forward(const Batch& batch, const ModelParams& params, const ModelConfig& config) {
  config.validate();
  batch.validate(config);
  ForwardTrace trace;
  trace.batch = &batch;
  const std::vector<bool>& mask_bits = batch.attention_mask;
  // std::vector<bool> has no contiguous storage; copy into a plain array.
  const std::unique_ptr<bool[]> mask_store(new bool[mask_bits.size() + 1]);
  for (std::size_t i = 0; i < mask_bits.size(); ++i) mask_store[i] = mask_bits[i];
  const std::span<const bool> mask(mask_store.get(), mask_bits.size());

  Matrix h = embed_tokens(batch.token_ids, params);
  trace.hidden.push_back(h);
  const bool use_grams = !batch.gram_ids.empty() && config.layers_ngram > 0;
  Matrix g;
  if (use_grams) {
    g = embed_ngrams(batch.gram_ids, params);
    trace.ngram_hidden.push_back(g);
  }

  trace.main_cache.resize(static_cast<std::size_t>(config.layers_main));
  if (use_grams) trace.ngram_cache.resize(static_cast<std::size_t>(config.layers_ngram));
  for (int l = 0; l < config.layers_main; ++l) {
    const auto li = static_cast<std::size_t>(l);
    h = encoder_layer(h, params.main_layers[li], config, mask, &trace.main_cache[li],
                      "main layer " + std::to_string(l + 1));
    const bool inj = use_grams && l < config.layers_ngram;
    if (inj) {
      g = encoder_layer(g, params.ngram_layers[li], config, {}, &trace.ngram_cache[li],
                        "n-gram layer " + std::to_string(l + 1));
      trace.ngram_hidden.push_back(g);
      h = inject(h, g, batch.position_matrix);
      check_finite(h, "injection after main layer " + std::to_string(l + 1));
    }
    trace.injected.push_back(inj);
    trace.hidden.push_back(h);
  }
  return trace;
}

Matrix mlm_logits(const ForwardTrace& trace, const ModelParams& params) {
  return linear(trace.output(), params.mlm_weight, params.mlm_bias);
}

Matrix classify_sequence(const ForwardTrace& trace, const ModelParams& params) {
  if (trace.batch == nullptr || trace.batch->token_ids.empty() || trace.batch->token_ids[0] != kClsId) {
    throw DataError("sequence classification needs [CLS] at position 0");
  }
  Matrix pooled(1, trace.output().cols());
  std::copy(trace.output().row(0).begin(), trace.output().row(0).end(), pooled.row(0).begin());
  return linear(pooled, params.seq_weight, params.seq_bias);
}

Matrix classify_tokens(const ForwardTrace& trace, const ModelParams& params) {
  return linear(trace.output(), params.token_weight, params.token_bias);
}

namespace {

LossStats head_loss(const ForwardTrace& trace, Task task, const ModelParams& params, ModelParams* grads,
                    double weight, Matrix* d_hidden) {
  const Batch& batch = *trace.batch;
  const Matrix& hidden = trace.output();
  LossStats stats;
  bool correct = false;

  if (task == Task::kSequence) {
    if (batch.sequence_label < 0) return stats;
    const Matrix logits = classify_sequence(trace, params);
    checked_id(batch.sequence_label, logits.cols(), "sequence label");
    Matrix d_logits(1, logits.cols());
    stats.loss_sum = softmax_xent(logits.row(0), batch.sequence_label,
                                  grads ? d_logits.row(0) : std::span<double>{}, weight, correct);
    stats.count = 1;
    stats.correct = correct ? 1 : 0;
    if (grads) {
      Matrix pooled(1, hidden.cols());
      std::copy(hidden.row(0).begin(), hidden.row(0).end(), pooled.row(0).begin());
      const Matrix d_pooled = linear_backward(d_logits, pooled, params.seq_weight, grads->seq_weight, grads->seq_bias);
      *d_hidden = Matrix(hidden.rows(), hidden.cols());
      std::copy(d_pooled.row(0).begin(), d_pooled.row(0).end(), d_hidden->row(0).begin());
    }
    return stats;
  }

  const bool mlm = task == Task::kMlm;
  const Matrix& w = mlm ? params.mlm_weight : params.token_weight;
  const Matrix& b = mlm ? params.mlm_bias : params.token_bias;
  if (batch.labels.empty()) return stats;
  const Matrix logits = linear(hidden, w, b);
  Matrix d_logits(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    const int label = batch.labels[i];
    if (label < 0) continue;
    checked_id(label, logits.cols(), mlm ? "MLM label" : "token label");
    stats.loss_sum += softmax_xent(logits.row(i), label, grads ? d_logits.row(i) : std::span<double>{}, weight,
                                   correct);
    ++stats.count;
    stats.correct += correct ? 1 : 0;
  }
  if (grads && stats.count > 0) {
    Matrix& dw = mlm ? grads->mlm_weight : grads->token_weight;
    Matrix& db = mlm ? grads->mlm_bias : grads->token_bias;
    *d_hidden = linear_backward(d_logits, hidden, w, dw, db);
  }
  return stats;
}

void backward_network(const ForwardTrace& trace, const ModelParams& params, const ModelConfig& config,
                      ModelParams& grads, Matrix d_hidden) {
  const Batch& batch = *trace.batch;
  const PositionMatrix& p = batch.position_matrix;
  std::vector<Matrix> d_gram_out(trace.injected.size());

  for (std::size_t l = trace.injected.size(); l-- > 0;) {
    if (trace.injected[l]) {
      Matrix dg(p.cols, d_hidden.cols());
      for (std::size_t i = 0; i < p.rows; ++i) {
        for (std::size_t t = 0; t < p.cols; ++t) {
          const double wgt = p.at(i, t);
          if (wgt == 0.0) continue;
          for (std::size_t c = 0; c < dg.cols(); ++c) dg(t, c) += wgt * d_hidden(i, c);
        }
      }
      d_gram_out[l] = std::move(dg);
    }
    d_hidden = encoder_layer_backward(d_hidden, params.main_layers[l], trace.main_cache[l], config,
                                      grads.main_layers[l]);
  }
  embed_backward(batch.token_ids, d_hidden, grads.token_embedding, grads.position_embedding);

  if (trace.ngram_cache.empty()) return;
  Matrix dg(p.cols, d_hidden.cols());
  for (std::size_t l = trace.ngram_cache.size(); l-- > 0;) {
    if (l < d_gram_out.size() && trace.injected[l]) add_inplace(dg, d_gram_out[l]);
    dg = encoder_layer_backward(dg, params.ngram_layers[l], trace.ngram_cache[l], config, grads.ngram_layers[l]);
  }
  embed_backward(batch.gram_ids, dg, grads.ngram_embedding, grads.position_embedding);
}

}  // namespace

LossStats accumulate_loss_and_gradients(const ForwardTrace& trace, Task task, const ModelParams& params,
                                        const ModelConfig& config, ModelParams& grads, double weight) {
  Matrix d_hidden;
  const LossStats stats = head_loss(trace, task, params, &grads, weight, &d_hidden);
  if (stats.count > 0) backward_network(trace, params, config, grads, std::move(d_hidden));
  return stats;
}

LossStats evaluate_loss(const ForwardTrace& trace, Task task, const ModelParams& params) {
  return head_loss(trace, task, params, nullptr, 0.0, nullptr);
}

LossAndGrad loss_and_backward(const ForwardTrace& trace, Task task, const ModelParams& params,
                              const ModelConfig& config) {
  LossAndGrad out;
  out.grads = ModelParams::zeros(config);
  const LossStats probe = evaluate_loss(trace, task, params);
  if (probe.count == 0) return out;
  out.stats = accumulate_loss_and_gradients(trace, task, params, config, out.grads, 1.0 / probe.count);
  out.loss = out.stats.mean();
  return out;
}

}  // namespace ngmf
