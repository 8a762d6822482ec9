#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "model_fixtures.h"
#include "ngmf/checkpoint.h"
#include "ngmf/error.h"
#include "ngmf/mlm.h"
#include "ngmf/optim.h"
#include "ngmf/training.h"
#include "synthetic_setup.h"
#include "test_support.h"

namespace ngmf {
namespace {

using testing::synthetic_setup;

bool same_params(ModelParams a, ModelParams b) {
  auto x = a.named();
  auto y = b.named();
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].name != y[i].name || !(*x[i].value == *y[i].value)) return false;
  }
  return true;
}

std::vector<int> ramp(int n) {
  std::vector<int> ids = {kClsId};
  for (int i = 1; i < n; ++i) ids.push_back(3 + i % 40);
  return ids;
}

TEST(Mask, RateZeroSelectsNothing) {
  MaskOptions o;
  o.mask_rate = 0.0;
  const auto ids = ramp(50);
  const MaskedInput m = mlm_mask(ids, o, 50, 1);
  EXPECT_EQ(m.ids, ids);
  EXPECT_TRUE(m.positions.empty());
  for (int l : m.labels) EXPECT_EQ(l, -1);
}

TEST(Mask, RateOneMasksEveryRegularPosition) {
  MaskOptions o;
  o.mask_rate = 1.0;
  o.replace_mask = 1.0;
  o.replace_random = 0.0;
  auto ids = ramp(30);
  ids[5] = kPadId;
  const MaskedInput m = mlm_mask(ids, o, 50, 2);
  ASSERT_EQ(m.ids.size(), ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < kNumSpecialTokens) {
      EXPECT_EQ(m.ids[i], ids[i]);
      EXPECT_EQ(m.labels[i], -1);
    } else {
      EXPECT_EQ(m.ids[i], kMaskId);
      EXPECT_EQ(m.labels[i], ids[i]);
    }
  }
  EXPECT_EQ(m.positions.size(), ids.size() - 2);
}

TEST(Mask, SelectionRateAndReplacementSplit) {
  const MaskOptions o;
  const auto ids = ramp(10001);
  const MaskedInput m = mlm_mask(ids, o, 50, 3);
  const double rate = static_cast<double>(m.positions.size()) / 10000.0;
  EXPECT_NEAR(rate, 0.15, 0.01);
  int masked = 0, random = 0, kept = 0;
  for (std::size_t p : m.positions) {
    EXPECT_EQ(m.labels[p], ids[p]);
    if (m.ids[p] == kMaskId) {
      ++masked;
    } else if (m.ids[p] == ids[p]) {
      ++kept;
    } else {
      ++random;
      EXPECT_GE(m.ids[p], kNumSpecialTokens);
      EXPECT_LT(m.ids[p], 50);
    }
  }
  const double n = static_cast<double>(m.positions.size());
  EXPECT_NEAR(masked / n, 0.8, 0.03);
  // A random draw can land on the original id and count as kept.
  EXPECT_NEAR((random + kept) / n, 0.2, 0.03);
  EXPECT_GT(random, 0);
}

TEST(Mask, DeterministicInSeed) {
  const auto ids = ramp(200);
  EXPECT_EQ(mlm_mask(ids, {}, 50, 9).ids, mlm_mask(ids, {}, 50, 9).ids);
  EXPECT_NE(mlm_mask(ids, {}, 50, 9).labels, mlm_mask(ids, {}, 50, 10).labels);
}

TEST(Mask, InvalidOptions) {
  MaskOptions o;
  o.mask_rate = 1.5;
  EXPECT_THROW(mlm_mask(ramp(5), o, 50, 1), ConfigError);
  o = {};
  o.replace_mask = 0.95;
  EXPECT_THROW(mlm_mask(ramp(5), o, 50, 1), ConfigError);
}

TEST(Warmup, LinearThenConstant) {
  AdamWOptions o;
  o.peak_lr = 2e-3;
  o.warmup_steps = 1000;
  EXPECT_DOUBLE_EQ(warmup_lr(o, 1), 2e-6);
  EXPECT_DOUBLE_EQ(warmup_lr(o, 500), 1e-3);
  EXPECT_DOUBLE_EQ(warmup_lr(o, 1000), 2e-3);
  EXPECT_DOUBLE_EQ(warmup_lr(o, 5000), 2e-3);
  o.warmup_steps = 0;
  EXPECT_DOUBLE_EQ(warmup_lr(o, 1), 2e-3);
}

TEST(AdamW, ZeroGradientsOnlyDecay) {
  const ModelConfig c = testing::tiny_config();
  AdamWOptions o;
  o.warmup_steps = 0;
  o.peak_lr = 0.1;
  o.weight_decay = 0.5;
  AdamW opt(c, o);
  ModelParams p = ModelParams::init(c, 1);
  testing::randomize(p, 2);
  const ModelParams before = p;
  ModelParams g = ModelParams::zeros(c);
  EXPECT_DOUBLE_EQ(opt.step(p, g), 0.1);
  auto now = p.named();
  auto was = const_cast<ModelParams&>(before).named();
  for (std::size_t k = 0; k < now.size(); ++k) {
    const double factor = now[k].decay ? 1.0 - 0.1 * 0.5 : 1.0;
    for (std::size_t i = 0; i < now[k].value->size(); ++i) {
      EXPECT_NEAR(now[k].value->data()[i], was[k].value->data()[i] * factor, 1e-15) << now[k].name;
    }
  }
}

TEST(AdamW, FirstStepIsSignedLearningRate) {
  const ModelConfig c = testing::tiny_config();
  AdamWOptions o;
  o.warmup_steps = 1000;
  o.peak_lr = 1.0;
  o.weight_decay = 0.0;
  AdamW opt(c, o);
  ModelParams p = ModelParams::zeros(c);
  ModelParams g = ModelParams::zeros(c);
  g.mlm_bias(0, 0) = 3.0;
  g.mlm_bias(0, 1) = -0.25;
  EXPECT_DOUBLE_EQ(opt.step(p, g), 1e-3);
  EXPECT_NEAR(p.mlm_bias(0, 0), -1e-3 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.mlm_bias(0, 1), 1e-3 * 0.25 / (0.25 + 1e-8), 1e-15);
  EXPECT_EQ(p.mlm_bias(0, 2), 0.0);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(AdamW, NonFiniteGradientSkipsStep) {
  const ModelConfig c = testing::tiny_config();
  AdamW opt(c, {});
  ModelParams p = ModelParams::init(c, 3);
  const ModelParams before = p;
  ModelParams g = ModelParams::zeros(c);
  g.seq_bias(0, 0) = std::nan("");
  EXPECT_EQ(opt.step(p, g), 0.0);
  EXPECT_EQ(opt.skipped(), 1);
  EXPECT_EQ(opt.steps(), 0);
  EXPECT_TRUE(same_params(p, before));
  EXPECT_TRUE(same_params(opt.first_moment(), ModelParams::zeros(c)));
}

TEST(AdamW, RejectsBadOptions) {
  AdamWOptions o;
  o.peak_lr = 0.0;
  EXPECT_THROW(AdamW(testing::tiny_config(), o), ConfigError);
  o = {};
  o.beta2 = 1.0;
  EXPECT_THROW(AdamW(testing::tiny_config(), o), ConfigError);
}

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.config = testing::tiny_config();
  ck.params = ModelParams::init(ck.config, 4);
  ck.step = 17;
  ck.adam_m = ModelParams::init(ck.config, 5);
  ck.adam_v = ModelParams::init(ck.config, 6);
  ck.metadata = {{"ucw_vocab", "v.txt"}, {"note", "tab\tand\nnewline"}};
  return ck;
}

TEST(Checkpoint, RoundTripIsExact) {
  const Checkpoint ck = sample_checkpoint();
  std::stringstream buf;
  write_checkpoint(buf, ck);
  const Checkpoint back = read_checkpoint(buf, "mem");
  EXPECT_EQ(back.config, ck.config);
  EXPECT_EQ(back.step, 17);
  EXPECT_EQ(back.metadata, ck.metadata);
  EXPECT_TRUE(same_params(back.params, ck.params));
  ASSERT_TRUE(back.adam_m && back.adam_v);
  EXPECT_TRUE(same_params(*back.adam_m, *ck.adam_m));
  EXPECT_TRUE(same_params(*back.adam_v, *ck.adam_v));
}

TEST(Checkpoint, WithoutMomentsAndOnDisk) {
  Checkpoint ck = sample_checkpoint();
  ck.adam_m.reset();
  ck.adam_v.reset();
  const auto path = (testing::temp_dir("ckpt") / "a.ckpt").string();
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_FALSE(back.adam_m);
  EXPECT_TRUE(same_params(back.params, ck.params));
}

TEST(Checkpoint, CorruptInput) {
  std::stringstream bad("not a checkpoint at all");
  EXPECT_THROW(read_checkpoint(bad, "mem"), ParseError);
  std::stringstream buf;
  write_checkpoint(buf, sample_checkpoint());
  const std::string full = buf.str();
  std::stringstream cut(full.substr(0, full.size() / 2));
  EXPECT_THROW(read_checkpoint(cut, "mem"), ParseError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), Error);
}

TEST(TokenTable, SpecialsBaseThenMerges) {
  const auto trained = train_ucw({testing::fragment()}, 1000);
  const TokenTable table(trained.vocab);
  EXPECT_EQ(table.size(), 3 + static_cast<int>(trained.vocab.size()));
  EXPECT_EQ(table.token(kPadId), "[PAD]");
  EXPECT_EQ(table.token(kMaskId), "[MASK]");
  EXPECT_EQ(table.token(kClsId), "[CLS]");
  int id = kNumSpecialTokens;
  for (const auto& b : trained.vocab.base) EXPECT_EQ(table.token(id++), b);
  for (const auto& m : trained.vocab.merges) EXPECT_EQ(table.token(id++), m.merged);
  EXPECT_EQ(table.id("Bar"), table.find("Bar").value());
  EXPECT_FALSE(table.find("Pitch_99"));
  EXPECT_THROW(table.id("Pitch_99"), DataError);
}

TEST(Encode, TruncatesAndPrependsCls) {
  const auto trained = train_ucw({testing::fragment()}, 1000);
  const TokenTable table(trained.vocab);
  const NgramVocab grams = harvest_ngrams({trained.segmented[0].tokens}, 3, 1);
  ModelConfig c = testing::tiny_config();
  c.max_seq_len = 6;
  c.max_ngrams = 4;
  const EncodedSequence e = encode_sequence(trained.segmented[0], table, grams, c);
  ASSERT_EQ(e.ids.size(), 6u);
  EXPECT_EQ(e.ids[0], kClsId);
  for (std::size_t i = 1; i < 6; ++i) EXPECT_EQ(table.token(e.ids[i]), trained.segmented[0].tokens[i - 1]);
  EXPECT_LE(e.gram_ids.size(), 4u);
  EXPECT_GT(e.gram_ids.size(), 0u);
  EXPECT_EQ(e.position_matrix.rows, 6u);
  EXPECT_EQ(e.position_matrix.cols, e.gram_ids.size());
  for (std::size_t j = 0; j < e.position_matrix.cols; ++j) EXPECT_EQ(e.position_matrix.at(0, j), 0.0);
  for (std::size_t i = 1; i < 6; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < e.position_matrix.cols; ++j) sum += e.position_matrix.at(i, j);
    EXPECT_LE(sum, 1.0);
  }
  // Every kept gram lies inside the kept tokens.
  for (int g : e.gram_ids) {
    const auto& toks = grams.entry(static_cast<std::size_t>(g)).tokens;
    bool inside = false;
    for (std::size_t s = 1; s + toks.size() <= 6; ++s) {
      bool all = true;
      for (std::size_t k = 0; k < toks.size(); ++k) all = all && table.token(e.ids[s + k]) == toks[k];
      inside = inside || all;
    }
    EXPECT_TRUE(inside);
  }
  const Batch plain = make_batch(e, false);
  EXPECT_TRUE(plain.gram_ids.empty());
  EXPECT_EQ(plain.position_matrix.rows, 6u);
  EXPECT_EQ(plain.position_matrix.cols, 0u);
  const Batch full = make_batch(e, true);
  EXPECT_EQ(full.gram_ids, e.gram_ids);
}

TEST(TokenLabels, FirstEventOfEachToken) {
  const auto trained = train_ucw({testing::fragment()}, 1000);
  const UcwSequence& seq = trained.segmented[0];
  std::vector<int> event_labels(18);
  for (int i = 0; i < 18; ++i) event_labels[static_cast<std::size_t>(i)] = i;
  const auto labels = token_labels_for(seq, event_labels, seq.size());
  ASSERT_EQ(labels.size(), seq.size() + 1);
  EXPECT_EQ(labels[0], -1);
  int offset = 0;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    EXPECT_EQ(labels[t + 1], offset);
    offset += static_cast<int>(split_token(seq.tokens[t]).size());
  }
  EXPECT_EQ(offset, 18);
  EXPECT_EQ(token_labels_for(seq, event_labels, 3).size(), 4u);
  event_labels.pop_back();
  EXPECT_THROW(token_labels_for(seq, event_labels, seq.size()), DataError);
}

TEST(Split, AboutOneInTen) {
  int val = 0;
  for (int i = 0; i < 10000; ++i) val += is_validation("example " + std::to_string(i));
  EXPECT_GT(val, 900);
  EXPECT_LT(val, 1100);
  EXPECT_EQ(is_validation("abc"), is_validation("abc"));
}

TEST(Pretrain, RepeatableAndLearns) {
  const auto s = synthetic_setup(16, 2);
  PretrainOptions o;
  o.steps = 60;
  o.batch_size = 4;
  o.adam.warmup_steps = 10;
  std::ostringstream log1, log2;
  const auto a = pretrain(s.data, s.config, o, nullptr, &log1);
  const auto b = pretrain(s.data, s.config, o, nullptr, &log2);
  EXPECT_EQ(log1.str(), log2.str());
  EXPECT_TRUE(same_params(a.params, b.params));
  ASSERT_EQ(a.log.size(), 60u);
  EXPECT_EQ(a.steps, 60);
  EXPECT_EQ(a.skipped_steps, 0);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += a.log[static_cast<std::size_t>(i)].loss;
    tail += a.log[a.log.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  EXPECT_LT(tail, head);
  EXPECT_EQ(format_step_log(a.log[0]).find('\t'), 1u);

  o.seed = 2;
  const auto c = pretrain(s.data, s.config, o);
  EXPECT_FALSE(same_params(a.params, c.params));
}

TEST(Pretrain, ContinuesFromStart) {
  const auto s = synthetic_setup(16, 2);
  PretrainOptions o;
  o.steps = 5;
  o.batch_size = 2;
  const auto a = pretrain(s.data, s.config, o);
  const auto b = pretrain(s.data, s.config, o, &a.params);
  EXPECT_FALSE(same_params(a.params, b.params));
  EXPECT_THROW(pretrain({}, s.config, o), DataError);
}

std::vector<LabeledExample> motif_examples(const testing::SyntheticSetup& s) {
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    LabeledExample ex;
    ex.seq = s.data[i];
    ex.sequence_label = testing::motif_of(s.corpus[i]);
    out.push_back(ex);
  }
  return out;
}

TEST(Finetune, SeparableMotifs) {
  const auto s = synthetic_setup(16, 2);
  const auto all = motif_examples(s);
  std::vector<LabeledExample> train(all.begin(), all.begin() + 24), val(all.begin() + 24, all.end());
  FinetuneOptions o;
  o.epochs = 15;
  o.batch_size = 4;
  o.adam.warmup_steps = 5;
  ModelParams start = ModelParams::init(s.config, 3);
  const auto r = finetune(train, val, s.config, start, o);
  ASSERT_EQ(r.log.size(), 15u);
  EXPECT_GE(classification_accuracy(train, r.params, s.config, Task::kSequence, true), 0.9);
  EXPECT_GE(r.log.back().val_acc, 0.9);
  EXPECT_TRUE(std::isnan(classification_accuracy({}, r.params, s.config, Task::kSequence, true)));
}

TEST(Finetune, TwoClassSeparableReachesFullTrainAccuracy) {
  SyntheticOptions so;
  so.motifs = 2;
  so.sequences = 16;
  const auto s = synthetic_setup(16, 2, 2, 1, so);
  const auto train = motif_examples(s);
  FinetuneOptions o;
  o.epochs = 50;  // 4 batches per epoch, 200 steps
  o.batch_size = 4;
  o.adam.warmup_steps = 10;
  const auto r = finetune(train, {}, s.config, ModelParams::init(s.config, 5), o);
  EXPECT_EQ(classification_accuracy(train, r.params, s.config, Task::kSequence, true), 1.0);
  EXPECT_TRUE(std::isnan(r.log.back().val_acc));
}

TEST(Finetune, ResetHeadTouchesOnlyHead) {
  const ModelConfig c = testing::tiny_config();
  ModelParams p = ModelParams::init(c, 1);
  const ModelParams before = p;
  reset_head(p, c, Task::kToken, 77);
  EXPECT_EQ(p.token_embedding, before.token_embedding);
  EXPECT_EQ(p.seq_weight, before.seq_weight);
  EXPECT_NE(p.token_weight, before.token_weight);
  for (double b : p.token_bias.data()) EXPECT_EQ(b, 0.0);
}

}  // namespace
}  // namespace ngmf
