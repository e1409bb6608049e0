#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "tape/tasks/eval.hpp"

using namespace tape;
using namespace tape::tasks;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.N = 48;
  c.C = 16;
  c.H = 2;
  c.M = 4;
  c.depth = 1;
  c.vocab = kAdditionVocab;
  c.I = 4;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.lr = 3e-3;
  t.batch = 4;
  t.steps = 3;
  t.seed = 5;
  t.max_len = 3;
  t.train_size = 64;
  return t;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("tape_tasks_" + name)).string();
}

bool same_weights(Weights& a, Weights& b, const ModelConfig& c) {
  std::vector<const Tensor*> ta, tb;
  model::for_each_param(a, c, [&](const std::string&, Tensor& t, bool) { ta.push_back(&t); });
  model::for_each_param(b, c, [&](const std::string&, Tensor& t, bool) { tb.push_back(&t); });
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (ta[i]->shape() != tb[i]->shape() ||
        std::memcmp(ta[i]->data().data(), tb[i]->data().data(), ta[i]->size() * sizeof(double)) != 0)
      return false;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Data

TEST(Addition, SingleDigitSums) {
  EXPECT_EQ((AdditionSample{"7", "5"}).text(), "7+5=12");
  Rng r(1);
  for (const auto& s : gen_addition(1, 200, r)) {
    EXPECT_EQ(s.len_a(), 1u);
    EXPECT_EQ(s.len_b(), 1u);
    EXPECT_EQ(std::stoi(s.sum()), std::stoi(s.a) + std::stoi(s.b));
  }
}

TEST(Addition, SumOracle) {
  EXPECT_EQ((AdditionSample{"12", "34"}).sum(), "46");
  EXPECT_EQ((AdditionSample{"999", "1"}).sum(), "1000");
  EXPECT_EQ((AdditionSample{"0", "0"}).sum(), "0");
  Rng r(2);
  for (const auto& s : gen_addition(9, 500, r))
    EXPECT_EQ(std::stoull(s.sum()), std::stoull(s.a) + std::stoull(s.b));
}

TEST(Addition, LengthsAreUniformAndLeadingDigitNonzero) {
  Rng r(3);
  const std::size_t n = 100000, L = 8;
  std::vector<std::size_t> hist(L + 1, 0);
  for (const auto& s : gen_addition(L, n, r)) {
    hist[s.len_a()]++;
    hist[s.len_b()]++;
    if (s.len_a() > 1) {
      EXPECT_NE(s.a[0], '0');
    }
    if (s.len_b() > 1) {
      EXPECT_NE(s.b[0], '0');
    }
  }
  // 2e5 operand lengths over 8 bins: p = 1/8, sd ~ 148.
  EXPECT_EQ(hist[0], 0u);
  for (std::size_t k = 1; k <= L; ++k) EXPECT_NEAR(double(hist[k]), 2.0 * n / L, 600.0) << "len " << k;
}

TEST(Addition, SeededDeterminism) {
  Rng a(9), b(9);
  const auto x = gen_addition(10, 50, a), y = gen_addition(10, 50, b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i].text(), y[i].text());
  EXPECT_THROW(gen_addition(0, 1, a), ConfigError);
}

TEST(Tokenizer, LeastSignificantFirstLayout) {
  const Encoded e = tokenize(parse_text("12+34=46"));
  const std::vector<std::size_t> want = {kBosTok, 2, 1, kPlus, 4, 3, kEq, 6, 4, kEos};
  EXPECT_EQ(e.ids, want);
  EXPECT_EQ(e.prompt_len, 7u);
  EXPECT_EQ(e.target(), std::vector<std::size_t>({6, 4, kEos}));
}

TEST(Tokenizer, MostSignificantFirstLayout) {
  const Encoded e = tokenize(parse_text("12+34=46"), DigitOrder::Msd);
  EXPECT_EQ(e.ids, std::vector<std::size_t>({kBosTok, 1, 2, kPlus, 3, 4, kEq, 4, 6, kEos}));
}

TEST(Tokenizer, RoundTrip) {
  Rng r(4);
  for (auto order : {DigitOrder::Lsd, DigitOrder::Msd})
    for (const auto& s : gen_addition(12, 300, r)) EXPECT_EQ(detokenize(tokenize(s, order).ids, order), s.text());
}

TEST(Tokenizer, UnknownSymbols) {
  EXPECT_THROW(parse_text("1a+2=3"), ContractError);
  EXPECT_THROW(parse_text("12-3=9"), ContractError);
  EXPECT_THROW(parse_text("1+2=4"), ContractError);
  EXPECT_THROW(detokenize({kBosTok, 1, kPad, 2}), ContractError);
  EXPECT_THROW(symbol(99), ContractError);
}

TEST(Batch, PadNeverCarriesLoss) {
  Rng r(5);
  std::vector<Encoded> seqs;
  for (const auto& s : gen_addition(6, 16, r)) seqs.push_back(tokenize(s));
  const TrainBatch b = make_batch(seqs);
  for (std::size_t r2 = 0; r2 < b.input.rows; ++r2) {
    std::size_t weighted = 0;
    for (std::size_t t = 0; t < b.input.cols; ++t) {
      const std::size_t k = r2 * b.input.cols + t;
      if (b.targets[k] == kPad) {
        EXPECT_EQ(b.weights[k], 0.0);
      }
      weighted += b.weights[k] > 0.0;
    }
    EXPECT_EQ(weighted, seqs[r2].target().size());
  }
  EXPECT_THROW(make_batch({}), ContractError);
}

TEST(Dataset, ArchiveRoundTrip) {
  TrainConfig tc = tiny_train();
  tc.train_size = 40;
  const AdditionDataset d = make_dataset(tc);
  const std::string path = tmp_path("dataset.tapc");
  io::save_archive(path, dataset_to_archive(d));
  const AdditionDataset back = dataset_from_archive(io::load_archive(path));
  std::remove(path.c_str());
  ASSERT_EQ(back.samples.size(), d.samples.size());
  EXPECT_EQ(back.max_len, d.max_len);
  EXPECT_EQ(back.seed, d.seed);
  for (std::size_t i = 0; i < d.samples.size(); ++i) EXPECT_EQ(back.samples[i].text(), d.samples[i].text());
  io::Archive bad;
  bad.header = "task=other\n";
  EXPECT_THROW(dataset_from_archive(bad), FileError);
}

TEST(WordProblemStream, MirrorsTheGenerator) {
  Rng r(6);
  const auto one = gen_word_problem_lm(1, r);
  EXPECT_EQ(one.ids, std::vector<std::size_t>({10}));
  EXPECT_EQ(one.labels, std::vector<int>({1}));
  Rng a(7), b(7);
  const auto s = gen_word_problem_lm(64, a);
  const auto li = nc1::gen_word_problem(64, b);
  ASSERT_EQ(s.ids.size(), 64u);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(s.ids[i] + 1, std::size_t(li.instance.u[i]));
  EXPECT_EQ(s.labels, nc1::oracle_labels_by_map(li.instance));
}

// ---------------------------------------------------------------------------
// Config

TEST(TrainConfigKv, RoundTripAndUnknownKeys) {
  TrainConfig t;
  t.lr = 3.5e-4;
  t.cosine = true;
  t.order = DigitOrder::Msd;
  t.steps = 77;
  TrainConfig back;
  for (const auto& [k, v] : to_kv(t)) EXPECT_TRUE(apply_kv(back, k, v));
  EXPECT_EQ(to_kv(back), to_kv(t));
  EXPECT_FALSE(apply_kv(back, "model.C", "4"));
  EXPECT_THROW(apply_kv(back, "train.nope", "1"), ConfigError);
  EXPECT_THROW(apply_kv(back, "train.order", "middle"), ConfigError);
  t.batch = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(TrainConfigKv, Schedule) {
  TrainConfig t;
  t.lr = 1.0;
  t.warmup = 10;
  t.steps = 110;
  t.cosine = true;
  t.min_lr_ratio = 0.1;
  EXPECT_DOUBLE_EQ(t.lr_at(0), 0.1);
  EXPECT_DOUBLE_EQ(t.lr_at(9), 1.0);
  EXPECT_DOUBLE_EQ(t.lr_at(10), 1.0);
  EXPECT_NEAR(t.lr_at(60), 0.55, 1e-12);
  EXPECT_NEAR(t.lr_at(110), 0.1, 1e-12);
}

// ---------------------------------------------------------------------------
// Optimizer and gradients

TEST(AdamW, FirstStepOracle) {
  // After one step with bias correction, m_hat = g and v_hat = g^2, so the
  // update is lr * g / (|g| + eps) plus decoupled decay on matrices.
  const ModelConfig c = tiny_model();
  Weights w = model::init_weights(c, 1);
  Weights before = w;
  std::map<std::string, Tensor> grads;
  Rng r(8);
  model::for_each_param(w, c, [&](const std::string& n, Tensor& t, bool tr) {
    if (tr) grads[n] = r.normal_tensor(t.shape());
  });
  TrainConfig tc;
  tc.weight_decay = 0.1;
  AdamState st;
  const double lr = 0.01;
  adamw_update(w, c, grads, st, tc, lr);
  std::map<std::string, Tensor*> after;
  model::for_each_param(w, c, [&](const std::string& n, Tensor& t, bool) { after[n] = &t; });
  model::for_each_param(before, c, [&](const std::string& n, Tensor& p0, bool tr) {
    if (!tr) return;
    const Tensor& g = grads[n];
    for (std::size_t i = 0; i < p0.size(); ++i) {
      double p = p0.data()[i];
      if (p0.rank() >= 2) p -= lr * 0.1 * p;
      const double gi = g.data()[i];
      p -= lr * gi / (std::abs(gi) + tc.eps);
      EXPECT_NEAR(after[n]->data()[i], p, 1e-15) << n;
    }
  });
  EXPECT_EQ(st.t, 1u);
}

TEST(Gradients, PromptPositionsContributeNothing) {
  const ModelConfig c = tiny_model();
  Weights w = model::init_weights(c, 2);
  Rng r(9);
  std::vector<Encoded> seqs;
  for (const auto& s : gen_addition(3, 4, r)) seqs.push_back(tokenize(s));
  TrainBatch b = make_batch(seqs);
  const auto base = loss_and_grad(w, c, b);
  // Scramble targets where the weight is zero.
  for (std::size_t k = 0; k < b.targets.size(); ++k)
    if (b.weights[k] == 0.0) b.targets[k] = (b.targets[k] + 3) % kAdditionVocab;
  const auto moved = loss_and_grad(w, c, b);
  EXPECT_EQ(base.loss, moved.loss);
  for (const auto& [name, g] : base.grads) EXPECT_EQ(max_abs_diff(g, moved.grads.at(name)), 0.0) << name;
}

TEST(Gradients, ShardedMatchesSingle) {
  const ModelConfig c = tiny_model();
  Weights w = model::init_weights(c, 3);
  Rng r(10);
  std::vector<Encoded> seqs;
  for (const auto& s : gen_addition(3, 6, r)) seqs.push_back(tokenize(s));
  const TrainBatch b = make_batch(seqs);
  const auto one = loss_and_grad(w, c, b);
  const auto three = loss_and_grad_sharded(w, c, b, 3);
  EXPECT_NEAR(one.loss, three.loss, 1e-12);
  for (const auto& [name, g] : one.grads) EXPECT_LE(max_abs_diff(g, three.grads.at(name)), 1e-12) << name;
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Train, ZeroStepsLeavesInit) {
  const ModelConfig c = tiny_model();
  TrainConfig tc = tiny_train();
  tc.steps = 0;
  const std::string path = tmp_path("zero.tapc");
  TrainIo io;
  io.checkpoint_path = path;
  auto res = train(c, make_dataset(tc), tc, fresh_state(c, 4), io);
  ModelConfig c2;
  TrainState back = load_checkpoint(path, c2);
  std::remove(path.c_str());
  Weights init = model::init_weights(c, 4);
  EXPECT_TRUE(same_weights(back.w, init, c));
  EXPECT_TRUE(res.curve.empty());
  EXPECT_EQ(back.step, 0u);
}

TEST(Train, FixedSeedIsBitIdentical) {
  const ModelConfig c = tiny_model();
  const TrainConfig tc = tiny_train();
  const auto data = make_dataset(tc);
  auto a = train(c, data, tc, fresh_state(c, 5));
  auto b = train(c, data, tc, fresh_state(c, 5));
  ASSERT_EQ(a.curve.size(), 3u);
  for (std::size_t i = 0; i < a.curve.size(); ++i) EXPECT_EQ(a.curve[i].loss, b.curve[i].loss);
  EXPECT_TRUE(same_weights(a.state.w, b.state.w, c));
}

TEST(Train, ResumeReproducesTheNextStep) {
  const ModelConfig c = tiny_model();
  TrainConfig tc = tiny_train();
  tc.steps = 4;
  const auto data = make_dataset(tc);
  auto full = train(c, data, tc, fresh_state(c, 6));

  const std::string ck = tmp_path("resume.tapc");
  TrainConfig half = tc;
  half.steps = 2;
  TrainIo io;
  io.checkpoint_path = ck;
  train(c, data, half, fresh_state(c, 6), io);
  ModelConfig c2;
  TrainConfig tc2;
  TrainState st = load_checkpoint(ck, c2, &tc2);
  std::remove(ck.c_str());
  EXPECT_EQ(st.step, 2u);
  EXPECT_EQ(tc2.steps, 2u);
  auto rest = train(c2, data, tc, std::move(st));
  ASSERT_EQ(rest.curve.size(), 2u);
  EXPECT_EQ(rest.curve[0].loss, full.curve[2].loss);
  EXPECT_EQ(rest.curve[1].loss, full.curve[3].loss);
  EXPECT_TRUE(same_weights(rest.state.w, full.state.w, c));
}

TEST(Train, LossCsvHasProvenanceAndOneRowPerStep) {
  const ModelConfig c = tiny_model();
  const TrainConfig tc = tiny_train();
  const std::string csv = tmp_path("loss.csv");
  TrainIo io;
  io.loss_csv_path = csv;
  io.provenance = "config_hash=abc,seed=5";
  train(c, make_dataset(tc), tc, fresh_state(c, 7), io);
  std::ifstream in(csv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  std::remove(csv.c_str());
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "# config_hash=abc,seed=5");
  EXPECT_EQ(lines[1], "step,loss");
  EXPECT_EQ(lines[2].rfind("0,", 0), 0u);
}

TEST(Train, DivergenceAbortsWithLastGoodCheckpoint) {
  const ModelConfig c = tiny_model();
  TrainConfig tc = tiny_train();
  tc.lr = 1e300;
  tc.grad_clip = 0.0;
  tc.steps = 20;
  const std::string ck = tmp_path("diverge.tapc");
  TrainIo io;
  io.checkpoint_path = ck;
  std::size_t at = 0;
  try {
    train(c, make_dataset(tc), tc, fresh_state(c, 8), io);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    at = e.step();
  }
  EXPECT_GE(at, 1u);
  ModelConfig c2;
  const TrainState st = load_checkpoint(ck, c2);
  std::remove(ck.c_str());
  EXPECT_EQ(st.step, at);
}

TEST(Train, OverfitsASingleBatch) {
  const ModelConfig c = tiny_model();
  Weights w = model::init_weights(c, 9);
  Rng r(11);
  std::vector<Encoded> seqs;
  for (const auto& s : gen_addition(2, 4, r)) seqs.push_back(tokenize(s));
  const TrainBatch b = make_batch(seqs);
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.weight_decay = 0.0;
  AdamState st;
  double loss = 0.0;
  std::size_t step = 0;
  for (; step < 500; ++step) {
    auto lg = loss_and_grad(w, c, b);
    loss = lg.loss;
    if (loss < 0.01) break;
    clip_global_norm(lg.grads, 1.0);
    adamw_update(w, c, lg.grads, st, tc, tc.lr);
  }
  EXPECT_LT(loss, 0.01) << "after " << step << " steps";
}

// ---------------------------------------------------------------------------
// Evaluation

TEST(Eval, ExactMatchIsAllOrNothing) {
  EXPECT_TRUE(exact_match({1, 2, kEos}, {1, 2, kEos}));
  EXPECT_FALSE(exact_match({1, 2}, {1, 2, kEos}));
  EXPECT_FALSE(exact_match({1, 3, kEos}, {1, 2, kEos}));
}

TEST(Eval, UntrainedModelIsNearZero) {
  const ModelConfig c = tiny_model();
  Weights w = model::init_weights(c, 10);
  EvalOptions o;
  o.max_len = 3;
  o.train_max_len = 2;
  o.samples_per_cell = 4;
  const AccuracyGrid g = evaluate_grid(w, c, o);
  EXPECT_LE(g.mean(), 0.1);
  for (double v : g.acc.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Eval, GridStatisticsAndCsv) {
  AccuracyGrid g{3, 2, 10, Tensor({3, 3})};
  // max(la, lb) <= 2 cells: 4 of them; the other 5 are extrapolation.
  g.acc(0, 0) = 1.0;
  g.acc(1, 1) = 0.5;
  g.acc(2, 2) = 0.9;
  EXPECT_DOUBLE_EQ(g.mean(), 2.4 / 9.0);
  EXPECT_DOUBLE_EQ(g.in_distribution_mean(), 1.5 / 4.0);
  EXPECT_DOUBLE_EQ(g.extrapolation_mean(), 0.9 / 5.0);
  std::ostringstream os;
  write_grid_csv(os, g, {"config_hash=00ff,seed=3"});
  const std::string s = os.str();
  EXPECT_EQ(s.rfind("# config_hash=00ff,seed=3\n", 0), 0u);
  EXPECT_NE(s.find("len_a\\len_b,1,2,3\n"), std::string::npos);
  EXPECT_NE(s.find("\n3,0,0,0.9\n"), std::string::npos);
}

TEST(Eval, RejectsBadOptions) {
  const ModelConfig c = tiny_model();
  Weights w = model::init_weights(c, 11);
  EvalOptions o;
  o.samples_per_cell = 0;
  EXPECT_THROW(evaluate_grid(w, c, o), ConfigError);
  o.samples_per_cell = 1;
  o.max_len = 30;  // prompt alone exceeds N = 48
  EXPECT_THROW(evaluate_grid(w, c, o), ContextError);
  EXPECT_THROW(greedy_decode(w, c, {{1, 2}, {1}}, 2), ContractError);
}
