// Copyright 2026 The CRG Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "crg/gradcheck.hpp"
#include "crg/train.hpp"
#include "test_util.hpp"

namespace {

using namespace crg;
using crg::testing::code_of;

double value(ad::Var v) { return v.value()[0]; }

TEST(Losses, MatchLossIsSoftmaxNll) {
  ad::Tape t;
  const auto pos = t.input(ad::Tensor::scalar(1.0));
  const std::vector<ad::Var> negs{t.input(ad::Tensor::scalar(0.5)), t.input(ad::Tensor::scalar(-2.0))};
  const double z = std::exp(1.0) + std::exp(0.5) + std::exp(-2.0);
  EXPECT_NEAR(value(nll_match_loss(pos, negs)), -std::log(std::exp(1.0) / z), 1e-14);
  EXPECT_EQ(code_of([&] { nll_match_loss(pos, {}); }), ErrorCode::InvalidConfig);
}

TEST(Losses, MvsaHingeAndNll) {
  ad::Tape t;
  auto s = [&](double v) { return t.input(ad::Tensor::scalar(v)); };
  const std::vector<MvsaTerm> terms{{s(1.0), s(0.5), s(1.5)}, {s(2.0), s(0.0), s(0.0)}};
  // max(0, .8 + .5 - 1) + max(0, .8 + 1.5 - 1) + 0 + 0
  EXPECT_NEAR(value(mvsa_loss(t, terms, 0.8)), 0.3 + 1.3, 1e-14);
  auto pair = [](double p, double n) { return std::log(std::exp(p) + std::exp(n)) - p; };
  EXPECT_NEAR(value(mvsa_loss(t, terms, 0.8, MvsaLossKind::Nll)),
              pair(1, .5) + pair(1, 1.5) + pair(2, 0) + pair(2, 0), 1e-14);
  EXPECT_EQ(value(mvsa_loss(t, {}, 0.8)), 0.0);
}

TEST(Losses, OrderLossPrefersParent) {
  ad::Tape t;
  auto s = [&](double v) { return t.input(ad::Tensor::scalar(v)); };
  EXPECT_NEAR(value(order_loss(t, {{s(1.0), s(0.9)}, {s(1.0), s(0.5)}}, 0.2)), 0.1, 1e-14);
  EXPECT_NEAR(value(total_loss(s(1.0), s(2.0), s(3.0), 0.5, 0.25)), 1.0 + 1.0 + 0.75, 1e-14);
}

TEST(Losses, HandCases) {
  ad::Tape t;
  auto s = [&](double v) { return t.input(ad::Tensor::scalar(v)); };
  EXPECT_NEAR(value(nll_match_loss(s(0.3), {s(0.3), s(0.3), s(0.3)})), std::log(4.0), 1e-14);
  EXPECT_NEAR(value(nll_match_loss(s(2.0), {s(1.0), s(0.0)})), 0.40760596444438013, 1e-14);
  EXPECT_LT(value(nll_match_loss(s(60.0), {s(0.0)})), 1e-25);
  EXPECT_EQ(value(mvsa_loss(t, {{s(1.0), s(0.1), s(0.1)}}, 0.8)), 0.0);
  EXPECT_NEAR(value(mvsa_loss(t, {{s(0.4), s(0.4), s(0.4)}}, 0.8)), 1.6, 1e-14);
  EXPECT_EQ(value(order_loss(t, {{s(1.0), s(0.5)}}, 0.2)), 0.0);
  EXPECT_NEAR(value(order_loss(t, {{s(0.7), s(0.7)}}, 0.2)), 0.2, 1e-15);
  EXPECT_NEAR(value(order_loss(t, {{s(0.5), s(0.6)}}, 0.2)), 0.3, 1e-15);
  EXPECT_EQ(value(total_loss(s(1.5), s(7.0), s(9.0), 0.0, 0.0)), 1.5);
  EXPECT_EQ(value(total_loss(s(1.0), s(1.0), s(1.0), 1.0, 1.0)), 3.0);
}

TEST(Negatives, PairBatchAndFrozenDraw) {
  Rng rng(0);
  EXPECT_EQ(sample_negatives(2, 1, rng), (std::vector<std::vector<std::size_t>>{{1}, {0}}));
  Rng frozen(42);
  EXPECT_EQ(sample_negatives(4, 2, frozen),
            (std::vector<std::vector<std::size_t>>{{1, 2}, {2, 0}, {3, 1}, {1, 0}}));
}

TEST(Negatives, DistinctAndExcludeSelf) {
  Rng rng(1);
  const auto negs = sample_negatives(8, 3, rng);
  ASSERT_EQ(negs.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    std::set<std::size_t> s(negs[i].begin(), negs[i].end());
    EXPECT_EQ(s.size(), 3u);
    EXPECT_FALSE(s.count(i));
    EXPECT_LT(*s.rbegin(), 8u);
  }
  EXPECT_EQ(code_of([&] { sample_negatives(3, 3, rng); }), ErrorCode::BatchTooSmall);
  EXPECT_EQ(code_of([&] { sample_negatives(3, 0, rng); }), ErrorCode::BatchTooSmall);
}

TEST(Negatives, RoughlyUniform) {
  Rng rng(2);
  std::map<std::size_t, std::size_t> hits;
  const int draws = 6000;
  for (int d = 0; d < draws; ++d) {
    const auto negs = sample_negatives(5, 2, rng);
    for (std::size_t j : negs[0]) ++hits[j];
  }
  ASSERT_EQ(hits.size(), 4u);
  // Each of the four others is picked with probability 1/2.
  for (const auto& [j, n] : hits) EXPECT_NEAR(static_cast<double>(n) / draws, 0.5, 0.03) << j;
}

TEST(Schedule, WarmupThenSteps) {
  TrainConfig c;
  c.learning_rate = 1.0;
  c.epochs = 8;
  c.warmup_epochs = 2;
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 0, 10), 1.0 / 20);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 19, 10), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 20, 10), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 39, 10), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 40, 10), 0.1);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 60, 10), 0.01);
  c.warmup_epochs = 0;
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(c, 0, 10), 1.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ad::ParameterStore store;
  auto& w = store.add("w", ad::Tensor::row({1.0, -2.0, 0.0}));
  w.grad = ad::Tensor::row({4.0, -0.5, 0.0});
  Adam adam(store);
  adam.step(0.1);
  EXPECT_NEAR(w.value[0], 0.9, 1e-8);
  EXPECT_NEAR(w.value[1], -1.9, 1e-7);
  EXPECT_EQ(w.value[2], 0.0);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Clip, NormAndScale) {
  ad::ParameterStore store;
  store.add("a", ad::Tensor::row({0, 0})).grad = ad::Tensor::row({3, 0});
  store.add("b", ad::Tensor::scalar(0)).grad = ad::Tensor::scalar(4);
  EXPECT_DOUBLE_EQ(gradient_norm(store), 5.0);
  scale_gradients(store, 0.2);
  EXPECT_DOUBLE_EQ(gradient_norm(store), 1.0);
}

TEST(Config, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 3;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InvalidConfig);
  c = {};
  c.lambda1 = -1;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(parse_mvsa_loss("nll"), MvsaLossKind::Nll);
  EXPECT_EQ(code_of([] { parse_mvsa_loss("ranking"); }), ErrorCode::InvalidConfig);
}

// ---- positive loss against score oracles ----

struct Small {
  ad::ComposedLossSetup s = ad::composed_loss_setup(31);
  std::vector<BatchItem> batch;
  Small() {
    for (const auto& [id, caps] : s.examples) batch.push_back({&s.features.at(id), &caps.front().tree});
  }
};

double score_of(Composer& m, const ConceptTree& t, const VisualFeatureSet& x) {
  ad::Tape tape(false);
  ForwardContext ctx(m, tape);
  return value(ctx.score(ctx.compose_sentence(t, x).embedding));
}

TEST(PositiveLoss, MatchTermUsesBothNegativeDirections) {
  Small f;
  Composer model(f.s.model);
  ad::Tape tape;
  ForwardContext ctx(model, tape);
  Rng rng(0);
  const std::vector<std::size_t> negs{1, 3};
  const auto parts = positive_loss(ctx, f.batch, 0, negs, f.s.train, rng);
  const auto& x0 = *f.batch[0].image;
  const auto& y0 = *f.batch[0].tree;
  const double pos = score_of(model, y0, x0);
  double z = std::exp(pos);
  for (std::size_t j : negs) {
    z += std::exp(score_of(model, *f.batch[j].tree, x0));
    z += std::exp(score_of(model, y0, *f.batch[j].image));
  }
  EXPECT_NEAR(value(parts.match), std::log(z) - pos, 1e-12);
}

TEST(PositiveLoss, OrderTermSumsTreeEdges) {
  Small f;
  Composer model(f.s.model);
  TrainConfig cfg = f.s.train;
  cfg.beta = 100.0;  // every hinge active, so the sum is linear in scores
  for (std::size_t i = 0; i < f.batch.size(); ++i) {
    ad::Tape tape;
    ForwardContext ctx(model, tape);
    Rng rng(0);
    const auto parts = positive_loss(ctx, f.batch, i, {(i + 1) % f.batch.size()}, cfg, rng);
    const auto scores = dump_node_scores(model, *f.batch[i].tree, *f.batch[i].image, *f.batch[i].image);
    double want = 0.0;
    std::size_t k = 0;
    std::map<const ConceptTree*, double> s;
    for_each_preorder(*f.batch[i].tree, [&](const ConceptTree& t) { s[&t] = scores[k++].s_gt; });
    for_each_preorder(*f.batch[i].tree, [&](const ConceptTree& t) {
      for (const auto& c : t.children) want += s[&c] - s[&t] + 100.0;
    });
    EXPECT_NEAR(value(parts.order), want, 1e-9);
  }
}

TEST(PositiveLoss, MvsaZeroWhenMarginsSatisfied) {
  Small f;
  Composer model(f.s.model);
  TrainConfig cfg = f.s.train;
  cfg.alpha = -1e6;
  ad::Tape tape;
  ForwardContext ctx(model, tape);
  Rng rng(0);
  EXPECT_EQ(value(positive_loss(ctx, f.batch, 0, {1}, cfg, rng).mvsa), 0.0);
}

// ---- trainer ----

struct TinyRun {
  synth::SynthCorpus corpus;
  ExamplesByImage train;
  FeatureIndex features;
  ModelConfig model;
};

TinyRun tiny_run(std::size_t images = 40) {
  TinyRun r;
  synth::WorldConfig wc;
  wc.images = images;
  wc.captions_per_image = 2;
  wc.train_fraction = 1.0;
  wc.pool_fraction = 0.0;
  wc.seed = 12;
  r.corpus = synth::gen_corpus(wc);
  auto ex = decompose_records(r.corpus.captions);
  std::vector<ConceptTree> trees;
  for (const auto& e : ex) trees.push_back(e.tree);
  r.train = group_by_image(std::move(ex));
  r.features = index_features(r.corpus.features);
  r.model.width = 8;
  r.model.n_heads = 2;
  r.model.pt_layers = 1;
  r.model.ct_layers = 3;
  r.model.feature_dim = r.corpus.features.front().dim();
  r.model.vocabulary = collect_vocabulary(trees);
  return r;
}

TEST(Trainer, WorkerCountDoesNotChangeResult) {
  const TinyRun r = tiny_run();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 3;
  std::string dumps[2];
  for (std::size_t w : {1, 2}) {
    Composer model(r.model);
    cfg.workers = w;
    Trainer t(model, r.train, r.features, cfg);
    t.train();
    dumps[w - 1] = model.checkpoint().dump();
  }
  EXPECT_EQ(dumps[0], dumps[1]);
}

TEST(Trainer, LossDecreasesAndLogs) {
  const TinyRun r = tiny_run();
  Composer model(r.model);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  cfg.warmup_epochs = 1;
  cfg.learning_rate = 3e-3;
  Trainer t(model, r.train, r.features, cfg);
  EXPECT_EQ(t.steps_per_epoch(), 5u);
  std::ostringstream log;
  const auto history = t.train(&log);
  ASSERT_EQ(history.size(), 6u);
  EXPECT_LT(history.back().total, history.front().total);
  std::size_t lines = 0;
  for (char c : log.str()) lines += c == '\n';
  EXPECT_EQ(lines, 7u);
  EXPECT_EQ(log.str().rfind("epoch,learning_rate,total", 0), 0u);
}

TEST(Trainer, ConvergesOnFiftyPairs) {
  for (std::uint64_t seed : {1, 2, 3}) {
    TinyRun r = tiny_run(50);
    for (auto& [_, caps] : r.train) caps.resize(1);
    r.model.init_seed = seed;
    Composer model(r.model);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 10;
    cfg.seed = seed;
    cfg.learning_rate = 2e-3;
    Trainer t(model, r.train, r.features, cfg);
    const auto history = t.train();
    double first = 0, last = 0;
    for (int e = 0; e < 3; ++e) first += history[e].total / 3;
    for (int e = 17; e < 20; ++e) last += history[e].total / 3;
    EXPECT_LT(last, first) << "seed " << seed;
  }
}

TEST(Trainer, OneStepChangesParameters) {
  const TinyRun r = tiny_run(12);
  Composer model(r.model);
  const std::string before = model.checkpoint().dump();
  TrainConfig cfg;
  cfg.batch_size = 12;
  cfg.epochs = 1;
  cfg.warmup_epochs = 0;
  Trainer t(model, r.train, r.features, cfg);
  const auto s = t.run_epoch(0);
  EXPECT_GT(s.grad_norm, 0.0);
  EXPECT_NE(model.checkpoint().dump(), before);
}

TEST(Trainer, RejectsTinyTrainingSet) {
  TinyRun r = tiny_run(3);
  Composer model(r.model);
  EXPECT_EQ(code_of([&] { Trainer(model, r.train, r.features, TrainConfig{}); }), ErrorCode::BatchTooSmall);
  FeatureIndex none;
  r = tiny_run(10);
  Composer m2(r.model);
  EXPECT_EQ(code_of([&] { Trainer(m2, r.train, none, TrainConfig{}); }), ErrorCode::MissingFeatures);
}

// ---- evaluation ----

TEST(Eval, GoldRankTiesByImageId) {
  const VisualFeatureSet a{"a", {{0}}, std::nullopt}, b{"b", {{0}}, std::nullopt},
      c{"c", {{0}}, std::nullopt};
  const std::vector<const VisualFeatureSet*> cands{&a, &b, &c};
  EXPECT_EQ(gold_rank({1.0, 1.0, 0.0}, cands, 0), 1u);
  EXPECT_EQ(gold_rank({1.0, 1.0, 0.0}, cands, 1), 2u);
  EXPECT_EQ(gold_rank({0.0, 1.0, 2.0}, cands, 0), 3u);
}

TEST(Eval, RetrievalMetricsConsistent) {
  const TinyRun r = tiny_run(20);
  Composer model(r.model);
  const auto queries = sentence_queries(r.train);
  EXPECT_EQ(queries.size(), 40u);
  std::vector<std::string> ids;
  for (const auto& [id, _] : r.train) ids.push_back(id);
  const auto m = evaluate_retrieval(model, queries, ids, r.features);
  EXPECT_EQ(m.candidates, 20u);
  EXPECT_EQ(m.ranks.size(), 40u);
  std::size_t h1 = 0, h5 = 0;
  for (std::size_t rank : m.ranks) {
    EXPECT_GE(rank, 1u);
    EXPECT_LE(rank, 20u);
    h1 += rank == 1;
    h5 += rank <= 5;
  }
  EXPECT_DOUBLE_EQ(m.r1, h1 / 40.0);
  EXPECT_DOUBLE_EQ(m.r5, h5 / 40.0);
  const auto again = evaluate_retrieval(model, queries, ids, r.features, 3);
  EXPECT_EQ(again.ranks, m.ranks);
  ids.pop_back();
  EXPECT_EQ(code_of([&] { evaluate_retrieval(model, queries, ids, r.features); }),
            ErrorCode::MissingFeatures);
  const auto j = metrics_json(m);
  EXPECT_EQ(j.at("queries"), 40);
}

TEST(Eval, ScoreMatrixMatchesSingleScores) {
  const TinyRun r = tiny_run(6);
  Composer model(r.model);
  const auto queries = sentence_queries(r.train);
  std::vector<const VisualFeatureSet*> cands;
  for (const auto& [id, f] : r.features) cands.push_back(&f);
  const auto m = score_matrix(model, queries, cands, 1, 5);
  for (std::size_t q = 0; q < queries.size(); ++q)
    for (std::size_t c = 0; c < cands.size(); ++c)
      EXPECT_EQ(m[q][c], score_of(model, *queries[q].tree, *cands[c]));
}

TEST(Eval, PhraseQueriesSkipRoots) {
  const TinyRun r = tiny_run(10);
  const auto queries = phrase_queries(r.train, 2, 5);
  std::map<std::string, std::size_t> per_image;
  for (const auto& q : queries) {
    ++per_image[q.gold_image];
    EXPECT_NE(q.tree->node.kind, ConceptKind::Sentence);
    bool is_root = false;
    for (const auto& e : r.train.at(q.gold_image)) is_root = is_root || q.tree == &e.tree;
    EXPECT_FALSE(is_root);
  }
  for (const auto& [_, n] : per_image) EXPECT_LE(n, 4u);
  EXPECT_EQ(phrase_queries(r.train, 2, 5).size(), queries.size());
}

TEST(Eval, OrderSatisfactionCountsEdges) {
  const TinyRun r = tiny_run(10);
  Composer model(r.model);
  std::size_t edges = 0;
  for (const auto& [_, caps] : r.train)
    for (const auto& e : caps) edges += node_count(e.tree) - 1;
  const auto os = order_satisfaction(model, r.train, r.features);
  EXPECT_EQ(os.edges, edges);
  EXPECT_LE(os.satisfied, edges);
  EXPECT_EQ(OrderSatisfaction{}.fraction(), 1.0);
}

TEST(Eval, NodeScoresPreorder) {
  const TinyRun r = tiny_run(6);
  Composer model(r.model);
  const auto& e = r.train.begin()->second.front();
  const auto& gt = r.features.at(e.image_id);
  const auto& neg = std::next(r.features.begin())->second;
  const auto rows = dump_node_scores(model, e.tree, gt, neg);
  ASSERT_EQ(rows.size(), node_count(e.tree));
  EXPECT_EQ(rows[0].text, e.tree.node.text);
  EXPECT_EQ(rows[0].s_gt, score_of(model, e.tree, gt));
  EXPECT_EQ(rows[0].s_negative, score_of(model, e.tree, neg));
}

TEST(Data, DegradedDecompositionIndependentOfWorkers) {
  const TinyRun r = tiny_run(30);
  const auto a = decompose_records(r.corpus.captions, 0.5, 9, 1);
  const auto b = decompose_records(r.corpus.captions, 0.5, 9, 3);
  ASSERT_EQ(a.size(), b.size());
  std::size_t changed = 0;
  const auto clean = decompose_records(r.corpus.captions);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tree, b[i].tree);
    changed += !(a[i].tree == clean[i].tree);
  }
  EXPECT_GT(changed, 0u);
  EXPECT_EQ(code_of([&] { select_images(r.train, {"nope"}); }), ErrorCode::MissingFeatures);
}

}  // namespace
