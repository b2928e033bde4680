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

// Training objective, optimization loop and retrieval evaluation.
//
// For a positive pair (x_i, y_i) with in-batch negatives j:
//   match = -log softmax over {s(x_i,y_i)} u {s(x_i,y_j), s(x_j,y_i)}
//   mvsa  = sum over nodes c of y_i of
//             [alpha - s(x_i,c) + s(x_i,c-)]_+ + [alpha - s(x_i,c) + s(x_j,c)]_+
//           where c- is a node of the same kind taken from a negative caption
//   order = sum over (parent, child) edges of y_i of
//             [beta - s(x_i,parent) + s(x_i,child)]_+
//   loss  = match + lambda1 * mvsa + lambda2 * order
// and the batch loss is the mean over positives.

#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crg/corpus.hpp"
#include "crg/error.hpp"
#include "crg/extract.hpp"
#include "crg/model.hpp"
#include "crg/parallel.hpp"
#include "crg/rng.hpp"
#include "crg/tensor.hpp"
#include "crg/treebank.hpp"

namespace crg {

enum class MvsaLossKind { Hinge, Nll };

inline MvsaLossKind parse_mvsa_loss(std::string_view s) {
  if (s == "hinge") return MvsaLossKind::Hinge;
  if (s == "nll") return MvsaLossKind::Nll;
  throw Error(ErrorCode::InvalidConfig, "unknown mvsa loss '" + std::string(s) + "'");
}

struct TrainConfig {
  double alpha = 0.8;
  double beta = 0.2;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  MvsaLossKind mvsa_loss = MvsaLossKind::Hinge;
  std::size_t negatives = 3;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  double warmup_epochs = 2.0;
  double clip_norm = 1.0;  // global gradient norm; 0 disables
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const {
    auto bad = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
    if (alpha < 0 || beta < 0) bad("margins must be non-negative");
    if (lambda1 < 0 || lambda2 < 0) bad("loss weights must be non-negative");
    if (negatives < 1) bad("need at least one negative");
    if (batch_size <= negatives) bad("batch size must exceed the negative count");
    if (epochs < 1) bad("epochs must be positive");
    if (!(learning_rate > 0)) bad("learning rate must be positive");
    if (warmup_epochs < 0 || clip_norm < 0) bad("negative warmup or clip norm");
  }

  nlohmann::ordered_json to_json() const {
    return {{"alpha", alpha},
            {"beta", beta},
            {"lambda1", lambda1},
            {"lambda2", lambda2},
            {"mvsa_loss", mvsa_loss == MvsaLossKind::Hinge ? "hinge" : "nll"},
            {"negatives", negatives},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"learning_rate", learning_rate},
            {"warmup_epochs", warmup_epochs},
            {"clip_norm", clip_norm},
            {"seed", seed}};
  }
};

// ---------------------------------------------------------------------------
// Losses

/// -log(exp(s+) / sum exp(s)) over the positive and its negatives.
inline ad::Var nll_match_loss(ad::Var positive, const std::vector<ad::Var>& negatives) {
  if (negatives.empty()) throw Error(ErrorCode::InvalidConfig, "match loss needs a negative");
  std::vector<ad::Var> all{positive};
  all.insert(all.end(), negatives.begin(), negatives.end());
  return ad::sub(ad::logsumexp(ad::concat_cols(all)), positive);
}

struct MvsaTerm {
  ad::Var positive;          // s(x, c)
  ad::Var negative_concept;  // s(x, c-)
  ad::Var negative_image;    // s(x-, c)
};

namespace detail {

inline ad::Var hinge(double margin, ad::Var positive, ad::Var negative) {
  return ad::relu(ad::add_scalar(ad::sub(negative, positive), margin));
}

inline ad::Var pair_nll(ad::Var positive, ad::Var negative) {
  return ad::sub(ad::logsumexp(ad::concat_cols({positive, negative})), positive);
}

inline ad::Var sum_all(ad::Tape& tape, const std::vector<ad::Var>& terms) {
  if (terms.empty()) return tape.constant(ad::Tensor::scalar(0.0));
  if (terms.size() == 1) return terms.front();
  return ad::sum(ad::concat_cols(terms));
}

}  // namespace detail

inline ad::Var mvsa_loss(ad::Tape& tape, const std::vector<MvsaTerm>& terms, double alpha,
                         MvsaLossKind kind = MvsaLossKind::Hinge) {
  std::vector<ad::Var> parts;
  parts.reserve(2 * terms.size());
  for (const auto& t : terms) {
    if (kind == MvsaLossKind::Hinge) {
      parts.push_back(detail::hinge(alpha, t.positive, t.negative_concept));
      parts.push_back(detail::hinge(alpha, t.positive, t.negative_image));
    } else {
      parts.push_back(detail::pair_nll(t.positive, t.negative_concept));
      parts.push_back(detail::pair_nll(t.positive, t.negative_image));
    }
  }
  return detail::sum_all(tape, parts);
}

/// Edges are (s(x, parent), s(x, child)).
inline ad::Var order_loss(ad::Tape& tape, const std::vector<std::pair<ad::Var, ad::Var>>& edges,
                          double beta) {
  std::vector<ad::Var> parts;
  parts.reserve(edges.size());
  for (const auto& [parent, child] : edges) parts.push_back(detail::hinge(beta, parent, child));
  return detail::sum_all(tape, parts);
}

inline ad::Var total_loss(ad::Var match, ad::Var mvsa, ad::Var order, double lambda1,
                          double lambda2) {
  return ad::add(match, ad::add(ad::scale(mvsa, lambda1), ad::scale(order, lambda2)));
}

/// For each of `batch_size` positives, `n` distinct other batch indices,
/// drawn uniformly.
inline std::vector<std::vector<std::size_t>> sample_negatives(std::size_t batch_size, std::size_t n,
                                                              Rng& rng) {
  if (n == 0 || n >= batch_size) {
    throw Error(ErrorCode::BatchTooSmall, "cannot draw " + std::to_string(n) +
                                              " negatives from a batch of " +
                                              std::to_string(batch_size));
  }
  std::vector<std::vector<std::size_t>> out(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::vector<std::size_t> others;
    others.reserve(batch_size - 1);
    for (std::size_t j = 0; j < batch_size; ++j) {
      if (j != i) others.push_back(j);
    }
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t pick = k + rng.below(others.size() - k);
      std::swap(others[k], others[pick]);
    }
    others.resize(n);
    out[i] = std::move(others);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data

struct Example {
  std::string image_id;
  std::string caption_id;
  std::string caption;
  ConceptTree tree;
};

using FeatureIndex = std::map<std::string, VisualFeatureSet>;
using ExamplesByImage = std::map<std::string, std::vector<Example>>;

/// Decomposes every record, first degrading its parse with probability p.
/// Each record draws from its own stream so results do not depend on order
/// of processing.
inline std::vector<Example> decompose_records(const std::vector<CaptionRecord>& records,
                                              double degrade_p = 0.0, std::uint64_t seed = 0,
                                              std::size_t workers = 1) {
  std::vector<Example> out(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) {
    const auto& r = records[i];
    Example& e = out[i];
    e.image_id = r.image_id;
    e.caption_id = r.caption_id;
    e.caption = r.caption;
    const treebank::ParseTree tree = treebank::parse_bracketed(r.tree);
    if (degrade_p > 0.0) {
      Rng rng = Rng(seed).fork(i + 1);
      e.tree = decompose(degrade_parse(tree, degrade_p, rng));
    } else {
      e.tree = decompose(tree);
    }
  });
  return out;
}

inline ExamplesByImage group_by_image(std::vector<Example> examples) {
  ExamplesByImage out;
  for (auto& e : examples) out[e.image_id].push_back(std::move(e));
  return out;
}

inline ExamplesByImage select_images(const ExamplesByImage& all, const std::vector<std::string>& ids) {
  ExamplesByImage out;
  for (const auto& id : ids) {
    auto it = all.find(id);
    if (it == all.end()) throw Error(ErrorCode::MissingFeatures, "no captions for image " + id);
    out.emplace(id, it->second);
  }
  return out;
}

inline const VisualFeatureSet& features_of(const FeatureIndex& features, const std::string& id) {
  auto it = features.find(id);
  if (it == features.end()) throw Error(ErrorCode::MissingFeatures, "no features for image " + id);
  return it->second;
}

// ---------------------------------------------------------------------------
// Per-positive loss

struct BatchItem {
  const VisualFeatureSet* image = nullptr;
  const ConceptTree* tree = nullptr;
};

struct LossParts {
  ad::Var total, match, mvsa, order;
};

/// Builds the loss of positive `i` against the batch items in `negatives`.
inline LossParts positive_loss(ForwardContext& ctx, const std::vector<BatchItem>& batch,
                               std::size_t i, const std::vector<std::size_t>& negatives,
                               const TrainConfig& cfg, Rng& rng) {
  ad::Tape& tape = ctx.tape();
  const VisualFeatureSet& xi = *batch[i].image;
  const ConceptTree& yi = *batch[i].tree;

  const Composition pos = ctx.compose_sentence(yi, xi);
  std::vector<ad::Var> pos_scores;
  pos_scores.reserve(pos.nodes.size());
  for (const auto& [_, v] : pos.nodes) pos_scores.push_back(ctx.score(v));

  std::vector<Composition> text_negs;   // y_j on x_i
  std::vector<Composition> image_negs;  // y_i on x_j
  std::vector<ad::Var> match_negs;
  for (std::size_t j : negatives) {
    text_negs.push_back(ctx.compose_sentence(*batch[j].tree, xi));
    image_negs.push_back(ctx.compose_sentence(yi, *batch[j].image));
    match_negs.push_back(ctx.score(text_negs.back().embedding));
    match_negs.push_back(ctx.score(image_negs.back().embedding));
  }
  LossParts out;
  out.match = nll_match_loss(pos_scores.front(), match_negs);

  std::vector<MvsaTerm> terms;
  for (std::size_t k = 0; k < pos.nodes.size(); ++k) {
    const ConceptNode& c = pos.nodes[k].first->node;
    const std::size_t which = rng.below(negatives.size());
    const auto& cand = text_negs[which].nodes;
    std::vector<std::size_t> same_kind, other;
    for (std::size_t m = 0; m < cand.size(); ++m) {
      const ConceptNode& n = cand[m].first->node;
      if (n.text == c.text) continue;
      (n.kind == c.kind ? same_kind : other).push_back(m);
    }
    const auto& pool = same_kind.empty() ? other : same_kind;
    if (pool.empty()) continue;
    const std::size_t m = pool[rng.below(pool.size())];
    terms.push_back({pos_scores[k], ctx.score(cand[m].second),
                     ctx.score(image_negs[which].nodes[k].second)});
  }
  out.mvsa = mvsa_loss(tape, terms, cfg.alpha, cfg.mvsa_loss);

  std::unordered_map<const ConceptTree*, std::size_t> index;
  for (std::size_t k = 0; k < pos.nodes.size(); ++k) index.emplace(pos.nodes[k].first, k);
  std::vector<std::pair<ad::Var, ad::Var>> edges;
  for (std::size_t k = 0; k < pos.nodes.size(); ++k) {
    for (const auto& child : pos.nodes[k].first->children) {
      auto it = index.find(&child);
      if (it != index.end()) edges.emplace_back(pos_scores[k], pos_scores[it->second]);
    }
  }
  out.order = order_loss(tape, edges, cfg.beta);
  out.total = total_loss(out.match, out.mvsa, out.order, cfg.lambda1, cfg.lambda2);
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

/// Adaptive moment estimation with bias correction.
class Adam {
 public:
  explicit Adam(ad::ParameterStore& store, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : store_(store), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : store_.all()) {
      m_.emplace_back(p.value.rows(), p.value.cols());
      v_.emplace_back(p.value.rows(), p.value.cols());
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t k = 0;
    for (auto& p : store_.all()) {
      auto w = p.value.values();
      auto g = p.grad.values();
      auto m = m_[k].values();
      auto v = v_[k].values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
      ++k;
    }
  }

  std::size_t steps() const { return t_; }

 private:
  ad::ParameterStore& store_;
  double beta1_, beta2_, eps_;
  std::vector<ad::Tensor> m_, v_;
  std::size_t t_ = 0;
};

inline double gradient_norm(const ad::ParameterStore& store) {
  double s = 0.0;
  for (const auto& p : store.all()) {
    for (double g : p.grad.values()) s += g * g;
  }
  return std::sqrt(s);
}

inline void scale_gradients(ad::ParameterStore& store, double k) {
  for (auto& p : store.all()) {
    for (double& g : p.grad.values()) g *= k;
  }
}

/// Linear warmup, then x0.1 at half and x0.01 at three quarters of training.
inline double scheduled_learning_rate(const TrainConfig& cfg, std::size_t step,
                                      std::size_t steps_per_epoch) {
  const double spe = static_cast<double>(std::max<std::size_t>(1, steps_per_epoch));
  const double warmup = cfg.warmup_epochs * spe;
  const double epoch = static_cast<double>(step) / spe;
  double lr = cfg.learning_rate;
  if (static_cast<double>(step) < warmup) lr *= (static_cast<double>(step) + 1.0) / warmup;
  const double total = static_cast<double>(cfg.epochs);
  if (epoch >= 0.75 * total) {
    lr *= 0.01;
  } else if (epoch >= 0.5 * total) {
    lr *= 0.1;
  }
  return lr;
}

struct EpochStats {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double total = 0.0, match = 0.0, mvsa = 0.0, order = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
};

struct StepStats {
  double total = 0.0, match = 0.0, mvsa = 0.0, order = 0.0;
  double grad_norm = 0.0;
};

inline void write_csv_header(std::ostream& out) {
  out << "epoch,learning_rate,total,match,mvsa,order,grad_norm,seconds\n";
}

inline void write_csv_row(std::ostream& out, const EpochStats& s) {
  out << s.epoch << ',' << s.learning_rate << ',' << s.total << ',' << s.match << ',' << s.mvsa
      << ',' << s.order << ',' << s.grad_norm << ',' << s.seconds << '\n';
}

class Trainer {
 public:
  Trainer(Composer& model, const ExamplesByImage& train, const FeatureIndex& features,
          TrainConfig config)
      : model_(model), train_(train), features_(features), cfg_(std::move(config)),
        adam_(model.store()) {
    cfg_.validate();
    for (const auto& [id, captions] : train_) {
      if (captions.empty()) continue;
      features_of(features_, id);
      images_.push_back(id);
    }
    if (images_.size() <= cfg_.negatives) {
      throw Error(ErrorCode::BatchTooSmall, "training set has " + std::to_string(images_.size()) +
                                                " images, need more than " +
                                                std::to_string(cfg_.negatives));
    }
  }

  std::size_t steps_per_epoch() const {
    const std::size_t b = std::min(cfg_.batch_size, images_.size());
    std::size_t steps = images_.size() / b;
    if (images_.size() % b > cfg_.negatives) ++steps;
    return steps;
  }

  /// One optimizer update on an explicit batch.
  StepStats step(const std::vector<BatchItem>& batch, Rng& rng, double lr) {
    const std::size_t n = batch.size();
    const auto negatives = sample_negatives(n, cfg_.negatives, rng);
    std::vector<std::uint64_t> seeds(n);
    for (auto& s : seeds) s = rng.next_u64();

    std::vector<std::unique_ptr<ad::Tape>> tapes(n);
    std::vector<std::array<double, 4>> values(n);
    const double inv = 1.0 / static_cast<double>(n);
    parallel_for(n, cfg_.workers, [&](std::size_t i) {
      tapes[i] = std::make_unique<ad::Tape>(true);
      ForwardContext ctx(model_, *tapes[i]);
      Rng local(seeds[i]);
      const LossParts parts = positive_loss(ctx, batch, i, negatives[i], cfg_, local);
      tapes[i]->check_finite();
      values[i] = {parts.total.value()[0], parts.match.value()[0], parts.mvsa.value()[0],
                   parts.order.value()[0]};
      tapes[i]->backward(ad::scale(parts.total, inv), false);
    });
    model_.store().zero_grad();
    for (const auto& t : tapes) t->merge_param_grads();
    tapes.clear();

    StepStats s;
    for (const auto& v : values) {
      s.total += v[0] * inv;
      s.match += v[1] * inv;
      s.mvsa += v[2] * inv;
      s.order += v[3] * inv;
    }
    s.grad_norm = gradient_norm(model_.store());
    if (!std::isfinite(s.grad_norm)) throw Error(ErrorCode::NonFinite, "gradient norm is not finite");
    if (cfg_.clip_norm > 0 && s.grad_norm > cfg_.clip_norm) {
      scale_gradients(model_.store(), cfg_.clip_norm / s.grad_norm);
    }
    adam_.step(lr);
    return s;
  }

  EpochStats run_epoch(std::size_t epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng = Rng(cfg_.seed).fork(epoch + 1);
    std::vector<std::string> order = images_;
    rng.shuffle(order);
    std::vector<BatchItem> items;
    items.reserve(order.size());
    for (const auto& id : order) {
      const auto& captions = train_.at(id);
      items.push_back({&features_.at(id), &captions[rng.below(captions.size())].tree});
    }
    const std::size_t b = std::min(cfg_.batch_size, items.size());
    const std::size_t spe = steps_per_epoch();
    EpochStats stats;
    stats.epoch = epoch;
    std::size_t done = 0;
    for (std::size_t lo = 0; lo < items.size(); lo += b) {
      const std::size_t hi = std::min(items.size(), lo + b);
      if (hi - lo <= cfg_.negatives) break;
      const std::vector<BatchItem> batch(items.begin() + static_cast<std::ptrdiff_t>(lo),
                                         items.begin() + static_cast<std::ptrdiff_t>(hi));
      const double lr = scheduled_learning_rate(cfg_, epoch * spe + done, spe);
      const StepStats s = step(batch, rng, lr);
      stats.learning_rate = lr;
      stats.total += s.total;
      stats.match += s.match;
      stats.mvsa += s.mvsa;
      stats.order += s.order;
      stats.grad_norm += s.grad_norm;
      ++done;
    }
    if (done > 0) {
      const double k = 1.0 / static_cast<double>(done);
      stats.total *= k;
      stats.match *= k;
      stats.mvsa *= k;
      stats.order *= k;
      stats.grad_norm *= k;
    }
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return stats;
  }

  /// Runs all epochs; writes one CSV row per epoch when `log` is given.
  std::vector<EpochStats> train(std::ostream* log = nullptr) {
    std::vector<EpochStats> history;
    if (log) write_csv_header(*log);
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      history.push_back(run_epoch(e));
      if (log) {
        write_csv_row(*log, history.back());
        log->flush();
      }
    }
    return history;
  }

  const TrainConfig& config() const { return cfg_; }

 private:
  Composer& model_;
  const ExamplesByImage& train_;
  const FeatureIndex& features_;
  TrainConfig cfg_;
  Adam adam_;
  std::vector<std::string> images_;
};

// ---------------------------------------------------------------------------
// Evaluation

struct Query {
  std::string gold_image;
  const ConceptTree* tree = nullptr;
};

struct RetrievalMetrics {
  double r1 = 0.0;
  double r5 = 0.0;
  std::size_t queries = 0;
  std::size_t candidates = 0;
  std::vector<std::size_t> ranks;  // 1-based rank of the gold image per query
};

/// Every caption of every image is a query.
inline std::vector<Query> sentence_queries(const ExamplesByImage& eval) {
  std::vector<Query> out;
  for (const auto& [id, captions] : eval) {
    for (const auto& e : captions) out.push_back({id, &e.tree});
  }
  return out;
}

/// Up to `per_caption` distinct non-sentence concepts sampled from each
/// caption's decomposition.
inline std::vector<Query> phrase_queries(const ExamplesByImage& eval, std::size_t per_caption,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Query> out;
  for (const auto& [id, captions] : eval) {
    for (const auto& e : captions) {
      std::vector<const ConceptTree*> nodes;
      std::set<ConceptNode> seen;
      for_each_preorder(e.tree, [&](const ConceptTree& t) {
        if (&t == &e.tree) return;
        if (seen.insert(t.node).second) nodes.push_back(&t);
      });
      rng.shuffle(nodes);
      if (nodes.size() > per_caption) nodes.resize(per_caption);
      for (const ConceptTree* t : nodes) out.push_back({id, t});
    }
  }
  return out;
}

/// scores[q][c] = s(candidate c, query q).
inline std::vector<std::vector<double>> score_matrix(Composer& model, const std::vector<Query>& queries,
                                                     const std::vector<const VisualFeatureSet*>& candidates,
                                                     std::size_t workers = 1,
                                                     std::size_t queries_per_tape = 64) {
  std::vector<std::vector<double>> scores(queries.size(), std::vector<double>(candidates.size()));
  parallel_for(candidates.size(), workers, [&](std::size_t c) {
    for (std::size_t lo = 0; lo < queries.size(); lo += queries_per_tape) {
      ad::Tape tape(false);
      ForwardContext ctx(model, tape);
      const std::size_t hi = std::min(queries.size(), lo + queries_per_tape);
      for (std::size_t q = lo; q < hi; ++q) {
        scores[q][c] = ctx.score(ctx.compose_sentence(*queries[q].tree, *candidates[c]).embedding)
                           .value()[0];
      }
    }
  });
  return scores;
}

/// Rank of the gold candidate: higher score first, ties by image id.
inline std::size_t gold_rank(const std::vector<double>& scores,
                             const std::vector<const VisualFeatureSet*>& candidates,
                             std::size_t gold) {
  std::size_t rank = 1;
  const double g = scores[gold];
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (c == gold) continue;
    if (scores[c] > g || (scores[c] == g && candidates[c]->image_id < candidates[gold]->image_id)) {
      ++rank;
    }
  }
  return rank;
}

inline RetrievalMetrics evaluate_retrieval(Composer& model, const std::vector<Query>& queries,
                                           const std::vector<std::string>& candidate_ids,
                                           const FeatureIndex& features, std::size_t workers = 1) {
  std::vector<const VisualFeatureSet*> candidates;
  std::map<std::string, std::size_t> slot;
  for (const auto& id : candidate_ids) {
    slot.emplace(id, candidates.size());
    candidates.push_back(&features_of(features, id));
  }
  for (const auto& q : queries) {
    if (!slot.count(q.gold_image)) {
      throw Error(ErrorCode::MissingFeatures, "gold image " + q.gold_image + " is not a candidate");
    }
  }
  RetrievalMetrics m;
  m.queries = queries.size();
  m.candidates = candidates.size();
  if (queries.empty()) return m;
  const auto scores = score_matrix(model, queries, candidates, workers);
  std::size_t hit1 = 0, hit5 = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const std::size_t r = gold_rank(scores[q], candidates, slot.at(queries[q].gold_image));
    m.ranks.push_back(r);
    hit1 += r <= 1;
    hit5 += r <= 5;
  }
  m.r1 = static_cast<double>(hit1) / static_cast<double>(queries.size());
  m.r5 = static_cast<double>(hit5) / static_cast<double>(queries.size());
  return m;
}

struct OrderSatisfaction {
  std::size_t satisfied = 0;
  std::size_t edges = 0;
  double fraction() const {
    return edges == 0 ? 1.0 : static_cast<double>(satisfied) / static_cast<double>(edges);
  }
};

/// Counts (parent, child) edges with s(x, parent) >= s(x, child), each
/// caption scored against its own image.
inline OrderSatisfaction order_satisfaction(Composer& model, const ExamplesByImage& eval,
                                            const FeatureIndex& features, std::size_t workers = 1) {
  std::vector<const Example*> all;
  for (const auto& [_, captions] : eval) {
    for (const auto& e : captions) all.push_back(&e);
  }
  std::vector<OrderSatisfaction> per(all.size());
  parallel_for(all.size(), workers, [&](std::size_t i) {
    ad::Tape tape(false);
    ForwardContext ctx(model, tape);
    const Composition comp = ctx.compose_sentence(all[i]->tree, features_of(features, all[i]->image_id));
    std::unordered_map<const ConceptTree*, double> s;
    for (const auto& [node, v] : comp.nodes) s.emplace(node, ctx.score(v).value()[0]);
    for (const auto& [node, _] : comp.nodes) {
      for (const auto& child : node->children) {
        auto it = s.find(&child);
        if (it == s.end()) continue;
        ++per[i].edges;
        if (s.at(node) >= it->second) ++per[i].satisfied;
      }
    }
  });
  OrderSatisfaction total;
  for (const auto& p : per) {
    total.satisfied += p.satisfied;
    total.edges += p.edges;
  }
  return total;
}

struct NodeScore {
  std::string text;
  ConceptKind kind = ConceptKind::Sentence;
  double s_gt = 0.0;
  double s_negative = 0.0;
};

/// One score pair per node, in pre-order: the caption against its own image
/// and against a negative image.
inline std::vector<NodeScore> dump_node_scores(Composer& model, const ConceptTree& tree,
                                               const VisualFeatureSet& gt,
                                               const VisualFeatureSet& negative) {
  ad::Tape tape(false);
  ForwardContext ctx(model, tape);
  const Composition a = ctx.compose_sentence(tree, gt);
  const Composition b = ctx.compose_sentence(tree, negative);
  std::vector<NodeScore> out;
  for (std::size_t k = 0; k < a.nodes.size(); ++k) {
    const ConceptNode& n = a.nodes[k].first->node;
    out.push_back({n.text, n.kind, ctx.score(a.nodes[k].second).value()[0],
                   ctx.score(b.nodes[k].second).value()[0]});
  }
  return out;
}

inline nlohmann::ordered_json metrics_json(const RetrievalMetrics& m,
                                           const std::vector<EpochStats>& history = {}) {
  nlohmann::ordered_json losses = nlohmann::ordered_json::array();
  for (const auto& e : history) {
    losses.push_back({{"epoch", e.epoch},
                      {"total", e.total},
                      {"match", e.match},
                      {"mvsa", e.mvsa},
                      {"order", e.order}});
  }
  return {{"r1", m.r1}, {"r5", m.r5}, {"queries", m.queries}, {"candidates", m.candidates},
          {"losses", losses}};
}

}  // namespace crg
