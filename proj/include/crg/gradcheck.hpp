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

// Finite-difference gradient checks for every tensor operation and for the
// full training loss.
//
// Each trial draws random inputs and a random weight tensor w of the output
// shape and differentiates L = sum(w * op(inputs)). Numerical gradients use
// central differences. The per-coordinate relative error is
//   |analytic - numeric| / max(|analytic|, |numeric|, floor)
// where the floor keeps near-zero gradients from dividing by round-off.
// Coordinates near a ReLU or hinge kink are counted and skipped. A kink shows
// up either as disagreeing one-sided slopes at x or as a jump in the third
// differences of f sampled at x - 2h .. x + 2h, which for smooth f are
// O(h^2) and sit near round-off.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crg/model.hpp"
#include "crg/nn.hpp"
#include "crg/rng.hpp"
#include "crg/synth.hpp"
#include "crg/tensor.hpp"
#include "crg/train.hpp"

namespace crg::ad {

struct GradcheckOptions {
  std::size_t trials = 100;
  double step = 1e-5;
  double floor = 1e-3;
  std::uint64_t seed = 0;
};

struct OpCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  std::size_t kinks = 0;
  std::size_t trials = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace detail {

// Kink test: one-sided slopes differ by more than a smooth function allows.
inline bool straddles_kink(double f_minus, double f0, double f_plus, double h) {
  const double right = (f_plus - f0) / h;
  const double left = (f0 - f_minus) / h;
  return std::abs(right - left) > 1e-3 * std::max({1.0, std::abs(right), std::abs(left)});
}

// Five-point test; f holds f(x - 2h), f(x - h), f(x), f(x + h), f(x + 2h).
inline bool kink_within(const std::array<double, 5>& f, double h) {
  if (straddles_kink(f[1], f[2], f[3], h)) return true;
  double s[4];
  for (int i = 0; i < 4; ++i) s[i] = (f[i + 1] - f[i]) / h;
  const double scale = std::max({1.0, std::abs(s[1]), std::abs(s[2])});
  const double third = std::max(std::abs(s[2] - 2.0 * s[1] + s[0]), std::abs(s[3] - 2.0 * s[2] + s[1]));
  return third > 1e-6 * scale;
}

/// Central difference of f_at(delta) around 0, or nothing near a kink.
inline bool probe(const std::function<double(double)>& f_at, double f0, double analytic,
                  const GradcheckOptions& opt, OpCheck& out) {
  const double h = opt.step;
  const std::array<double, 5> f{f_at(-2.0 * h), f_at(-h), f0, f_at(h), f_at(2.0 * h)};
  if (kink_within(f, h)) {
    ++out.kinks;
    return false;
  }
  const double numeric = (f[3] - f[1]) / (2.0 * h);
  out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic, numeric, opt.floor));
  ++out.coords;
  return true;
}

}  // namespace detail

using OpBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct OpSpec {
  std::string name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  OpBuilder build;
  bool keep_away_from_zero = false;
};

inline OpCheck check_op(const OpSpec& spec, const GradcheckOptions& opt) {
  OpCheck out;
  out.name = spec.name;
  Rng rng(opt.seed);
  for (std::size_t trial = 0; trial < opt.trials; ++trial) {
    std::vector<Tensor> inputs;
    for (const auto& [r, c] : spec.shapes) {
      Tensor t = Tensor::uniform(r, c, 1.0, rng);
      if (spec.keep_away_from_zero) {
        for (auto& v : t.values()) {
          if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
        }
      }
      inputs.push_back(std::move(t));
    }
    Tensor weights;
    auto loss_of = [&](Tape& tape, std::vector<Var>& vars) {
      const Var y = spec.build(tape, vars);
      if (weights.empty()) weights = Tensor::uniform(y.rows(), y.cols(), 1.0, rng);
      return sum(mul(y, tape.constant(weights)));
    };
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    const Var loss = loss_of(tape, vars);
    tape.backward(loss);
    auto eval = [&](std::size_t which, std::size_t k, double delta) {
      Tape t(false);
      std::vector<Var> vs;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        Tensor x = inputs[i];
        if (i == which) x[k] += delta;
        vs.push_back(t.input(std::move(x)));
      }
      return loss_of(t, vs).value()[0];
    };
    const double f0 = loss.value()[0];
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Tensor& g = tape.grad(vars[i]);
      for (std::size_t k = 0; k < inputs[i].size(); ++k) {
        detail::probe([&](double d) { return eval(i, k, d); }, f0, g.empty() ? 0.0 : g[k], opt, out);
      }
    }
    ++out.trials;
  }
  return out;
}

/// Every differentiable tensor operation the model uses.
inline std::vector<OpSpec> standard_ops() {
  using V = const std::vector<Var>&;
  std::vector<OpSpec> ops;
  ops.push_back({"matmul", {{3, 4}, {4, 2}}, [](Tape&, V v) { return matmul(v[0], v[1]); }});
  ops.push_back({"matmul_nt", {{3, 4}, {2, 4}}, [](Tape&, V v) { return matmul_nt(v[0], v[1]); }});
  ops.push_back({"transpose", {{3, 4}}, [](Tape&, V v) { return transpose(v[0]); }});
  ops.push_back({"add", {{3, 4}, {3, 4}}, [](Tape&, V v) { return add(v[0], v[1]); }});
  ops.push_back({"sub", {{3, 4}, {3, 4}}, [](Tape&, V v) { return sub(v[0], v[1]); }});
  ops.push_back({"mul", {{3, 4}, {3, 4}}, [](Tape&, V v) { return mul(v[0], v[1]); }});
  ops.push_back({"scale", {{3, 4}}, [](Tape&, V v) { return scale(v[0], -1.7); }});
  ops.push_back({"add_scalar", {{3, 4}}, [](Tape&, V v) { return add_scalar(v[0], 0.3); }});
  ops.push_back({"add_row", {{3, 4}, {1, 4}}, [](Tape&, V v) { return add_row(v[0], v[1]); }});
  ops.push_back({"relu", {{3, 4}}, [](Tape&, V v) { return relu(v[0]); }, true});
  ops.push_back({"sum", {{3, 4}}, [](Tape&, V v) { return sum(v[0]); }});
  ops.push_back({"mean_rows", {{3, 4}}, [](Tape&, V v) { return mean_rows(v[0]); }});
  ops.push_back({"concat_rows", {{2, 4}, {3, 4}}, [](Tape&, V v) { return concat_rows({v[0], v[1]}); }});
  ops.push_back({"concat_cols", {{3, 2}, {3, 4}}, [](Tape&, V v) { return concat_cols({v[0], v[1]}); }});
  ops.push_back({"slice_rows", {{4, 3}}, [](Tape&, V v) { return slice_rows(v[0], 1, 2); }});
  ops.push_back({"slice_cols", {{3, 5}}, [](Tape&, V v) { return slice_cols(v[0], 1, 3); }});
  ops.push_back({"softmax_rows", {{3, 4}}, [](Tape&, V v) { return softmax_rows(v[0]); }});
  ops.push_back({"logsumexp", {{3, 4}}, [](Tape&, V v) { return logsumexp(v[0]); }});
  ops.push_back({"layer_norm", {{3, 4}, {1, 4}, {1, 4}},
                 [](Tape&, V v) { return layer_norm(v[0], v[1], v[2]); }});
  ops.push_back({"linear", {{4, 3}, {1, 3}, {2, 4}}, [](Tape&, V v) { return linear(v[0], v[1], v[2]); }});
  ops.push_back({"scaled_dot_attention", {{5, 4}, {3, 4}, {5, 6}},
                 [](Tape&, V v) { return scaled_dot_attention(v[0], v[1], v[2]); }});
  return ops;
}

/// The attention block, differentiated with respect to its queries, its
/// key/value inputs and every block parameter.
inline OpCheck check_attention_block(const GradcheckOptions& opt, std::size_t n_heads = 2) {
  OpCheck out;
  out.name = "multi_head_attention";
  Rng rng(opt.seed);
  for (std::size_t trial = 0; trial < opt.trials; ++trial) {
    ParameterStore store;
    const BlockParams block = make_block(store, "block", 8, 32, rng);
    // Non-trivial layer-norm parameters so their gradients are exercised.
    for (auto& p : store.all()) {
      if (p.name.find(".ln") != std::string::npos) p.value = Tensor::uniform(1, 8, 1.0, rng);
    }
    Tensor x = Tensor::uniform(4, 8, 1.0, rng);
    Tensor kv = Tensor::uniform(3, 8, 1.0, rng);
    const Tensor w = Tensor::uniform(4, 8, 1.0, rng);
    auto loss_of = [&](Tape& tape, Var xv, Var kvv) {
      return sum(mul(multi_head_attention(tape, block, xv, kvv, n_heads), tape.constant(w)));
    };
    auto value = [&]() {
      Tape t(false);
      return loss_of(t, t.input(x), t.input(kv)).value()[0];
    };
    store.zero_grad();
    Tape tape;
    const Var xv = tape.input(x), kvv = tape.input(kv);
    const Var loss = loss_of(tape, xv, kvv);
    tape.backward(loss);
    const double f0 = loss.value()[0];
    auto probe = [&](double& slot, double analytic) {
      const double orig = slot;
      detail::probe(
          [&](double d) {
            slot = orig + d;
            const double v = value();
            slot = orig;
            return v;
          },
          f0, analytic, opt, out);
    };
    const Tensor gx = tape.grad(xv), gkv = tape.grad(kvv);
    for (std::size_t k = 0; k < x.size(); ++k) probe(x[k], gx[k]);
    for (std::size_t k = 0; k < kv.size(); ++k) probe(kv[k], gkv[k]);
    for (auto& p : store.all()) {
      for (std::size_t k = 0; k < p.value.size(); ++k) probe(p.value[k], p.grad[k]);
    }
    ++out.trials;
  }
  return out;
}

/// Small end-to-end setup for checking the full training loss.
struct ComposedLossSetup {
  synth::SynthCorpus corpus;
  ExamplesByImage examples;
  FeatureIndex features;
  ModelConfig model;
  TrainConfig train;
};

inline ComposedLossSetup composed_loss_setup(std::uint64_t seed) {
  ComposedLossSetup s;
  synth::WorldConfig wc;
  wc.images = 6;
  wc.captions_per_image = 1;
  wc.train_fraction = 1.0;
  wc.pool_fraction = 0.0;
  wc.base_rare = 0.5;
  wc.skew = 0.0;
  wc.seed = seed;
  s.corpus = synth::gen_corpus(wc);
  auto examples = decompose_records(s.corpus.captions);
  std::vector<ConceptTree> trees;
  for (const auto& e : examples) trees.push_back(e.tree);
  s.examples = group_by_image(std::move(examples));
  s.features = index_features(s.corpus.features);
  s.model.width = 8;
  s.model.n_heads = 2;
  s.model.pt_layers = 1;
  s.model.ct_layers = 3;
  s.model.feature_dim = s.corpus.features.front().dim();
  s.model.vocabulary = collect_vocabulary(trees);
  s.model.init_seed = seed;
  s.train.negatives = 2;
  s.train.batch_size = 3;
  return s;
}

/// Checks d(loss)/d(theta) of the full objective on random parameter
/// coordinates, one fresh model and batch per trial.
inline OpCheck check_composed_loss(const GradcheckOptions& opt, std::size_t coords_per_trial = 12,
                                   Modulator modulator = Modulator::FiLM) {
  OpCheck out;
  out.name = std::string("training_loss/") + std::string(modulator_name(modulator));
  Rng rng(opt.seed);
  for (std::size_t trial = 0; trial < opt.trials; ++trial) {
    const std::uint64_t seed = rng.next_u64();
    ComposedLossSetup s = composed_loss_setup(seed);
    s.model.modulator = modulator;
    Composer model(s.model);
    std::vector<BatchItem> batch;
    for (const auto& [id, caps] : s.examples) {
      if (batch.size() == s.train.batch_size) break;
      batch.push_back({&s.features.at(id), &caps.front().tree});
    }
    Rng draw(seed ^ 0x5bd1e995ULL);
    const auto negatives = sample_negatives(batch.size(), s.train.negatives, draw);
    const std::uint64_t loss_seed = draw.next_u64();
    auto loss_value = [&](bool backward) {
      Tape tape(backward);
      ForwardContext ctx(model, tape);
      Var total = tape.constant(Tensor::scalar(0.0));
      for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng local(loss_seed + i);
        total = add(total, positive_loss(ctx, batch, i, negatives[i], s.train, local).total);
      }
      if (backward) tape.backward(total);
      return total.value()[0];
    };
    model.store().zero_grad();
    const double f0 = loss_value(true);
    auto& params = model.store().all();
    for (std::size_t c = 0; c < coords_per_trial; ++c) {
      Parameter& p = params[draw.below(params.size())];
      const std::size_t k = draw.below(p.value.size());
      const double orig = p.value[k];
      detail::probe(
          [&](double d) {
            p.value[k] = orig + d;
            const double v = loss_value(false);
            p.value[k] = orig;
            return v;
          },
          f0, p.grad[k], opt, out);
    }
    ++out.trials;
  }
  return out;
}

}  // namespace crg::ad
