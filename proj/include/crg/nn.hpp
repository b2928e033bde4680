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

// Multi-head attention blocks built from the tensor operations.
//
// A block is the post-norm transformer layer:
//   h   = LayerNorm(x + Wo * concat_h Attention(x Wq_h, kv Wk_h, kv Wv_h))
//   out = LayerNorm(h + W2 * relu(W1 * h))
// With kv == x it is a self-attention block, otherwise cross-attention.

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "crg/error.hpp"
#include "crg/rng.hpp"
#include "crg/tensor.hpp"

namespace crg::ad {

struct Linear {
  Parameter* weight = nullptr;  // in x out
  Parameter* bias = nullptr;    // 1 x out
};

struct LayerNormParams {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;
};

struct BlockParams {
  Linear query, key, value, output;
  LayerNormParams norm1;
  Linear ffn_in, ffn_out;
  LayerNormParams norm2;
};

/// Weights uniform in +-1/sqrt(fan_in), biases zero.
inline Linear make_linear(ParameterStore& store, const std::string& name, std::size_t in,
                          std::size_t out, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = &store.add(name + ".w", Tensor::uniform(in, out, scale, rng));
  l.bias = &store.add(name + ".b", Tensor(1, out));
  return l;
}

inline LayerNormParams make_layer_norm(ParameterStore& store, const std::string& name,
                                       std::size_t width) {
  return {&store.add(name + ".gain", Tensor(1, width, 1.0)),
          &store.add(name + ".bias", Tensor(1, width))};
}

inline BlockParams make_block(ParameterStore& store, const std::string& name, std::size_t width,
                              std::size_t ffn_width, Rng& rng) {
  BlockParams p;
  p.query = make_linear(store, name + ".q", width, width, rng);
  p.key = make_linear(store, name + ".k", width, width, rng);
  p.value = make_linear(store, name + ".v", width, width, rng);
  p.output = make_linear(store, name + ".o", width, width, rng);
  p.norm1 = make_layer_norm(store, name + ".ln1", width);
  p.ffn_in = make_linear(store, name + ".ffn1", width, ffn_width, rng);
  p.ffn_out = make_linear(store, name + ".ffn2", ffn_width, width, rng);
  p.norm2 = make_layer_norm(store, name + ".ln2", width);
  return p;
}

inline Var apply(Tape& tape, const Linear& l, Var x) {
  return linear(tape.param(*l.weight), tape.param(*l.bias), x);
}

inline Var apply(Tape& tape, const LayerNormParams& n, Var x) {
  return layer_norm(x, tape.param(*n.gain), tape.param(*n.bias));
}

/// Two-layer ReLU MLP.
inline Var mlp(Tape& tape, const Linear& first, const Linear& second, Var x) {
  return apply(tape, second, relu(apply(tape, first, x)));
}

/// Full attention block: queries come from x, keys and values from kv.
inline Var multi_head_attention(Tape& tape, const BlockParams& p, Var x, Var kv,
                                std::size_t n_heads) {
  const std::size_t width = x.cols();
  if (n_heads == 0 || width % n_heads != 0) {
    throw Error(ErrorCode::ShapeMismatch,
                "width " + std::to_string(width) + " not divisible by " + std::to_string(n_heads) +
                    " heads");
  }
  if (kv.cols() != width) {
    throw Error(ErrorCode::ShapeMismatch, "query/key-value widths differ");
  }
  const Var q = apply(tape, p.query, x);
  const Var k = apply(tape, p.key, kv);
  const Var v = apply(tape, p.value, kv);
  Var mixed;
  if (n_heads == 1) {
    mixed = scaled_dot_attention(k, q, v);
  } else {
    const std::size_t dh = width / n_heads;
    std::vector<Var> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
      heads.push_back(scaled_dot_attention(slice_cols(k, h * dh, dh), slice_cols(q, h * dh, dh),
                                           slice_cols(v, h * dh, dh)));
    }
    mixed = concat_cols(heads);
  }
  const Var h = apply(tape, p.norm1, add(x, apply(tape, p.output, mixed)));
  return apply(tape, p.norm2, add(h, mlp(tape, p.ffn_in, p.ffn_out, h)));
}

inline Var self_attention(Tape& tape, const BlockParams& p, Var x, std::size_t n_heads) {
  return multi_head_attention(tape, p, x, x, n_heads);
}

}  // namespace crg::ad
