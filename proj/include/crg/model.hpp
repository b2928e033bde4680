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

// The recursive composition network.
//
// A caption's ConceptTree is encoded bottom-up against one image:
//   primitive  -> word embedding, optionally grounded by one cross-attention
//                 block over the image regions;
//   predicate  -> template (words + placeholder tags + positions) encoded by
//                 the predicate transformer;
//   composition-> each placeholder row is bound to its child embedding by
//                 the modulator, and the reassembled sequence runs through
//                 the composition transformer, which interleaves
//                 self-attention on both streams with cross-attention
//                 between text and regions and ends with a text-only
//                 self-attention block.
// The pooled output of the last block is the concept embedding v; the
// alignment score is theta^T v.

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crg/corpus.hpp"
#include "crg/error.hpp"
#include "crg/extract.hpp"
#include "crg/nn.hpp"
#include "crg/rng.hpp"
#include "crg/tensor.hpp"

namespace crg {

enum class Modulator { FiLM, MLP, Replace };
enum class Pooling { Mean, StartToken };
/// Flat runs the composition transformer once over the raw caption tokens
/// (no recursion, no modulation); it is the structure ablation.
enum class Structure { Recursive, Flat };

inline std::string_view modulator_name(Modulator m) {
  switch (m) {
    case Modulator::FiLM: return "film";
    case Modulator::MLP: return "mlp";
    case Modulator::Replace: return "replace";
  }
  return "?";
}

inline Modulator parse_modulator(std::string_view s) {
  if (s == "film") return Modulator::FiLM;
  if (s == "mlp") return Modulator::MLP;
  if (s == "replace") return Modulator::Replace;
  throw Error(ErrorCode::InvalidConfig, "unknown modulator '" + std::string(s) + "'");
}

/// Tags that can appear as placeholders.
inline const std::vector<std::string>& placeholder_tags() {
  static const std::vector<std::string> tags{"NN", "NNS", "NNP", "NNPS", "S",  "SBAR",
                                             "SBARQ", "SQ", "SINV", "NP", "NX"};
  return tags;
}

struct ModelConfig {
  std::size_t width = 32;
  std::size_t n_heads = 2;
  std::size_t pt_layers = 6;
  std::size_t ct_layers = 5;
  std::size_t feature_dim = 0;
  std::size_t max_positions = 64;
  Modulator modulator = Modulator::FiLM;
  bool primitive_cross_attention = true;
  Pooling pooling = Pooling::Mean;
  Structure structure = Structure::Recursive;
  std::vector<std::string> vocabulary;
  std::uint64_t init_seed = 0;

  void validate() const {
    auto bad = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
    if (width == 0 || n_heads == 0 || width % n_heads != 0) bad("width must be divisible by n_heads");
    if (pt_layers < 1) bad("predicate transformer needs at least one layer");
    if (ct_layers < 1 || ct_layers % 2 == 0) bad("composition transformer layer count must be odd");
    if (feature_dim == 0) bad("feature_dim must be positive");
    if (vocabulary.empty()) bad("empty vocabulary");
    if (max_positions == 0) bad("max_positions must be positive");
  }

  nlohmann::ordered_json to_json() const {
    return {{"width", width},
            {"n_heads", n_heads},
            {"pt_layers", pt_layers},
            {"ct_layers", ct_layers},
            {"feature_dim", feature_dim},
            {"max_positions", max_positions},
            {"modulator", modulator_name(modulator)},
            {"primitive_cross_attention", primitive_cross_attention},
            {"pooling", pooling == Pooling::Mean ? "mean" : "start"},
            {"structure", structure == Structure::Recursive ? "recursive" : "flat"},
            {"vocabulary", vocabulary},
            {"init_seed", init_seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.width = j.at("width").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.pt_layers = j.at("pt_layers").get<std::size_t>();
    c.ct_layers = j.at("ct_layers").get<std::size_t>();
    c.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.max_positions = j.at("max_positions").get<std::size_t>();
    c.modulator = parse_modulator(j.at("modulator").get<std::string>());
    c.primitive_cross_attention = j.at("primitive_cross_attention").get<bool>();
    c.pooling = j.at("pooling").get<std::string>() == "mean" ? Pooling::Mean : Pooling::StartToken;
    c.structure =
        j.at("structure").get<std::string>() == "flat" ? Structure::Flat : Structure::Recursive;
    c.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
  }
};

/// Lowercased word vocabulary of a set of decompositions (template words,
/// primitives and leaf-concept tokens), sorted.
inline std::vector<std::string> collect_vocabulary(const std::vector<ConceptTree>& trees) {
  std::set<std::string> words;
  for (const auto& tree : trees) {
    for_each_preorder(tree, [&words](const ConceptTree& t) {
      for (auto& w : split_words(t.node.text)) words.insert(std::move(w));
      if (!t.predicate) return;
      for (const auto& e : t.predicate->elements()) {
        if (const auto* w = std::get_if<Word>(&e)) words.insert(w->text);
      }
    });
  }
  return {words.begin(), words.end()};
}

class Composer {
 public:
  struct Params {
    ad::Parameter* word_embedding = nullptr;  // V x d
    ad::Parameter* tag_embedding = nullptr;   // T x d
    ad::Parameter* position_embedding = nullptr;
    ad::Parameter* start_token = nullptr;     // 1 x d
    ad::Linear visual_in;                     // f x d
    ad::BlockParams primitive;
    std::vector<ad::BlockParams> predicate;
    ad::Linear film_scale1, film_scale2, film_shift1, film_shift2, film_proj1, film_proj2;
    ad::Linear mlp_mod1, mlp_mod2;
    std::vector<ad::BlockParams> ct_text_self, ct_visual_self, ct_text_cross, ct_visual_cross;
    ad::BlockParams ct_final;
    ad::Parameter* theta = nullptr;           // d x 1
  };

  explicit Composer(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    for (std::size_t i = 0; i < config_.vocabulary.size(); ++i) {
      word_index_[config_.vocabulary[i]] = i;
    }
    const auto& tags = placeholder_tags();
    for (std::size_t i = 0; i < tags.size(); ++i) tag_index_[tags[i]] = i;
    build();
  }

  const ModelConfig& config() const { return config_; }
  ad::ParameterStore& store() { return store_; }
  const ad::ParameterStore& store() const { return store_; }
  const Params& params() const { return p_; }

  std::size_t word_id(const std::string& word) const {
    auto it = word_index_.find(word);
    if (it == word_index_.end()) throw Error(ErrorCode::UnknownWord, "'" + word + "'");
    return it->second;
  }

  std::size_t tag_id(const std::string& tag) const {
    auto it = tag_index_.find(tag);
    if (it == tag_index_.end()) throw Error(ErrorCode::UnknownWord, "placeholder tag '" + tag + "'");
    return it->second;
  }

  static constexpr const char* kFormat = "crg-checkpoint/1";

  nlohmann::ordered_json checkpoint() const {
    return {{"format", kFormat}, {"config", config_.to_json()}, {"tensors", store_.to_json()}};
  }

  static Composer from_checkpoint(const nlohmann::json& j) {
    if (j.value("format", "") != kFormat) {
      throw Error(ErrorCode::SchemaMismatch, "not a " + std::string(kFormat) + " file");
    }
    Composer model(ModelConfig::from_json(j.at("config")));
    model.store_.load_json(j.at("tensors"));
    return model;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
    out << checkpoint().dump() << '\n';
  }

  static Composer load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path);
    try {
      return from_checkpoint(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::SchemaMismatch, path + ": " + ex.what());
    }
  }

 private:
  void build() {
    Rng rng(config_.init_seed);
    const std::size_t d = config_.width;
    const std::size_t ffn = 4 * d;
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    auto table = [&](const std::string& name, std::size_t rows) {
      return &store_.add(name, ad::Tensor::uniform(rows, d, s, rng));
    };
    p_.word_embedding = table("embed.word", config_.vocabulary.size());
    p_.tag_embedding = table("embed.tag", placeholder_tags().size());
    p_.position_embedding = table("embed.position", config_.max_positions);
    p_.start_token = table("embed.start", 1);
    p_.visual_in = ad::make_linear(store_, "visual.in", config_.feature_dim, d, rng);
    p_.primitive = ad::make_block(store_, "primitive.cross", d, ffn, rng);
    for (std::size_t i = 0; i < config_.pt_layers; ++i) {
      p_.predicate.push_back(ad::make_block(store_, "pt." + std::to_string(i), d, ffn, rng));
    }
    p_.film_scale1 = ad::make_linear(store_, "film.scale1", d, d, rng);
    p_.film_scale2 = ad::make_linear(store_, "film.scale2", d, d, rng);
    // Start the generated scale near 1 so modulation begins close to identity.
    p_.film_scale2.bias->value.fill(1.0);
    p_.film_shift1 = ad::make_linear(store_, "film.shift1", d, d, rng);
    p_.film_shift2 = ad::make_linear(store_, "film.shift2", d, d, rng);
    p_.film_proj1 = ad::make_linear(store_, "film.proj1", d, d, rng);
    p_.film_proj2 = ad::make_linear(store_, "film.proj2", d, d, rng);
    p_.mlp_mod1 = ad::make_linear(store_, "mlpmod.1", 2 * d, d, rng);
    p_.mlp_mod2 = ad::make_linear(store_, "mlpmod.2", d, d, rng);
    const std::size_t pairs = config_.ct_layers / 2;
    for (std::size_t i = 0; i < pairs; ++i) {
      const std::string k = std::to_string(i);
      p_.ct_text_self.push_back(ad::make_block(store_, "ct.text_self." + k, d, ffn, rng));
      p_.ct_visual_self.push_back(ad::make_block(store_, "ct.visual_self." + k, d, ffn, rng));
      p_.ct_text_cross.push_back(ad::make_block(store_, "ct.text_cross." + k, d, ffn, rng));
      if (i + 1 < pairs) {
        p_.ct_visual_cross.push_back(ad::make_block(store_, "ct.visual_cross." + k, d, ffn, rng));
      }
    }
    p_.ct_final = ad::make_block(store_, "ct.final", d, ffn, rng);
    p_.theta = &store_.add("theta", ad::Tensor::uniform(d, 1, s, rng));
  }

  ModelConfig config_;
  ad::ParameterStore store_;
  Params p_;
  std::unordered_map<std::string, std::size_t> word_index_;
  std::unordered_map<std::string, std::size_t> tag_index_;
};

/// Per-node embeddings of one composed tree, in pre-order.
struct Composition {
  ad::Var embedding;
  std::vector<std::pair<const ConceptTree*, ad::Var>> nodes;
};

/// One forward pass context: a tape plus caches of everything that is a
/// pure function of (image, sub-input) so repeated sub-computations are
/// shared and receive summed gradients.
class ForwardContext {
 public:
  ForwardContext(Composer& model, ad::Tape& tape) : model_(model), tape_(tape) {}

  ad::Tape& tape() { return tape_; }

  /// Projected region features, R x d.
  ad::Var visual(const VisualFeatureSet& image) {
    if (auto it = visual_.find(image.image_id); it != visual_.end()) return it->second;
    const auto rows = image.combined();
    if (rows.empty()) throw Error(ErrorCode::MissingFeatures, "image " + image.image_id + " has no regions");
    const std::size_t f = model_.config().feature_dim;
    std::vector<double> flat;
    for (const auto& r : rows) {
      if (r.size() != f) {
        throw Error(ErrorCode::ShapeMismatch, "image " + image.image_id + " feature width " +
                                                  std::to_string(r.size()) + ", model expects " +
                                                  std::to_string(f));
      }
      flat.insert(flat.end(), r.begin(), r.end());
    }
    const ad::Var phi = tape_.constant(ad::Tensor::from(rows.size(), f, std::move(flat)));
    const ad::Var projected = ad::apply(tape_, model_.params().visual_in, phi);
    visual_.emplace(image.image_id, projected);
    return projected;
  }

  ad::Var word_embedding(const std::string& word) {
    return ad::slice_rows(tape_.param(*model_.params().word_embedding), model_.word_id(word), 1);
  }

  ad::Var encode_primitive(const std::string& word, const VisualFeatureSet& image) {
    const std::string key = image.image_id + '\x1f' + word;
    if (auto it = primitives_.find(key); it != primitives_.end()) return it->second;
    ad::Var u = word_embedding(word);
    if (model_.config().primitive_cross_attention) {
      u = ad::multi_head_attention(tape_, model_.params().primitive, u, visual(image),
                                   model_.config().n_heads);
    }
    primitives_.emplace(key, u);
    return u;
  }

  /// Contextualized template sequence, one row per element.
  ad::Var encode_predicate(const PredicateTemplate& tmpl) {
    if (auto it = predicates_.find(tmpl.canonical()); it != predicates_.end()) return it->second;
    const auto& els = tmpl.elements();
    check_length(els.size());
    std::vector<ad::Var> rows;
    rows.reserve(els.size());
    const ad::Var tags = tape_.param(*model_.params().tag_embedding);
    for (const auto& e : els) {
      if (const auto* p = std::get_if<SyntacticPlaceholder>(&e)) {
        rows.push_back(ad::slice_rows(tags, model_.tag_id(p->tag), 1));
      } else {
        rows.push_back(word_embedding(std::get<Word>(e).text));
      }
    }
    ad::Var x = add_positions(ad::concat_rows(rows));
    for (const auto& block : model_.params().predicate) {
      x = ad::self_attention(tape_, block, x, model_.config().n_heads);
    }
    predicates_.emplace(tmpl.canonical(), x);
    return x;
  }

  /// Binds a child concept to its placeholder encoding.
  ad::Var modulate(ad::Var placeholder, ad::Var child) {
    const auto& p = model_.params();
    switch (model_.config().modulator) {
      case Modulator::Replace:
        return child;
      case Modulator::MLP:
        return ad::mlp(tape_, p.mlp_mod1, p.mlp_mod2, ad::concat_cols({placeholder, child}));
      case Modulator::FiLM: {
        const ad::Var a = ad::mlp(tape_, p.film_scale1, p.film_scale2, placeholder);
        const ad::Var b = ad::mlp(tape_, p.film_shift1, p.film_shift2, placeholder);
        return ad::mlp(tape_, p.film_proj1, p.film_proj2, ad::add(ad::mul(a, child), b));
      }
    }
    return child;
  }

  /// Modulates every placeholder with its child and runs the composition
  /// transformer over the reassembled sequence.
  ad::Var compose(ad::Var encoded, const PredicateTemplate& tmpl,
                  const std::vector<ad::Var>& children, const VisualFeatureSet& image) {
    if (children.size() != tmpl.arity()) {
      throw Error(ErrorCode::ArityMismatch, "'" + tmpl.canonical() + "' takes " +
                                                std::to_string(tmpl.arity()) + " arguments, got " +
                                                std::to_string(children.size()));
    }
    ++composition_calls_;
    std::vector<ad::Var> rows;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < tmpl.elements().size(); ++i) {
      const ad::Var row = ad::slice_rows(encoded, i, 1);
      if (std::holds_alternative<SyntacticPlaceholder>(tmpl.elements()[i])) {
        rows.push_back(modulate(row, children[arg++]));
      } else {
        rows.push_back(row);
      }
    }
    return composition_transformer(ad::concat_rows(rows), image);
  }

  /// Encodes a concept that has no predicate from its raw tokens.
  ad::Var encode_leaf(const std::vector<std::string>& words, const VisualFeatureSet& image) {
    check_length(words.size());
    std::vector<ad::Var> rows;
    for (const auto& w : words) rows.push_back(word_embedding(w));
    ++leaf_encodings_;
    return composition_transformer(add_positions(ad::concat_rows(rows)), image);
  }

  /// Recursive encoding of a whole tree against one image.
  Composition compose_sentence(const ConceptTree& tree, const VisualFeatureSet& image) {
    Composition out;
    if (model_.config().structure == Structure::Flat) {
      out.embedding = flat_leaf(tree, image);
      out.nodes.emplace_back(&tree, out.embedding);
      return out;
    }
    out.embedding = encode_node(tree, image, out.nodes);
    return out;
  }

  /// s = theta^T v.
  ad::Var score(ad::Var v) {
    const ad::Var theta = tape_.param(*model_.params().theta);
    if (v.rows() != 1 || v.cols() != theta.rows()) {
      throw Error(ErrorCode::ShapeMismatch, "score expects a 1 x " + std::to_string(theta.rows()) +
                                                " embedding");
    }
    return ad::matmul(v, theta);
  }

  std::size_t composition_calls() const { return composition_calls_; }
  std::size_t leaf_encodings() const { return leaf_encodings_; }

 private:
  void check_length(std::size_t n) const {
    if (n == 0 || n > model_.config().max_positions) {
      throw Error(ErrorCode::ShapeMismatch, "sequence length " + std::to_string(n) +
                                                " outside [1, " +
                                                std::to_string(model_.config().max_positions) + "]");
    }
  }

  ad::Var add_positions(ad::Var x) {
    const ad::Var pos =
        ad::slice_rows(tape_.param(*model_.params().position_embedding), 0, x.rows());
    return ad::add(x, pos);
  }

  // Visual stream after the first self-attention block depends on the image
  // only.
  ad::Var visual_stream(const VisualFeatureSet& image) {
    if (auto it = visual_stream_.find(image.image_id); it != visual_stream_.end()) return it->second;
    const ad::Var v = ad::self_attention(tape_, model_.params().ct_visual_self.front(),
                                         visual(image), model_.config().n_heads);
    visual_stream_.emplace(image.image_id, v);
    return v;
  }

  ad::Var composition_transformer(ad::Var text, const VisualFeatureSet& image) {
    const auto& p = model_.params();
    const std::size_t heads = model_.config().n_heads;
    if (model_.config().pooling == Pooling::StartToken) {
      text = ad::concat_rows({tape_.param(*p.start_token), text});
    }
    const std::size_t pairs = p.ct_text_self.size();
    ad::Var vis;
    for (std::size_t i = 0; i < pairs; ++i) {
      text = ad::self_attention(tape_, p.ct_text_self[i], text, heads);
      vis = i == 0 ? visual_stream(image) : ad::self_attention(tape_, p.ct_visual_self[i], vis, heads);
      const ad::Var text_next = ad::multi_head_attention(tape_, p.ct_text_cross[i], text, vis, heads);
      if (i + 1 < pairs) vis = ad::multi_head_attention(tape_, p.ct_visual_cross[i], vis, text, heads);
      text = text_next;
    }
    text = ad::self_attention(tape_, p.ct_final, text, heads);
    if (model_.config().pooling == Pooling::StartToken) return ad::slice_rows(text, 0, 1);
    return ad::mean_rows(text);
  }

  ad::Var flat_leaf(const ConceptTree& tree, const VisualFeatureSet& image) {
    const std::string key = image.image_id + "\x1f" + "flat:" + tree.node.text;
    if (auto it = concepts_.find(key); it != concepts_.end()) return it->second;
    const ad::Var v = encode_leaf(split_words(tree.node.text), image);
    concepts_.emplace(key, v);
    return v;
  }

  ad::Var encode_node(const ConceptTree& t, const VisualFeatureSet& image,
                      std::vector<std::pair<const ConceptTree*, ad::Var>>& nodes) {
    const std::size_t slot = nodes.size();
    nodes.emplace_back(&t, ad::Var{});
    ad::Var v;
    if (t.node.kind == ConceptKind::Primitive) {
      v = encode_primitive(t.node.text, image);
    } else if (!t.predicate) {
      const std::string key = image.image_id + "\x1f" + "leaf:" + t.node.text;
      if (auto it = concepts_.find(key); it != concepts_.end()) {
        v = it->second;
        ++leaf_encodings_;
      } else {
        v = encode_leaf(split_words(t.node.text), image);
        concepts_.emplace(key, v);
      }
    } else {
      std::vector<ad::Var> kids;
      for (const auto& c : t.children) kids.push_back(encode_node(c, image, nodes));
      const std::string key = image.image_id + "\x1f" + structure_key(t);
      if (auto it = concepts_.find(key); it != concepts_.end()) {
        v = it->second;
        ++composition_calls_;
      } else {
        v = compose(encode_predicate(*t.predicate), *t.predicate, kids, image);
        concepts_.emplace(key, v);
      }
    }
    nodes[slot].second = v;
    return v;
  }

  Composer& model_;
  ad::Tape& tape_;
  std::unordered_map<std::string, ad::Var> visual_;
  std::unordered_map<std::string, ad::Var> visual_stream_;
  std::unordered_map<std::string, ad::Var> primitives_;
  std::unordered_map<std::string, ad::Var> predicates_;
  std::unordered_map<std::string, ad::Var> concepts_;
  std::size_t composition_calls_ = 0;
  std::size_t leaf_encodings_ = 0;
};

}  // namespace crg
