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

// Decomposition of a constituency tree into concepts and predicate templates.
//
// One extraction step runs a breadth-first search below the current node:
//   * a phrase (>= 2 tokens) tagged S/SBAR/SBARQ/SQ/SINV/NP/NX that contains
//     a noun leaf is a concept and is taken whole (its subtree is not
//     searched further);
//   * only when no such phrase exists are noun leaves (NN/NNS/NNP/NNPS)
//     taken as primitive arguments.
// The remaining tokens, with each taken subtree replaced by a "[TAG]"
// placeholder, form the predicate template. Steps recurse into every phrase
// argument until nothing decomposes.

#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "crg/error.hpp"
#include "crg/rng.hpp"
#include "crg/treebank.hpp"

namespace crg {

using treebank::ParseNode;
using treebank::ParseTree;

struct SyntacticPlaceholder {
  std::string tag;
  std::size_t arg_index = 1;  // 1-based, left to right

  bool operator==(const SyntacticPlaceholder&) const = default;
};

struct Word {
  std::string text;

  bool operator==(const Word&) const = default;
};

using TemplateElement = std::variant<Word, SyntacticPlaceholder>;

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

class PredicateTemplate {
 public:
  PredicateTemplate() = default;

  /// Validates the element list; placeholder indices are reassigned 1..n in
  /// element order.
  explicit PredicateTemplate(std::vector<TemplateElement> elements)
      : elements_(std::move(elements)) {
    std::size_t words = 0;
    for (auto& e : elements_) {
      if (auto* p = std::get_if<SyntacticPlaceholder>(&e)) {
        if (p->tag.empty()) throw Error(ErrorCode::BadLabel, "placeholder with empty tag");
        p->arg_index = ++arity_;
      } else {
        if (std::get<Word>(e).text.empty()) {
          throw Error(ErrorCode::BadLabel, "empty template word");
        }
        ++words;
      }
    }
    if (arity_ == 0) {
      throw Error(ErrorCode::ArityMismatch, "template without placeholders");
    }
    if (words == 0 && arity_ < 2) {
      throw Error(ErrorCode::ArityMismatch, "template is a lone placeholder");
    }
    for (std::size_t i = 0; i < elements_.size(); ++i) {
      if (i) canonical_ += ' ';
      if (const auto* p = std::get_if<SyntacticPlaceholder>(&elements_[i])) {
        canonical_ += '[' + p->tag + ']';
      } else {
        canonical_ += std::get<Word>(elements_[i]).text;
      }
    }
  }

  const std::vector<TemplateElement>& elements() const { return elements_; }
  std::size_t arity() const { return arity_; }
  /// Display form: "[NP] are running on [NP]".
  const std::string& canonical() const { return canonical_; }

  /// Element positions of the placeholders, in argument order.
  std::vector<std::size_t> placeholder_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < elements_.size(); ++i) {
      if (std::holds_alternative<SyntacticPlaceholder>(elements_[i])) out.push_back(i);
    }
    return out;
  }

  bool operator==(const PredicateTemplate& o) const { return elements_ == o.elements_; }

 private:
  std::vector<TemplateElement> elements_;
  std::size_t arity_ = 0;
  std::string canonical_;
};

enum class ConceptKind { Primitive, Phrase, Sentence };

inline std::string_view kind_name(ConceptKind k) {
  switch (k) {
    case ConceptKind::Primitive: return "primitive";
    case ConceptKind::Phrase: return "phrase";
    case ConceptKind::Sentence: return "sentence";
  }
  return "?";
}

inline ConceptKind parse_kind(std::string_view s) {
  if (s == "primitive") return ConceptKind::Primitive;
  if (s == "phrase") return ConceptKind::Phrase;
  if (s == "sentence") return ConceptKind::Sentence;
  throw Error(ErrorCode::SchemaMismatch, "unknown concept kind '" + std::string(s) + "'");
}

struct ConceptNode {
  std::string text;  // lowercased, single-space joined
  ConceptKind kind = ConceptKind::Sentence;

  auto operator<=>(const ConceptNode&) const = default;
};

struct ConceptTree {
  ConceptNode node;
  std::optional<PredicateTemplate> predicate;
  std::vector<ConceptTree> children;

  bool is_leaf() const { return !predicate.has_value(); }
  bool operator==(const ConceptTree&) const = default;
};

struct Extraction {
  PredicateTemplate predicate;
  std::vector<ParseNode> arguments;
};

inline bool is_primitive_tag(std::string_view tag) {
  return tag == "NN" || tag == "NNS" || tag == "NNP" || tag == "NNPS";
}

inline bool is_concept_tag(std::string_view tag) {
  return tag == "S" || tag == "SBAR" || tag == "SBARQ" || tag == "SQ" || tag == "SINV" ||
         tag == "NP" || tag == "NX";
}

/// True for a leaf with a noun POS tag. Internal nodes are never primitives.
inline bool is_primitive(const ParseNode& node) {
  return node.is_leaf() && is_primitive_tag(node.label);
}

inline bool contains_primitive(const ParseNode& node) {
  if (node.is_leaf()) return is_primitive(node);
  return std::any_of(node.children.begin(), node.children.end(),
                     [](const ParseNode& c) { return contains_primitive(c); });
}

inline bool is_concept_constituent(const ParseNode& node) {
  return node.span.size() >= 2 && is_concept_tag(node.label) && contains_primitive(node);
}

inline std::string concept_text(const ParseNode& node) {
  return to_lower_ascii(treebank::surface(node));
}

inline std::optional<Extraction> extract_step(const ParseNode& tree) {
  if (tree.is_leaf() || tree.span.size() < 2) return std::nullopt;

  std::set<const ParseNode*> selected;
  std::deque<const ParseNode*> queue;
  for (const auto& c : tree.children) queue.push_back(&c);
  while (!queue.empty()) {
    const ParseNode* n = queue.front();
    queue.pop_front();
    // A constituent covering the whole expression would give an identity
    // predicate; search inside it instead.
    if (is_concept_constituent(*n) && n->span != tree.span) {
      selected.insert(n);
      continue;
    }
    for (const auto& c : n->children) queue.push_back(&c);
  }
  if (selected.empty()) {
    std::function<void(const ParseNode&)> grab = [&](const ParseNode& n) {
      if (is_primitive(n)) selected.insert(&n);
      for (const auto& c : n.children) grab(c);
    };
    grab(tree);
  }
  if (selected.empty()) return std::nullopt;

  std::vector<TemplateElement> elements;
  std::vector<ParseNode> arguments;
  std::function<void(const ParseNode&)> assemble = [&](const ParseNode& n) {
    if (selected.count(&n)) {
      elements.emplace_back(SyntacticPlaceholder{n.label, arguments.size() + 1});
      arguments.push_back(n);
      return;
    }
    if (n.is_leaf()) {
      elements.emplace_back(Word{to_lower_ascii(n.token->text)});
      return;
    }
    for (const auto& c : n.children) assemble(c);
  };
  assemble(tree);

  const bool has_word = std::any_of(elements.begin(), elements.end(), [](const auto& e) {
    return std::holds_alternative<Word>(e);
  });
  if (!has_word && arguments.size() < 2) return std::nullopt;
  return Extraction{PredicateTemplate(std::move(elements)), std::move(arguments)};
}

namespace detail {

inline ConceptTree decompose_phrase(const ParseNode& node) {
  ConceptTree out;
  if (node.is_leaf()) {
    out.node = {to_lower_ascii(node.token->text), ConceptKind::Primitive};
    return out;
  }
  out.node = {concept_text(node), ConceptKind::Phrase};
  if (auto step = extract_step(node)) {
    out.predicate = std::move(step->predicate);
    for (const auto& arg : step->arguments) out.children.push_back(decompose_phrase(arg));
  }
  return out;
}

}  // namespace detail

inline ConceptTree decompose(const ParseTree& tree) {
  ConceptTree out;
  out.node = {concept_text(tree.root), ConceptKind::Sentence};
  if (tree.tokens.size() == 1) {
    const auto leaf = treebank::leaves(tree.root).front();
    if (is_primitive_tag(leaf.pos)) out.node.kind = ConceptKind::Primitive;
    return out;
  }
  if (auto step = extract_step(tree.root)) {
    out.predicate = std::move(step->predicate);
    for (const auto& arg : step->arguments) out.children.push_back(detail::decompose_phrase(arg));
  }
  return out;
}

/// Randomly flattens non-root internal nodes with probability p each,
/// splicing their children into the parent. One draw per non-root internal
/// node of the input, in pre-order.
inline ParseTree degrade_parse(const ParseTree& tree, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "degrade probability must be in [0, 1]");
  }
  std::function<std::vector<ParseNode>(const ParseNode&)> rewrite_children =
      [&](const ParseNode& node) {
        std::vector<ParseNode> out;
        for (const auto& child : node.children) {
          if (child.is_leaf()) {
            out.push_back(child);
            continue;
          }
          const bool flatten = rng.uniform() < p;
          std::vector<ParseNode> grand = rewrite_children(child);
          if (flatten) {
            for (auto& g : grand) out.push_back(std::move(g));
          } else {
            ParseNode kept;
            kept.label = child.label;
            kept.children = std::move(grand);
            out.push_back(std::move(kept));
          }
        }
        return out;
      };
  if (tree.root.is_leaf()) return tree;
  ParseNode root;
  root.label = tree.root.label;
  root.children = rewrite_children(tree.root);
  return treebank::rebuild(std::move(root));
}

// ---- ConceptTree utilities ----

inline std::size_t node_count(const ConceptTree& t) {
  std::size_t n = 1;
  for (const auto& c : t.children) n += node_count(c);
  return n;
}

inline std::size_t predicate_count(const ConceptTree& t) {
  std::size_t n = t.predicate ? 1 : 0;
  for (const auto& c : t.children) n += predicate_count(c);
  return n;
}

/// Leaves (primitives and non-decomposable phrases) have height 0.
inline std::size_t height(const ConceptTree& t) {
  std::size_t h = 0;
  for (const auto& c : t.children) h = std::max(h, height(c) + 1);
  return h;
}

template <typename Fn>
void for_each_preorder(const ConceptTree& t, Fn&& fn) {
  fn(t);
  for (const auto& c : t.children) for_each_preorder(c, fn);
}

template <typename Fn>
void for_each_postorder(const ConceptTree& t, Fn&& fn) {
  for (const auto& c : t.children) for_each_postorder(c, fn);
  fn(t);
}

/// Structural identity key: two subtrees with equal keys compose identically.
inline std::string structure_key(const ConceptTree& t) {
  std::string key = "(";
  key += kind_name(t.node.kind);
  key += ':';
  key += t.node.text;
  if (t.predicate) {
    key += " | ";
    key += t.predicate->canonical();
    for (const auto& c : t.children) {
      key += ' ';
      key += structure_key(c);
    }
  }
  key += ')';
  return key;
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Multi-line rendering used by the CLI and golden files.
inline std::string render(const ConceptTree& t, std::size_t indent = 0) {
  std::string out(indent * 2, ' ');
  out += kind_name(t.node.kind);
  out += " \"" + t.node.text + "\"";
  if (t.predicate) out += "  <- " + t.predicate->canonical();
  out += '\n';
  for (const auto& c : t.children) out += render(c, indent + 1);
  return out;
}

}  // namespace crg
