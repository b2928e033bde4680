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

// Penn-Treebank-style bracketed constituency trees.
//
//   (S (NP (CD two) (NNS dogs)) (VP (VBP are) ...))
//
// A preterminal such as (NNS dogs) is a leaf ParseNode: it carries the POS
// label and the token. Internal nodes carry a constituency label and one or
// more children. Parentheses inside tokens must be escaped with the PTB
// convention (-LRB-, -RRB-); tokens are otherwise passed through untouched.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crg/error.hpp"

namespace crg::treebank {

struct Token {
  std::string text;
  std::size_t index = 0;

  bool operator==(const Token&) const = default;
};

/// Half-open token interval [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  bool operator==(const Span&) const = default;
};

struct ParseNode {
  std::string label;
  std::vector<ParseNode> children;
  std::optional<Token> token;
  Span span;

  bool is_leaf() const { return token.has_value(); }
  bool operator==(const ParseNode&) const = default;
};

struct ParseTree {
  ParseNode root;
  std::vector<Token> tokens;

  bool operator==(const ParseTree&) const = default;
};

struct Leaf {
  Token token;
  std::string pos;

  bool operator==(const Leaf&) const = default;
};

/// Strips functional suffixes ("NP-SBJ" -> "NP", "NP=2" -> "NP"). Labels
/// beginning with '-' are bracket or null-element tags (-LRB-, -NONE-) and
/// are kept verbatim.
inline std::string strip_function_tags(std::string_view label) {
  if (label.empty() || label.front() == '-') return std::string(label);
  const auto cut = label.find_first_of("-=");
  if (cut == std::string_view::npos || cut == 0) return std::string(label);
  return std::string(label.substr(0, cut));
}

namespace detail {

enum class LexKind { Open, Close, Atom, End };

struct Lexeme {
  LexKind kind;
  std::string_view text;
  std::size_t offset;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  Lexeme next() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
    if (pos_ >= text_.size()) return {LexKind::End, {}, pos_};
    const std::size_t start = pos_;
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      return {LexKind::Open, text_.substr(start, 1), start};
    }
    if (c == ')') {
      ++pos_;
      return {LexKind::Close, text_.substr(start, 1), start};
    }
    while (pos_ < text_.size() && !is_space(text_[pos_]) && text_[pos_] != '(' &&
           text_[pos_] != ')') {
      ++pos_;
    }
    return {LexKind::Atom, text_.substr(start, pos_ - start), start};
  }

  Lexeme peek() {
    const std::size_t saved = pos_;
    Lexeme l = next();
    pos_ = saved;
    return l;
  }

 private:
  static bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

inline std::string where(std::size_t offset) {
  return " at offset " + std::to_string(offset);
}

// Parses the remainder of a node after its '(' was consumed. An empty label
// is returned as "" and validated by the caller.
inline ParseNode parse_node(Lexer& lex, std::vector<Token>& tokens, std::size_t open_at) {
  ParseNode node;
  Lexeme first = lex.peek();
  if (first.kind == LexKind::End) {
    throw Error(ErrorCode::UnbalancedBrackets, "unclosed '('" + where(open_at));
  }
  if (first.kind == LexKind::Close) {
    throw Error(ErrorCode::BadLabel, "empty node '()'" + where(open_at));
  }
  if (first.kind == LexKind::Atom) {
    lex.next();
    node.label = strip_function_tags(first.text);
  }

  bool saw_token = false;
  for (;;) {
    Lexeme l = lex.next();
    switch (l.kind) {
      case LexKind::End:
        throw Error(ErrorCode::UnbalancedBrackets, "unclosed '('" + where(open_at));
      case LexKind::Close:
        if (!saw_token && node.children.empty()) {
          throw Error(ErrorCode::EmptyNode,
                      "node '" + node.label + "' has no children or token" + where(open_at));
        }
        if (saw_token) {
          node.span = {node.token->index, node.token->index + 1};
        } else {
          node.span = {node.children.front().span.start, node.children.back().span.end};
        }
        return node;
      case LexKind::Atom:
        if (saw_token || !node.children.empty()) {
          throw Error(ErrorCode::UnexpectedToken,
                      "token '" + std::string(l.text) + "' mixed with other children" +
                          where(l.offset));
        }
        saw_token = true;
        node.token = Token{std::string(l.text), tokens.size()};
        tokens.push_back(*node.token);
        break;
      case LexKind::Open: {
        if (saw_token) {
          throw Error(ErrorCode::UnexpectedToken,
                      "subtree after token in preterminal '" + node.label + "'" +
                          where(l.offset));
        }
        ParseNode child = parse_node(lex, tokens, l.offset);
        if (child.label.empty()) {
          throw Error(ErrorCode::BadLabel, "empty label" + where(l.offset));
        }
        node.children.push_back(std::move(child));
        break;
      }
    }
  }
}

inline void write_node(const ParseNode& node, std::string& out) {
  out += '(';
  out += node.label;
  if (node.is_leaf()) {
    out += ' ';
    out += node.token->text;
  } else {
    for (const auto& child : node.children) {
      out += ' ';
      write_node(child, out);
    }
  }
  out += ')';
}

inline void collect_leaves(const ParseNode& node, std::vector<Leaf>& out) {
  if (node.is_leaf()) {
    out.push_back({*node.token, node.label});
    return;
  }
  for (const auto& child : node.children) collect_leaves(child, out);
}

}  // namespace detail

/// Parses one bracketed tree. The PTB outer wrapper "( (S ...) )" with an
/// empty label and a single child is unwrapped.
inline ParseTree parse_bracketed(std::string_view text) {
  detail::Lexer lex(text);
  const detail::Lexeme open = lex.next();
  if (open.kind == detail::LexKind::End) {
    throw Error(ErrorCode::UnbalancedBrackets, "empty input");
  }
  if (open.kind == detail::LexKind::Close) {
    throw Error(ErrorCode::UnbalancedBrackets, "unmatched ')'" + detail::where(open.offset));
  }
  if (open.kind != detail::LexKind::Open) {
    throw Error(ErrorCode::UnexpectedToken,
                "expected '(' but found '" + std::string(open.text) + "'");
  }
  ParseTree tree;
  tree.root = detail::parse_node(lex, tree.tokens, open.offset);
  if (tree.root.label.empty()) {
    if (tree.root.children.size() != 1) {
      throw Error(ErrorCode::BadLabel, "unlabeled root with multiple children");
    }
    ParseNode inner = std::move(tree.root.children.front());
    tree.root = std::move(inner);
  }
  const detail::Lexeme trailing = lex.next();
  if (trailing.kind == detail::LexKind::Close) {
    throw Error(ErrorCode::UnbalancedBrackets, "unmatched ')'" + detail::where(trailing.offset));
  }
  if (trailing.kind != detail::LexKind::End) {
    throw Error(ErrorCode::UnexpectedToken,
                "trailing input '" + std::string(trailing.text) + "'" +
                    detail::where(trailing.offset));
  }
  return tree;
}

inline std::string to_bracketed(const ParseNode& node) {
  std::string out;
  detail::write_node(node, out);
  return out;
}

inline std::string to_bracketed(const ParseTree& tree) { return to_bracketed(tree.root); }

inline std::vector<Leaf> leaves(const ParseNode& node) {
  std::vector<Leaf> out;
  detail::collect_leaves(node, out);
  return out;
}

inline std::vector<Leaf> leaves(const ParseTree& tree) { return leaves(tree.root); }

/// Space-joined token text of a subtree.
inline std::string surface(const ParseNode& node) {
  std::string out;
  for (const auto& leaf : leaves(node)) {
    if (!out.empty()) out += ' ';
    out += leaf.token.text;
  }
  return out;
}

/// Re-derives token indices and spans after structural edits.
inline ParseTree rebuild(ParseNode root) {
  ParseTree tree;
  auto assign = [&tree](auto& self, ParseNode& node) -> void {
    if (node.is_leaf()) {
      node.token->index = tree.tokens.size();
      node.span = {node.token->index, node.token->index + 1};
      tree.tokens.push_back(*node.token);
      return;
    }
    for (auto& child : node.children) self(self, child);
    node.span = {node.children.front().span.start, node.children.back().span.end};
  };
  assign(assign, root);
  tree.root = std::move(root);
  return tree;
}

/// Checks every structural invariant; returns an empty string when valid.
inline std::string validate(const ParseTree& tree) {
  std::size_t next = 0;
  std::string problem;
  auto check = [&](auto& self, const ParseNode& node) -> void {
    if (!problem.empty()) return;
    if (node.label.empty()) problem = "empty label";
    if (node.span.end <= node.span.start) problem = "empty span at " + node.label;
    if (node.is_leaf()) {
      if (!node.children.empty()) problem = "leaf with children";
      if (node.token->text.empty()) problem = "empty token";
      if (node.token->index != next || node.span != Span{next, next + 1}) {
        problem = "leaf span out of order at '" + node.token->text + "'";
      }
      if (next >= tree.tokens.size() || tree.tokens[next] != *node.token) {
        problem = "leaf does not match token list";
      }
      ++next;
      return;
    }
    if (node.children.empty()) {
      problem = "internal node without children: " + node.label;
      return;
    }
    std::size_t cursor = node.span.start;
    for (const auto& child : node.children) {
      if (child.span.start != cursor) problem = "non-contiguous children under " + node.label;
      self(self, child);
      cursor = child.span.end;
    }
    if (cursor != node.span.end) problem = "span mismatch under " + node.label;
  };
  check(check, tree.root);
  if (problem.empty() && next != tree.tokens.size()) problem = "token count mismatch";
  if (problem.empty() && tree.root.span != Span{0, tree.tokens.size()}) {
    problem = "root span does not cover all tokens";
  }
  return problem;
}

}  // namespace crg::treebank
