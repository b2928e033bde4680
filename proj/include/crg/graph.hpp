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

// Concept & Relation Graph: deduplicated concepts and predicates collected
// from a caption corpus, with the set of images each concept denotes.

#pragma once

#include <cstddef>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crg/error.hpp"
#include "crg/extract.hpp"
#include "crg/treebank.hpp"

namespace crg {

struct GraphEdge {
  ConceptNode parent;
  std::string predicate;  // canonical template
  std::vector<ConceptNode> children;

  auto operator<=>(const GraphEdge&) const = default;
};

struct GraphStats {
  std::size_t num_concepts = 0;  // sentence + phrase concepts
  std::size_t num_predicates = 0;
  std::size_t num_primitives = 0;
  double avg_height = 0.0;

  bool operator==(const GraphStats&) const = default;
};

class ConceptGraph {
 public:
  struct ConceptInfo {
    std::set<std::string> images;    // denotation
    std::set<std::string> captions;  // provenance

    bool operator==(const ConceptInfo&) const = default;
  };

  struct CaptionInfo {
    std::string image_id;
    ConceptNode root;
    std::size_t height = 0;

    bool operator==(const CaptionInfo&) const = default;
  };

  void ingest(const std::string& image_id, const std::string& caption_id,
              const treebank::ParseTree& tree) {
    ingest(image_id, caption_id, decompose(tree));
  }

  void ingest(const std::string& image_id, const std::string& caption_id,
              const ConceptTree& decomposition) {
    if (captions_.count(caption_id)) {
      throw Error(ErrorCode::DuplicateCaptionId, "caption '" + caption_id + "' already ingested");
    }
    captions_[caption_id] = {image_id, decomposition.node, height(decomposition)};
    std::vector<ConceptNode> touched;
    for_each_preorder(decomposition, [&](const ConceptTree& t) {
      auto& info = concepts_[t.node];
      info.images.insert(image_id);
      info.captions.insert(caption_id);
      touched.push_back(t.node);
      if (!t.predicate) return;
      predicates_.emplace(t.predicate->canonical(), *t.predicate);
      GraphEdge edge{t.node, t.predicate->canonical(), {}};
      for (const auto& c : t.children) edge.children.push_back(c.node);
      add_edge(std::move(edge));
    });
    propagate(touched);
  }

  /// Union of two partial graphs; the result does not depend on merge order.
  void merge(const ConceptGraph& other) {
    for (const auto& [id, _] : other.captions_) {
      if (captions_.count(id)) {
        throw Error(ErrorCode::DuplicateCaptionId, "caption '" + id + "' present in both graphs");
      }
    }
    captions_.insert(other.captions_.begin(), other.captions_.end());
    for (const auto& [node, info] : other.concepts_) {
      auto& mine = concepts_[node];
      mine.images.insert(info.images.begin(), info.images.end());
      mine.captions.insert(info.captions.begin(), info.captions.end());
    }
    predicates_.insert(other.predicates_.begin(), other.predicates_.end());
    for (const auto& e : other.edges_) add_edge(e);
    std::vector<ConceptNode> all;
    for (const auto& [node, _] : concepts_) all.push_back(node);
    propagate(all);
  }

  GraphStats stats() const {
    GraphStats s;
    for (const auto& [node, _] : concepts_) {
      if (node.kind == ConceptKind::Primitive) {
        ++s.num_primitives;
      } else {
        ++s.num_concepts;
      }
    }
    s.num_predicates = predicates_.size();
    if (!captions_.empty()) {
      double total = 0.0;
      for (const auto& [_, c] : captions_) total += static_cast<double>(c.height);
      s.avg_height = total / static_cast<double>(captions_.size());
    }
    return s;
  }

  bool contains(const ConceptNode& node) const { return concepts_.count(node) != 0; }

  const std::set<std::string>& denotation(const ConceptNode& node) const {
    return info(node).images;
  }

  /// Union over every concept kind sharing this text.
  std::set<std::string> denotation(const std::string& text) const {
    std::set<std::string> out;
    bool found = false;
    for (auto kind : {ConceptKind::Primitive, ConceptKind::Phrase, ConceptKind::Sentence}) {
      auto it = concepts_.find(ConceptNode{text, kind});
      if (it == concepts_.end()) continue;
      found = true;
      out.insert(it->second.images.begin(), it->second.images.end());
    }
    if (!found) throw Error(ErrorCode::UnknownConcept, "no concept '" + text + "'");
    return out;
  }

  const std::set<std::string>& provenance(const ConceptNode& node) const {
    return info(node).captions;
  }

  /// Edges where the concept is the parent.
  std::vector<GraphEdge> children(const ConceptNode& node) const {
    info(node);
    std::vector<GraphEdge> out;
    for (auto it = edges_.lower_bound(GraphEdge{node, {}, {}});
         it != edges_.end() && it->parent == node; ++it) {
      out.push_back(*it);
    }
    return out;
  }

  /// Edges where the concept is one of the children.
  std::vector<GraphEdge> parents(const ConceptNode& node) const {
    info(node);
    std::vector<GraphEdge> out;
    for (const auto& e : edges_) {
      for (const auto& c : e.children) {
        if (c == node) {
          out.push_back(e);
          break;
        }
      }
    }
    return out;
  }

  const std::map<ConceptNode, ConceptInfo>& concepts() const { return concepts_; }
  const std::map<std::string, PredicateTemplate>& predicates() const { return predicates_; }
  const std::set<GraphEdge>& edges() const { return edges_; }
  const std::map<std::string, CaptionInfo>& captions() const { return captions_; }

  /// Rebuilds a caption's decomposition from stored edges. Where a concept
  /// has several outgoing edges (the same text decomposed differently by
  /// different captions) the first edge in canonical order is used.
  ConceptTree tree_of(const std::string& caption_id) const {
    auto it = captions_.find(caption_id);
    if (it == captions_.end()) throw Error(ErrorCode::UnknownConcept, "no caption '" + caption_id + "'");
    return expand(it->second.root);
  }

  bool operator==(const ConceptGraph& o) const {
    return concepts_ == o.concepts_ && predicates_ == o.predicates_ && edges_ == o.edges_ &&
           captions_ == o.captions_;
  }

  // ---- persistence: JSON Lines, one record per line ----

  static constexpr const char* kSchema = "crg-graph/1";

  void write(std::ostream& out) const {
    std::map<ConceptNode, std::size_t> concept_id;
    std::map<std::string, std::size_t> predicate_id;
    for (const auto& [node, _] : concepts_) concept_id.emplace(node, concept_id.size());
    for (const auto& [canon, _] : predicates_) predicate_id.emplace(canon, predicate_id.size());

    auto line = [&out](const nlohmann::ordered_json& j) { out << j.dump() << '\n'; };
    line({{"t", "header"},
          {"schema", kSchema},
          {"concepts", concepts_.size()},
          {"predicates", predicates_.size()},
          {"edges", edges_.size()},
          {"captions", captions_.size()}});
    for (const auto& [node, inf] : concepts_) {
      line({{"t", "concept"},
            {"id", concept_id.at(node)},
            {"kind", kind_name(node.kind)},
            {"text", node.text},
            {"images", inf.images},
            {"captions", inf.captions}});
    }
    for (const auto& [canon, tmpl] : predicates_) {
      nlohmann::ordered_json elements = nlohmann::ordered_json::array();
      for (const auto& e : tmpl.elements()) {
        if (const auto* p = std::get_if<SyntacticPlaceholder>(&e)) {
          elements.push_back({{"p", p->tag}});
        } else {
          elements.push_back({{"w", std::get<Word>(e).text}});
        }
      }
      line({{"t", "predicate"},
            {"id", predicate_id.at(canon)},
            {"template", canon},
            {"elements", elements}});
    }
    for (const auto& e : edges_) {
      std::vector<std::size_t> kids;
      for (const auto& c : e.children) kids.push_back(concept_id.at(c));
      line({{"t", "edge"},
            {"parent", concept_id.at(e.parent)},
            {"predicate", predicate_id.at(e.predicate)},
            {"children", kids}});
    }
    for (const auto& [id, c] : captions_) {
      line({{"t", "caption"},
            {"id", id},
            {"image", c.image_id},
            {"root", concept_id.at(c.root)},
            {"height", c.height}});
    }
  }

  std::string to_jsonl() const {
    std::ostringstream out;
    write(out);
    return out.str();
  }

  static ConceptGraph read(std::istream& in) {
    ConceptGraph g;
    std::vector<ConceptNode> concept_by_id;
    std::vector<std::string> predicate_by_id;
    std::string text;
    std::size_t lineno = 0;
    bool saw_header = false;
    auto fail = [&lineno](const std::string& why) -> Error {
      return Error(ErrorCode::SchemaMismatch, "line " + std::to_string(lineno) + ": " + why);
    };
    while (std::getline(in, text)) {
      ++lineno;
      if (text.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(text);
        const std::string type = j.at("t").get<std::string>();
        if (!saw_header) {
          if (type != "header" || j.at("schema").get<std::string>() != kSchema) {
            throw fail("expected header with schema " + std::string(kSchema));
          }
          saw_header = true;
          continue;
        }
        if (type == "concept") {
          if (j.at("id").get<std::size_t>() != concept_by_id.size()) throw fail("concept ids out of order");
          ConceptNode node{j.at("text").get<std::string>(), parse_kind(j.at("kind").get<std::string>())};
          ConceptInfo inf;
          for (const auto& s : j.at("images")) inf.images.insert(s.get<std::string>());
          for (const auto& s : j.at("captions")) inf.captions.insert(s.get<std::string>());
          g.concepts_[node] = std::move(inf);
          concept_by_id.push_back(std::move(node));
        } else if (type == "predicate") {
          if (j.at("id").get<std::size_t>() != predicate_by_id.size()) throw fail("predicate ids out of order");
          std::vector<TemplateElement> elements;
          for (const auto& e : j.at("elements")) {
            if (e.contains("p")) {
              elements.emplace_back(SyntacticPlaceholder{e.at("p").get<std::string>(), 0});
            } else {
              elements.emplace_back(Word{e.at("w").get<std::string>()});
            }
          }
          PredicateTemplate tmpl(std::move(elements));
          if (tmpl.canonical() != j.at("template").get<std::string>()) {
            throw fail("template string does not match its elements");
          }
          predicate_by_id.push_back(tmpl.canonical());
          g.predicates_.emplace(tmpl.canonical(), std::move(tmpl));
        } else if (type == "edge") {
          GraphEdge e;
          e.parent = concept_by_id.at(j.at("parent").get<std::size_t>());
          e.predicate = predicate_by_id.at(j.at("predicate").get<std::size_t>());
          for (const auto& c : j.at("children")) {
            e.children.push_back(concept_by_id.at(c.get<std::size_t>()));
          }
          if (e.children.size() != g.predicates_.at(e.predicate).arity()) {
            throw fail("edge arity does not match predicate");
          }
          g.add_edge(std::move(e));
        } else if (type == "caption") {
          CaptionInfo c{j.at("image").get<std::string>(),
                        concept_by_id.at(j.at("root").get<std::size_t>()),
                        j.at("height").get<std::size_t>()};
          g.captions_[j.at("id").get<std::string>()] = std::move(c);
        } else {
          throw fail("unknown record type '" + type + "'");
        }
      } catch (const Error&) {
        throw;
      } catch (const std::exception& ex) {
        throw fail(ex.what());
      }
    }
    if (!saw_header) throw Error(ErrorCode::SchemaMismatch, "missing header record");
    return g;
  }

  static ConceptGraph from_jsonl(const std::string& text) {
    std::istringstream in(text);
    return read(in);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
    write(out);
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
  }

  static ConceptGraph load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path);
    return read(in);
  }

 private:
  const ConceptInfo& info(const ConceptNode& node) const {
    auto it = concepts_.find(node);
    if (it == concepts_.end()) {
      throw Error(ErrorCode::UnknownConcept,
                  std::string(kind_name(node.kind)) + " '" + node.text + "' not in graph");
    }
    return it->second;
  }

  ConceptTree expand(const ConceptNode& node) const {
    ConceptTree t;
    t.node = node;
    auto it = edges_.lower_bound(GraphEdge{node, {}, {}});
    if (it == edges_.end() || it->parent != node) return t;
    t.predicate = predicates_.at(it->predicate);
    for (const auto& c : it->children) t.children.push_back(expand(c));
    return t;
  }

  void add_edge(GraphEdge edge) {
    for (const auto& c : edge.children) children_of_[edge.parent].insert(c);
    edges_.insert(std::move(edge));
  }

  // Keeps denotation(parent) a subset of denotation(child) across edges that
  // came from different captions.
  void propagate(std::vector<ConceptNode> work) {
    while (!work.empty()) {
      const ConceptNode node = work.back();
      work.pop_back();
      auto kids = children_of_.find(node);
      if (kids == children_of_.end()) continue;
      const auto& images = concepts_.at(node).images;
      for (const auto& child : kids->second) {
        auto& child_images = concepts_.at(child).images;
        const std::size_t before = child_images.size();
        child_images.insert(images.begin(), images.end());
        if (child_images.size() != before) work.push_back(child);
      }
    }
  }

  std::map<ConceptNode, ConceptInfo> concepts_;
  std::map<std::string, PredicateTemplate> predicates_;
  std::set<GraphEdge> edges_;
  std::map<std::string, CaptionInfo> captions_;
  std::map<ConceptNode, std::set<ConceptNode>> children_of_;
};

inline std::string format_stats(const GraphStats& s) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%12s %14s %14s %12s\n", "# concepts", "# predicates",
                "# primitives", "Avg height");
  out << buf;
  std::snprintf(buf, sizeof buf, "%12zu %14zu %14zu %12.2f\n", s.num_concepts, s.num_predicates,
                s.num_primitives, s.avg_height);
  out << buf;
  return out.str();
}

}  // namespace crg
