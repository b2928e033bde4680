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

// Synthetic grounded corpus: images are sets of objects with a noun, a
// color, a size and a 2-D position; captions are generated from a small
// grammar together with their gold constituency trees and always describe
// facts that hold in the image.
//
// Caption templates come in two styles. Each image has a rate at which its
// captions use the rare style; training and in-domain test images share one
// low rate, pool images draw theirs so that the pool's compound
// distribution can be pushed away from training with `skew`.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crg/corpus.hpp"
#include "crg/error.hpp"
#include "crg/extract.hpp"
#include "crg/rng.hpp"
#include "crg/treebank.hpp"

namespace crg::synth {

enum class Relation { Mention, There, And, LeftOf, RightOf, Above, Below, NextTo, Between };
enum class NpForm { Bare, Color, Size, SizeColor, ColorClause, SizeClause };
enum class Role { Train, Pool, Test };

inline const std::vector<std::pair<Relation, std::string_view>>& relation_names() {
  static const std::vector<std::pair<Relation, std::string_view>> names{
      {Relation::Mention, "mention"}, {Relation::There, "there"},
      {Relation::And, "and"},         {Relation::LeftOf, "left-of"},
      {Relation::RightOf, "right-of"}, {Relation::Above, "above"},
      {Relation::Below, "below"},     {Relation::NextTo, "next-to"},
      {Relation::Between, "between"}};
  return names;
}

inline std::string_view relation_name(Relation r) {
  for (const auto& [k, v] : relation_names()) {
    if (k == r) return v;
  }
  return "?";
}

inline Relation parse_relation(std::string_view s) {
  for (const auto& [k, v] : relation_names()) {
    if (v == s) return k;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown relation '" + std::string(s) + "'");
}

inline std::size_t relation_arity(Relation r) {
  switch (r) {
    case Relation::Mention:
    case Relation::There: return 1;
    case Relation::Between: return 3;
    default: return 2;
  }
}

inline std::string_view np_form_name(NpForm f) {
  switch (f) {
    case NpForm::Bare: return "bare";
    case NpForm::Color: return "color";
    case NpForm::Size: return "size";
    case NpForm::SizeColor: return "size-color";
    case NpForm::ColorClause: return "color-clause";
    case NpForm::SizeClause: return "size-clause";
  }
  return "?";
}

inline NpForm parse_np_form(std::string_view s) {
  for (NpForm f : {NpForm::Bare, NpForm::Color, NpForm::Size, NpForm::SizeColor,
                   NpForm::ColorClause, NpForm::SizeClause}) {
    if (np_form_name(f) == s) return f;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown noun phrase form '" + std::string(s) + "'");
}

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::Train: return "train";
    case Role::Pool: return "pool";
    case Role::Test: return "test";
  }
  return "?";
}

inline Role parse_role(std::string_view s) {
  if (s == "train") return Role::Train;
  if (s == "pool") return Role::Pool;
  if (s == "test") return Role::Test;
  throw Error(ErrorCode::SchemaMismatch, "unknown role '" + std::string(s) + "'");
}

/// Minimum coordinate gap for directional relations.
inline constexpr double kRelationMargin = 0.1;
/// Maximum center distance for "next to".
inline constexpr double kNearDistance = 0.35;
/// Minimum distance between object centers.
inline constexpr double kMinSeparation = 0.2;

struct WorldConfig {
  std::vector<std::string> nouns{"dog",  "cat",  "ball",  "box",  "man",   "woman",
                                 "car",  "tree", "horse", "bird", "table", "chair"};
  std::vector<std::string> colors{"red", "blue", "green", "yellow", "white", "black"};
  std::vector<std::string> sizes{"small", "large"};
  /// Nouns that only pool images may contain (coverage-check testing).
  std::vector<std::string> pool_only_nouns;
  // Both styles name two objects with one attribute each, so they differ in
  // predicate templates only.
  std::vector<Relation> common_relations{Relation::LeftOf, Relation::RightOf, Relation::Above,
                                         Relation::And};
  std::vector<Relation> rare_relations{Relation::Below, Relation::NextTo};
  std::vector<NpForm> common_np{NpForm::Color, NpForm::Size};
  std::vector<NpForm> rare_np{NpForm::ColorClause, NpForm::SizeClause};
  std::size_t images = 2000;
  std::size_t captions_per_image = 5;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  double base_rare = 0.3;
  double skew = 0.9;
  double twin_fraction = 0.5;
  double train_fraction = 0.6;
  double pool_fraction = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    auto bad = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
    if (nouns.empty() || colors.empty() || sizes.empty()) bad("empty vocabulary");
    if (common_relations.empty()) bad("no common relations");
    if (common_np.empty()) bad("no common noun phrase forms");
    if (captions_per_image < 1) bad("captions per image must be at least 1");
    if (images < 1) bad("need at least one image");
    if (min_objects < 1 || max_objects < min_objects) bad("bad object count range");
    if (max_objects > nouns.size()) bad("more objects than distinct nouns");
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(base_rare) || !unit(skew) || !unit(twin_fraction)) bad("rates must lie in [0, 1]");
    if (!unit(train_fraction) || !unit(pool_fraction) || train_fraction + pool_fraction > 1.0) {
      bad("role fractions must lie in [0, 1] and sum to at most 1");
    }
    if (rare_np.empty() && !rare_relations.empty()) bad("rare relations need rare noun phrase forms");
    std::set<std::string> words(nouns.begin(), nouns.end());
    for (const auto& n : pool_only_nouns) {
      if (!words.count(n)) bad("pool-only noun '" + n + "' is not a noun");
    }
  }

  nlohmann::ordered_json to_json() const {
    auto rels = [](const std::vector<Relation>& v) {
      std::vector<std::string> out;
      for (auto r : v) out.emplace_back(relation_name(r));
      return out;
    };
    auto nps = [](const std::vector<NpForm>& v) {
      std::vector<std::string> out;
      for (auto f : v) out.emplace_back(np_form_name(f));
      return out;
    };
    return {{"nouns", nouns},
            {"colors", colors},
            {"sizes", sizes},
            {"pool_only_nouns", pool_only_nouns},
            {"common_relations", rels(common_relations)},
            {"rare_relations", rels(rare_relations)},
            {"common_np", nps(common_np)},
            {"rare_np", nps(rare_np)},
            {"images", images},
            {"captions_per_image", captions_per_image},
            {"min_objects", min_objects},
            {"max_objects", max_objects},
            {"base_rare", base_rare},
            {"skew", skew},
            {"twin_fraction", twin_fraction},
            {"train_fraction", train_fraction},
            {"pool_fraction", pool_fraction},
            {"seed", seed}};
  }
};

struct SynthObject {
  std::string noun;
  std::string color;
  std::string size;
  double x = 0.0;
  double y = 0.0;

  bool operator==(const SynthObject&) const = default;
};

struct SynthImage {
  std::string image_id;
  Role role = Role::Train;
  double rare_rate = 0.0;
  std::string twin_of;  // empty unless this image re-arranges another's objects
  std::vector<SynthObject> objects;

  bool operator==(const SynthImage&) const = default;
};

struct SynthCorpus {
  WorldConfig config;
  std::vector<SynthImage> images;
  std::vector<VisualFeatureSet> features;
  std::vector<CaptionRecord> captions;
};

// ---------------------------------------------------------------------------
// Relations

inline bool relation_holds(Relation r, const std::vector<const SynthObject*>& args) {
  if (args.size() != relation_arity(r)) return false;
  const SynthObject& a = *args[0];
  switch (r) {
    case Relation::Mention:
    case Relation::There: return true;
    case Relation::And: return args[0] != args[1];
    case Relation::LeftOf: return a.x < args[1]->x - kRelationMargin;
    case Relation::RightOf: return a.x > args[1]->x + kRelationMargin;
    case Relation::Above: return a.y > args[1]->y + kRelationMargin;
    case Relation::Below: return a.y < args[1]->y - kRelationMargin;
    case Relation::NextTo:
      return args[0] != args[1] && std::hypot(a.x - args[1]->x, a.y - args[1]->y) <= kNearDistance;
    case Relation::Between: {
      if (args[1] == args[2] || args[0] == args[1] || args[0] == args[2]) return false;
      const double lo = std::min(args[1]->x, args[2]->x);
      const double hi = std::max(args[1]->x, args[2]->x);
      return a.x > lo + kRelationMargin && a.x < hi - kRelationMargin;
    }
  }
  return false;
}

/// All ordered tuples of distinct objects satisfying the relation.
inline std::vector<std::vector<std::size_t>> satisfying_tuples(Relation r,
                                                               const std::vector<SynthObject>& objs) {
  std::vector<std::vector<std::size_t>> out;
  const std::size_t n = objs.size();
  const std::size_t k = relation_arity(r);
  std::vector<std::size_t> idx(k, 0);
  auto rec = [&](auto& self, std::size_t pos) -> void {
    if (pos == k) {
      std::vector<const SynthObject*> args;
      for (std::size_t i : idx) args.push_back(&objs[i]);
      if (relation_holds(r, args)) out.push_back(idx);
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(pos), i) !=
          idx.begin() + static_cast<std::ptrdiff_t>(pos)) {
        continue;
      }
      idx[pos] = i;
      self(self, pos + 1);
    }
  };
  rec(rec, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Realization

/// "a red dog" style forms put attributes before the noun; the clause forms
/// give "a dog that is red".
inline std::string realize_np(const SynthObject& o, NpForm form) {
  if (form == NpForm::ColorClause || form == NpForm::SizeClause) {
    const std::string& adj = form == NpForm::ColorClause ? o.color : o.size;
    return "(NP (NP (DT a) (NN " + o.noun + ")) (SBAR (WHNP (WDT that)) (S (VP (VBZ is) (ADJP (JJ " +
           adj + "))))))";
  }
  std::string s = "(NP (DT a)";
  if (form == NpForm::Size || form == NpForm::SizeColor) s += " (JJ " + o.size + ")";
  if (form == NpForm::Color || form == NpForm::SizeColor) s += " (JJ " + o.color + ")";
  return s + " (NN " + o.noun + "))";
}

inline std::string realize(Relation r, const std::vector<std::string>& nps) {
  switch (r) {
    case Relation::Mention: return nps[0];
    case Relation::There: return "(S (NP (EX there)) (VP (VBZ is) " + nps[0] + "))";
    case Relation::And: return "(NP " + nps[0] + " (CC and) " + nps[1] + ")";
    case Relation::LeftOf:
    case Relation::RightOf:
      return "(S " + nps[0] + " (VP (VBZ is) (ADJP (JJ " +
             (r == Relation::LeftOf ? "left" : "right") + ") (PP (IN of) " + nps[1] + "))))";
    case Relation::Above:
    case Relation::Below:
      return "(S " + nps[0] + " (VP (VBZ is) (PP (IN " + (r == Relation::Above ? "above" : "below") +
             ") " + nps[1] + ")))";
    case Relation::NextTo:
      return "(S " + nps[0] + " (VP (VBZ is) (ADJP (JJ next) (PP (TO to) " + nps[1] + "))))";
    case Relation::Between:
      return "(S " + nps[0] + " (VP (VBZ is) (PP (IN between) (NP " + nps[1] + " (CC and) " +
             nps[2] + "))))";
  }
  return {};
}

namespace detail {

inline std::vector<double> one_hot(const std::vector<std::string>& vocab, const std::string& w) {
  std::vector<double> v(vocab.size(), 0.0);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i] == w) v[i] = 1.0;
  }
  return v;
}

inline std::string image_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img%05zu", i);
  return buf;
}

inline std::vector<SynthObject> sample_objects(const WorldConfig& cfg, Role role, Rng& rng) {
  std::vector<std::string> nouns;
  std::set<std::string> pool_only(cfg.pool_only_nouns.begin(), cfg.pool_only_nouns.end());
  for (const auto& n : cfg.nouns) {
    if (role == Role::Pool || !pool_only.count(n)) nouns.push_back(n);
  }
  const std::size_t hi = std::min(cfg.max_objects, nouns.size());
  const std::size_t lo = std::min(cfg.min_objects, hi);
  const std::size_t n = lo + rng.below(hi - lo + 1);
  rng.shuffle(nouns);
  std::vector<SynthObject> out;
  for (std::size_t i = 0; i < n; ++i) {
    SynthObject o;
    o.noun = nouns[i];
    o.color = cfg.colors[rng.below(cfg.colors.size())];
    o.size = cfg.sizes[rng.below(cfg.sizes.size())];
    for (int attempt = 0;; ++attempt) {
      o.x = rng.uniform();
      o.y = rng.uniform();
      const bool clear = std::all_of(out.begin(), out.end(), [&](const SynthObject& p) {
        return std::hypot(p.x - o.x, p.y - o.y) >= kMinSeparation;
      });
      if (clear || attempt > 1000) break;
    }
    out.push_back(std::move(o));
  }
  return out;
}

inline VisualFeatureSet encode_image(const WorldConfig& cfg, const SynthImage& img) {
  VisualFeatureSet f;
  f.image_id = img.image_id;
  f.positions.emplace();
  for (const auto& o : img.objects) {
    std::vector<double> r = one_hot(cfg.nouns, o.noun);
    for (double v : one_hot(cfg.colors, o.color)) r.push_back(v);
    for (double v : one_hot(cfg.sizes, o.size)) r.push_back(v);
    f.regions.push_back(std::move(r));
    f.positions->push_back({o.x, o.y});
  }
  return f;
}

inline CaptionRecord make_caption(const WorldConfig& cfg, const SynthImage& img, std::size_t k,
                                  Rng& rng) {
  const bool rare = !cfg.rare_relations.empty() && rng.bernoulli(img.rare_rate);
  std::vector<Relation> relations = rare ? cfg.rare_relations : cfg.common_relations;
  const std::vector<NpForm>& forms = rare ? cfg.rare_np : cfg.common_np;
  rng.shuffle(relations);
  relations.push_back(Relation::Mention);
  for (Relation r : relations) {
    const auto tuples = satisfying_tuples(r, img.objects);
    if (tuples.empty()) continue;
    const auto& pick = tuples[rng.below(tuples.size())];
    std::vector<std::string> nps;
    for (std::size_t i : pick) nps.push_back(realize_np(img.objects[i], forms[rng.below(forms.size())]));
    CaptionRecord rec;
    rec.image_id = img.image_id;
    rec.caption_id = img.image_id + "#" + std::to_string(k);
    const auto tree = treebank::parse_bracketed(realize(r, nps));
    rec.tree = treebank::to_bracketed(tree);
    rec.caption = treebank::surface(tree.root);
    return rec;
  }
  throw Error(ErrorCode::InvalidConfig, "image " + img.image_id + " has no objects");
}

}  // namespace detail

/// Generates the full corpus. Identical config and seed give identical output.
inline SynthCorpus gen_corpus(const WorldConfig& cfg) {
  cfg.validate();
  SynthCorpus corpus;
  corpus.config = cfg;
  Rng rng(cfg.seed);
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * cfg.images));
  const auto n_pool = static_cast<std::size_t>(std::llround(cfg.pool_fraction * cfg.images));
  auto role_at = [&](std::size_t i) {
    if (i < n_train) return Role::Train;
    if (i < n_train + n_pool) return Role::Pool;
    return Role::Test;
  };
  const double common_rate = cfg.base_rare * (1.0 - cfg.skew);
  while (corpus.images.size() < cfg.images) {
    const std::size_t first = corpus.images.size();
    SynthImage base;
    base.image_id = detail::image_name(first);
    base.role = role_at(first);
    base.rare_rate = common_rate;
    if (base.role == Role::Pool) base.rare_rate += cfg.skew * rng.uniform();
    base.objects = detail::sample_objects(cfg, base.role, rng);
    const bool twin = base.objects.size() >= 2 && corpus.images.size() + 1 < cfg.images &&
                      role_at(first + 1) == base.role && rng.bernoulli(cfg.twin_fraction);
    corpus.images.push_back(base);
    if (twin) {
      // Same objects, positions rotated among them so spatial facts change.
      SynthImage t = base;
      t.image_id = detail::image_name(first + 1);
      t.twin_of = base.image_id;
      std::vector<std::size_t> order(t.objects.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& from = base.objects[order[(i + 1) % order.size()]];
        t.objects[order[i]].x = from.x;
        t.objects[order[i]].y = from.y;
      }
      corpus.images.push_back(std::move(t));
    }
  }
  for (const auto& img : corpus.images) {
    corpus.features.push_back(detail::encode_image(cfg, img));
    for (std::size_t k = 0; k < cfg.captions_per_image; ++k) {
      corpus.captions.push_back(detail::make_caption(cfg, img, k, rng));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Truthfulness

namespace detail {

/// Object index named by a noun-phrase concept, or an error message.
inline std::optional<std::size_t> resolve_np(const SynthImage& img, const WorldConfig& cfg,
                                             const ConceptTree& np, std::string& why) {
  if (np.predicate && np.children.size() == 1 && np.children[0].predicate) {
    // "[NP] that is <adj>"
    const auto& els = np.predicate->elements();
    if (els.size() != 4 || !std::holds_alternative<SyntacticPlaceholder>(els[0]) ||
        np.predicate->canonical().rfind("[NP] that is ", 0) != 0) {
      why = "unexpected noun phrase shape '" + np.predicate->canonical() + "'";
      return std::nullopt;
    }
    const auto idx = resolve_np(img, cfg, np.children[0], why);
    if (!idx) return std::nullopt;
    const std::string& w = std::get<Word>(els[3]).text;
    const SynthObject& o = img.objects[*idx];
    if (w != o.color && w != o.size) {
      why = "attribute '" + w + "' does not hold for the " + o.noun;
      return std::nullopt;
    }
    return idx;
  }
  if (!np.predicate || np.children.size() != 1 ||
      np.children[0].node.kind != ConceptKind::Primitive) {
    why = "'" + np.node.text + "' is not a determiner-attribute-noun phrase";
    return std::nullopt;
  }
  const auto& els = np.predicate->elements();
  if (els.empty() || !std::holds_alternative<Word>(els.front()) ||
      std::get<Word>(els.front()).text != "a" ||
      !std::holds_alternative<SyntacticPlaceholder>(els.back())) {
    why = "unexpected noun phrase shape '" + np.predicate->canonical() + "'";
    return std::nullopt;
  }
  const std::string& noun = np.children[0].node.text;
  for (std::size_t i = 0; i < img.objects.size(); ++i) {
    const SynthObject& o = img.objects[i];
    if (o.noun != noun) continue;
    for (std::size_t e = 1; e + 1 < els.size(); ++e) {
      const std::string& w = std::get<Word>(els[e]).text;
      const bool is_color = std::find(cfg.colors.begin(), cfg.colors.end(), w) != cfg.colors.end();
      const bool is_size = std::find(cfg.sizes.begin(), cfg.sizes.end(), w) != cfg.sizes.end();
      if ((is_color && w != o.color) || (is_size && w != o.size) || (!is_color && !is_size)) {
        why = "attribute '" + w + "' does not hold for the " + noun;
        return std::nullopt;
      }
    }
    return i;
  }
  why = "no " + noun + " in image";
  return std::nullopt;
}

}  // namespace detail

/// Re-derives the caption's facts from its decomposition and checks them
/// against the image's object records. Returns an empty string when every
/// fact holds, otherwise the first violation.
inline std::string check_caption(const SynthImage& img, const WorldConfig& cfg,
                                 const ConceptTree& tree) {
  if (!tree.predicate) return "caption has no predicate";
  const std::string& pred = tree.predicate->canonical();
  static const std::map<std::string, Relation> by_template{
      {"there is [NP]", Relation::There},        {"[NP] and [NP]", Relation::And},
      {"[NP] is left of [NP]", Relation::LeftOf}, {"[NP] is right of [NP]", Relation::RightOf},
      {"[NP] is above [NP]", Relation::Above},    {"[NP] is below [NP]", Relation::Below},
      {"[NP] is next to [NP]", Relation::NextTo}, {"[NP] is between [NP]", Relation::Between}};
  std::string why;
  auto it = by_template.find(pred);
  if (it == by_template.end()) {
    return detail::resolve_np(img, cfg, tree, why) ? std::string{} : why;
  }
  std::vector<const ConceptTree*> args;
  for (const auto& c : tree.children) args.push_back(&c);
  if (it->second == Relation::Between) {
    const ConceptTree& pair = tree.children.at(1);
    if (!pair.predicate || pair.predicate->canonical() != "[NP] and [NP]") {
      return "between needs a coordinated pair";
    }
    args = {&tree.children[0], &pair.children[0], &pair.children[1]};
  }
  std::vector<const SynthObject*> objs;
  for (const ConceptTree* a : args) {
    auto idx = detail::resolve_np(img, cfg, *a, why);
    if (!idx) return why;
    objs.push_back(&img.objects[*idx]);
  }
  if (!relation_holds(it->second, objs)) {
    return "relation '" + std::string(relation_name(it->second)) + "' does not hold";
  }
  return {};
}

// ---------------------------------------------------------------------------
// Splits

struct Partition {
  std::vector<std::string> train;
  std::vector<std::string> pool;
  std::vector<std::string> test;
};

/// Partitions images by role and checks that every primitive used by pool
/// or test captions also occurs in training captions.
inline Partition gen_splits(const SynthCorpus& corpus) {
  Partition p;
  std::map<std::string, Role> role;
  for (const auto& img : corpus.images) {
    role[img.image_id] = img.role;
    (img.role == Role::Train ? p.train : img.role == Role::Pool ? p.pool : p.test)
        .push_back(img.image_id);
  }
  std::set<std::string> seen;
  std::map<std::string, std::string> needed;  // primitive -> first image using it
  for (const auto& c : corpus.captions) {
    const ConceptTree t = decompose(treebank::parse_bracketed(c.tree));
    for_each_preorder(t, [&](const ConceptTree& n) {
      if (n.node.kind != ConceptKind::Primitive) return;
      if (role.at(c.image_id) == Role::Train) {
        seen.insert(n.node.text);
      } else {
        needed.emplace(n.node.text, c.image_id);
      }
    });
  }
  for (const auto& [word, image] : needed) {
    if (!seen.count(word)) {
      throw Error(ErrorCode::InvalidConfig, "primitive '" + word + "' of image " + image +
                                                " never occurs in training captions");
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// World file: one JSON record per image with its object records.

inline nlohmann::ordered_json to_json(const SynthImage& img) {
  nlohmann::ordered_json objs = nlohmann::ordered_json::array();
  for (const auto& o : img.objects) {
    objs.push_back({{"noun", o.noun}, {"color", o.color}, {"size", o.size}, {"x", o.x}, {"y", o.y}});
  }
  nlohmann::ordered_json j{{"image_id", img.image_id},
                           {"role", role_name(img.role)},
                           {"rare_rate", img.rare_rate}};
  if (!img.twin_of.empty()) j["twin_of"] = img.twin_of;
  j["objects"] = objs;
  return j;
}

inline SynthImage image_from_json(const nlohmann::json& j) {
  SynthImage img;
  img.image_id = j.at("image_id").get<std::string>();
  img.role = parse_role(j.at("role").get<std::string>());
  img.rare_rate = j.at("rare_rate").get<double>();
  img.twin_of = j.value("twin_of", "");
  for (const auto& o : j.at("objects")) {
    img.objects.push_back({o.at("noun").get<std::string>(), o.at("color").get<std::string>(),
                           o.at("size").get<std::string>(), o.at("x").get<double>(),
                           o.at("y").get<double>()});
  }
  return img;
}

inline void write_world(std::ostream& out, const std::vector<SynthImage>& images) {
  for (const auto& img : images) out << to_json(img).dump() << '\n';
}

inline std::vector<SynthImage> read_world(std::istream& in) {
  std::vector<SynthImage> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      out.push_back(image_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::SchemaMismatch, "world:" + std::to_string(no) + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace crg::synth
