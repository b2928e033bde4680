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

// Compound divergence between predicate distributions, and the evaluation
// splits built from it.
//
// A compound is a predicate template occurrence. The divergence between the
// compound distributions P (evaluation) and Q (training) is one minus the
// weighted Chernoff coefficient:
//
//   D_alpha(P || Q) = 1 - sum_k p_k^alpha * q_k^(1 - alpha)
//
// Each pool image i gets Delta_i = D(pool without i || train) - D(pool || train).
// An image whose compounds are rare in training lowers the divergence when
// removed (Delta_i < 0), so the maximum-divergence split takes images in
// ascending Delta order.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crg/error.hpp"
#include "crg/extract.hpp"
#include "crg/parallel.hpp"
#include "crg/rng.hpp"

namespace crg {

using CompoundCounts = std::map<std::string, std::uint64_t>;

/// Normalized compound weights; every stored weight is > 0.
class CompoundDistribution {
 public:
  CompoundDistribution() = default;

  explicit CompoundDistribution(const CompoundCounts& counts) {
    std::uint64_t total = 0;
    for (const auto& [_, c] : counts) total += c;
    if (total == 0) throw Error(ErrorCode::EmptyPool, "no compounds to normalize");
    for (const auto& [k, c] : counts) {
      if (c > 0) weights_.emplace(k, static_cast<double>(c) / static_cast<double>(total));
    }
  }

  /// Direct construction from weights; they must be positive and sum to one.
  static CompoundDistribution from_weights(std::map<std::string, double> weights) {
    double total = 0.0;
    for (const auto& [k, w] : weights) {
      if (!(w > 0.0)) throw Error(ErrorCode::InvalidConfig, "non-positive weight for '" + k + "'");
      total += w;
    }
    if (weights.empty() || std::abs(total - 1.0) > 1e-12) {
      throw Error(ErrorCode::InvalidConfig, "weights must sum to 1");
    }
    CompoundDistribution d;
    d.weights_ = std::move(weights);
    return d;
  }

  const std::map<std::string, double>& weights() const { return weights_; }

  double weight(const std::string& key) const {
    auto it = weights_.find(key);
    return it == weights_.end() ? 0.0 : it->second;
  }

 private:
  std::map<std::string, double> weights_;
};

namespace detail {

struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double x) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "alpha must lie in (0, 1)");
  }
}

// Divergence straight from counts; an empty side has coefficient 0.
inline double divergence_from_counts(const CompoundCounts& p, const CompoundCounts& q,
                                     double alpha) {
  std::uint64_t p_total = 0;
  std::uint64_t q_total = 0;
  for (const auto& [_, c] : p) p_total += c;
  for (const auto& [_, c] : q) q_total += c;
  if (p_total == 0 || q_total == 0) return 1.0;
  KahanSum coeff;
  for (const auto& [k, pc] : p) {
    if (pc == 0) continue;
    auto it = q.find(k);
    if (it == q.end() || it->second == 0) continue;
    const double pk = static_cast<double>(pc) / static_cast<double>(p_total);
    const double qk = static_cast<double>(it->second) / static_cast<double>(q_total);
    coeff.add(std::pow(pk, alpha) * std::pow(qk, 1.0 - alpha));
  }
  return std::clamp(1.0 - coeff.sum, 0.0, 1.0);
}

}  // namespace detail

inline double chernoff_divergence(const CompoundDistribution& p, const CompoundDistribution& q,
                                  double alpha) {
  detail::check_alpha(alpha);
  detail::KahanSum coeff;
  for (const auto& [k, pk] : p.weights()) {
    const double qk = q.weight(k);
    if (qk == 0.0) continue;
    coeff.add(std::pow(pk, alpha) * std::pow(qk, 1.0 - alpha));
  }
  return std::clamp(1.0 - coeff.sum, 0.0, 1.0);
}

/// Counts every predicate at every depth of the given decompositions.
inline CompoundCounts compound_counts(const std::vector<ConceptTree>& decompositions) {
  CompoundCounts counts;
  for (const auto& tree : decompositions) {
    for_each_preorder(tree, [&counts](const ConceptTree& t) {
      if (t.predicate) ++counts[t.predicate->canonical()];
    });
  }
  return counts;
}

/// One image of a data pool with its compound counts and primitives.
struct PoolItem {
  std::string image_id;
  std::vector<std::string> caption_ids;
  CompoundCounts counts;
  std::set<std::string> primitives;

  bool operator==(const PoolItem&) const = default;
};

inline PoolItem make_pool_item(std::string image_id,
                               const std::vector<std::pair<std::string, ConceptTree>>& captions) {
  PoolItem item;
  item.image_id = std::move(image_id);
  std::vector<ConceptTree> trees;
  for (const auto& [caption_id, tree] : captions) {
    item.caption_ids.push_back(caption_id);
    trees.push_back(tree);
    for_each_preorder(tree, [&item](const ConceptTree& t) {
      if (t.node.kind == ConceptKind::Primitive) item.primitives.insert(t.node.text);
    });
  }
  item.counts = compound_counts(trees);
  return item;
}

inline CompoundCounts pooled_counts(const std::vector<PoolItem>& items) {
  CompoundCounts total;
  for (const auto& item : items) {
    for (const auto& [k, c] : item.counts) total[k] += c;
  }
  return total;
}

inline double cd_all(const std::vector<PoolItem>& pool, const std::vector<PoolItem>& train,
                     double alpha) {
  detail::check_alpha(alpha);
  const auto p = pooled_counts(pool);
  const auto q = pooled_counts(train);
  if (pool.empty() || train.empty()) throw Error(ErrorCode::EmptyPool, "pool and train must be non-empty");
  return chernoff_divergence(CompoundDistribution(p), CompoundDistribution(q), alpha);
}

struct Delta {
  std::string image_id;
  double delta = 0.0;
};

/// Delta_i for every pool image, in pool order. Each value is recomputed
/// from exact integer counts with image i removed.
inline std::vector<Delta> leave_one_out_deltas(const std::vector<PoolItem>& pool,
                                               const std::vector<PoolItem>& train, double alpha,
                                               std::size_t workers = 1) {
  if (pool.size() < 2) throw Error(ErrorCode::EmptyPool, "leave-one-out needs at least two images");
  const double all = cd_all(pool, train, alpha);
  const auto total = pooled_counts(pool);
  const auto q = pooled_counts(train);
  std::vector<Delta> out(pool.size());
  parallel_for(pool.size(), workers, [&](std::size_t i) {
    CompoundCounts rest = total;
    for (const auto& [k, c] : pool[i].counts) {
      auto it = rest.find(k);
      it->second -= c;
      if (it->second == 0) rest.erase(it);
    }
    out[i] = {pool[i].image_id, detail::divergence_from_counts(rest, q, alpha) - all};
  });
  return out;
}

enum class SplitMethod { Mcd, Window, Random };

inline std::string_view method_name(SplitMethod m) {
  switch (m) {
    case SplitMethod::Mcd: return "mcd";
    case SplitMethod::Window: return "window";
    case SplitMethod::Random: return "random";
  }
  return "?";
}

struct SplitEntry {
  std::string image_id;
  std::vector<std::string> caption_ids;

  bool operator==(const SplitEntry&) const = default;
};

struct SplitSpec {
  SplitMethod method = SplitMethod::Mcd;
  std::size_t offset = 0;
  double alpha = 0.1;
  double cd = 0.0;
  std::uint64_t seed = 0;
  std::vector<SplitEntry> entries;

  std::vector<std::string> image_ids() const {
    std::vector<std::string> out;
    for (const auto& e : entries) out.push_back(e.image_id);
    return out;
  }
};

namespace detail {

inline SplitSpec make_split(const std::vector<const PoolItem*>& chosen,
                            const std::vector<PoolItem>& train, double alpha, SplitMethod method,
                            std::size_t offset) {
  SplitSpec s;
  s.method = method;
  s.offset = offset;
  s.alpha = alpha;
  std::vector<PoolItem> selected;
  for (const PoolItem* item : chosen) {
    s.entries.push_back({item->image_id, item->caption_ids});
    selected.push_back(*item);
  }
  s.cd = selected.empty() ? 0.0 : cd_all(selected, train, alpha);
  return s;
}

}  // namespace detail

/// Pool sorted for divergence: ascending Delta, ties by image id.
inline std::vector<PoolItem> mcd_ranking(const std::vector<PoolItem>& pool,
                                         const std::vector<PoolItem>& train, double alpha,
                                         std::size_t workers = 1) {
  const auto deltas = leave_one_out_deltas(pool, train, alpha, workers);
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (deltas[a].delta != deltas[b].delta) return deltas[a].delta < deltas[b].delta;
    return pool[a].image_id < pool[b].image_id;
  });
  std::vector<PoolItem> out;
  out.reserve(pool.size());
  for (std::size_t i : order) out.push_back(pool[i]);
  return out;
}

inline SplitSpec mcd_split(const std::vector<PoolItem>& pool, const std::vector<PoolItem>& train,
                           std::size_t k, double alpha, std::size_t workers = 1) {
  if (k > pool.size()) {
    throw Error(ErrorCode::KTooLarge,
                "split size " + std::to_string(k) + " exceeds pool of " + std::to_string(pool.size()));
  }
  const auto ranked = mcd_ranking(pool, train, alpha, workers);
  std::vector<const PoolItem*> chosen;
  for (std::size_t i = 0; i < k; ++i) chosen.push_back(&ranked[i]);
  return detail::make_split(chosen, train, alpha, SplitMethod::Mcd, 0);
}

/// Sliding windows over an already ranked pool (see mcd_ranking).
inline std::vector<SplitSpec> windowed_splits(const std::vector<PoolItem>& ranked,
                                              std::size_t window, std::size_t stride,
                                              const std::vector<PoolItem>& train, double alpha) {
  if (window == 0 || window > ranked.size()) {
    throw Error(ErrorCode::KTooLarge, "window must be in [1, pool size]");
  }
  if (stride == 0) throw Error(ErrorCode::InvalidConfig, "stride must be positive");
  std::vector<SplitSpec> out;
  for (std::size_t offset = 0; offset + window <= ranked.size(); offset += stride) {
    std::vector<const PoolItem*> chosen;
    for (std::size_t i = offset; i < offset + window; ++i) chosen.push_back(&ranked[i]);
    out.push_back(detail::make_split(chosen, train, alpha, SplitMethod::Window, offset));
  }
  return out;
}

inline SplitSpec random_split(const std::vector<PoolItem>& pool, const std::vector<PoolItem>& train,
                              std::size_t k, double alpha, std::uint64_t seed) {
  if (k > pool.size()) {
    throw Error(ErrorCode::KTooLarge,
                "split size " + std::to_string(k) + " exceeds pool of " + std::to_string(pool.size()));
  }
  std::vector<const PoolItem*> all;
  for (const auto& item : pool) all.push_back(&item);
  Rng rng(seed);
  rng.shuffle(all);
  all.resize(k);
  std::sort(all.begin(), all.end(),
            [](const PoolItem* a, const PoolItem* b) { return a->image_id < b->image_id; });
  auto s = detail::make_split(all, train, alpha, SplitMethod::Random, 0);
  s.seed = seed;
  return s;
}

/// Drops pool images with any primitive that never occurs in training.
inline std::vector<PoolItem> filter_unseen_primitives(const std::vector<PoolItem>& pool,
                                                      const std::vector<PoolItem>& train) {
  std::set<std::string> known;
  for (const auto& item : train) known.insert(item.primitives.begin(), item.primitives.end());
  std::vector<PoolItem> out;
  for (const auto& item : pool) {
    const bool seen = std::all_of(item.primitives.begin(), item.primitives.end(),
                                  [&known](const std::string& p) { return known.count(p) != 0; });
    if (seen) out.push_back(item);
  }
  return out;
}

// ---- split files ----

inline void write_split(std::ostream& out, const SplitSpec& s) {
  nlohmann::ordered_json header{{"t", "header"},
                                {"method", method_name(s.method)},
                                {"alpha", s.alpha},
                                {"cd", s.cd},
                                {"offset", s.offset},
                                {"size", s.entries.size()}};
  if (s.method == SplitMethod::Random) header["seed"] = s.seed;
  out << header.dump() << '\n';
  for (const auto& e : s.entries) {
    out << nlohmann::ordered_json{{"image_id", e.image_id}, {"caption_ids", e.caption_ids}}.dump()
        << '\n';
  }
}

inline SplitSpec read_split(std::istream& in) {
  SplitSpec s;
  std::string text;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(in, text)) {
    ++lineno;
    if (text.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      if (!saw_header) {
        if (j.value("t", "") != "header") throw std::runtime_error("missing header record");
        const auto m = j.at("method").get<std::string>();
        if (m == "mcd") {
          s.method = SplitMethod::Mcd;
        } else if (m == "window") {
          s.method = SplitMethod::Window;
        } else if (m == "random") {
          s.method = SplitMethod::Random;
        } else {
          throw std::runtime_error("unknown method " + m);
        }
        s.alpha = j.at("alpha").get<double>();
        s.cd = j.at("cd").get<double>();
        s.offset = j.value("offset", std::size_t{0});
        s.seed = j.value("seed", std::uint64_t{0});
        saw_header = true;
        continue;
      }
      s.entries.push_back({j.at("image_id").get<std::string>(),
                           j.at("caption_ids").get<std::vector<std::string>>()});
    } catch (const std::exception& ex) {
      throw Error(ErrorCode::SchemaMismatch, "split line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  if (!saw_header) throw Error(ErrorCode::SchemaMismatch, "empty split file");
  return s;
}

inline void write_split_file(const std::string& path, const SplitSpec& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  write_split(out, s);
}

inline SplitSpec read_split_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path);
  return read_split(in);
}

}  // namespace crg
