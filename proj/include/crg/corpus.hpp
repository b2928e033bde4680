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

// Corpus files shared by every pipeline stage.
//
// Captions (JSON Lines):
//   {"image_id": "...", "caption_id": "...", "caption": "...", "tree": "(S ...)"}
// Features (JSON Lines):
//   {"image_id": "...", "regions": [[...], ...], "positions": [[...], ...]}
// "positions" is optional; when present each position vector is appended to
// its region vector.

#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "crg/error.hpp"
#include "crg/treebank.hpp"

namespace crg {

struct CaptionRecord {
  std::string image_id;
  std::string caption_id;
  std::string caption;
  std::string tree;

  bool operator==(const CaptionRecord&) const = default;
};

struct VisualFeatureSet {
  std::string image_id;
  std::vector<std::vector<double>> regions;
  std::optional<std::vector<std::vector<double>>> positions;

  /// Region vectors with positions appended.
  std::vector<std::vector<double>> combined() const {
    if (!positions) return regions;
    std::vector<std::vector<double>> out = regions;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].insert(out[i].end(), (*positions)[i].begin(), (*positions)[i].end());
    }
    return out;
  }

  std::size_t dim() const {
    if (regions.empty()) return 0;
    return regions.front().size() + (positions ? positions->front().size() : 0);
  }

  bool operator==(const VisualFeatureSet&) const = default;
};

namespace detail {

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path);
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  return out;
}

inline std::vector<std::vector<double>> read_matrix(const nlohmann::json& j) {
  std::vector<std::vector<double>> out;
  for (const auto& row : j) out.push_back(row.get<std::vector<double>>());
  return out;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const CaptionRecord& r) {
  return {{"image_id", r.image_id}, {"caption_id", r.caption_id}, {"caption", r.caption},
          {"tree", r.tree}};
}

/// Reads and validates a caption file: every tree must parse, and its
/// leaves must spell the caption.
inline std::vector<CaptionRecord> read_captions(std::istream& in, const std::string& name = "captions") {
  std::vector<CaptionRecord> out;
  std::string text;
  std::size_t lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (text.empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno) + ": ";
    CaptionRecord r;
    try {
      const auto j = nlohmann::json::parse(text);
      r.image_id = j.at("image_id").get<std::string>();
      r.caption_id = j.at("caption_id").get<std::string>();
      r.caption = j.at("caption").get<std::string>();
      r.tree = j.at("tree").get<std::string>();
    } catch (const std::exception& ex) {
      throw Error(ErrorCode::SchemaMismatch, where + ex.what());
    }
    try {
      treebank::parse_bracketed(r.tree);
    } catch (const Error& ex) {
      throw Error(ex.code(), where + ex.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<CaptionRecord> read_captions_file(const std::string& path) {
  auto in = detail::open_in(path);
  return read_captions(in, path);
}

inline void write_captions(std::ostream& out, const std::vector<CaptionRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline void write_captions_file(const std::string& path, const std::vector<CaptionRecord>& records) {
  auto out = detail::open_out(path);
  write_captions(out, records);
}

inline std::vector<VisualFeatureSet> read_features(std::istream& in, const std::string& name = "features") {
  std::vector<VisualFeatureSet> out;
  std::string text;
  std::size_t lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (text.empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno) + ": ";
    VisualFeatureSet f;
    try {
      const auto j = nlohmann::json::parse(text);
      f.image_id = j.at("image_id").get<std::string>();
      f.regions = detail::read_matrix(j.at("regions"));
      if (j.contains("positions")) f.positions = detail::read_matrix(j.at("positions"));
    } catch (const std::exception& ex) {
      throw Error(ErrorCode::SchemaMismatch, where + ex.what());
    }
    if (f.regions.empty()) throw Error(ErrorCode::SchemaMismatch, where + "image has no regions");
    const std::size_t width = f.regions.front().size();
    for (const auto& r : f.regions) {
      if (r.size() != width) throw Error(ErrorCode::SchemaMismatch, where + "ragged regions");
      for (double v : r) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, where + "non-finite feature");
      }
    }
    if (f.positions && f.positions->size() != f.regions.size()) {
      throw Error(ErrorCode::SchemaMismatch, where + "positions/regions count mismatch");
    }
    out.push_back(std::move(f));
  }
  return out;
}

inline std::vector<VisualFeatureSet> read_features_file(const std::string& path) {
  auto in = detail::open_in(path);
  return read_features(in, path);
}

inline void write_features(std::ostream& out, const std::vector<VisualFeatureSet>& features) {
  for (const auto& f : features) {
    nlohmann::ordered_json j{{"image_id", f.image_id}, {"regions", f.regions}};
    if (f.positions) j["positions"] = *f.positions;
    out << j.dump() << '\n';
  }
}

inline void write_features_file(const std::string& path, const std::vector<VisualFeatureSet>& features) {
  auto out = detail::open_out(path);
  write_features(out, features);
}

inline std::map<std::string, VisualFeatureSet> index_features(std::vector<VisualFeatureSet> features) {
  std::map<std::string, VisualFeatureSet> out;
  for (auto& f : features) {
    std::string id = f.image_id;
    out.emplace(std::move(id), std::move(f));
  }
  return out;
}

}  // namespace crg
