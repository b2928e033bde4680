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

// crg: command-line entry point for the concept and relation graph toolkit.
//
// Exit codes: 0 success, 1 internal error, 2 usage or input error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "crg/compdiv.hpp"
#include "crg/corpus.hpp"
#include "crg/error.hpp"
#include "crg/gradcheck.hpp"
#include "crg/graph.hpp"
#include "crg/hash.hpp"
#include "crg/model.hpp"
#include "crg/synth.hpp"
#include "crg/train.hpp"

namespace {

using namespace crg;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

constexpr const char* kVersion = "crg 0.1.0";

// ---- manifests ----

ojson resolved_flags(const CLI::App& sub) {
  ojson flags = ojson::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_name(false, true);
    if (name.empty() || name == "--help" || name == "-h") continue;
    const std::string key = opt->get_lnames().empty() ? name : opt->get_lnames().front();
    if (key == "help") continue;
    if (opt->get_expected_max() == 0) {
      flags[key] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& r = opt->results();
      flags[key] = r.size() == 1 ? ojson(r.front()) : ojson(r);
    } else {
      flags[key] = opt->get_default_str();
    }
  }
  return flags;
}

/// Written to a temporary file and renamed into place before any output.
void write_manifest(const std::string& path, const CLI::App& sub,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
  ojson hashes = ojson::object();
  for (const auto& in : inputs) hashes[in] = sha256_file(in);
  ojson m{{"subcommand", sub.get_name()},
          {"flags", resolved_flags(sub)},
          {"inputs", hashes},
          {"outputs", outputs},
          {"version", kVersion}};
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp);
    out << m.dump(2) << '\n';
  }
  fs::rename(tmp, target);
}

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::Io, "no such file: " + path);
}

void ensure_parent(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---- image lists ----

struct ImageList {
  std::vector<std::string> ids;
  std::set<std::string> caption_ids;  // empty: all captions of the images
};

/// Reads either a split file (JSONL with header) or one image id per line.
ImageList read_image_list(const std::string& path) {
  require_file(path);
  std::ifstream in(path);
  std::string first;
  while (std::getline(in, first) && first.empty()) {
  }
  ImageList out;
  if (!first.empty() && first.front() == '{') {
    const SplitSpec s = read_split_file(path);
    for (const auto& e : s.entries) {
      out.ids.push_back(e.image_id);
      out.caption_ids.insert(e.caption_ids.begin(), e.caption_ids.end());
    }
    return out;
  }
  in.clear();
  in.seekg(0);
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.ids.push_back(line);
  }
  return out;
}

void write_ids(const std::string& path, const std::vector<std::string>& ids) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  for (const auto& id : ids) out << id << '\n';
}

ExamplesByImage restrict(const ExamplesByImage& all, const ImageList& list) {
  ExamplesByImage out = select_images(all, list.ids);
  if (list.caption_ids.empty()) return out;
  for (auto& [_, caps] : out) {
    std::erase_if(caps, [&](const Example& e) { return !list.caption_ids.count(e.caption_id); });
  }
  return out;
}

// ---- shared option groups ----

struct ModelFlags {
  std::size_t width = 32;
  std::size_t heads = 2;
  std::size_t pt_layers = 2;
  std::size_t ct_layers = 3;
  std::string modulator = "film";
  bool no_crossatt = false;
  std::string pooling = "mean";
  bool flat = false;

  void add(CLI::App* app) {
    app->add_option("--width", width, "Embedding width")->capture_default_str();
    app->add_option("--heads", heads, "Attention heads")->capture_default_str();
    app->add_option("--pt-layers", pt_layers, "Predicate transformer layers")->capture_default_str();
    app->add_option("--ct-layers", ct_layers, "Composition transformer layers (odd)")
        ->capture_default_str();
    app->add_option("--modulator", modulator, "film | mlp | replace")
        ->check(CLI::IsMember({"film", "mlp", "replace"}))
        ->capture_default_str();
    app->add_flag("--no-crossatt", no_crossatt, "Primitives skip cross-attention to regions");
    app->add_option("--pooling", pooling, "mean | start")
        ->check(CLI::IsMember({"mean", "start"}))
        ->capture_default_str();
    app->add_flag("--flat", flat, "Encode whole captions as token sequences");
  }

  ModelConfig config(std::size_t feature_dim, std::vector<std::string> vocab, std::uint64_t seed) const {
    ModelConfig c;
    c.width = width;
    c.n_heads = heads;
    c.pt_layers = pt_layers;
    c.ct_layers = ct_layers;
    c.feature_dim = feature_dim;
    c.modulator = parse_modulator(modulator);
    c.primitive_cross_attention = !no_crossatt;
    c.pooling = pooling == "mean" ? Pooling::Mean : Pooling::StartToken;
    c.structure = flat ? Structure::Flat : Structure::Recursive;
    c.vocabulary = std::move(vocab);
    c.init_seed = seed;
    return c;
  }
};

struct Corpus {
  std::vector<CaptionRecord> records;
  FeatureIndex features;
  ExamplesByImage examples;
};

Corpus load_corpus(const std::string& captions, const std::string& features, double degrade_p,
                   std::uint64_t seed, std::size_t workers) {
  require_file(captions);
  require_file(features);
  Corpus c;
  c.records = read_captions_file(captions);
  c.features = index_features(read_features_file(features));
  c.examples = group_by_image(decompose_records(c.records, degrade_p, seed, workers));
  return c;
}

std::vector<std::string> corpus_vocabulary(const Corpus& c) {
  std::vector<ConceptTree> trees;
  for (const auto& [_, caps] : c.examples)
    for (const auto& e : caps) trees.push_back(e.tree);
  return collect_vocabulary(trees);
}

// ---- subcommands ----

struct GenSynthArgs {
  std::string out;
  synth::WorldConfig world;
};

int run_gen_synth(const CLI::App& sub, const GenSynthArgs& a) {
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  const std::vector<std::string> outputs{(dir / "world.jsonl").string(), (dir / "captions.jsonl").string(),
                                         (dir / "features.jsonl").string(), (dir / "train.ids").string(),
                                         (dir / "pool.ids").string(), (dir / "test.ids").string()};
  write_manifest((dir / "manifest.json").string(), sub, {}, outputs);
  const auto corpus = synth::gen_corpus(a.world);
  const auto part = synth::gen_splits(corpus);
  {
    std::ofstream out(outputs[0], std::ios::binary);
    synth::write_world(out, corpus.images);
  }
  write_captions_file(outputs[1], corpus.captions);
  write_features_file(outputs[2], corpus.features);
  write_ids(outputs[3], part.train);
  write_ids(outputs[4], part.pool);
  write_ids(outputs[5], part.test);
  std::cout << "images " << corpus.images.size() << "  captions " << corpus.captions.size()
            << "  train " << part.train.size() << "  pool " << part.pool.size() << "  test "
            << part.test.size() << '\n';
  return 0;
}

struct BuildArgs {
  std::string captions, out, manifest;
  double degrade_p = 0.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

int run_build_crg(const CLI::App& sub, const BuildArgs& a) {
  require_file(a.captions);
  if (a.degrade_p < 0.0 || a.degrade_p > 1.0) {
    throw Error(ErrorCode::InvalidConfig, "--degrade-p must lie in [0, 1]");
  }
  write_manifest(a.manifest.empty() ? a.out + ".manifest.json" : a.manifest, sub, {a.captions}, {a.out});
  const auto records = read_captions_file(a.captions);
  const auto examples = decompose_records(records, a.degrade_p, a.seed, a.workers);
  ConceptGraph g;
  for (const auto& e : examples) g.ingest(e.image_id, e.caption_id, e.tree);
  ensure_parent(a.out);
  g.save(a.out);
  std::cout << format_stats(g.stats());
  return 0;
}

struct SplitArgs {
  std::string graph, train, pool, out, mode = "mcd", manifest;
  std::size_t size = 1000;
  std::size_t stride = 0;
  double alpha = 0.1;
  std::uint64_t seed = 0;
  bool keep_unseen = false;
  std::size_t workers = 1;
};

std::vector<PoolItem> pool_items(const ConceptGraph& g, const std::vector<std::string>& ids) {
  std::map<std::string, std::vector<std::string>> by_image;
  for (const auto& [caption, info] : g.captions()) by_image[info.image_id].push_back(caption);
  std::vector<PoolItem> out;
  for (const auto& id : ids) {
    auto it = by_image.find(id);
    if (it == by_image.end()) throw Error(ErrorCode::UnknownConcept, "image " + id + " not in graph");
    std::vector<std::pair<std::string, ConceptTree>> caps;
    for (const auto& c : it->second) caps.emplace_back(c, g.tree_of(c));
    out.push_back(make_pool_item(id, caps));
  }
  return out;
}

int run_make_splits(const CLI::App& sub, const SplitArgs& a) {
  require_file(a.graph);
  const auto train_ids = read_image_list(a.train).ids;
  const auto pool_ids = read_image_list(a.pool).ids;
  if (a.size > pool_ids.size()) {
    throw Error(ErrorCode::KTooLarge, "--size " + std::to_string(a.size) + " exceeds pool of " +
                                          std::to_string(pool_ids.size()));
  }
  std::vector<std::string> outputs;
  if (a.mode == "windows") {
    const std::size_t stride = a.stride ? a.stride : a.size;
    for (std::size_t off = 0; off + a.size <= pool_ids.size(); off += stride) {
      outputs.push_back(a.out + "." + std::to_string(off) + ".jsonl");
    }
  } else {
    outputs.push_back(a.out);
  }
  write_manifest(a.manifest.empty() ? a.out + ".manifest.json" : a.manifest, sub,
                 {a.graph, a.train, a.pool}, outputs);
  const ConceptGraph g = ConceptGraph::load(a.graph);
  const auto train = pool_items(g, train_ids);
  auto pool = pool_items(g, pool_ids);
  if (!a.keep_unseen) {
    const std::size_t before = pool.size();
    pool = filter_unseen_primitives(pool, train);
    if (pool.size() != before) {
      std::cerr << "dropped " << before - pool.size() << " pool images with unseen primitives\n";
    }
    if (a.size > pool.size()) {
      throw Error(ErrorCode::KTooLarge, "--size exceeds the filtered pool of " + std::to_string(pool.size()));
    }
  }
  ensure_parent(a.out);
  std::vector<SplitSpec> splits;
  if (a.mode == "mcd") {
    splits.push_back(mcd_split(pool, train, a.size, a.alpha, a.workers));
  } else if (a.mode == "random") {
    splits.push_back(random_split(pool, train, a.size, a.alpha, a.seed));
  } else {
    const auto ranked = mcd_ranking(pool, train, a.alpha, a.workers);
    splits = windowed_splits(ranked, a.size, a.stride ? a.stride : a.size, train, a.alpha);
    outputs.resize(splits.size());
  }
  std::printf("%8s %8s %10s  %s\n", "offset", "size", "cd", "file");
  for (std::size_t i = 0; i < splits.size(); ++i) {
    write_split_file(outputs[i], splits[i]);
    std::printf("%8zu %8zu %10.6f  %s\n", splits[i].offset, splits[i].entries.size(), splits[i].cd,
                outputs[i].c_str());
  }
  return 0;
}

struct TrainArgs {
  std::string captions, features, images, out, log, metrics, eval_images, manifest;
  ModelFlags model;
  TrainConfig train;
  double degrade_p = 0.0;
};

int run_train(const CLI::App& sub, TrainArgs a) {
  require_file(a.images);
  std::vector<std::string> inputs{a.captions, a.features, a.images};
  if (!a.eval_images.empty()) inputs.push_back(a.eval_images);
  std::vector<std::string> outputs{a.out};
  if (!a.log.empty()) outputs.push_back(a.log);
  if (!a.metrics.empty()) outputs.push_back(a.metrics);
  a.train.validate();
  require_file(a.captions);
  require_file(a.features);
  write_manifest(a.manifest.empty() ? a.out + ".manifest.json" : a.manifest, sub, inputs, outputs);

  const Corpus corpus = load_corpus(a.captions, a.features, a.degrade_p, a.train.seed, a.train.workers);
  const ExamplesByImage train = restrict(corpus.examples, read_image_list(a.images));
  const std::size_t dim = features_of(corpus.features, train.begin()->first).dim();
  Composer model(a.model.config(dim, corpus_vocabulary(corpus), a.train.seed));
  Trainer trainer(model, train, corpus.features, a.train);

  std::ofstream log;
  if (!a.log.empty()) {
    ensure_parent(a.log);
    log.open(a.log, std::ios::binary);
    if (!log) throw Error(ErrorCode::Io, "cannot write " + a.log);
  }
  std::vector<EpochStats> history;
  if (log.is_open()) write_csv_header(log);
  for (std::size_t e = 0; e < a.train.epochs; ++e) {
    history.push_back(trainer.run_epoch(e));
    const auto& s = history.back();
    std::cerr << "epoch " << e << " lr " << s.learning_rate << " loss " << s.total << " (match "
              << s.match << ", mvsa " << s.mvsa << ", order " << s.order << ") " << s.seconds << "s\n";
    if (log.is_open()) {
      write_csv_row(log, s);
      log.flush();
    }
  }
  ensure_parent(a.out);
  model.save(a.out);

  RetrievalMetrics m;
  if (!a.eval_images.empty()) {
    const auto list = read_image_list(a.eval_images);
    const ExamplesByImage eval = restrict(corpus.examples, list);
    m = evaluate_retrieval(model, sentence_queries(eval), list.ids, corpus.features, a.train.workers);
    std::printf("R@1 %.4f  R@5 %.4f  (%zu queries, %zu candidates)\n", m.r1, m.r5, m.queries,
                m.candidates);
  }
  if (!a.metrics.empty()) {
    ensure_parent(a.metrics);
    std::ofstream out(a.metrics, std::ios::binary);
    out << metrics_json(m, history).dump(2) << '\n';
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint, captions, features, images, out, query = "sentence", manifest;
  std::size_t per_caption = 5;
  double degrade_p = 0.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

int run_eval(const CLI::App& sub, const EvalArgs& a) {
  for (const auto& f : {a.checkpoint, a.captions, a.features, a.images}) require_file(f);
  std::vector<std::string> outputs;
  if (!a.out.empty()) outputs.push_back(a.out);
  const std::string manifest =
      !a.manifest.empty() ? a.manifest : (a.out.empty() ? std::string{} : a.out + ".manifest.json");
  if (!manifest.empty()) write_manifest(manifest, sub, {a.checkpoint, a.captions, a.features, a.images}, outputs);

  Composer model = Composer::load(a.checkpoint);
  const Corpus corpus = load_corpus(a.captions, a.features, a.degrade_p, a.seed, a.workers);
  const auto list = read_image_list(a.images);
  const ExamplesByImage eval = restrict(corpus.examples, list);
  const auto queries =
      a.query == "sentence" ? sentence_queries(eval) : phrase_queries(eval, a.per_caption, a.seed);
  const auto m = evaluate_retrieval(model, queries, list.ids, corpus.features, a.workers);
  std::printf("R@1 %.4f  R@5 %.4f  (%zu %s queries, %zu candidates)\n", m.r1, m.r5, m.queries,
              a.query.c_str(), m.candidates);
  if (!a.out.empty()) {
    ensure_parent(a.out);
    std::ofstream out(a.out, std::ios::binary);
    out << metrics_json(m).dump(2) << '\n';
  }
  return 0;
}

struct GradcheckArgs {
  std::size_t trials = 100;
  std::size_t coords = 12;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double op_tolerance = 1e-5;
};

int run_gradcheck(const GradcheckArgs& a) {
  ad::GradcheckOptions opt;
  opt.trials = a.trials;
  opt.seed = a.seed;
  bool ok = true;
  double worst = 0.0;
  auto report = [&](const ad::OpCheck& r, double tol) {
    const bool pass = r.max_rel_error <= tol && r.coords > 0;
    ok = ok && pass;
    worst = std::max(worst, r.max_rel_error);
    std::printf("%-28s %-4s max_rel_err %.3e  coords %zu  kinks %zu  trials %zu\n", r.name.c_str(),
                pass ? "ok" : "FAIL", r.max_rel_error, r.coords, r.kinks, r.trials);
  };
  for (const auto& spec : ad::standard_ops()) report(ad::check_op(spec, opt), a.op_tolerance);
  report(ad::check_attention_block(opt), a.op_tolerance);
  for (auto m : {Modulator::FiLM, Modulator::MLP, Modulator::Replace}) {
    report(ad::check_composed_loss(opt, a.coords, m), a.tolerance);
  }
  std::printf("max relative error %.3e\n", worst);
  return ok ? 0 : 1;
}

struct DumpArgs {
  std::string checkpoint, captions, features, caption_id, negative, out;
};

int run_dump_scores(const DumpArgs& a) {
  for (const auto& f : {a.checkpoint, a.captions, a.features}) require_file(f);
  Composer model = Composer::load(a.checkpoint);
  const Corpus corpus = load_corpus(a.captions, a.features, 0.0, 0, 1);
  const Example* ex = nullptr;
  for (const auto& [_, caps] : corpus.examples)
    for (const auto& e : caps)
      if (e.caption_id == a.caption_id) ex = &e;
  if (!ex) throw Error(ErrorCode::UnknownConcept, "no caption " + a.caption_id);
  const auto rows = dump_node_scores(model, ex->tree, features_of(corpus.features, ex->image_id),
                                     features_of(corpus.features, a.negative));
  std::ofstream file;
  if (!a.out.empty()) {
    ensure_parent(a.out);
    file.open(a.out, std::ios::binary);
  }
  std::ostream& out = a.out.empty() ? std::cout : file;
  for (const auto& r : rows) {
    out << ojson{{"text", r.text}, {"kind", kind_name(r.kind)}, {"s_gt", r.s_gt}, {"s_negative", r.s_negative}}
               .dump()
        << '\n';
  }
  return 0;
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::ShapeMismatch:
    case ErrorCode::NonFinite:
    case ErrorCode::NonScalarLoss:
      return 1;
    default:
      return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept and relation graphs, compound-divergence splits and the composition model"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenSynthArgs gs;
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic grounded corpus");
  gen->add_option("--out", gs.out, "Output directory")->required();
  gen->add_option("--images", gs.world.images, "Number of images")->capture_default_str();
  gen->add_option("--captions-per-image", gs.world.captions_per_image)->capture_default_str();
  gen->add_option("--min-objects", gs.world.min_objects)->capture_default_str();
  gen->add_option("--max-objects", gs.world.max_objects)->capture_default_str();
  gen->add_option("--base-rare", gs.world.base_rare, "Rare-style caption rate before skew")
      ->capture_default_str();
  gen->add_option("--skew", gs.world.skew, "Share of rare style moved from train/test to pool")
      ->capture_default_str();
  gen->add_option("--twin-fraction", gs.world.twin_fraction)->capture_default_str();
  gen->add_option("--seed", gs.world.seed)->capture_default_str();

  BuildArgs ba;
  auto* build = app.add_subcommand("build-crg", "Build a concept graph from parsed captions");
  build->add_option("--captions", ba.captions, "Captions JSONL")->required();
  build->add_option("--out", ba.out, "Graph JSONL")->required();
  build->add_option("--degrade-p", ba.degrade_p, "Branch removal probability")->capture_default_str();
  build->add_option("--seed", ba.seed)->capture_default_str();
  build->add_option("--workers", ba.workers)->capture_default_str();
  build->add_option("--manifest", ba.manifest, "Manifest path (default <out>.manifest.json)");

  SplitArgs sa;
  auto* splits = app.add_subcommand("make-splits", "Compound-divergence evaluation splits");
  splits->add_option("--graph", sa.graph, "Graph JSONL")->required();
  splits->add_option("--train", sa.train, "Training image ids")->required();
  splits->add_option("--pool", sa.pool, "Candidate pool image ids")->required();
  splits->add_option("--out", sa.out, "Split file (prefix in windows mode)")->required();
  splits->add_option("--size", sa.size, "Images per split")->capture_default_str();
  splits->add_option("--alpha", sa.alpha, "Chernoff alpha")->capture_default_str();
  splits->add_option("--mode", sa.mode, "mcd | windows | random")
      ->check(CLI::IsMember({"mcd", "windows", "random"}))
      ->capture_default_str();
  splits->add_option("--stride", sa.stride, "Window stride (default: --size)");
  splits->add_option("--seed", sa.seed)->capture_default_str();
  splits->add_flag("--keep-unseen", sa.keep_unseen, "Keep pool images with unseen primitives");
  splits->add_option("--workers", sa.workers)->capture_default_str();
  splits->add_option("--manifest", sa.manifest);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the composition model");
  train->add_option("--captions", ta.captions)->required();
  train->add_option("--features", ta.features)->required();
  train->add_option("--images", ta.images, "Training image ids or split file")->required();
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--log", ta.log, "Per-epoch CSV log");
  train->add_option("--metrics", ta.metrics, "Metrics JSON");
  train->add_option("--eval-images", ta.eval_images, "Evaluate on these images after training");
  train->add_option("--manifest", ta.manifest);
  ta.model.add(train);
  train->add_option("--alpha", ta.train.alpha, "MVSA margin")->capture_default_str();
  train->add_option("--beta", ta.train.beta, "Order margin")->capture_default_str();
  train->add_option("--lambda1", ta.train.lambda1, "MVSA weight")->capture_default_str();
  train->add_option("--lambda2", ta.train.lambda2, "Order weight")->capture_default_str();
  std::string mvsa = "hinge";
  train->add_option("--mvsa-loss", mvsa, "hinge | nll")
      ->check(CLI::IsMember({"hinge", "nll"}))
      ->capture_default_str();
  train->add_option("--negatives", ta.train.negatives)->capture_default_str();
  train->add_option("--batch-size", ta.train.batch_size)->capture_default_str();
  train->add_option("--epochs", ta.train.epochs)->capture_default_str();
  train->add_option("--lr", ta.train.learning_rate)->capture_default_str();
  train->add_option("--warmup-epochs", ta.train.warmup_epochs)->capture_default_str();
  train->add_option("--clip-norm", ta.train.clip_norm)->capture_default_str();
  train->add_option("--degrade-p", ta.degrade_p)->capture_default_str();
  train->add_option("--seed", ta.train.seed)->capture_default_str();
  train->add_option("--workers", ta.train.workers)->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Text-to-image retrieval metrics");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  eval->add_option("--captions", ea.captions)->required();
  eval->add_option("--features", ea.features)->required();
  eval->add_option("--images", ea.images, "Evaluation image ids or split file")->required();
  eval->add_option("--query", ea.query, "sentence | phrase")
      ->check(CLI::IsMember({"sentence", "phrase"}))
      ->capture_default_str();
  eval->add_option("--per-caption", ea.per_caption, "Phrase queries per caption")->capture_default_str();
  eval->add_option("--out", ea.out, "Metrics JSON");
  eval->add_option("--degrade-p", ea.degrade_p)->capture_default_str();
  eval->add_option("--seed", ea.seed)->capture_default_str();
  eval->add_option("--workers", ea.workers)->capture_default_str();
  eval->add_option("--manifest", ea.manifest);

  GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad->add_option("--trials", ga.trials)->capture_default_str();
  grad->add_option("--coords", ga.coords, "Parameter coordinates per composed-loss trial")
      ->capture_default_str();
  grad->add_option("--seed", ga.seed)->capture_default_str();
  grad->add_option("--tolerance", ga.tolerance, "Composed loss tolerance")->capture_default_str();
  grad->add_option("--op-tolerance", ga.op_tolerance, "Per-op tolerance")->capture_default_str();

  DumpArgs da;
  auto* dump = app.add_subcommand("dump-scores", "Per-node scores against a true and a negative image");
  dump->add_option("--checkpoint", da.checkpoint)->required();
  dump->add_option("--captions", da.captions)->required();
  dump->add_option("--features", da.features)->required();
  dump->add_option("--caption-id", da.caption_id)->required();
  dump->add_option("--negative", da.negative, "Negative image id")->required();
  dump->add_option("--out", da.out, "JSONL output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return run_gen_synth(*gen, gs);
    if (*build) return run_build_crg(*build, ba);
    if (*splits) return run_make_splits(*splits, sa);
    if (*train) {
      ta.train.mvsa_loss = parse_mvsa_loss(mvsa);
      return run_train(*train, ta);
    }
    if (*eval) return run_eval(*eval, ea);
    if (*grad) return run_gradcheck(ga);
    if (*dump) return run_dump_scores(da);
  } catch (const Error& e) {
    std::cerr << "crg: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "crg: internal error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
