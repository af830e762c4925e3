// SPDX-License-Identifier: Apache-2.0
#include "arec/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include "arec/corpus.hpp"
#include "arec/error.hpp"
#include "arec/eval.hpp"
#include "arec/events.hpp"
#include "arec/hash.hpp"
#include "arec/midi.hpp"

namespace arec::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using attribution::Level;

namespace {

std::string hex(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Per-stage seeds, all derived from the global seed by stage name.
std::uint64_t stage_seed(const PipelineConfig& c, std::string_view stage) { return derive_seed(c.seed, stage); }

model::ModelConfig model_config(const PipelineConfig& c) {
  model::ModelConfig m = c.model;
  m.seed = stage_seed(c, "train");
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  midi::write_file(path.string(), bytes);
}

void require_artifact(const fs::path& path, const std::string& what, const std::string& producer) {
  if (!fs::exists(path))
    throw Error(ErrorCode::Io, "missing " + what + " " + path.string() + " (run `" + producer + "` first)");
}

std::string text_of(const fs::path& path) {
  const auto bytes = midi::read_file(path.string());
  return {bytes.begin(), bytes.end()};
}

json read_json(const fs::path& path) {
  try {
    return json::parse(text_of(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, path.string() + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config key '") + key + "': " + e.what());
  }
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j[key].is_object()) throw Error(ErrorCode::InvalidConfig, std::string("config section '") + key + "' must be an object");
  return j[key];
}

// ---------------------------------------------------------------------------
// Artifacts shared between stages

ArtifactLayout layout(const PipelineConfig& c) { return ArtifactLayout(c.paths.artifact_dir); }

fs::path sources_manifest(const ArtifactLayout& a) { return a.root / "corpus" / "sources.json"; }

struct SourceStream {
  std::string source_file;
  std::string rightsholder_id;
  events::EventSequence tokens;
};

std::vector<SourceStream> load_sources(const ArtifactLayout& a) {
  const fs::path manifest = sources_manifest(a);
  require_artifact(manifest, "source manifest", "ingest");
  std::vector<SourceStream> out;
  for (const auto& s : read_json(manifest)) {
    const fs::path tokens = a.root / "corpus" / s.at("tokens").get<std::string>();
    require_artifact(tokens, "source tokens", "ingest");
    out.push_back({s.at("source_file"), s.at("rightsholder_id"), corpus::decode_tokens(midi::read_file(tokens.string()))});
  }
  return out;
}

corpus::Corpus load_corpus_artifact(const ArtifactLayout& a) {
  const fs::path stem = a.corpus_stem();
  require_artifact(fs::path(stem.string() + ".arec"), "corpus", "ingest");
  require_artifact(fs::path(stem.string() + ".json"), "corpus manifest", "ingest");
  return corpus::load_corpus(stem.string());
}

model::ModelCheckpoint load_model_artifact(const ArtifactLayout& a) {
  require_artifact(a.checkpoint(), "checkpoint", "train");
  return model::load_checkpoint(a.checkpoint().string());
}

std::vector<attribution::AttributionTarget> load_targets(const ArtifactLayout& a) {
  require_artifact(a.targets(), "generated targets", "generate");
  std::vector<attribution::AttributionTarget> out;
  for (const auto& t : read_json(a.targets()))
    out.push_back({Level::segment, t.at("prompt").get<events::EventSequence>(), t.at("tokens").get<events::EventSequence>(),
                   t.at("target_id").get<std::string>()});
  return out;
}

attribution::AttributionMatrix load_scores(const ArtifactLayout& a, Level level) {
  require_artifact(a.scores(level), to_string(level) + " score file", "attribute");
  return attribution::load_matrix(a.scores(level).string());
}

// Score rows for `ids`, in that order.
Eigen::MatrixXd select_rows(const attribution::AttributionMatrix& m, const std::vector<std::string>& ids) {
  std::map<std::string, Eigen::Index> row;
  for (std::size_t i = 0; i < m.target_ids.size(); ++i) row[m.target_ids[i]] = static_cast<Eigen::Index>(i);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), m.scores.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = row.find(ids[i]);
    if (it == row.end()) throw Error(ErrorCode::DimensionMismatch, "score file has no row for target " + ids[i]);
    out.row(static_cast<Eigen::Index>(i)) = m.scores.row(it->second);
  }
  return out;
}

attribution::TrainSpec train_spec(const PipelineConfig& c) { return {model_config(c), c.train}; }

}  // namespace

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (jobs < 1) fail("jobs must be >= 1");
  if (ingest.window_len < 2) fail("ingest.window_len must be >= 2");
  if (ingest.max_windows_per_file < 0) fail("ingest.max_windows_per_file must be >= 0");
  model.validate();
  if (train.epochs < 1) fail("train.epochs must be >= 1");
  if (!(train.learning_rate > 0.0)) fail("train.learning_rate must be > 0");
  if (generate.targets < 1 || generate.prompt_len < 1 || generate.length < 1)
    fail("generate.targets, prompt_len and length must be >= 1");
  if (generate.temperature < 0.0 || generate.top_k < 0) fail("generate.temperature and top_k must be >= 0");
  if (attribution.members < 1) fail("attribution.members must be >= 1");
  if (!(attribution.fraction > 0.0 && attribution.fraction <= 1.0)) fail("attribution.fraction must be in (0, 1]");
  if (attribution.projection_dim < 1) fail("attribution.projection_dim must be >= 1");
  if (attribution.lambda && !(*attribution.lambda > 0.0)) fail("attribution.lambda must be > 0");
  if (!(attribution.lambda_scale > 0.0)) fail("attribution.lambda_scale must be > 0");
  if (evaluation.subsets < 3) fail("evaluation.subsets must be >= 3");
  if (!(evaluation.fraction > 0.0 && evaluation.fraction < 1.0)) fail("evaluation.fraction must be in (0, 1)");
  if (evaluation.targets < 0) fail("evaluation.targets must be >= 0");
  if (evaluation.buckets < 1) fail("evaluation.buckets must be >= 1");
  if (!(royalty.platform_cut >= 0.0 && royalty.platform_cut <= 1.0)) fail("royalty.platform_cut must be in [0, 1]");
  if (!(royalty.min_seconds >= 0.0)) fail("royalty.min_seconds must be >= 0");
  static const std::regex kPeriod(R"(^\d{4}-(0[1-9]|1[0-2])$)");
  for (const auto& r : royalty.revenue)
    if (!std::regex_match(r.period, kPeriod)) fail("revenue period must be YYYY-MM, got " + r.period);
}

PipelineConfig parse_config(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
  if (!j.contains("seed") || !j["seed"].is_number_unsigned())
    throw Error(ErrorCode::InvalidConfig, "config needs a non-negative integer 'seed'");
  PipelineConfig c;
  c.seed = j["seed"].get<std::uint64_t>();
  c.jobs = get_or(j, "jobs", c.jobs);

  const json& paths = section(j, "paths");
  auto path_of = [&](const char* key) {
    const auto s = get_or<std::string>(paths, key, "");
    if (s.empty()) return fs::path();
    fs::path p(s);
    return p.is_absolute() ? p : (base_dir / p).lexically_normal();
  };
  c.paths.midi_dir = path_of("midi_dir");
  c.paths.artifact_dir = path_of("artifact_dir");
  c.paths.usage_log = path_of("usage_log");
  if (c.paths.artifact_dir.empty()) throw Error(ErrorCode::InvalidConfig, "paths.artifact_dir is required");

  const json& ing = section(j, "ingest");
  c.ingest.window_len = get_or(ing, "window_len", c.ingest.window_len);
  c.ingest.max_windows_per_file = get_or(ing, "max_windows_per_file", c.ingest.max_windows_per_file);
  c.ingest.sustain_pedal = get_or(ing, "sustain_pedal", c.ingest.sustain_pedal);
  c.ingest.rightsholders = get_or(ing, "rightsholders", c.ingest.rightsholders);
  c.ingest.default_rightsholder = get_or(ing, "default_rightsholder", c.ingest.default_rightsholder);

  const json& m = section(j, "model");
  c.model.context_length = get_or(m, "context_length", c.model.context_length);
  c.model.embed_dim = get_or(m, "embed_dim", c.model.embed_dim);
  c.model.num_layers = get_or(m, "num_layers", c.model.num_layers);
  c.model.num_heads = get_or(m, "num_heads", c.model.num_heads);
  c.model.hidden_dim = get_or(m, "hidden_dim", c.model.hidden_dim);
  c.model.precision = model::precision_from_string(get_or<std::string>(m, "precision", to_string(c.model.precision)));

  const json& t = section(j, "train");
  c.train.epochs = get_or(t, "epochs", c.train.epochs);
  c.train.batch_size = get_or(t, "batch_size", c.train.batch_size);
  c.train.learning_rate = get_or(t, "learning_rate", c.train.learning_rate);
  c.train.beta1 = get_or(t, "beta1", c.train.beta1);
  c.train.beta2 = get_or(t, "beta2", c.train.beta2);
  c.train.epsilon = get_or(t, "epsilon", c.train.epsilon);
  c.train.weight_decay = get_or(t, "weight_decay", c.train.weight_decay);
  c.train.grad_clip = get_or(t, "grad_clip", c.train.grad_clip);

  const json& g = section(j, "generate");
  c.generate.targets = get_or(g, "targets", c.generate.targets);
  c.generate.prompt_len = get_or(g, "prompt_len", c.generate.prompt_len);
  c.generate.length = get_or(g, "length", c.generate.length);
  c.generate.temperature = get_or(g, "temperature", c.generate.temperature);
  c.generate.top_k = get_or(g, "top_k", c.generate.top_k);

  const json& a = section(j, "attribution");
  c.attribution.members = get_or(a, "members", c.attribution.members);
  c.attribution.fraction = get_or(a, "fraction", c.attribution.fraction);
  c.attribution.projection_dim = get_or(a, "projection_dim", c.attribution.projection_dim);
  if (a.contains("lambda") && !a["lambda"].is_null()) c.attribution.lambda = get_or(a, "lambda", 0.0);
  c.attribution.lambda_scale = get_or(a, "lambda_scale", c.attribution.lambda_scale);
  c.attribution.output_fn = model::output_fn_from_string(get_or<std::string>(a, "output_fn", to_string(c.attribution.output_fn)));

  const json& e = section(j, "evaluation");
  c.evaluation.subsets = get_or(e, "subsets", c.evaluation.subsets);
  c.evaluation.fraction = get_or(e, "fraction", c.evaluation.fraction);
  c.evaluation.targets = get_or(e, "targets", c.evaluation.targets);
  c.evaluation.level = attribution::level_from_string(get_or<std::string>(e, "level", to_string(c.evaluation.level)));
  c.evaluation.buckets = get_or(e, "buckets", c.evaluation.buckets);

  const json& r = section(j, "royalty");
  if (r.contains("sources")) {
    c.royalty.pools.sources.clear();
    for (const auto& s : r["sources"]) c.royalty.pools.sources.push_back(royalty::source_from_string(s.get<std::string>()));
  }
  c.royalty.pools.regions = get_or(r, "regions", c.royalty.pools.regions);
  if (r.contains("revenue")) {
    for (const auto& rec : r["revenue"]) {
      royalty::RevenueRecord rr;
      rr.source = royalty::source_from_string(get_or<std::string>(rec, "source", ""));
      rr.region = get_or<std::string>(rec, "region", "");
      rr.period = get_or<std::string>(rec, "period", "");
      if (!rec.contains("amount_cents") || !rec["amount_cents"].is_number_integer())
        throw Error(ErrorCode::InvalidConfig, "revenue records need integer amount_cents");
      rr.amount = rec["amount_cents"].get<royalty::Cents>();
      c.royalty.revenue.push_back(rr);
    }
  }
  c.royalty.platform_cut = get_or(r, "platform_cut", c.royalty.platform_cut);
  c.royalty.min_seconds = get_or(r, "min_seconds", c.royalty.min_seconds);
  const json& w = section(r, "weights");
  c.royalty.weights.clip_negative = get_or(w, "clip_negative", c.royalty.weights.clip_negative);
  if (w.contains("top_k") && !w["top_k"].is_null()) c.royalty.weights.top_k = get_or(w, "top_k", 0);
  if (w.contains("min_share") && !w["min_share"].is_null()) c.royalty.weights.min_share = get_or(w, "min_share", 0.0);

  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::Io, "config file not found: " + path.string());
  json j;
  try {
    j = json::parse(text_of(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  return parse_config(j, fs::absolute(path).parent_path());
}

json to_json(const PipelineConfig& c) {
  json sources = json::array();
  for (auto s : c.royalty.pools.sources) sources.push_back(royalty::to_string(s));
  json revenue = json::array();
  for (const auto& r : c.royalty.revenue)
    revenue.push_back({{"source", royalty::to_string(r.source)}, {"region", r.region}, {"period", r.period},
                       {"amount_cents", r.amount}});
  auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
  return {
      {"seed", c.seed},
      {"jobs", c.jobs},
      {"paths",
       {{"midi_dir", c.paths.midi_dir.string()},
        {"artifact_dir", c.paths.artifact_dir.string()},
        {"usage_log", c.paths.usage_log.string()}}},
      {"ingest",
       {{"window_len", c.ingest.window_len},
        {"max_windows_per_file", c.ingest.max_windows_per_file},
        {"sustain_pedal", c.ingest.sustain_pedal},
        {"rightsholders", c.ingest.rightsholders},
        {"default_rightsholder", c.ingest.default_rightsholder}}},
      {"model",
       {{"context_length", c.model.context_length},
        {"embed_dim", c.model.embed_dim},
        {"num_layers", c.model.num_layers},
        {"num_heads", c.model.num_heads},
        {"hidden_dim", c.model.hidden_dim},
        {"precision", to_string(c.model.precision)}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"epsilon", c.train.epsilon},
        {"weight_decay", c.train.weight_decay},
        {"grad_clip", c.train.grad_clip}}},
      {"generate",
       {{"targets", c.generate.targets},
        {"prompt_len", c.generate.prompt_len},
        {"length", c.generate.length},
        {"temperature", c.generate.temperature},
        {"top_k", c.generate.top_k}}},
      {"attribution",
       {{"members", c.attribution.members},
        {"fraction", c.attribution.fraction},
        {"projection_dim", c.attribution.projection_dim},
        {"lambda", opt(c.attribution.lambda)},
        {"lambda_scale", c.attribution.lambda_scale},
        {"output_fn", to_string(c.attribution.output_fn)}}},
      {"evaluation",
       {{"subsets", c.evaluation.subsets},
        {"fraction", c.evaluation.fraction},
        {"targets", c.evaluation.targets},
        {"level", to_string(c.evaluation.level)},
        {"buckets", c.evaluation.buckets}}},
      {"royalty",
       {{"sources", sources},
        {"regions", c.royalty.pools.regions},
        {"revenue", revenue},
        {"platform_cut", c.royalty.platform_cut},
        {"min_seconds", c.royalty.min_seconds},
        {"weights",
         {{"clip_negative", c.royalty.weights.clip_negative},
          {"top_k", opt(c.royalty.weights.top_k)},
          {"min_share", opt(c.royalty.weights.min_share)}}}}},
  };
}

ArtifactLayout::ArtifactLayout(fs::path r) : root(std::move(r)) {}
fs::path ArtifactLayout::corpus_stem() const { return root / "corpus" / "corpus"; }
fs::path ArtifactLayout::checkpoint() const { return root / "checkpoints" / "model.ckpt"; }
fs::path ArtifactLayout::member(int k) const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "member_%02d.ckpt", k);
  return root / "checkpoints" / buf;
}
fs::path ArtifactLayout::targets() const { return root / "generated" / "targets.json"; }
fs::path ArtifactLayout::scores(Level level) const { return root / "scores" / (to_string(level) + ".ascr"); }
fs::path ArtifactLayout::scores_csv(Level level) const { return root / "scores" / (to_string(level) + ".csv"); }
fs::path ArtifactLayout::lds() const { return root / "eval" / "lds.json"; }
fs::path ArtifactLayout::style_csv() const { return root / "eval" / "style.csv"; }
fs::path ArtifactLayout::style_json() const { return root / "eval" / "style.json"; }
fs::path ArtifactLayout::statement_dir() const { return root / "statements"; }

// ---------------------------------------------------------------------------
// Stages

json run_ingest(const PipelineConfig& c) {
  if (c.paths.midi_dir.empty()) throw Error(ErrorCode::InvalidConfig, "paths.midi_dir is required for ingest");
  if (!fs::is_directory(c.paths.midi_dir))
    throw Error(ErrorCode::Io, "MIDI directory not found: " + c.paths.midi_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(c.paths.midi_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (ext == ".mid" || ext == ".midi") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::EmptyInput, "no .mid files in " + c.paths.midi_dir.string());

  const ArtifactLayout a = layout(c);
  midi::ParseOptions popts;
  popts.sustain_pedal = c.ingest.sustain_pedal;
  std::vector<corpus::Source> sources;
  json manifest = json::array(), per_file = json::array();
  std::size_t total_tokens = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const std::string name = files[i].filename().string();
    const auto parsed = midi::parse_midi(midi::read_file(files[i].string()), popts);
    corpus::Source src;
    src.source_file = name;
    auto it = c.ingest.rightsholders.find(name);
    src.rightsholder_id = it != c.ingest.rightsholders.end() ? it->second : c.ingest.default_rightsholder;
    src.events = events::tokenize(parsed.sequence);
    total_tokens += src.events.size();

    char tok_name[32];
    std::snprintf(tok_name, sizeof tok_name, "sources/%03zu.arec", i);
    write_bytes(a.root / "corpus" / tok_name, corpus::encode_tokens(src.events));
    manifest.push_back({{"source_file", name}, {"rightsholder_id", src.rightsholder_id}, {"tokens", tok_name}});
    per_file.push_back({{"source_file", name},
                        {"notes", parsed.sequence.notes.size()},
                        {"tokens", src.events.size()},
                        {"dangling_note_ons", parsed.report.dangling_note_ons},
                        {"dropped_degenerate", parsed.report.dropped_degenerate},
                        {"orphan_note_offs", parsed.report.orphan_note_offs},
                        {"skipped_chunks", parsed.report.skipped_chunks}});
    sources.push_back(std::move(src));
  }
  const corpus::Corpus corp = corpus::build_corpus(sources, c.ingest.window_len, c.ingest.max_windows_per_file);
  fs::create_directories(a.corpus_stem().parent_path());
  corpus::save_corpus(corp, a.corpus_stem().string());
  write_text(sources_manifest(a), manifest.dump(2) + "\n");
  return {{"stage", "ingest"},
          {"files", files.size()},
          {"tokens", total_tokens},
          {"works", corp.size()},
          {"window_len", corp.window_len},
          {"corpus_hash", hex(corp.content_hash())},
          {"sources", per_file}};
}

json run_train(const PipelineConfig& c) {
  const ArtifactLayout a = layout(c);
  const corpus::Corpus corp = load_corpus_artifact(a);
  const auto result = model::train(corp.windows, model_config(c), c.train, std::vector<bool>(corp.size(), true),
                                   corp.content_hash());
  fs::create_directories(a.checkpoint().parent_path());
  model::save_checkpoint(result.model, a.checkpoint().string());
  return {{"stage", "train"},
          {"checkpoint", a.checkpoint().string()},
          {"parameter_count", result.model.params.size()},
          {"epochs", c.train.epochs},
          {"initial_loss", result.model.provenance.initial_loss},
          {"final_loss", result.model.provenance.final_loss},
          {"params_hash", hex(result.model.params_hash())}};
}

json run_generate(const PipelineConfig& c) {
  const ArtifactLayout a = layout(c);
  const auto checkpoint = load_model_artifact(a);
  const corpus::Corpus corp = load_corpus_artifact(a);
  const auto sources = load_sources(a);
  std::vector<const SourceStream*> usable;
  for (const auto& s : sources)
    if (!s.tokens.empty()) usable.push_back(&s);
  if (usable.empty()) throw Error(ErrorCode::EmptyPrompt, "no source has tokens to prompt from");

  const auto prompt_len = static_cast<std::size_t>(c.generate.prompt_len);
  const std::uint64_t gen_seed = stage_seed(c, "generate");
  json targets = json::array();
  for (int t = 0; t < c.generate.targets; ++t) {
    const SourceStream& src = *usable[static_cast<std::size_t>(t) % usable.size()];
    const std::size_t round = static_cast<std::size_t>(t) / usable.size();
    // Prompts come from material after the source's training windows when
    // there is enough of it, otherwise from the start of the source.
    std::size_t used = 0;
    for (const auto& w : corp.works)
      if (w.source_file == src.source_file) used += static_cast<std::size_t>(corp.window_len);
    const std::size_t len = std::min(prompt_len, src.tokens.size());
    std::size_t offset = used + round * prompt_len;
    if (offset + len > src.tokens.size()) offset = std::min(round * prompt_len, src.tokens.size() - len);
    const events::EventSequence prompt(src.tokens.begin() + static_cast<std::ptrdiff_t>(offset),
                                       src.tokens.begin() + static_cast<std::ptrdiff_t>(offset + len));
    model::Sampling sampling{c.generate.temperature, c.generate.top_k, derive_seed(gen_seed, static_cast<std::uint64_t>(t))};
    const auto tokens = model::generate(checkpoint, prompt, c.generate.length, sampling);

    char id[32];
    std::snprintf(id, sizeof id, "gen-%03d", t);
    events::EventSequence full = prompt;
    full.insert(full.end(), tokens.begin(), tokens.end());
    write_bytes(a.root / "generated" / (std::string(id) + ".mid"), midi::write_midi(events::detokenize(full)));
    targets.push_back({{"target_id", id},
                       {"source_file", src.source_file},
                       {"prompt_offset", offset},
                       {"prompt", prompt},
                       {"tokens", tokens}});
  }
  write_text(a.targets(), targets.dump(2) + "\n");
  return {{"stage", "generate"}, {"targets", c.generate.targets}, {"file", a.targets().string()}};
}

json run_attribute(const PipelineConfig& c) {
  const ArtifactLayout a = layout(c);
  const auto checkpoint = load_model_artifact(a);
  const corpus::Corpus corp = load_corpus_artifact(a);
  const auto targets = load_targets(a);
  if (!(checkpoint.config == model_config(c)))
    throw Error(ErrorCode::InvalidConfig, "checkpoint " + a.checkpoint().string() + " does not match the model config");

  const auto ensemble = attribution::train_ensemble(corp, train_spec(c), c.attribution.members, c.attribution.fraction,
                                                    stage_seed(c, "ensemble"), c.jobs);
  for (std::size_t k = 0; k < ensemble.size(); ++k) model::save_checkpoint(ensemble[k], a.member(static_cast<int>(k)).string());

  attribution::IndexOptions opts;
  opts.projection_dim = c.attribution.projection_dim;
  opts.lambda = c.attribution.lambda;
  opts.lambda_scale = c.attribution.lambda_scale;
  opts.output_fn = c.attribution.output_fn;
  opts.seed = stage_seed(c, "projection");
  opts.jobs = c.jobs;
  const auto index = attribution::fit_attribution_index(corp, ensemble, opts);

  std::vector<attribution::AttributionTarget> event_targets;
  std::vector<std::string> event_ids, segment_ids;
  for (const auto& t : targets) {
    segment_ids.push_back(t.target_id);
    for (auto& e : t.events()) {
      event_ids.push_back(e.target_id);
      event_targets.push_back(std::move(e));
    }
  }
  const Eigen::MatrixXd event_scores = attribution::score_event_batch(index, event_targets, c.jobs);
  Eigen::MatrixXd segment_scores = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(targets.size()), event_scores.cols());
  Eigen::Index row = 0;
  for (std::size_t t = 0; t < targets.size(); ++t)
    for (std::size_t i = 0; i < targets[t].tokens.size(); ++i) segment_scores.row(static_cast<Eigen::Index>(t)) += event_scores.row(row++);

  json estimator = {{"method", "projected-gradient ensemble"},
                    {"members", c.attribution.members},
                    {"fraction", c.attribution.fraction},
                    {"projection_dim", c.attribution.projection_dim},
                    {"lambda_scale", c.attribution.lambda_scale},
                    {"output_fn", to_string(c.attribution.output_fn)},
                    {"checkpoint_hash", hex(checkpoint.params_hash())}};
  if (c.attribution.lambda) estimator["lambda"] = *c.attribution.lambda;
  std::vector<std::string> work_ids;
  for (const auto& w : corp.works) work_ids.push_back(w.work_id);

  json summary = {{"stage", "attribute"}, {"members", ensemble.size()}, {"works", corp.size()}};
  for (Level level : {Level::event, Level::segment}) {
    attribution::AttributionMatrix m;
    m.level = level;
    m.target_ids = level == Level::event ? event_ids : segment_ids;
    m.work_ids = work_ids;
    m.scores = level == Level::event ? event_scores : segment_scores;
    m.estimator = estimator;
    fs::create_directories(a.scores(level).parent_path());
    attribution::save_matrix(m, a.scores(level).string());
    write_text(a.scores_csv(level), attribution::matrix_csv(m));
    summary[to_string(level) + "_targets"] = m.target_ids.size();
  }
  return summary;
}

json run_evaluate_lds(const PipelineConfig& c) {
  const ArtifactLayout a = layout(c);
  const corpus::Corpus corp = load_corpus_artifact(a);
  auto segments = load_targets(a);
  const auto primary = load_scores(a, c.evaluation.level);
  if (c.evaluation.targets > 0 && static_cast<std::size_t>(c.evaluation.targets) < segments.size())
    segments.resize(static_cast<std::size_t>(c.evaluation.targets));

  attribution::RetrainingOracle oracle(corp, train_spec(c));
  const auto plan = eval::make_subset_plan(corp.size(), c.evaluation.subsets, c.evaluation.fraction, stage_seed(c, "subsets"));
  const std::uint64_t random_seed = stage_seed(c, "random_baseline");

  json levels = json::object();
  json summary = {{"stage", "evaluate-lds"},
                  {"fraction", c.evaluation.fraction},
                  {"subsets", c.evaluation.subsets},
                  {"segment_targets", segments.size()},
                  {"level", to_string(c.evaluation.level)}};
  for (Level level : {Level::event, Level::segment}) {
    if (level != c.evaluation.level && !fs::exists(a.scores(level))) continue;
    const auto matrix = level == c.evaluation.level ? primary : load_scores(a, level);
    std::vector<attribution::AttributionTarget> targets;
    for (const auto& s : segments) {
      if (level == Level::segment) {
        targets.push_back(s);
      } else {
        for (auto& e : s.events()) targets.push_back(std::move(e));
      }
    }
    std::vector<std::string> ids;
    for (const auto& t : targets) ids.push_back(t.target_id);
    const Eigen::MatrixXd estimated = select_rows(matrix, ids);
    const auto truth = eval::compute_ground_truth(oracle, plan, targets, c.jobs);
    const auto est = eval::lds_from_ground_truth(estimated, plan, truth);

    Eigen::MatrixXd random(estimated.rows(), estimated.cols());
    for (Eigen::Index t = 0; t < random.rows(); ++t)
      random.row(t) = attribution::random_baseline_scores(corp.size(), derive_seed(random_seed, static_cast<std::uint64_t>(t))).transpose();
    const auto rnd = eval::lds_from_ground_truth(random, plan, truth);

    json ground = json::array();
    for (Eigen::Index s = 0; s < truth.influence.rows(); ++s) {
      json row = json::array();
      for (Eigen::Index t = 0; t < truth.influence.cols(); ++t) row.push_back(truth.influence(s, t));
      ground.push_back(row);
    }
    levels[to_string(level)] = {{"targets", ids}, {"estimator", eval::to_json(est)}, {"random", eval::to_json(rnd)},
                                {"ground_truth", ground}};
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    summary[to_string(level)] = {{"targets", ids.size()}, {"mean_rho", opt(est.mean)}, {"random_mean_rho", opt(rnd.mean)}};
  }
  json subsets = json::array();
  for (const auto& mask : plan.subsets) {
    json removed = json::array();
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) removed.push_back(corp.works[i].work_id);
    subsets.push_back(removed);
  }
  const json report = {{"fraction", c.evaluation.fraction}, {"subset_seed", hex(plan.seed)}, {"subsets", subsets},
                       {"levels", levels}, {"estimator", primary.estimator}};
  write_text(a.lds(), report.dump(2) + "\n");
  summary["report"] = a.lds().string();
  summary["retrained_models"] = oracle.cached_models();
  return summary;
}

json run_evaluate_style(const PipelineConfig& c) {
  const ArtifactLayout a = layout(c);
  const corpus::Corpus corp = load_corpus_artifact(a);
  const auto targets = load_targets(a);
  const auto matrix = load_scores(a, Level::segment);
  std::vector<std::string> ids;
  std::vector<eval::StyleFeatures> target_features, work_features;
  for (const auto& t : targets) {
    ids.push_back(t.target_id);
    // Features of the rendered piece, prompt included, as written to gen-NNN.mid.
    events::EventSequence full = t.prompt;
    full.insert(full.end(), t.tokens.begin(), t.tokens.end());
    target_features.push_back(eval::style_features(full));
  }
  for (const auto& w : corp.windows) work_features.push_back(eval::style_features(w));
  eval::BucketSpec spec;
  spec.buckets = std::min(c.evaluation.buckets, static_cast<int>(corp.size()));
  const auto buckets = eval::style_similarity_by_rank(select_rows(matrix, ids), work_features, target_features, spec);
  write_text(a.style_csv(), eval::bucket_csv(buckets));
  write_text(a.style_json(), eval::to_json(buckets).dump(2) + "\n");

  json features = json::object();
  for (auto f : eval::kStyleFeatures) {
    const auto& top = buckets.front().features[static_cast<std::size_t>(f)].pooled_pearson;
    const auto& bottom = buckets.back().features[static_cast<std::size_t>(f)].pooled_pearson;
    features[eval::to_string(f)] = {{"top_bucket", top ? json(*top) : json(nullptr)},
                                    {"bottom_bucket", bottom ? json(*bottom) : json(nullptr)}};
  }
  return {{"stage", "evaluate-style"}, {"buckets", spec.buckets}, {"targets", ids.size()}, {"features", features},
          {"table", a.style_csv().string()}};
}

json run_settle(const PipelineConfig& c) {
  const ArtifactLayout a = layout(c);
  if (c.paths.usage_log.empty()) throw Error(ErrorCode::InvalidConfig, "paths.usage_log is required for settle");
  if (!fs::exists(c.paths.usage_log)) throw Error(ErrorCode::Io, "missing usage log " + c.paths.usage_log.string());
  const corpus::Corpus corp = load_corpus_artifact(a);
  const auto matrix = load_scores(a, Level::segment);
  if (matrix.scores.cols() != static_cast<Eigen::Index>(corp.size()))
    throw Error(ErrorCode::DimensionMismatch, "score file does not match the corpus");

  royalty::WeightTable weights;
  for (std::size_t t = 0; t < matrix.target_ids.size(); ++t) {
    const Eigen::VectorXd row = matrix.scores.row(static_cast<Eigen::Index>(t)).transpose();
    weights[matrix.target_ids[t]] =
        royalty::track_weights(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), corp.works,
                               c.royalty.weights);
  }

  const auto usage = royalty::load_usage(c.paths.usage_log.string());
  std::map<std::string, std::vector<royalty::UsageEvent>> by_period;
  for (const auto& e : usage) by_period[royalty::period_of(e.timestamp)].push_back(e);
  const auto pools = royalty::build_pools(c.royalty.revenue, c.royalty.pools);
  std::map<std::string, std::vector<royalty::RevenuePool>> pools_by_period;
  for (const auto& p : pools) pools_by_period[p.period].push_back(p);

  json periods = json::array();
  for (const auto& [period, period_pools] : pools_by_period) {
    const auto& events = by_period[period];
    const auto counts = royalty::count_eligible_streams(events, c.royalty.min_seconds);
    const auto st = royalty::settle(period_pools, counts, weights, c.royalty.platform_cut);
    const fs::path csv = a.statement_dir() / (period + ".csv");
    write_text(csv, royalty::statement_csv(st));
    write_text(a.statement_dir() / (period + ".audit.json"), royalty::audit_json(st).dump(2) + "\n");
    periods.push_back({{"period", period},
                       {"statement", csv.string()},
                       {"pool_total_cents", st.pool_total},
                       {"rightsholder_cents", st.pool_total - st.platform_amount - st.unattributed_amount},
                       {"platform_cents", st.platform_amount},
                       {"unattributed_cents", st.unattributed_amount},
                       {"eligible_streams", std::accumulate(counts.begin(), counts.end(), std::int64_t{0},
                                                            [](std::int64_t s, const auto& kv) { return s + kv.second; })},
                       {"conserved", st.conserved()}});
  }
  std::size_t unpriced = 0;
  for (const auto& [period, events] : by_period)
    if (!pools_by_period.count(period)) unpriced += events.size();
  return {{"stage", "settle"}, {"usage_events", usage.size()}, {"usage_without_revenue", unpriced}, {"periods", periods}};
}

json run_pipeline(const PipelineConfig& c) {
  json stages = json::object();
  stages["ingest"] = run_ingest(c);
  stages["train"] = run_train(c);
  stages["generate"] = run_generate(c);
  stages["attribute"] = run_attribute(c);
  stages["evaluate-lds"] = run_evaluate_lds(c);
  stages["evaluate-style"] = run_evaluate_style(c);
  stages["settle"] = run_settle(c);
  return {{"stage", "pipeline"}, {"stages", stages}};
}

// ---------------------------------------------------------------------------
// Command line

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attribution-based royalties for generated symbolic music", "arec"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs, subsets, eval_targets;
  std::optional<double> fraction;
  std::optional<std::string> artifact_dir, level;
  app.add_option("-c,--config", config_path, "pipeline config (JSON)")->required();
  app.add_option("--seed", seed, "override the global seed");
  app.add_option("-j,--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--artifact-dir", artifact_dir, "override paths.artifact_dir");
  app.add_option("--fraction", fraction, "evaluation subset fraction");
  app.add_option("--subsets", subsets, "evaluation subset count");
  app.add_option("--eval-targets", eval_targets, "number of generated targets to evaluate (0 = all)");
  app.add_option("--level", level, "evaluation level: event or segment");

  using Stage = json (*)(const PipelineConfig&);
  const std::vector<std::pair<std::string, Stage>> stages = {
      {"ingest", run_ingest},
      {"train", run_train},
      {"generate", run_generate},
      {"attribute", run_attribute},
      {"evaluate-lds", run_evaluate_lds},
      {"evaluate-style", run_evaluate_style},
      {"settle", run_settle},
      {"pipeline", run_pipeline},
  };
  for (const auto& [name, fn] : stages) app.add_subcommand(name, "run the " + name + " stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    PipelineConfig c = load_config(config_path);
    if (seed) c.seed = *seed;
    if (jobs) c.jobs = *jobs;
    if (artifact_dir) c.paths.artifact_dir = fs::absolute(*artifact_dir).lexically_normal();
    if (fraction) c.evaluation.fraction = *fraction;
    if (subsets) c.evaluation.subsets = *subsets;
    if (eval_targets) c.evaluation.targets = *eval_targets;
    if (level) c.evaluation.level = attribution::level_from_string(*level);
    c.validate();

    const auto chosen = app.get_subcommands().front()->get_name();
    for (const auto& [name, fn] : stages)
      if (name == chosen) out << fn(c).dump(2) << "\n";
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::InvalidConfig ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace arec::cli
