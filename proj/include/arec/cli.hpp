// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "arec/attribution.hpp"
#include "arec/model.hpp"
#include "arec/royalty.hpp"

namespace arec::cli {

/// Everything a run needs. Relative paths resolve against the config file's
/// directory. See docs/config.md for the file format.
struct PipelineConfig {
  std::uint64_t seed = 0;
  int jobs = 1;

  struct Paths {
    std::filesystem::path midi_dir;
    std::filesystem::path artifact_dir;
    std::filesystem::path usage_log;
  } paths;

  struct Ingest {
    int window_len = 32;
    int max_windows_per_file = 0;  // 0 = all
    bool sustain_pedal = false;
    std::map<std::string, std::string> rightsholders;  // file name -> rightsholder
    std::string default_rightsholder = "unassigned";
  } ingest;

  model::ModelConfig model;
  model::TrainHyper train;

  struct Generate {
    int targets = 4;
    int prompt_len = 16;
    int length = 16;
    double temperature = 1.0;
    int top_k = 0;
  } generate;

  struct Attribution {
    int members = 10;
    double fraction = 0.5;
    int projection_dim = 128;
    std::optional<double> lambda;
    double lambda_scale = 1.0;
    model::OutputFn output_fn = model::OutputFn::logit_margin;
  } attribution;

  struct Evaluation {
    int subsets = 40;
    double fraction = 0.5;
    int targets = 0;  // 0 = all generated targets
    attribution::Level level = attribution::Level::event;
    int buckets = 10;
  } evaluation;

  struct Royalty {
    royalty::PoolConfig pools;
    std::vector<royalty::RevenueRecord> revenue;
    double platform_cut = 0.3;
    double min_seconds = 30.0;
    royalty::WeightPolicy weights;
  } royalty;

  /// Throws InvalidConfig.
  void validate() const;
};

/// Parses and validates a config; throws Io when the file is missing and
/// InvalidConfig on bad values.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json to_json(const PipelineConfig& c);

/// Artifact locations under paths.artifact_dir.
struct ArtifactLayout {
  explicit ArtifactLayout(std::filesystem::path root);

  std::filesystem::path root;
  std::filesystem::path corpus_stem() const;      // corpus/corpus(.arec|.json)
  std::filesystem::path checkpoint() const;       // checkpoints/model.ckpt
  std::filesystem::path member(int k) const;      // checkpoints/member_NN.ckpt
  std::filesystem::path targets() const;          // generated/targets.json
  std::filesystem::path scores(attribution::Level level) const;  // scores/<level>.ascr
  std::filesystem::path scores_csv(attribution::Level level) const;
  std::filesystem::path lds() const;              // eval/lds.json
  std::filesystem::path style_csv() const;        // eval/style.csv
  std::filesystem::path style_json() const;       // eval/style.json
  std::filesystem::path statement_dir() const;    // statements/
};

/// Stage entry points; each returns its JSON summary.
nlohmann::json run_ingest(const PipelineConfig& c);
nlohmann::json run_train(const PipelineConfig& c);
nlohmann::json run_generate(const PipelineConfig& c);
nlohmann::json run_attribute(const PipelineConfig& c);
nlohmann::json run_evaluate_lds(const PipelineConfig& c);
nlohmann::json run_evaluate_style(const PipelineConfig& c);
nlohmann::json run_settle(const PipelineConfig& c);
nlohmann::json run_pipeline(const PipelineConfig& c);

/// Command-line entry: 0 on success, 1 on runtime error, 2 on usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace arec::cli
