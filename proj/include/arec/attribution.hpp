// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "arec/corpus.hpp"
#include "arec/model.hpp"

namespace arec::attribution {

using events::EventSequence;
using model::ModelCheckpoint;
using model::OutputFn;

enum class Level { event, segment };

/// A generated piece (segment) or one of its events. For kind == event,
/// tokens has exactly one entry and prompt is its full running context.
struct AttributionTarget {
  Level kind = Level::segment;
  EventSequence prompt;
  EventSequence tokens;
  std::string target_id;

  /// Throws DimensionMismatch when kind == event and tokens.size() != 1.
  void validate() const;
  /// One event target per token, each with its running context.
  std::vector<AttributionTarget> events() const;
};

struct TrainSpec {
  model::ModelConfig config;
  model::TrainHyper hyper;
};

/// Ground-truth scores by retraining. Holds the full-corpus model and a cache
/// of retrained models keyed by removal mask; every retraining uses the same
/// config seed. Thread-safe.
class RetrainingOracle {
 public:
  RetrainingOracle(corpus::Corpus corpus, TrainSpec spec);

  const corpus::Corpus& corpus() const noexcept { return corpus_; }
  const TrainSpec& spec() const noexcept { return spec_; }

  /// h_S, trained on the whole corpus.
  const ModelCheckpoint& full_model();
  /// h_{S minus removed}. Throws EmptyCorpusAfterRemoval.
  const ModelCheckpoint& retrained(const std::vector<bool>& removed);

  /// f(target, h_{S minus removed}) - f(target, h_S), f = log-likelihood.
  double exact_influence(const std::vector<bool>& removed, const AttributionTarget& target);

  std::size_t cached_models() const;

 private:
  const ModelCheckpoint& model_for(const std::vector<bool>& removed);

  corpus::Corpus corpus_;
  TrainSpec spec_;
  mutable std::mutex mu_;
  std::map<std::vector<bool>, std::unique_ptr<ModelCheckpoint>> cache_;
};

/// Free-function form; trains both models from scratch.
double exact_influence(const corpus::Corpus& corpus, const std::vector<bool>& removed,
                       const AttributionTarget& target, const TrainSpec& spec);

/// Ensemble member k trains on a random subset of round(fraction * n) works.
/// The subset is drawn from derive_seed(seed, k) and the model is initialized
/// from derive_seed(spec.config.seed, k).
std::vector<ModelCheckpoint> train_ensemble(const corpus::Corpus& corpus, const TrainSpec& spec, int members,
                                            double fraction, std::uint64_t seed, int jobs = 1);

/// Dense random sign projection P (D x d, entries +-1/sqrt(d)), generated
/// block-wise from a counter-based stream so it never needs to be stored.
class Projector {
 public:
  Projector(std::size_t input_dim, int output_dim, std::uint64_t seed);

  std::size_t input_dim() const noexcept { return input_dim_; }
  int output_dim() const noexcept { return output_dim_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Rows of G (m x D) mapped to m x d: G * P.
  Eigen::MatrixXd project(const Eigen::MatrixXd& gradients) const;
  Eigen::VectorXd project(const std::vector<double>& gradient) const;

  /// Entry P(row, col), for testing.
  double entry(std::size_t row, int col) const;

 private:
  void fill_rows(std::size_t begin, std::size_t end, Eigen::MatrixXd& block) const;

  std::size_t input_dim_;
  int output_dim_;
  std::uint64_t seed_;
};

struct IndexMember {
  ModelCheckpoint model;
  std::uint64_t params_hash = 0;
  std::vector<bool> subset_mask;
  std::uint64_t projection_seed = 0;
  Eigen::MatrixXd features;        // n x d, projected training gradients
  Eigen::VectorXd weights;         // n, mean (1 - p_correct) per work
  Eigen::MatrixXd kernel_inverse;  // d x d, (features^T features + lambda I)^-1
  double lambda = 0.0;
};

struct AttributionIndex {
  std::vector<IndexMember> members;
  int projection_dim = 0;
  OutputFn output_fn = OutputFn::logit_margin;
  std::size_t work_count() const { return members.empty() ? 0 : static_cast<std::size_t>(members[0].features.rows()); }
};

struct IndexOptions {
  int projection_dim = 512;
  // Ridge; when unset, lambda_scale * trace(features^T features) / d per member.
  std::optional<double> lambda;
  double lambda_scale = 1.0;
  OutputFn output_fn = OutputFn::logit_margin;
  std::uint64_t seed = 0;  // projection seeds derive from this per member
  int jobs = 1;
};

/// Throws SingularKernel if a kernel is not positive definite.
AttributionIndex fit_attribution_index(const corpus::Corpus& corpus, const std::vector<ModelCheckpoint>& ensemble,
                                       const IndexOptions& options);

/// Projected target feature of one member (exposed for linearity tests).
Eigen::VectorXd target_feature(const AttributionIndex& index, std::size_t member, const AttributionTarget& target);

/// Scores from per-member target features: mean over members of
/// (features K^-1 phi_k) * weights. Throws DimensionMismatch.
Eigen::VectorXd score_from_features(const AttributionIndex& index, const std::vector<Eigen::VectorXd>& phi);

/// Event-level scores, one per training work; positive means helpful.
Eigen::VectorXd score_events(const AttributionIndex& index, const AttributionTarget& target);

/// Segment-level scores: sum over the segment's events of score_events.
Eigen::VectorXd score_segment(const AttributionIndex& index, const AttributionTarget& target);

/// Event scores for many event targets at once (rows = targets). Same values
/// as calling score_events per target; gradients are batched per member.
Eigen::MatrixXd score_event_batch(const AttributionIndex& index, const std::vector<AttributionTarget>& targets,
                                  int jobs = 1);

/// i.i.d. uniform(0,1) scores.
Eigen::VectorXd random_baseline_scores(std::size_t n, std::uint64_t seed);

struct AttributionMatrix {
  Level level = Level::segment;
  std::string sign_convention = "positive-means-helpful";
  std::vector<std::string> target_ids;
  std::vector<std::string> work_ids;
  Eigen::MatrixXd scores;  // targets x works
  nlohmann::json estimator;  // config echo

  /// Throws DimensionMismatch / Format when shapes or values are invalid.
  void validate() const;
};

// ASCR1 score file:
//   "ASCR1", uint64 LE header length, JSON header {level, sign_convention,
//   n, target_count, target_ids, work_ids, estimator}, then
//   target_count * n little-endian float64 scores, row-major.
std::vector<std::uint8_t> encode_matrix(const AttributionMatrix& m);
AttributionMatrix decode_matrix(std::span<const std::uint8_t> bytes);
void save_matrix(const AttributionMatrix& m, const std::string& path);
AttributionMatrix load_matrix(const std::string& path);
/// CSV with header target_id,work_id,score (scores printed with 17 digits).
std::string matrix_csv(const AttributionMatrix& m);

std::string to_string(Level level);
Level level_from_string(const std::string& s);

}  // namespace arec::attribution
