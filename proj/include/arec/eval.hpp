// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "arec/attribution.hpp"
#include "arec/events.hpp"

namespace arec::eval {

/// Average ranks (1-based); ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> xs);

/// Pearson correlation; nullopt when either side has zero variance.
/// Throws LengthMismatch when sizes differ or fewer than 2 values.
std::optional<double> pearson_correlation(std::span<const double> xs, std::span<const double> ys);

/// Pearson correlation of average ranks; nullopt when either list is constant.
/// Throws LengthMismatch when sizes differ or fewer than 3 values.
std::optional<double> spearman_rank_correlation(std::span<const double> xs, std::span<const double> ys);

/// Removal subsets S' for retraining, each exactly round(fraction * n) works.
struct SubsetPlan {
  std::size_t n = 0;
  double fraction = 0.5;
  std::uint64_t seed = 0;
  std::vector<std::vector<bool>> subsets;
};

SubsetPlan make_subset_plan(std::size_t n, int count, double fraction, std::uint64_t seed);

/// influence(s, t) = I(S'_s, target_t) from retraining.
struct GroundTruth {
  Eigen::MatrixXd influence;
};

/// Trains one model per subset (cached in the oracle, shared by all targets).
GroundTruth compute_ground_truth(attribution::RetrainingOracle& oracle, const SubsetPlan& plan,
                                 const std::vector<attribution::AttributionTarget>& targets, int jobs = 1);

struct LdsResult {
  std::vector<std::optional<double>> per_target;
  std::optional<double> mean;  // over defined targets
  std::size_t defined = 0;
};

/// Per target: Spearman over subsets between sum_{m in S'} score(m) and
/// -I(S'). `estimated` is targets x works.
LdsResult lds_from_ground_truth(const Eigen::MatrixXd& estimated, const SubsetPlan& plan, const GroundTruth& truth);

/// Full evaluation: ground truth by retraining, then rank correlation.
LdsResult lds_evaluate(const attribution::AttributionMatrix& estimated, attribution::RetrainingOracle& oracle,
                       const SubsetPlan& plan, const std::vector<attribution::AttributionTarget>& targets,
                       int jobs = 1);

nlohmann::json to_json(const LdsResult& r);

enum class StyleFeature { loudness = 0, key = 1, duration = 2 };
inline constexpr std::array<StyleFeature, 3> kStyleFeatures = {StyleFeature::loudness, StyleFeature::key,
                                                                StyleFeature::duration};
std::string to_string(StyleFeature f);

struct StyleFeatures {
  std::optional<double> loudness;  // mean NOTE_ON velocity
  std::optional<double> key;       // mean NOTE_ON pitch
  double duration = 0.0;           // seconds

  std::optional<double> get(StyleFeature f) const;
};

/// From tokens: velocities are the reconstructed bin midpoints in effect at
/// each NOTE_ON; duration is the sum of TIME_SHIFT values.
StyleFeatures style_features(const events::EventSequence& events);
/// From notes: raw velocities and pitches; duration is the last offset.
StyleFeatures style_features(const midi::NoteSequence& notes);

struct BucketSpec {
  int buckets = 10;
};

struct Quartiles {
  double min, q1, median, q3, max;
};

struct FeatureBucketStats {
  std::optional<double> pooled_pearson;        // over all (target, work) pairs in the bucket
  std::size_t pairs = 0;
  std::vector<std::optional<double>> per_rank;  // Pearson across targets at each rank
  std::optional<Quartiles> per_rank_quartiles;  // over defined per-rank values
};

struct BucketStats {
  int bucket = 0;
  std::size_t rank_begin = 0;  // inclusive, 0 = most helpful
  std::size_t rank_end = 0;    // exclusive
  std::array<FeatureBucketStats, 3> features;
};

/// For each target, works ordered by descending score (ties by index) and
/// split into equal rank buckets; (target feature, work feature) pairs are
/// pooled per bucket. `scores` is targets x works.
std::vector<BucketStats> style_similarity_by_rank(const Eigen::MatrixXd& scores,
                                                  const std::vector<StyleFeatures>& work_features,
                                                  const std::vector<StyleFeatures>& target_features,
                                                  const BucketSpec& spec = {});

/// CSV: bucket,rank_begin,rank_end,feature,pairs,pearson,min,q1,median,q3,max
std::string bucket_csv(const std::vector<BucketStats>& buckets);
nlohmann::json to_json(const std::vector<BucketStats>& buckets);

}  // namespace arec::eval
