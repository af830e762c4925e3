// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "arec/error.hpp"
#include "arec/eval.hpp"

namespace eval = arec::eval;

namespace {

// Brute-force ranks: count strictly smaller values plus half the ties.
std::vector<double> brute_ranks(const std::vector<double>& xs) {
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double less = 0, equal = 0;
    for (double y : xs) {
      less += y < xs[i];
      equal += y == xs[i];
    }
    r[i] = less + (equal + 1) / 2.0;
  }
  return r;
}

double brute_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

}  // namespace

TEST(Spearman, Examples) {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  EXPECT_NEAR(*eval::spearman_rank_correlation(a, a), 1.0, 1e-15);
  const std::vector<double> rev = {5, 4, 3, 2, 1};
  EXPECT_NEAR(*eval::spearman_rank_correlation(a, rev), -1.0, 1e-15);
  const std::vector<double> b = {1, 3, 2, 5, 4};
  EXPECT_NEAR(*eval::spearman_rank_correlation(a, b), 0.8, 1e-12);
  const std::vector<double> c = {7, 7, 7, 7, 7};
  EXPECT_FALSE(eval::spearman_rank_correlation(a, c).has_value());
  EXPECT_THROW(eval::spearman_rank_correlation(std::vector<double>{1, 2}, std::vector<double>{1, 2}), arec::Error);
  EXPECT_THROW(eval::spearman_rank_correlation(a, std::vector<double>{1, 2, 3}), arec::Error);
}

TEST(Pearson, Examples) {
  std::vector<double> x = {0.5, 1.5, -2, 4, 9}, y(5), z(5), k(5, 3.0);
  for (int i = 0; i < 5; ++i) {
    y[i] = 2 * x[i] + 1;
    z[i] = -x[i];
  }
  EXPECT_NEAR(*eval::pearson_correlation(x, y), 1.0, 1e-12);
  EXPECT_NEAR(*eval::pearson_correlation(x, z), -1.0, 1e-12);
  EXPECT_FALSE(eval::pearson_correlation(x, k).has_value());
  EXPECT_THROW(eval::pearson_correlation(std::vector<double>{1}, std::vector<double>{1}), arec::Error);
}

TEST(Spearman, MatchesBruteForceWithTies) {
  std::mt19937_64 rng(17);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 3 + rng() % 18;
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = static_cast<double>(rng() % 6);
    for (auto& v : b) v = static_cast<double>(rng() % 100) / 7.0;
    const auto ra = brute_ranks(a), rb = brute_ranks(b);
    EXPECT_EQ(eval::average_ranks(a), ra);
    const auto got = eval::spearman_rank_correlation(a, b);
    const bool constant = std::all_of(a.begin(), a.end(), [&](double v) { return v == a[0]; }) ||
                          std::all_of(b.begin(), b.end(), [&](double v) { return v == b[0]; });
    ASSERT_EQ(got.has_value(), !constant);
    if (got) {
      EXPECT_NEAR(*got, brute_pearson(ra, rb), 1e-12);
      ++checked;
    }
  }
  EXPECT_GT(checked, 250);
}

TEST(Spearman, InvariantUnderMonotoneTransforms) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(12), b(12), ta(12);
    for (auto& v : a) v = n(rng);
    for (auto& v : b) v = n(rng);
    for (int i = 0; i < 12; ++i) ta[i] = std::exp(a[i]) * 3 - 1;
    EXPECT_NEAR(*eval::spearman_rank_correlation(a, b), *eval::spearman_rank_correlation(ta, b), 1e-12);
    EXPECT_NEAR(*eval::spearman_rank_correlation(a, b), *eval::spearman_rank_correlation(b, a), 1e-15);
  }
}

TEST(SubsetPlan, SizesAndDeterminism) {
  const auto plan = eval::make_subset_plan(64, 40, 0.5, 9);
  ASSERT_EQ(plan.subsets.size(), 40u);
  for (const auto& s : plan.subsets) {
    ASSERT_EQ(s.size(), 64u);
    EXPECT_EQ(std::count(s.begin(), s.end(), true), 32);
  }
  EXPECT_NE(plan.subsets[0], plan.subsets[1]);
  EXPECT_EQ(eval::make_subset_plan(64, 40, 0.5, 9).subsets, plan.subsets);
  const auto quarter = eval::make_subset_plan(10, 1, 0.25, 1).subsets[0];
  EXPECT_EQ(std::count(quarter.begin(), quarter.end(), true), 3);  // round(2.5) away from zero
  EXPECT_THROW(eval::make_subset_plan(10, 3, 1.0, 1), arec::Error);
  EXPECT_THROW(eval::make_subset_plan(10, 3, 0.0, 1), arec::Error);
}

TEST(Lds, AdditiveGroundTruthGivesPerfectCorrelation) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  const std::size_t works = 20, targets = 3;
  const auto plan = eval::make_subset_plan(works, 30, 0.5, 4);
  Eigen::MatrixXd singleton(targets, works);
  for (std::size_t t = 0; t < targets; ++t)
    for (std::size_t w = 0; w < works; ++w) singleton(t, w) = n(rng);
  eval::GroundTruth truth;
  truth.influence = Eigen::MatrixXd::Zero(30, targets);
  for (std::size_t s = 0; s < 30; ++s)
    for (std::size_t t = 0; t < targets; ++t)
      for (std::size_t w = 0; w < works; ++w)
        if (plan.subsets[s][w]) truth.influence(s, t) += singleton(t, w);
  const auto r = eval::lds_from_ground_truth(-singleton, plan, truth);
  EXPECT_EQ(r.defined, targets);
  for (const auto& rho : r.per_target) EXPECT_NEAR(*rho, 1.0, 1e-12);
  EXPECT_NEAR(*r.mean, 1.0, 1e-12);

  const auto flipped = eval::lds_from_ground_truth(singleton, plan, truth);
  EXPECT_NEAR(*flipped.mean, -1.0, 1e-12);

  const auto json = eval::to_json(r);
  EXPECT_EQ(json.at("defined_targets"), targets);
  EXPECT_EQ(json.at("per_target_rho").size(), targets);
}

TEST(StyleFeatures, Examples) {
  arec::midi::NoteSequence notes;
  notes.notes = {{60, 40, 0.0, 0.5}, {64, 80, 0.25, 0.75}, {67, 80, 0.5, 0.6}};
  const auto f = eval::style_features(notes);
  EXPECT_NEAR(*f.key, 191.0 / 3, 1e-12);
  EXPECT_DOUBLE_EQ(*f.loudness, 200.0 / 3);
  EXPECT_DOUBLE_EQ(f.duration, 0.75);

  arec::midi::NoteSequence two;
  two.notes = {{60, 40, 0.0, 0.5}, {62, 80, 0.0, 0.5}};
  EXPECT_DOUBLE_EQ(*eval::style_features(two).loudness, 60.0);

  // Tokens: TIME_SHIFT 500 ms and 250 ms.
  const auto shifts = eval::style_features(arec::events::EventSequence{305, 280});
  EXPECT_DOUBLE_EQ(shifts.duration, 0.75);
  EXPECT_FALSE(shifts.loudness.has_value());
  EXPECT_FALSE(shifts.key.has_value());

  // VELOCITY bin 10 -> midpoint 42, bin 20 -> 82.
  const auto tokens = eval::style_features(arec::events::EventSequence{366, 60, 376, 64, 67});
  EXPECT_NEAR(*tokens.loudness, (42.0 + 82 + 82) / 3, 1e-12);
  EXPECT_NEAR(*tokens.key, 191.0 / 3, 1e-12);
}

TEST(StyleFeatures, TokenizerVelocityModeDoesNotMatter) {
  arec::midi::NoteSequence notes;
  notes.notes = {{60, 40, 0.0, 0.5}, {62, 41, 0.5, 1.0}, {64, 90, 1.0, 1.25}};
  arec::events::TokenizeOptions every;
  every.velocity_on_change = false;
  const auto a = eval::style_features(arec::events::tokenize(notes));
  const auto b = eval::style_features(arec::events::tokenize(notes, {}, every));
  EXPECT_EQ(*a.loudness, *b.loudness);
  EXPECT_EQ(*a.key, *b.key);
  EXPECT_EQ(a.duration, b.duration);
}

TEST(StyleBuckets, IdenticalFeaturesAreUndefined) {
  const std::size_t works = 20, targets = 4;
  Eigen::MatrixXd scores = Eigen::MatrixXd::Random(targets, works);
  eval::StyleFeatures same;
  same.loudness = 64;
  same.key = 60;
  same.duration = 2;
  std::vector<eval::StyleFeatures> wf(works, same), tf(targets, same);
  for (std::size_t t = 0; t < targets; ++t) tf[t].key = 50.0 + t;
  const auto buckets = eval::style_similarity_by_rank(scores, wf, tf, {5});
  ASSERT_EQ(buckets.size(), 5u);
  for (const auto& b : buckets) {
    EXPECT_EQ(b.rank_end - b.rank_begin, 4u);
    for (const auto& f : b.features) {
      EXPECT_FALSE(f.pooled_pearson.has_value());
      EXPECT_FALSE(f.per_rank_quartiles.has_value());
    }
  }
  EXPECT_THROW(eval::style_similarity_by_rank(scores, wf, tf, {0}), arec::Error);
  EXPECT_THROW(eval::style_similarity_by_rank(scores, wf, tf, {21}), arec::Error);
}

TEST(StyleBuckets, TopBucketTracksTargetWhenScoresFollowSimilarity) {
  // Each target's scores favour works with a nearby key; the top bucket pools
  // matched pairs and the bottom bucket mismatched ones.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(40, 80);
  const std::size_t works = 30, targets = 12;
  std::vector<eval::StyleFeatures> wf(works), tf(targets);
  for (auto& f : wf) {
    f.key = u(rng);
    f.loudness = u(rng);
    f.duration = u(rng);
  }
  Eigen::MatrixXd scores(targets, works);
  for (std::size_t t = 0; t < targets; ++t) {
    tf[t].key = u(rng);
    tf[t].loudness = u(rng);
    tf[t].duration = u(rng);
    for (std::size_t w = 0; w < works; ++w) scores(t, w) = -std::abs(*wf[w].key - *tf[t].key);
  }
  const auto buckets = eval::style_similarity_by_rank(scores, wf, tf, {10});
  const auto key = static_cast<std::size_t>(eval::StyleFeature::key);
  EXPECT_GT(*buckets.front().features[key].pooled_pearson, 0.9);
  EXPECT_GT(*buckets.front().features[key].pooled_pearson, buckets.back().features[key].pooled_pearson.value_or(1.0));
  EXPECT_EQ(buckets.front().features[key].pairs, targets * 3);
  ASSERT_EQ(buckets.front().features[key].per_rank.size(), 3u);
  const auto q = *buckets.front().features[key].per_rank_quartiles;
  EXPECT_LE(q.min, q.q1);
  EXPECT_LE(q.q1, q.median);
  EXPECT_LE(q.median, q.q3);
  EXPECT_LE(q.q3, q.max);

  const auto csv = eval::bucket_csv(buckets);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "bucket,rank_begin,rank_end,feature,pairs,pearson,min,q1,median,q3,max");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 10 * 3);
  EXPECT_EQ(eval::to_json(buckets).size(), 10u);
}
