// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "arec/attribution.hpp"
#include "arec/error.hpp"
#include "arec/eval.hpp"
#include "arec/hash.hpp"
#include "arec/synth.hpp"

namespace att = arec::attribution;
namespace model = arec::model;
using arec::events::EventSequence;

namespace {

model::ModelConfig small_config() {
  model::ModelConfig c;
  c.context_length = 16;
  c.embed_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.hidden_dim = 16;
  c.seed = 3;
  c.precision = model::Precision::float64;
  return c;
}

att::TrainSpec small_spec(int epochs = 8) {
  att::TrainSpec s{small_config(), {}};
  s.hyper.epochs = epochs;
  s.hyper.batch_size = 4;
  s.hyper.learning_rate = 1e-2;
  return s;
}

arec::corpus::Corpus toy_corpus(int per_source = 2) {
  std::vector<arec::corpus::Source> sources;
  const auto styles = arec::synth::toy_styles();
  for (int i = 0; i < 4; ++i) {
    const auto notes = arec::synth::make_piece(styles[i], 40, 100 + i);
    sources.push_back({"p" + std::to_string(i) + ".mid", "rh" + std::to_string(i % 2),
                       arec::events::tokenize(notes)});
  }
  return arec::corpus::build_corpus(sources, 16, per_source);
}

att::AttributionTarget segment_target(const EventSequence& prompt, const EventSequence& tokens) {
  att::AttributionTarget t;
  t.kind = att::Level::segment;
  t.prompt = prompt;
  t.tokens = tokens;
  t.target_id = "t";
  return t;
}

struct Fixture {
  arec::corpus::Corpus corpus = toy_corpus();
  att::TrainSpec spec = small_spec();
  std::vector<model::ModelCheckpoint> ensemble;
  att::AttributionIndex index;

  explicit Fixture(int members = 2, int d = 16) {
    ensemble = att::train_ensemble(corpus, spec, members, 0.5, 11);
    att::IndexOptions opt;
    opt.projection_dim = d;
    opt.seed = 5;
    index = att::fit_attribution_index(corpus, ensemble, opt);
  }
};

}  // namespace

TEST(Targets, EventsCarryRunningContext) {
  const auto t = segment_target({1, 2}, {3, 4, 5});
  const auto events = t.events();
  ASSERT_EQ(events.size(), 3u);
  EXPECT_EQ(events[2].prompt, (EventSequence{1, 2, 3, 4}));
  EXPECT_EQ(events[2].tokens, (EventSequence{5}));
  auto bad = events[0];
  bad.tokens = {1, 2};
  EXPECT_THROW(bad.validate(), arec::Error);
}

TEST(Ensemble, SubsetsAndSeeds) {
  const auto corpus = toy_corpus();
  const auto ensemble = att::train_ensemble(corpus, small_spec(2), 3, 0.5, 7);
  ASSERT_EQ(ensemble.size(), 3u);
  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    const auto& mask = ensemble[k].provenance.subset_mask;
    ASSERT_EQ(mask.size(), corpus.size());
    EXPECT_EQ(std::count(mask.begin(), mask.end(), true), 4);
    EXPECT_EQ(ensemble[k].config.seed, arec::derive_seed(small_spec().config.seed, k));
  }
  EXPECT_NE(ensemble[0].params, ensemble[1].params);
  const auto again = att::train_ensemble(corpus, small_spec(2), 3, 0.5, 7);
  EXPECT_EQ(again[2].params, ensemble[2].params);
}

TEST(Projector, EntriesAndBlockConsistency) {
  const att::Projector p(1000, 8, 42);
  const double s = 1.0 / std::sqrt(8.0);
  std::vector<double> unit(1000, 0.0);
  for (std::size_t row : {0u, 1u, 517u, 999u}) {
    for (int col = 0; col < 8; ++col) EXPECT_DOUBLE_EQ(std::abs(p.entry(row, col)), s);
    unit.assign(1000, 0.0);
    unit[row] = 1.0;
    const auto projected = p.project(unit);
    for (int col = 0; col < 8; ++col) EXPECT_DOUBLE_EQ(projected[col], p.entry(row, col));
  }
  // Roughly balanced signs.
  int positive = 0;
  for (std::size_t row = 0; row < 1000; ++row) positive += p.entry(row, 3) > 0;
  EXPECT_GT(positive, 430);
  EXPECT_LT(positive, 570);
  const att::Projector other(1000, 8, 43);
  int differ = 0;
  for (std::size_t row = 0; row < 100; ++row) differ += other.entry(row, 0) != p.entry(row, 0);
  EXPECT_GT(differ, 20);
}

TEST(Index, ShapesAndKernel) {
  Fixture f;
  EXPECT_EQ(f.index.work_count(), f.corpus.size());
  ASSERT_EQ(f.index.members.size(), 2u);
  for (const auto& m : f.index.members) {
    EXPECT_EQ(m.features.rows(), static_cast<long>(f.corpus.size()));
    EXPECT_EQ(m.features.cols(), 16);
    const Eigen::MatrixXd k = m.features.transpose() * m.features + m.lambda * Eigen::MatrixXd::Identity(16, 16);
    EXPECT_LT((k * m.kernel_inverse - Eigen::MatrixXd::Identity(16, 16)).norm(), 1e-8);
    EXPECT_GT(m.lambda, 0.0);
    for (int i = 0; i < m.weights.size(); ++i) {
      EXPECT_GE(m.weights[i], 0.0);
      EXPECT_LE(m.weights[i], 1.0);
    }
  }
}

TEST(Scores, ZeroFeatureGivesZeroAndLinearity) {
  Fixture f;
  const std::vector<Eigen::VectorXd> zeros(2, Eigen::VectorXd::Zero(16));
  EXPECT_EQ(att::score_from_features(f.index, zeros).cwiseAbs().maxCoeff(), 0.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  std::vector<Eigen::VectorXd> a(2), b(2), mix(2);
  for (int k = 0; k < 2; ++k) {
    a[k] = Eigen::VectorXd::NullaryExpr(16, [&] { return n(rng); });
    b[k] = Eigen::VectorXd::NullaryExpr(16, [&] { return n(rng); });
    mix[k] = 2.0 * a[k] - 0.5 * b[k];
  }
  const Eigen::VectorXd expected =
      2.0 * att::score_from_features(f.index, a) - 0.5 * att::score_from_features(f.index, b);
  EXPECT_LT((att::score_from_features(f.index, mix) - expected).norm(), 1e-10 * (1 + expected.norm()));
  EXPECT_THROW(att::score_from_features(f.index, {a[0]}), arec::Error);
}

TEST(Scores, IdenticalMembersMatchSingleMember) {
  const auto corpus = toy_corpus();
  const auto one = att::train_ensemble(corpus, small_spec(2), 1, 0.5, 3);
  att::IndexOptions opt;
  opt.projection_dim = 16;
  opt.seed = 9;
  const auto single = att::fit_attribution_index(corpus, one, opt);
  auto doubled = single;
  doubled.members.push_back(single.members[0]);
  const auto t = segment_target({1, 2, 3}, {60, 300});
  const Eigen::VectorXd s1 = att::score_segment(single, t);
  const Eigen::VectorXd s2 = att::score_segment(doubled, t);
  EXPECT_LT((s1 - s2).norm(), 1e-12 * (1 + s1.norm()));
}

TEST(Scores, SegmentIsSumOfEventsAndBatchAgrees) {
  Fixture f;
  const auto t = segment_target(f.corpus.windows[0], {60, 310, 188, 62});
  const Eigen::VectorXd seg = att::score_segment(f.index, t);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(seg.size());
  const auto events = t.events();
  for (const auto& e : events) sum += att::score_events(f.index, e);
  EXPECT_LE((seg - sum).norm(), 1e-9 * seg.norm());
  const Eigen::MatrixXd batch = att::score_event_batch(f.index, events);
  ASSERT_EQ(batch.rows(), 4);
  for (int r = 0; r < 4; ++r)
    EXPECT_LE((batch.row(r).transpose() - att::score_events(f.index, events[r])).norm(), 1e-10 * (1 + seg.norm()));
}

TEST(Scores, RandomBaselineDeterministic) {
  const auto a = att::random_baseline_scores(50, 4);
  EXPECT_EQ(a, att::random_baseline_scores(50, 4));
  EXPECT_NE(a, att::random_baseline_scores(50, 5));
  EXPECT_GE(a.minCoeff(), 0.0);
  EXPECT_LT(a.maxCoeff(), 1.0);
}

TEST(MatrixFile, RoundTripAndCsv) {
  att::AttributionMatrix m;
  m.level = att::Level::event;
  m.target_ids = {"g0", "g1"};
  m.work_ids = {"a:0", "a:1", "b:0"};
  m.scores.resize(2, 3);
  m.scores << 0.1, -2.5, 1e-300, 3.0, 0.0, -0.0;
  m.estimator = {{"members", 2}};
  const auto bytes = att::encode_matrix(m);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "ASCR1");
  const auto back = att::decode_matrix(bytes);
  EXPECT_EQ(back.level, att::Level::event);
  EXPECT_EQ(back.work_ids, m.work_ids);
  EXPECT_EQ(back.target_ids, m.target_ids);
  EXPECT_EQ(back.scores, m.scores);
  EXPECT_EQ(back.estimator, m.estimator);
  EXPECT_EQ(att::encode_matrix(back), bytes);

  const auto csv = att::matrix_csv(m);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "target_id,work_id,score");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);

  auto bad = m;
  bad.scores(0, 0) = std::nan("");
  EXPECT_THROW(bad.validate(), arec::Error);
  bad = m;
  bad.work_ids.pop_back();
  EXPECT_THROW(bad.validate(), arec::Error);
}

TEST(Oracle, EmptyRemovalIsExactlyZeroAndCached) {
  att::RetrainingOracle oracle(toy_corpus(), small_spec(3));
  const auto t = segment_target({1, 2}, {60, 300, 188});
  const std::vector<bool> none(oracle.corpus().size(), false);
  EXPECT_EQ(oracle.exact_influence(none, t), 0.0);
  std::vector<bool> one = none;
  one[2] = true;
  const double a = oracle.exact_influence(one, t);
  const std::size_t cached = oracle.cached_models();
  EXPECT_EQ(oracle.exact_influence(one, t), a);
  EXPECT_EQ(oracle.cached_models(), cached);
  EXPECT_EQ(att::exact_influence(oracle.corpus(), one, t, oracle.spec()), a);
  EXPECT_THROW(oracle.retrained(std::vector<bool>(oracle.corpus().size(), true)), arec::Error);
}

TEST(Oracle, RemovingTheTargetsOwnWindowHurtsIt) {
  // The target is a training window; leaving it out should lower its
  // likelihood after retraining.
  const auto corpus = toy_corpus(4);
  ASSERT_EQ(corpus.size(), 16u);
  auto spec = small_spec(30);
  att::RetrainingOracle oracle(corpus, spec);
  int negative = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<bool> removed(corpus.size(), false);
    removed[i * 4] = true;
    const auto t = segment_target({}, corpus.windows[i * 4]);
    negative += oracle.exact_influence(removed, t) < 0.0;
  }
  EXPECT_GE(negative, 3);
}

TEST(Estimator, TracksLeaveOneOutBetterThanChance) {
  // Scores of the target's own window should rank among the most helpful.
  const auto corpus = toy_corpus(4);
  const auto ensemble = att::train_ensemble(corpus, small_spec(20), 4, 0.5, 21);
  att::IndexOptions opt;
  opt.projection_dim = 32;
  opt.seed = 2;
  const auto index = att::fit_attribution_index(corpus, ensemble, opt);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto s = att::score_segment(index, segment_target({}, corpus.windows[i]));
    const std::vector<double> v(s.data(), s.data() + s.size());
    // Rank 1 = lowest score.
    rank_sum += arec::eval::average_ranks(v)[i];
  }
  const double mean_rank = rank_sum / corpus.size();
  EXPECT_GT(mean_rank, (corpus.size() + 1) / 2.0 + 2.0);
}
