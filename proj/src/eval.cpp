// SPDX-License-Identifier: Apache-2.0
#include "arec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "arec/error.hpp"
#include "arec/hash.hpp"
#include "arec/parallel.hpp"

namespace arec::eval {

using attribution::AttributionTarget;
using json = nlohmann::json;

namespace {

std::optional<Quartiles> quartiles(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return Quartiles{v.front(), at(0.25), at(0.5), at(0.75), v.back()};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> pearson_correlation(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(xs.size()) + " vs " + std::to_string(ys.size()));
  if (xs.size() < 2) throw Error(ErrorCode::LengthMismatch, "need at least 2 pairs");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::optional<double> spearman_rank_correlation(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(xs.size()) + " vs " + std::to_string(ys.size()));
  if (xs.size() < 3) throw Error(ErrorCode::LengthMismatch, "need at least 3 pairs");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson_correlation(rx, ry);
}

SubsetPlan make_subset_plan(std::size_t n, int count, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(ErrorCode::InvalidConfig, "fraction must be in (0, 1)");
  if (count < 1) throw Error(ErrorCode::InvalidConfig, "subset count must be >= 1");
  SubsetPlan plan{n, fraction, seed, {}};
  const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  for (int s = 0; s < count; ++s) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<bool> mask(n, false);
    for (std::size_t i = 0; i < take; ++i) mask[idx[i]] = true;
    plan.subsets.push_back(std::move(mask));
  }
  return plan;
}

GroundTruth compute_ground_truth(attribution::RetrainingOracle& oracle, const SubsetPlan& plan,
                                 const std::vector<AttributionTarget>& targets, int jobs) {
  const auto S = static_cast<Eigen::Index>(plan.subsets.size());
  const auto T = static_cast<Eigen::Index>(targets.size());
  const auto& base = oracle.full_model();
  std::vector<double> before(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t)
    before[t] = model::sequence_log_likelihood(base, targets[t].tokens, targets[t].prompt);

  GroundTruth truth{Eigen::MatrixXd(S, T)};
  parallel_for(plan.subsets.size(), jobs, [&](std::size_t s) {
    const auto& after = oracle.retrained(plan.subsets[s]);
    for (std::size_t t = 0; t < targets.size(); ++t)
      truth.influence(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) =
          model::sequence_log_likelihood(after, targets[t].tokens, targets[t].prompt) - before[t];
  });
  return truth;
}

LdsResult lds_from_ground_truth(const Eigen::MatrixXd& estimated, const SubsetPlan& plan, const GroundTruth& truth) {
  const auto S = static_cast<Eigen::Index>(plan.subsets.size());
  if (truth.influence.rows() != S || truth.influence.cols() != estimated.rows())
    throw Error(ErrorCode::DimensionMismatch, "ground truth shape does not match plan and estimates");
  if (estimated.cols() != static_cast<Eigen::Index>(plan.n))
    throw Error(ErrorCode::DimensionMismatch, "estimated scores have the wrong number of works");

  // Subset membership as a 0/1 matrix so subset sums are one product.
  Eigen::MatrixXd membership = Eigen::MatrixXd::Zero(S, static_cast<Eigen::Index>(plan.n));
  for (Eigen::Index s = 0; s < S; ++s)
    for (std::size_t i = 0; i < plan.n; ++i)
      if (plan.subsets[static_cast<std::size_t>(s)][i]) membership(s, static_cast<Eigen::Index>(i)) = 1.0;
  const Eigen::MatrixXd subset_scores = membership * estimated.transpose();  // S x T

  LdsResult r;
  double sum = 0.0;
  for (Eigen::Index t = 0; t < estimated.rows(); ++t) {
    std::vector<double> est(static_cast<std::size_t>(S)), neg(static_cast<std::size_t>(S));
    for (Eigen::Index s = 0; s < S; ++s) {
      est[static_cast<std::size_t>(s)] = subset_scores(s, t);
      neg[static_cast<std::size_t>(s)] = -truth.influence(s, t);
    }
    auto rho = spearman_rank_correlation(est, neg);
    if (rho) {
      sum += *rho;
      ++r.defined;
    }
    r.per_target.push_back(rho);
  }
  if (r.defined) r.mean = sum / static_cast<double>(r.defined);
  return r;
}

LdsResult lds_evaluate(const attribution::AttributionMatrix& estimated, attribution::RetrainingOracle& oracle,
                       const SubsetPlan& plan, const std::vector<AttributionTarget>& targets, int jobs) {
  estimated.validate();
  if (estimated.scores.rows() != static_cast<Eigen::Index>(targets.size()))
    throw Error(ErrorCode::DimensionMismatch, "one score row per target is required");
  return lds_from_ground_truth(estimated.scores, plan, compute_ground_truth(oracle, plan, targets, jobs));
}

json to_json(const LdsResult& r) {
  json per = json::array();
  for (const auto& v : r.per_target) per.push_back(optional_json(v));
  return {{"per_target_rho", per}, {"mean_rho", optional_json(r.mean)}, {"defined_targets", r.defined}};
}

std::string to_string(StyleFeature f) {
  switch (f) {
    case StyleFeature::loudness: return "loudness";
    case StyleFeature::key: return "key";
    case StyleFeature::duration: return "duration";
  }
  return "unknown";
}

std::optional<double> StyleFeatures::get(StyleFeature f) const {
  switch (f) {
    case StyleFeature::loudness: return loudness;
    case StyleFeature::key: return key;
    case StyleFeature::duration: return duration;
  }
  return std::nullopt;
}

StyleFeatures style_features(const events::EventSequence& tokens) {
  using Layout = events::VocabularyLayout;
  StyleFeatures f;
  int velocity = Layout::bin_midpoint(Layout::kDefaultVelocityBin);
  double vel_sum = 0.0, pitch_sum = 0.0;
  std::size_t ons = 0;
  long long shift_ms = 0;
  for (events::Token t : tokens) {
    const events::Event e = events::decode(t);
    switch (e.kind) {
      case events::EventKind::NoteOn:
        vel_sum += velocity;
        pitch_sum += e.value;
        ++ons;
        break;
      case events::EventKind::Velocity:
        velocity = Layout::bin_midpoint(e.value);
        break;
      case events::EventKind::TimeShift:
        shift_ms += e.value;
        break;
      case events::EventKind::NoteOff:
        break;
    }
  }
  if (ons) {
    f.loudness = vel_sum / static_cast<double>(ons);
    f.key = pitch_sum / static_cast<double>(ons);
  }
  f.duration = static_cast<double>(shift_ms) / 1000.0;
  return f;
}

StyleFeatures style_features(const midi::NoteSequence& seq) {
  StyleFeatures f;
  if (seq.notes.empty()) return f;
  double v = 0.0, p = 0.0, end = 0.0;
  for (const auto& n : seq.notes) {
    v += n.velocity;
    p += n.pitch;
    end = std::max(end, n.offset);
  }
  const double count = static_cast<double>(seq.notes.size());
  f.loudness = v / count;
  f.key = p / count;
  f.duration = end;
  return f;
}

std::vector<BucketStats> style_similarity_by_rank(const Eigen::MatrixXd& scores,
                                                  const std::vector<StyleFeatures>& work_features,
                                                  const std::vector<StyleFeatures>& target_features,
                                                  const BucketSpec& spec) {
  const auto n = static_cast<std::size_t>(scores.cols());
  const auto T = static_cast<std::size_t>(scores.rows());
  if (work_features.size() != n || target_features.size() != T)
    throw Error(ErrorCode::DimensionMismatch, "feature lists must match the score matrix");
  if (spec.buckets < 1 || static_cast<std::size_t>(spec.buckets) > n)
    throw Error(ErrorCode::InvalidConfig, "bucket count must be in [1, n]");

  // ranked[t][r] = work at rank r for target t.
  std::vector<std::vector<std::size_t>> ranked(T);
  for (std::size_t t = 0; t < T; ++t) {
    auto& order = ranked[t];
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(a)) >
             scores(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(b));
    });
  }

  auto pearson_or_null = [](const std::vector<double>& x, const std::vector<double>& y) -> std::optional<double> {
    if (x.size() < 2) return std::nullopt;
    return pearson_correlation(x, y);
  };

  std::vector<BucketStats> out;
  const auto B = static_cast<std::size_t>(spec.buckets);
  for (std::size_t b = 0; b < B; ++b) {
    BucketStats bs;
    bs.bucket = static_cast<int>(b);
    bs.rank_begin = b * n / B;
    bs.rank_end = (b + 1) * n / B;
    for (StyleFeature feature : kStyleFeatures) {
      FeatureBucketStats& fs = bs.features[static_cast<std::size_t>(feature)];
      std::vector<double> pooled_t, pooled_w;
      std::vector<double> defined_rank_values;
      for (std::size_t r = bs.rank_begin; r < bs.rank_end; ++r) {
        std::vector<double> xt, xw;
        for (std::size_t t = 0; t < T; ++t) {
          const auto tv = target_features[t].get(feature);
          const auto wv = work_features[ranked[t][r]].get(feature);
          if (!tv || !wv) continue;
          xt.push_back(*tv);
          xw.push_back(*wv);
        }
        pooled_t.insert(pooled_t.end(), xt.begin(), xt.end());
        pooled_w.insert(pooled_w.end(), xw.begin(), xw.end());
        auto rho = pearson_or_null(xt, xw);
        if (rho) defined_rank_values.push_back(*rho);
        fs.per_rank.push_back(rho);
      }
      fs.pairs = pooled_t.size();
      fs.pooled_pearson = pearson_or_null(pooled_t, pooled_w);
      fs.per_rank_quartiles = quartiles(defined_rank_values);
    }
    out.push_back(std::move(bs));
  }
  return out;
}

std::string bucket_csv(const std::vector<BucketStats>& buckets) {
  std::ostringstream out;
  out.precision(17);
  out << "bucket,rank_begin,rank_end,feature,pairs,pearson,min,q1,median,q3,max\n";
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (const auto& b : buckets) {
    for (StyleFeature f : kStyleFeatures) {
      const auto& fs = b.features[static_cast<std::size_t>(f)];
      out << b.bucket << ',' << b.rank_begin << ',' << b.rank_end << ',' << to_string(f) << ',' << fs.pairs << ',';
      opt(fs.pooled_pearson);
      if (fs.per_rank_quartiles) {
        const auto& q = *fs.per_rank_quartiles;
        out << ',' << q.min << ',' << q.q1 << ',' << q.median << ',' << q.q3 << ',' << q.max;
      } else {
        out << ",,,,,";
      }
      out << '\n';
    }
  }
  return out.str();
}

json to_json(const std::vector<BucketStats>& buckets) {
  json arr = json::array();
  for (const auto& b : buckets) {
    json features = json::object();
    for (StyleFeature f : kStyleFeatures) {
      const auto& fs = b.features[static_cast<std::size_t>(f)];
      json q = nullptr;
      if (fs.per_rank_quartiles) {
        const auto& v = *fs.per_rank_quartiles;
        q = {{"min", v.min}, {"q1", v.q1}, {"median", v.median}, {"q3", v.q3}, {"max", v.max}};
      }
      features[to_string(f)] = {{"pearson", optional_json(fs.pooled_pearson)}, {"pairs", fs.pairs}, {"per_rank_quartiles", q}};
    }
    arr.push_back({{"bucket", b.bucket}, {"rank_begin", b.rank_begin}, {"rank_end", b.rank_end}, {"features", features}});
  }
  return arr;
}

}  // namespace arec::eval
