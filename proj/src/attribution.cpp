// SPDX-License-Identifier: Apache-2.0
#include "arec/attribution.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>

#include "arec/error.hpp"
#include "arec/hash.hpp"
#include "arec/midi.hpp"
#include "arec/parallel.hpp"

namespace arec::attribution {

using json = nlohmann::json;

namespace {

constexpr std::size_t kProjectionBlockRows = 2048;
constexpr std::size_t kTargetChunk = 64;
constexpr char kScoreMagic[] = "ASCR1";

Eigen::MatrixXd gradient_rows(const std::vector<std::vector<double>>& rows, std::size_t dim) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i)
    g.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(rows[i].data(), static_cast<Eigen::Index>(dim));
  return g;
}

}  // namespace

std::string to_string(Level level) { return level == Level::event ? "event" : "segment"; }

Level level_from_string(const std::string& s) {
  if (s == "event") return Level::event;
  if (s == "segment") return Level::segment;
  throw Error(ErrorCode::Format, "level must be event or segment, got " + s);
}

void AttributionTarget::validate() const {
  if (kind == Level::event && tokens.size() != 1)
    throw Error(ErrorCode::DimensionMismatch, "event target " + target_id + " must hold exactly one token");
  if (tokens.empty()) throw Error(ErrorCode::DimensionMismatch, "target " + target_id + " has no tokens");
}

std::vector<AttributionTarget> AttributionTarget::events() const {
  std::vector<AttributionTarget> out;
  out.reserve(tokens.size());
  EventSequence context = prompt;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.push_back({Level::event, context, {tokens[i]}, target_id + "#" + std::to_string(i)});
    context.push_back(tokens[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Retraining oracle

RetrainingOracle::RetrainingOracle(corpus::Corpus corpus, TrainSpec spec)
    : corpus_(std::move(corpus)), spec_(std::move(spec)) {}

const ModelCheckpoint& RetrainingOracle::full_model() { return model_for(std::vector<bool>(corpus_.size(), false)); }

const ModelCheckpoint& RetrainingOracle::retrained(const std::vector<bool>& removed) { return model_for(removed); }

const ModelCheckpoint& RetrainingOracle::model_for(const std::vector<bool>& removed) {
  if (removed.size() != corpus_.size())
    throw Error(ErrorCode::DimensionMismatch, "removal mask length " + std::to_string(removed.size()) +
                                                  " != corpus size " + std::to_string(corpus_.size()));
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(removed); it != cache_.end()) return *it->second;
  }
  std::vector<bool> keep(removed.size());
  std::transform(removed.begin(), removed.end(), keep.begin(), [](bool r) { return !r; });
  if (std::none_of(keep.begin(), keep.end(), [](bool k) { return k; }))
    throw Error(ErrorCode::EmptyCorpusAfterRemoval, "removal set covers the whole corpus");
  auto trained = std::make_unique<ModelCheckpoint>(
      model::train(corpus_.subset(keep).windows, spec_.config, spec_.hyper, keep, corpus_.content_hash()).model);
  std::lock_guard lock(mu_);
  auto [it, inserted] = cache_.try_emplace(removed, std::move(trained));
  return *it->second;
}

double RetrainingOracle::exact_influence(const std::vector<bool>& removed, const AttributionTarget& target) {
  target.validate();
  const ModelCheckpoint& after = model_for(removed);
  const ModelCheckpoint& before = full_model();
  return model::sequence_log_likelihood(after, target.tokens, target.prompt) -
         model::sequence_log_likelihood(before, target.tokens, target.prompt);
}

std::size_t RetrainingOracle::cached_models() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

double exact_influence(const corpus::Corpus& corpus, const std::vector<bool>& removed, const AttributionTarget& target,
                       const TrainSpec& spec) {
  RetrainingOracle oracle(corpus, spec);
  return oracle.exact_influence(removed, target);
}

std::vector<ModelCheckpoint> train_ensemble(const corpus::Corpus& corpus, const TrainSpec& spec, int members,
                                            double fraction, std::uint64_t seed, int jobs) {
  if (members < 1) throw Error(ErrorCode::InvalidConfig, "ensemble needs at least one member");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorCode::InvalidConfig, "fraction must be in (0, 1]");
  const std::size_t n = corpus.size();
  const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (take == 0) throw Error(ErrorCode::EmptyCorpus, "ensemble subset would be empty");
  const std::uint64_t hash = corpus.content_hash();

  std::vector<ModelCheckpoint> out(static_cast<std::size_t>(members));
  parallel_for(out.size(), jobs, [&](std::size_t k) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<bool> mask(n, false);
    for (std::size_t i = 0; i < take; ++i) mask[idx[i]] = true;
    model::ModelConfig config = spec.config;
    config.seed = derive_seed(spec.config.seed, static_cast<std::uint64_t>(k));
    out[k] = model::train(corpus.subset(mask).windows, config, spec.hyper, mask, hash).model;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Projection

Projector::Projector(std::size_t input_dim, int output_dim, std::uint64_t seed)
    : input_dim_(input_dim), output_dim_(output_dim), seed_(seed) {
  if (output_dim < 1) throw Error(ErrorCode::InvalidConfig, "projection_dim must be >= 1");
}

void Projector::fill_rows(std::size_t begin, std::size_t end, Eigen::MatrixXd& block) const {
  const int d = output_dim_;
  const std::size_t words = (static_cast<std::size_t>(d) + 63) / 64;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  block.resize(static_cast<Eigen::Index>(end - begin), d);
  for (std::size_t r = begin; r < end; ++r) {
    for (std::size_t w = 0; w < words; ++w) {
      const std::uint64_t bits = splitmix64(seed_ ^ splitmix64(r * words + w));
      const int cols = std::min<int>(64, d - static_cast<int>(w * 64));
      for (int b = 0; b < cols; ++b)
        block(static_cast<Eigen::Index>(r - begin), static_cast<Eigen::Index>(w * 64 + b)) = ((bits >> b) & 1) ? s : -s;
    }
  }
}

double Projector::entry(std::size_t row, int col) const {
  Eigen::MatrixXd block;
  fill_rows(row, row + 1, block);
  return block(0, col);
}

Eigen::MatrixXd Projector::project(const Eigen::MatrixXd& gradients) const {
  if (static_cast<std::size_t>(gradients.cols()) != input_dim_)
    throw Error(ErrorCode::DimensionMismatch, "gradient length " + std::to_string(gradients.cols()) +
                                                  " != projector input " + std::to_string(input_dim_));
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(gradients.rows(), output_dim_);
  Eigen::MatrixXd block;
  for (std::size_t begin = 0; begin < input_dim_; begin += kProjectionBlockRows) {
    const std::size_t end = std::min(input_dim_, begin + kProjectionBlockRows);
    fill_rows(begin, end, block);
    out.noalias() += gradients.middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) * block;
  }
  return out;
}

Eigen::VectorXd Projector::project(const std::vector<double>& gradient) const {
  return project(gradient_rows({gradient}, gradient.size())).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Index

AttributionIndex fit_attribution_index(const corpus::Corpus& corpus, const std::vector<ModelCheckpoint>& ensemble,
                                       const IndexOptions& options) {
  if (ensemble.empty()) throw Error(ErrorCode::InvalidConfig, "ensemble is empty");
  if (corpus.size() == 0) throw Error(ErrorCode::EmptyCorpus, "corpus is empty");
  AttributionIndex index;
  index.projection_dim = options.projection_dim;
  index.output_fn = options.output_fn;
  const std::size_t n = corpus.size();
  const int d = options.projection_dim;

  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    IndexMember m;
    m.model = ensemble[k];
    m.params_hash = m.model.params_hash();
    m.subset_mask = m.model.provenance.subset_mask;
    m.projection_seed = derive_seed(options.seed, static_cast<std::uint64_t>(k));
    const std::size_t D = m.model.params.size();
    if (k > 0 && D != index.members[0].model.params.size())
      throw Error(ErrorCode::DimensionMismatch, "ensemble members differ in parameter count");

    std::vector<std::vector<double>> grads(n);
    m.weights.resize(static_cast<Eigen::Index>(n));
    parallel_for(n, options.jobs, [&](std::size_t i) {
      auto f = model::window_features(m.model, corpus.windows[i], options.output_fn);
      grads[i] = std::move(f.gradient);
      m.weights(static_cast<Eigen::Index>(i)) = f.one_minus_p;
    });
    const Projector proj(D, d, m.projection_seed);
    m.features = proj.project(gradient_rows(grads, D));
    grads.clear();

    Eigen::MatrixXd kernel = m.features.transpose() * m.features;
    m.lambda = options.lambda.value_or(options.lambda_scale * kernel.trace() / d);
    if (!(m.lambda > 0.0) || !std::isfinite(m.lambda)) {
      std::ostringstream msg;
      msg << "member " << k << ": ridge lambda " << m.lambda << " is not positive";
      throw Error(ErrorCode::SingularKernel, msg.str());
    }
    kernel.diagonal().array() += m.lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(kernel);
    if (llt.info() != Eigen::Success) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(kernel, Eigen::EigenvaluesOnly);
      std::ostringstream msg;
      msg << "member " << k << ": Cholesky failed, eigenvalue range [" << eig.eigenvalues().minCoeff() << ", "
          << eig.eigenvalues().maxCoeff() << "]";
      throw Error(ErrorCode::SingularKernel, msg.str());
    }
    m.kernel_inverse = llt.solve(Eigen::MatrixXd::Identity(d, d));
    index.members.push_back(std::move(m));
  }
  return index;
}

Eigen::VectorXd target_feature(const AttributionIndex& index, std::size_t member, const AttributionTarget& target) {
  const IndexMember& m = index.members.at(member);
  const auto g = model::per_example_gradient(m.model, {target.prompt, target.tokens}, index.output_fn);
  return Projector(g.size(), index.projection_dim, m.projection_seed).project(g);
}

Eigen::VectorXd score_from_features(const AttributionIndex& index, const std::vector<Eigen::VectorXd>& phi) {
  if (phi.size() != index.members.size())
    throw Error(ErrorCode::DimensionMismatch, "one target feature per member is required");
  Eigen::VectorXd total = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(index.work_count()));
  for (std::size_t k = 0; k < phi.size(); ++k) {
    const IndexMember& m = index.members[k];
    if (phi[k].size() != m.kernel_inverse.rows())
      throw Error(ErrorCode::DimensionMismatch, "target feature length " + std::to_string(phi[k].size()) +
                                                    " != projection_dim " + std::to_string(m.kernel_inverse.rows()));
    const Eigen::VectorXd solved = m.kernel_inverse * phi[k];
    total += (m.features * solved).cwiseProduct(m.weights);
  }
  return total / static_cast<double>(phi.size());
}

Eigen::VectorXd score_events(const AttributionIndex& index, const AttributionTarget& target) {
  if (target.kind != Level::event) throw Error(ErrorCode::DimensionMismatch, "score_events needs an event target");
  target.validate();
  std::vector<Eigen::VectorXd> phi;
  for (std::size_t k = 0; k < index.members.size(); ++k) phi.push_back(target_feature(index, k, target));
  return score_from_features(index, phi);
}

Eigen::VectorXd score_segment(const AttributionIndex& index, const AttributionTarget& target) {
  if (target.kind != Level::segment) throw Error(ErrorCode::DimensionMismatch, "score_segment needs a segment target");
  target.validate();
  Eigen::VectorXd total = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(index.work_count()));
  for (const AttributionTarget& e : target.events()) total += score_events(index, e);
  return total;
}

Eigen::MatrixXd score_event_batch(const AttributionIndex& index, const std::vector<AttributionTarget>& targets,
                                  int jobs) {
  for (const auto& t : targets) {
    if (t.kind != Level::event) throw Error(ErrorCode::DimensionMismatch, "score_event_batch needs event targets");
    t.validate();
  }
  const auto n = static_cast<Eigen::Index>(index.work_count());
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(targets.size()), n);
  for (const IndexMember& m : index.members) {
    const std::size_t D = m.model.params.size();
    const Projector proj(D, index.projection_dim, m.projection_seed);
    // Work-side factor: features K^-1, scaled per work afterwards.
    const Eigen::MatrixXd left = m.features * m.kernel_inverse;
    for (std::size_t begin = 0; begin < targets.size(); begin += kTargetChunk) {
      const std::size_t end = std::min(targets.size(), begin + kTargetChunk);
      std::vector<std::vector<double>> grads(end - begin);
      parallel_for(grads.size(), jobs, [&](std::size_t i) {
        const AttributionTarget& t = targets[begin + i];
        grads[i] = model::per_example_gradient(m.model, {t.prompt, t.tokens}, index.output_fn);
      });
      const Eigen::MatrixXd phi = proj.project(gradient_rows(grads, D));  // chunk x d
      Eigen::MatrixXd s = phi * left.transpose();                         // chunk x n
      s.array().rowwise() *= m.weights.transpose().array();
      total.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) += s;
    }
  }
  return total / static_cast<double>(index.members.size());
}

Eigen::VectorXd random_baseline_scores(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

void AttributionMatrix::validate() const {
  if (scores.rows() != static_cast<Eigen::Index>(target_ids.size()) ||
      scores.cols() != static_cast<Eigen::Index>(work_ids.size()))
    throw Error(ErrorCode::DimensionMismatch, "score matrix shape does not match ids");
  if (!scores.allFinite()) throw Error(ErrorCode::Format, "score matrix holds non-finite values");
}

std::vector<std::uint8_t> encode_matrix(const AttributionMatrix& m) {
  m.validate();
  json header = {{"format", "ASCR1"},
                 {"level", to_string(m.level)},
                 {"sign_convention", m.sign_convention},
                 {"n", m.work_ids.size()},
                 {"target_count", m.target_ids.size()},
                 {"target_ids", m.target_ids},
                 {"work_ids", m.work_ids},
                 {"estimator", m.estimator.is_null() ? json::object() : m.estimator},
                 {"dtype", "float64"},
                 {"byte_order", "little"}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kScoreMagic, kScoreMagic + 5);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  for (Eigen::Index r = 0; r < m.scores.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.scores.cols(); ++c) {
      std::uint8_t b[8];
      const double v = m.scores(r, c);
      std::memcpy(b, &v, 8);
      if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + 8);
      out.insert(out.end(), b, b + 8);
    }
  }
  return out;
}

AttributionMatrix decode_matrix(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 13 || !std::equal(kScoreMagic, kScoreMagic + 5, bytes.begin()))
    throw Error(ErrorCode::Format, "not an ASCR1 score file");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[5 + i]) << (8 * i);
  if (13 + len > bytes.size()) throw Error(ErrorCode::Format, "score header truncated");
  AttributionMatrix m;
  std::size_t n = 0, t = 0;
  try {
    const json h = json::parse(bytes.begin() + 13, bytes.begin() + 13 + static_cast<std::ptrdiff_t>(len));
    m.level = level_from_string(h.at("level"));
    m.sign_convention = h.at("sign_convention");
    n = h.at("n");
    t = h.at("target_count");
    m.target_ids = h.at("target_ids").get<std::vector<std::string>>();
    m.work_ids = h.at("work_ids").get<std::vector<std::string>>();
    m.estimator = h.at("estimator");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("score header: ") + e.what());
  }
  const std::size_t body = 13 + len;
  if (bytes.size() - body != n * t * 8) throw Error(ErrorCode::Format, "score block size");
  m.scores.resize(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      std::uint8_t b[8];
      std::memcpy(b, bytes.data() + body + (r * n + c) * 8, 8);
      if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + 8);
      std::memcpy(&m.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)), b, 8);
    }
  }
  m.validate();
  return m;
}

void save_matrix(const AttributionMatrix& m, const std::string& path) { midi::write_file(path, encode_matrix(m)); }

AttributionMatrix load_matrix(const std::string& path) { return decode_matrix(midi::read_file(path)); }

std::string matrix_csv(const AttributionMatrix& m) {
  std::ostringstream out;
  out.precision(17);
  out << "target_id,work_id,score\n";
  for (Eigen::Index r = 0; r < m.scores.rows(); ++r)
    for (Eigen::Index c = 0; c < m.scores.cols(); ++c)
      out << m.target_ids[static_cast<std::size_t>(r)] << ',' << m.work_ids[static_cast<std::size_t>(c)] << ','
          << m.scores(r, c) << '\n';
  return out.str();
}

}  // namespace arec::attribution
