// SPDX-License-Identifier: Apache-2.0
#include "arec/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "arec/error.hpp"
#include "arec/hash.hpp"
#include "arec/midi.hpp"
#include "transformer.hpp"

namespace arec::model {
namespace {

using json = nlohmann::json;
using detail::ParamLayout;
using detail::Transformer;

template <typename T>
using Mat = typename Transformer<T>::Mat;

// One forward pass and the (row, target token) pairs it scores.
struct Pass {
  std::vector<int> input;
  std::vector<std::pair<int, int>> targets;
};

// Splits the events of `tokens` (each conditioned on context + preceding
// tokens) into forward passes. Everything fits in one causal pass unless the
// full sequence exceeds the context window.
std::vector<Pass> plan_passes(const ModelConfig& c, const EventSequence& context, const EventSequence& tokens) {
  std::vector<int> seq;
  seq.reserve(1 + context.size() + tokens.size());
  seq.push_back(c.vocab_size);  // BOS
  seq.insert(seq.end(), context.begin(), context.end());
  seq.insert(seq.end(), tokens.begin(), tokens.end());
  const std::size_t first = 1 + context.size();
  const auto P = static_cast<std::size_t>(c.context_length);

  std::vector<Pass> passes;
  if (tokens.empty()) return passes;
  if (seq.size() - 1 <= P) {
    Pass p;
    p.input.assign(seq.begin(), seq.end() - 1);
    for (std::size_t j = first; j < seq.size(); ++j) p.targets.emplace_back(static_cast<int>(j - 1), seq[j]);
    passes.push_back(std::move(p));
    return passes;
  }
  for (std::size_t j = first; j < seq.size(); ++j) {
    const std::size_t begin = j > P ? j - P : 0;
    Pass p;
    p.input.assign(seq.begin() + static_cast<std::ptrdiff_t>(begin), seq.begin() + static_cast<std::ptrdiff_t>(j));
    p.targets.emplace_back(static_cast<int>(p.input.size()) - 1, seq[j]);
    passes.push_back(std::move(p));
  }
  return passes;
}

template <typename Row>
double log_sum_exp(const Row& z) {
  const double m = z.maxCoeff();
  double s = 0.0;
  for (Eigen::Index j = 0; j < z.size(); ++j) s += std::exp(z(j) - m);
  return m + std::log(s);
}

// log-sum-exp over all entries except `skip`.
template <typename Row>
double log_sum_exp_except(const Row& z, int skip) {
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < z.size(); ++j)
    if (j != skip) m = std::max(m, static_cast<double>(z(j)));
  double s = 0.0;
  for (Eigen::Index j = 0; j < z.size(); ++j)
    if (j != skip) s += std::exp(z(j) - m);
  return m + std::log(s);
}

// psi for one event and its gradient with respect to the logits row.
template <typename Row, typename Out>
double output_and_grad(const Row& z, int y, OutputFn fn, Out&& dz) {
  const double lse = log_sum_exp(z);
  const double logp = z(y) - lse;
  if (fn == OutputFn::log_prob) {
    for (Eigen::Index j = 0; j < z.size(); ++j) dz(j) = -std::exp(z(j) - lse);
    dz(y) += 1.0;
    return logp;
  }
  const double lse_rest = log_sum_exp_except(z, y);
  for (Eigen::Index j = 0; j < z.size(); ++j) dz(j) = -std::exp(z(j) - lse_rest);
  dz(y) = 1.0;
  return z(y) - lse_rest;
}

std::vector<int> window_input(const ModelConfig& c, const EventSequence& w) {
  std::vector<int> in;
  in.reserve(w.size());
  in.push_back(c.vocab_size);
  in.insert(in.end(), w.begin(), w.end() - 1);
  return in;
}

void check_tokens(const ModelConfig& c, const EventSequence& tokens) {
  for (Token t : tokens)
    if (t < 0 || t >= c.vocab_size) throw Error(ErrorCode::InvalidToken, "token " + std::to_string(t));
}

template <typename T>
std::vector<T> convert(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

template <typename T>
TrainResult train_impl(const std::vector<EventSequence>& windows, const ModelConfig& config, const TrainHyper& hyper,
                       std::vector<bool> subset_mask, std::uint64_t corpus_hash) {
  ModelCheckpoint init = init_model(config);
  std::vector<T> params = convert<T>(init.params);
  const std::size_t D = params.size();
  std::vector<T> grad(D), m(D, T(0)), v(D, T(0));
  Transformer<T> net(config, params.data());

  const std::size_t n = windows.size();
  const std::size_t batch = hyper.batch_size <= 0 ? n : std::min<std::size_t>(n, hyper.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(config.seed, "shuffle"));

  TrainResult result;
  Mat<T> dlogits;
  long step = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      std::fill(grad.begin(), grad.end(), T(0));
      std::size_t batch_tokens = 0;
      for (std::size_t b = start; b < stop; ++b) batch_tokens += windows[order[b]].size();
      const T inv = T(1) / static_cast<T>(batch_tokens);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const EventSequence& w = windows[order[b]];
        const auto input = window_input(config, w);
        const Mat<T>& logits = net.forward(input);
        dlogits.resize(logits.rows(), logits.cols());
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
          const T mx = logits.row(i).maxCoeff();
          dlogits.row(i) = (logits.row(i).array() - mx).exp();
          const T s = dlogits.row(i).sum();
          batch_loss -= static_cast<double>(logits(i, w[i]) - mx) - std::log(static_cast<double>(s));
          dlogits.row(i) *= inv / s;
          dlogits(i, w[i]) -= inv;
        }
        net.backward(dlogits, grad.data());
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "loss " << batch_loss << " at epoch " << epoch << ", batch starting " << start << ", step " << step;
        throw Error(ErrorCode::NonFiniteLoss, msg.str());
      }
      epoch_loss += batch_loss;
      epoch_tokens += batch_tokens;

      if (hyper.grad_clip > 0) {
        double norm2 = 0.0;
        for (T g : grad) norm2 += static_cast<double>(g) * g;
        const double norm = std::sqrt(norm2);
        if (norm > hyper.grad_clip) {
          const T s = static_cast<T>(hyper.grad_clip / norm);
          for (T& g : grad) g *= s;
        }
      }

      ++step;
      const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
      const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(hyper.beta1, static_cast<double>(step))));
      const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(hyper.beta2, static_cast<double>(step))));
      const T lr = static_cast<T>(hyper.learning_rate), eps = static_cast<T>(hyper.epsilon);
      const T wd = static_cast<T>(hyper.weight_decay);
      for (std::size_t k = 0; k < D; ++k) {
        const T g = grad[k];
        m[k] = b1 * m[k] + (T(1) - b1) * g;
        v[k] = b2 * v[k] + (T(1) - b2) * g * g;
        params[k] -= lr * ((m[k] * c1) / (std::sqrt(v[k] * c2) + eps) + wd * params[k]);
      }
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_tokens));
  }

  result.model.config = config;
  result.model.params.assign(params.begin(), params.end());
  TrainingProvenance& prov = result.model.provenance;
  prov.corpus_hash = corpus_hash;
  prov.subset_mask = subset_mask.empty() ? std::vector<bool>(n, true) : std::move(subset_mask);
  prov.epochs = hyper.epochs;
  prov.optimizer_state_hash = Fnv1a{}.values(std::span<const T>(m)).values(std::span<const T>(v)).digest();
  if (!result.epoch_losses.empty()) {
    prov.initial_loss = result.epoch_losses.front();
    prov.final_loss = result.epoch_losses.back();
  }
  return result;
}

std::string mask_string(const std::vector<bool>& mask) {
  std::string s;
  s.reserve(mask.size());
  for (bool b : mask) s.push_back(b ? '1' : '0');
  return s;
}

std::vector<bool> mask_from_string(const std::string& s) {
  std::vector<bool> mask;
  mask.reserve(s.size());
  for (char ch : s) {
    if (ch != '0' && ch != '1') throw Error(ErrorCode::Format, "subset_mask must be a 0/1 string");
    mask.push_back(ch == '1');
  }
  return mask;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

constexpr char kCkptMagic[] = "ACKP1";

}  // namespace

std::string to_string(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }

Precision precision_from_string(const std::string& s) {
  if (s == "float32") return Precision::float32;
  if (s == "float64") return Precision::float64;
  throw Error(ErrorCode::InvalidConfig, "precision must be float32 or float64, got " + s);
}

std::string to_string(OutputFn fn) { return fn == OutputFn::log_prob ? "log_prob" : "logit_margin"; }

OutputFn output_fn_from_string(const std::string& s) {
  if (s == "log_prob") return OutputFn::log_prob;
  if (s == "logit_margin") return OutputFn::logit_margin;
  throw Error(ErrorCode::InvalidConfig, "output_fn must be log_prob or logit_margin, got " + s);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (context_length < 2) fail("context_length must be >= 2");
  if (embed_dim < 1 || num_layers < 0 || num_heads < 1 || hidden_dim < 1) fail("dimensions must be positive");
  if (embed_dim % num_heads != 0)
    fail("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " + std::to_string(num_heads));
}

std::size_t ModelConfig::parameter_count() const { return ParamLayout(*this).total; }

std::uint64_t ModelCheckpoint::params_hash() const {
  return Fnv1a{}.values(std::span<const double>(params)).digest();
}

ModelCheckpoint init_model(const ModelConfig& config) {
  config.validate();
  const ParamLayout L(config);
  ModelCheckpoint ckpt;
  ckpt.config = config;
  ckpt.params.assign(L.total, 0.0);
  std::mt19937_64 rng(derive_seed(config.seed, "init"));
  auto fill = [&](std::size_t off, std::size_t count, double bound) {
    for (std::size_t k = 0; k < count; ++k) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      double w = (2.0 * u - 1.0) * bound;
      if (config.precision == Precision::float32) w = static_cast<float>(w);
      ckpt.params[off + k] = w;
    }
  };
  auto ones = [&](std::size_t off, std::size_t count) {
    std::fill_n(ckpt.params.begin() + static_cast<std::ptrdiff_t>(off), count, 1.0);
  };
  const std::size_t V = config.vocab_size, E = config.embed_dim, H = config.hidden_dim;
  const double emb = 1.0 / std::sqrt(static_cast<double>(E));
  fill(L.tok, (V + 1) * E, emb);
  fill(L.pos, static_cast<std::size_t>(config.context_length) * E, emb);
  for (const auto& o : L.layers) {
    ones(o.ln1_g, E);
    fill(o.w_qkv, E * 3 * E, 1.0 / std::sqrt(static_cast<double>(E)));
    fill(o.w_o, E * E, 1.0 / std::sqrt(static_cast<double>(E)));
    ones(o.ln2_g, E);
    fill(o.w_fc, E * H, 1.0 / std::sqrt(static_cast<double>(E)));
    fill(o.w_proj, H * E, 1.0 / std::sqrt(static_cast<double>(H)));
  }
  ones(L.lnf_g, E);
  // Output projection and bias stay zero: the initial distribution is uniform.
  return ckpt;
}

std::vector<int> input_window(const ModelConfig& config, const EventSequence& context) {
  std::vector<int> seq;
  seq.reserve(context.size() + 1);
  seq.push_back(config.vocab_size);
  seq.insert(seq.end(), context.begin(), context.end());
  const auto P = static_cast<std::size_t>(config.context_length);
  if (seq.size() > P) seq.erase(seq.begin(), seq.end() - static_cast<std::ptrdiff_t>(P));
  return seq;
}

std::vector<double> next_event_distribution(const ModelCheckpoint& model, const EventSequence& context) {
  if (context.empty()) throw Error(ErrorCode::EmptyContext, "next_event_distribution needs at least one event");
  check_tokens(model.config, context);
  Transformer<double> net(model.config, model.params.data());
  const auto& logits = net.forward(input_window(model.config, context));
  const auto z = logits.row(logits.rows() - 1);
  const double lse = log_sum_exp(z);
  std::vector<double> p(static_cast<std::size_t>(z.size()));
  for (Eigen::Index j = 0; j < z.size(); ++j) p[static_cast<std::size_t>(j)] = std::exp(z(j) - lse);
  return p;
}

std::vector<double> event_log_probs(const ModelCheckpoint& model, const EventSequence& segment,
                                    const EventSequence& context) {
  check_tokens(model.config, context);
  check_tokens(model.config, segment);
  Transformer<double> net(model.config, model.params.data());
  std::vector<double> out;
  out.reserve(segment.size());
  for (const Pass& pass : plan_passes(model.config, context, segment)) {
    const auto& logits = net.forward(pass.input);
    for (auto [r, y] : pass.targets) {
      const auto z = logits.row(r);
      out.push_back(z(y) - log_sum_exp(z));
    }
  }
  return out;
}

double sequence_log_likelihood(const ModelCheckpoint& model, const EventSequence& segment,
                               const EventSequence& context) {
  const auto lp = event_log_probs(model, segment, context);
  return std::accumulate(lp.begin(), lp.end(), 0.0);
}

TrainResult train(const std::vector<EventSequence>& windows, const ModelConfig& config, const TrainHyper& hyper,
                  std::vector<bool> subset_mask, std::uint64_t corpus_hash) {
  config.validate();
  if (windows.empty()) throw Error(ErrorCode::EmptyCorpus, "training corpus is empty");
  if (hyper.epochs < 0) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 0");
  for (const auto& w : windows) {
    if (static_cast<int>(w.size()) != config.context_length)
      throw Error(ErrorCode::InvalidConfig, "training window of length " + std::to_string(w.size()) +
                                                " != context_length " + std::to_string(config.context_length));
    check_tokens(config, w);
  }
  if (config.precision == Precision::float32)
    return train_impl<float>(windows, config, hyper, std::move(subset_mask), corpus_hash);
  return train_impl<double>(windows, config, hyper, std::move(subset_mask), corpus_hash);
}

double mean_training_loss(const ModelCheckpoint& model, const std::vector<EventSequence>& windows) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& w : windows) {
    const auto lp = event_log_probs(model, w, {});
    for (double x : lp) total -= x;
    count += lp.size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

std::vector<double> training_loss_gradient(const ModelCheckpoint& model, const std::vector<EventSequence>& windows) {
  const std::size_t D = model.params.size();
  std::vector<double> grad(D, 0.0);
  std::size_t count = 0;
  for (const auto& w : windows) count += w.size();
  if (count == 0) return grad;
  Transformer<double> net(model.config, model.params.data());
  Mat<double> dlogits;
  for (const auto& w : windows) {
    for (const Pass& pass : plan_passes(model.config, {}, w)) {
      const auto& logits = net.forward(pass.input);
      dlogits.setZero(logits.rows(), logits.cols());
      for (auto [r, y] : pass.targets) {
        output_and_grad(logits.row(r), y, OutputFn::log_prob, dlogits.row(r));
        dlogits.row(r) *= -1.0 / static_cast<double>(count);
      }
      net.backward(dlogits, grad.data());
    }
  }
  return grad;
}

EventSequence generate(const ModelCheckpoint& model, const EventSequence& prompt, int length,
                       const Sampling& sampling) {
  if (prompt.empty()) throw Error(ErrorCode::EmptyPrompt, "generate needs a non-empty prompt");
  if (length < 1) throw Error(ErrorCode::InvalidConfig, "length must be >= 1");
  check_tokens(model.config, prompt);
  Transformer<double> net(model.config, model.params.data());
  std::mt19937_64 rng(sampling.seed);
  EventSequence context = prompt;
  EventSequence out;
  out.reserve(static_cast<std::size_t>(length));
  const int V = model.config.vocab_size;
  std::vector<double> w(static_cast<std::size_t>(V));
  for (int step = 0; step < length; ++step) {
    const auto& logits = net.forward(input_window(model.config, context));
    const auto z = logits.row(logits.rows() - 1);
    int next = 0;
    if (sampling.temperature <= 0.0) {
      for (int j = 1; j < V; ++j)
        if (z(j) > z(next)) next = j;
    } else {
      std::vector<int> idx(static_cast<std::size_t>(V));
      std::iota(idx.begin(), idx.end(), 0);
      int keep = V;
      if (sampling.top_k > 0 && sampling.top_k < V) {
        keep = sampling.top_k;
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return z(a) > z(b); });
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (int r = 0; r < keep; ++r) mx = std::max(mx, z(idx[r]) / sampling.temperature);
      double total = 0.0;
      for (int r = 0; r < keep; ++r) {
        w[static_cast<std::size_t>(r)] = std::exp(z(idx[r]) / sampling.temperature - mx);
        total += w[static_cast<std::size_t>(r)];
      }
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
      double acc = 0.0;
      next = idx[static_cast<std::size_t>(keep - 1)];
      for (int r = 0; r < keep; ++r) {
        acc += w[static_cast<std::size_t>(r)];
        if (u < acc) {
          next = idx[static_cast<std::size_t>(r)];
          break;
        }
      }
    }
    out.push_back(next);
    context.push_back(next);
  }
  return out;
}

std::vector<double> per_example_gradient(const ModelCheckpoint& model, const GradientTarget& target, OutputFn fn) {
  check_tokens(model.config, target.context);
  check_tokens(model.config, target.tokens);
  std::vector<double> grad(model.params.size(), 0.0);
  Transformer<double> net(model.config, model.params.data());
  Mat<double> dlogits;
  for (const Pass& pass : plan_passes(model.config, target.context, target.tokens)) {
    const auto& logits = net.forward(pass.input);
    dlogits.setZero(logits.rows(), logits.cols());
    for (auto [r, y] : pass.targets) output_and_grad(logits.row(r), y, fn, dlogits.row(r));
    net.backward(dlogits, grad.data());
  }
  return grad;
}

double output_function(const ModelCheckpoint& model, const GradientTarget& target, OutputFn fn) {
  check_tokens(model.config, target.context);
  check_tokens(model.config, target.tokens);
  Transformer<double> net(model.config, model.params.data());
  Eigen::Matrix<double, 1, Eigen::Dynamic> scratch(model.config.vocab_size);
  double total = 0.0;
  for (const Pass& pass : plan_passes(model.config, target.context, target.tokens)) {
    const auto& logits = net.forward(pass.input);
    for (auto [r, y] : pass.targets) total += output_and_grad(logits.row(r), y, fn, scratch);
  }
  return total;
}

WindowFeatures window_features(const ModelCheckpoint& model, const EventSequence& window, OutputFn fn) {
  check_tokens(model.config, window);
  WindowFeatures f;
  f.gradient.assign(model.params.size(), 0.0);
  Transformer<double> net(model.config, model.params.data());
  Mat<double> dlogits;
  double q = 0.0;
  for (const Pass& pass : plan_passes(model.config, {}, window)) {
    const auto& logits = net.forward(pass.input);
    dlogits.setZero(logits.rows(), logits.cols());
    for (auto [r, y] : pass.targets) {
      const double psi = output_and_grad(logits.row(r), y, fn, dlogits.row(r));
      const double logp = fn == OutputFn::log_prob ? psi : logits(r, y) - log_sum_exp(logits.row(r));
      q += 1.0 - std::exp(logp);
    }
    net.backward(dlogits, f.gradient.data());
  }
  f.one_minus_p = window.empty() ? 0.0 : q / static_cast<double>(window.size());
  return f;
}

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& model) {
  const ModelConfig& c = model.config;
  const TrainingProvenance& p = model.provenance;
  json header = {
      {"format", "ACKP1"},
      {"config",
       {{"vocab_size", c.vocab_size},
        {"context_length", c.context_length},
        {"embed_dim", c.embed_dim},
        {"num_layers", c.num_layers},
        {"num_heads", c.num_heads},
        {"hidden_dim", c.hidden_dim},
        {"seed", hex64(c.seed)},
        {"precision", to_string(c.precision)}}},
      {"provenance",
       {{"corpus_hash", hex64(p.corpus_hash)},
        {"subset_mask", mask_string(p.subset_mask)},
        {"epochs", p.epochs},
        {"optimizer_state_hash", hex64(p.optimizer_state_hash)},
        {"initial_loss", p.initial_loss},
        {"final_loss", p.final_loss}}},
      {"parameter_count", model.params.size()},
      {"dtype", to_string(c.precision)},
      {"byte_order", "little"},
  };
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kCkptMagic, kCkptMagic + 5);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  auto put = [&](auto value) {
    std::uint8_t b[sizeof value];
    std::memcpy(b, &value, sizeof value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof value);
    out.insert(out.end(), b, b + sizeof value);
  };
  for (double x : model.params) {
    if (c.precision == Precision::float32) put(static_cast<float>(x));
    else put(x);
  }
  return out;
}

ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 13 || !std::equal(kCkptMagic, kCkptMagic + 5, bytes.begin()))
    throw Error(ErrorCode::Format, "not an ACKP1 checkpoint");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[5 + i]) << (8 * i);
  if (13 + len > bytes.size()) throw Error(ErrorCode::Format, "checkpoint header truncated");
  json h;
  try {
    h = json::parse(bytes.begin() + 13, bytes.begin() + 13 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("checkpoint header: ") + e.what());
  }
  ModelCheckpoint m;
  try {
    const json& c = h.at("config");
    m.config.vocab_size = c.at("vocab_size");
    m.config.context_length = c.at("context_length");
    m.config.embed_dim = c.at("embed_dim");
    m.config.num_layers = c.at("num_layers");
    m.config.num_heads = c.at("num_heads");
    m.config.hidden_dim = c.at("hidden_dim");
    m.config.seed = parse_hex64(c.at("seed"));
    m.config.precision = precision_from_string(c.at("precision"));
    const json& p = h.at("provenance");
    m.provenance.corpus_hash = parse_hex64(p.at("corpus_hash"));
    m.provenance.subset_mask = mask_from_string(p.at("subset_mask"));
    m.provenance.epochs = p.at("epochs");
    m.provenance.optimizer_state_hash = parse_hex64(p.at("optimizer_state_hash"));
    m.provenance.initial_loss = p.at("initial_loss");
    m.provenance.final_loss = p.at("final_loss");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("checkpoint header: ") + e.what());
  }
  m.config.validate();
  const std::size_t count = h.at("parameter_count");
  if (count != m.config.parameter_count())
    throw Error(ErrorCode::Format, "parameter_count does not match config");
  const std::size_t width = m.config.precision == Precision::float32 ? 4 : 8;
  const std::size_t body = 13 + len;
  if (bytes.size() - body != count * width) throw Error(ErrorCode::Format, "checkpoint parameter block size");
  m.params.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint8_t b[8];
    std::memcpy(b, bytes.data() + body + k * width, width);
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + width);
    if (width == 4) {
      float f;
      std::memcpy(&f, b, 4);
      m.params[k] = f;
    } else {
      std::memcpy(&m.params[k], b, 8);
    }
  }
  return m;
}

void save_checkpoint(const ModelCheckpoint& model, const std::string& path) {
  midi::write_file(path, encode_checkpoint(model));
}

ModelCheckpoint load_checkpoint(const std::string& path) { return decode_checkpoint(midi::read_file(path)); }

}  // namespace arec::model
