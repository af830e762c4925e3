// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "arec/corpus.hpp"
#include "arec/events.hpp"

namespace arec::model {

using events::EventSequence;
using events::Token;

enum class Precision { float32, float64 };

/// Decoder-only transformer hyperparameters. The parameter vector length is a
/// pure function of this struct (see parameter_count).
struct ModelConfig {
  int vocab_size = events::VocabularyLayout::kSize;
  int context_length = 256;
  int embed_dim = 128;
  int num_layers = 2;
  int num_heads = 4;
  int hidden_dim = 512;
  std::uint64_t seed = 0;
  Precision precision = Precision::float32;

  /// Throws InvalidConfig.
  void validate() const;
  std::size_t parameter_count() const;

  bool operator==(const ModelConfig&) const = default;
};

struct TrainingProvenance {
  std::uint64_t corpus_hash = 0;
  std::vector<bool> subset_mask;  // over the full corpus; empty when untrained
  int epochs = 0;
  std::uint64_t optimizer_state_hash = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;

  bool operator==(const TrainingProvenance&) const = default;
};

/// Parameters are stored in double regardless of precision; a float32 model
/// holds values exactly representable in float.
///
/// Parameter order (row-major matrices, x * W convention):
///   token_embedding   (vocab_size + 1) x E   last row is BOS
///   position_embedding context_length x E
///   per layer: ln1 gain E, ln1 bias E, qkv weight E x 3E, qkv bias 3E,
///              attn_out weight E x E, attn_out bias E, ln2 gain E, ln2 bias E,
///              fc weight E x H, fc bias H, proj weight H x E, proj bias E
///   final ln gain E, final ln bias E, output weight E x V, output bias V
struct ModelCheckpoint {
  ModelConfig config;
  std::vector<double> params;
  TrainingProvenance provenance;

  std::uint64_t params_hash() const;
};

/// Weights uniform in +-1/sqrt(fan_in) from config.seed; biases, LayerNorm
/// shifts and the output projection are zero; LayerNorm gains are one.
ModelCheckpoint init_model(const ModelConfig& config);

/// The model input for predicting the event after `context`: the last
/// context_length entries of [BOS, context...].
std::vector<int> input_window(const ModelConfig& config, const EventSequence& context);

/// Next-event probabilities (float64). Throws EmptyContext.
std::vector<double> next_event_distribution(const ModelCheckpoint& model, const EventSequence& context);

/// log p(segment[i] | context + segment[0..i)) for each i, in nats.
/// An empty context conditions the first event on BOS alone.
std::vector<double> event_log_probs(const ModelCheckpoint& model, const EventSequence& segment,
                                    const EventSequence& context);

/// Chain-rule sum of event_log_probs.
double sequence_log_likelihood(const ModelCheckpoint& model, const EventSequence& segment,
                               const EventSequence& context);

struct TrainHyper {
  int epochs = 10;
  int batch_size = 16;  // <= 0 means full batch
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double grad_clip = 0.0;     // global norm; 0 disables

  bool operator==(const TrainHyper&) const = default;
};

struct TrainResult {
  ModelCheckpoint model;
  std::vector<double> epoch_losses;  // mean token NLL per epoch
};

/// Deterministic training: example order is shuffled per epoch from a seed
/// derived from config.seed, batches reduce in a fixed order.
/// `subset_mask`, when non-empty, is recorded in provenance and describes
/// which works of a larger corpus `windows` were drawn from.
/// Throws EmptyCorpus, InvalidConfig or NonFiniteLoss.
TrainResult train(const std::vector<EventSequence>& windows, const ModelConfig& config, const TrainHyper& hyper,
                  std::vector<bool> subset_mask = {}, std::uint64_t corpus_hash = 0);

/// Mean token NLL of the windows under `model` (teacher forcing, BOS first).
double mean_training_loss(const ModelCheckpoint& model, const std::vector<EventSequence>& windows);

/// Gradient of mean_training_loss with respect to all parameters.
std::vector<double> training_loss_gradient(const ModelCheckpoint& model, const std::vector<EventSequence>& windows);

struct Sampling {
  double temperature = 1.0;  // 0 = greedy, ties to the lowest index
  int top_k = 0;             // 0 = full vocabulary
  std::uint64_t seed = 0;
};

/// Exactly `length` new tokens. Throws EmptyPrompt.
EventSequence generate(const ModelCheckpoint& model, const EventSequence& prompt, int length, const Sampling& sampling);

enum class OutputFn { log_prob, logit_margin };

/// psi = log p(y) or log(p(y) / (1 - p(y))) for each target event; the
/// gradient is of the sum over events. Each event is conditioned on
/// context + tokens[0..i).
struct GradientTarget {
  EventSequence context;
  EventSequence tokens;
};

/// Exact float64 gradient of the summed output function, length D.
std::vector<double> per_example_gradient(const ModelCheckpoint& model, const GradientTarget& target, OutputFn fn);

/// Value of the summed output function (float64).
double output_function(const ModelCheckpoint& model, const GradientTarget& target, OutputFn fn);

/// Gradient of the output function summed over the events of one training
/// window (teacher forcing from BOS), together with the mean of (1 - p_correct)
/// over those events.
struct WindowFeatures {
  std::vector<double> gradient;
  double one_minus_p = 0.0;
};
WindowFeatures window_features(const ModelCheckpoint& model, const EventSequence& window, OutputFn fn);

// ACKP1 checkpoint file:
//   "ACKP1", uint64 LE header length, UTF-8 JSON header (config, provenance,
//   parameter_count, dtype), then parameter_count little-endian float32 or
//   float64 values in the documented order.
std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& model);
ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ModelCheckpoint& model, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);
std::string to_string(OutputFn fn);
OutputFn output_fn_from_string(const std::string& s);

}  // namespace arec::model
