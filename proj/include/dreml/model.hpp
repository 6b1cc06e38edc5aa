#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"

#include "dreml/partition.hpp"
#include "dreml/types.hpp"

namespace dre {

/// Hyperparameters for one ensemble member. Optimizer defaults follow the
/// usual fine-tuning recipe: SGD at 0.01, divided by 10 every 4 epochs,
/// batches of 128 for 12 epochs.
struct ModelConfig {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  /// Number of classifier outputs, i.e. the number of meta-classes D.
  int output_dim = 0;
  /// 0 means "same as output_dim": the L2-normalized logits are the embedding.
  /// Any other value inserts a linear embedding layer of this width followed
  /// by a linear D-way classifier head, and the embedding is taken before the head.
  int embedding_dim = 0;
  double learning_rate = 0.01;
  double lr_decay_factor = 10.0;
  int lr_decay_every = 4;
  int epochs = 12;
  int batch_size = 128;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
  bool has_head() const { return embedding_dim != 0 && embedding_dim != output_dim; }
  int embed_dim() const { return has_head() ? embedding_dim : output_dim; }
  /// Widths of every layer boundary, input first.
  std::vector<int> layer_dims() const;
  /// Step-decay schedule: learning_rate / lr_decay_factor^(epoch / lr_decay_every).
  double learning_rate_at(int epoch) const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Fully connected layer computing x * weight + bias for row-vector inputs.
struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  Vector bias;    // fan_out
};

struct EmbeddingModel {
  ModelConfig config;
  std::vector<DenseLayer> layers;
  /// Sample-weighted mean cross-entropy of each training epoch.
  std::vector<double> training_log;

  /// Index of the layer whose output, L2-normalized, is the embedding.
  std::size_t embedding_layer() const { return config.has_head() ? layers.size() - 2 : layers.size() - 1; }
  /// Rectified linear units follow every layer before the embedding layer.
  bool activated(std::size_t layer) const { return layer < embedding_layer(); }
  Index embed_dim() const { return config.embed_dim(); }

  nlohmann::json to_json() const;
  static EmbeddingModel from_json(const nlohmann::json& j);
};

/// Weights uniform in +-sqrt(6 / fan_in) ahead of a ReLU and +-sqrt(3 / fan_in)
/// otherwise, drawn layer by layer in row-major order; biases zero.
EmbeddingModel init_model(const ModelConfig& config);

/// Unnormalized classifier outputs (logits), one row per input row.
Matrix forward_logits(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs);

/// Raw (unnormalized) embedding-layer activations, one row per input row.
Matrix forward_raw_embed(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs);

/// L2-normalized embedding of each row. Throws DegenerateEmbedding when a raw
/// activation has norm below 1e-12.
Matrix forward_embed_batch(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs);
Vector forward_embed(const EmbeddingModel& model, const Eigen::Ref<const Vector>& input);

/// Argmax of the logits, ties to the lower class.
std::vector<int> classify(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<DenseLayer> grads;  // shapes match model.layers
};

/// Mean softmax cross-entropy over the batch and its exact gradient.
LossAndGrad loss_and_grad(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs,
                          std::span<const int> labels);

/// SGD with momentum over seeded-shuffled mini-batches with step decay.
/// The configured output_dim must match the number of distinct labels allowed.
EmbeddingModel train_member(const Eigen::Ref<const Matrix>& inputs, std::span<const int> labels,
                            const ModelConfig& config);
EmbeddingModel train_member(const MetaLabeledSet& data, const ModelConfig& config);

void save_model(const EmbeddingModel& model, const std::filesystem::path& path);
EmbeddingModel load_model(const std::filesystem::path& path);

}  // namespace dre
