#include "dreml/model.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "dreml/error.hpp"
#include "dreml/random.hpp"
#include "json_io.hpp"

namespace dre {

namespace {

constexpr double kDegenerateNorm = 1e-12;

void check_inputs(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs) {
  if (inputs.cols() != model.config.input_dim)
    throw Error(ErrorCode::InvalidArgument, "input has " + std::to_string(inputs.cols()) + " features, model expects " +
                                                std::to_string(model.config.input_dim));
}

/// Pre-activation of every layer for a batch.
std::vector<Matrix> forward_all(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs,
                                std::size_t last_layer) {
  std::vector<Matrix> pre;
  pre.reserve(last_layer + 1);
  Matrix act = inputs;
  for (std::size_t l = 0; l <= last_layer; ++l) {
    const auto& layer = model.layers[l];
    Matrix z = act * layer.weight;
    z.rowwise() += layer.bias.transpose();
    if (model.activated(l)) act = z.cwiseMax(0.0);
    else act = z;
    pre.push_back(std::move(z));
  }
  return pre;
}

Matrix matrix_from_json(const nlohmann::json& j, const char* what) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto& data = j.at(what);
  if (rows < 1 || cols < 1 || static_cast<Index>(data.size()) != rows * cols)
    throw Error(ErrorCode::Parse, std::string("layer ") + what + " has inconsistent shape");
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < cols; ++k) m(i, k) = data[static_cast<std::size_t>(i * cols + k)].get<double>();
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  auto bad = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, "model config: " + msg); };
  if (input_dim < 1) bad("input_dim must be >= 1");
  if (output_dim < 1) bad("output_dim must be >= 1");
  if (embedding_dim < 0) bad("embedding_dim must be >= 0");
  for (int h : hidden_dims)
    if (h < 1) bad("hidden dims must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be finite and >= 0");
  if (!(lr_decay_factor > 0.0)) bad("lr_decay_factor must be > 0");
  if (lr_decay_every < 1) bad("lr_decay_every must be >= 1");
  if (epochs < 0) bad("epochs must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must lie in [0, 1)");
}

std::vector<int> ModelConfig::layer_dims() const {
  std::vector<int> dims{input_dim};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  if (has_head()) dims.push_back(embedding_dim);
  dims.push_back(output_dim);
  return dims;
}

double ModelConfig::learning_rate_at(int epoch) const {
  return learning_rate / std::pow(lr_decay_factor, epoch / lr_decay_every);
}

nlohmann::json ModelConfig::to_json() const {
  return {{"input_dim", input_dim},
          {"hidden_dims", hidden_dims},
          {"output_dim", output_dim},
          {"embedding_dim", embedding_dim},
          {"learning_rate", learning_rate},
          {"lr_decay_factor", lr_decay_factor},
          {"lr_decay_every", lr_decay_every},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"momentum", momentum},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.input_dim = j.value("input_dim", c.input_dim);
    c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
    c.output_dim = j.value("output_dim", c.output_dim);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.momentum = j.value("momentum", c.momentum);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("model config: ") + e.what());
  }
  return c;
}

nlohmann::json EmbeddingModel::to_json() const {
  nlohmann::json js_layers = nlohmann::json::array();
  for (const auto& layer : layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(layer.weight.size()));
    for (Index i = 0; i < layer.weight.rows(); ++i)
      for (Index k = 0; k < layer.weight.cols(); ++k) w.push_back(layer.weight(i, k));
    js_layers.push_back({{"rows", layer.weight.rows()},
                         {"cols", layer.weight.cols()},
                         {"weight", std::move(w)},
                         {"bias", std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size())}});
  }
  return {{"format", "dreml.model"},
          {"version", 1},
          {"config", config.to_json()},
          {"layers", std::move(js_layers)},
          {"training_log", training_log}};
}

EmbeddingModel EmbeddingModel::from_json(const nlohmann::json& j) {
  EmbeddingModel m;
  try {
    if (j.at("format").get<std::string>() != "dreml.model" || j.at("version").get<int>() != 1)
      throw Error(ErrorCode::Parse, "not a version-1 dreml.model container");
    m.config = ModelConfig::from_json(j.at("config"));
    m.config.validate();
    const auto dims = m.config.layer_dims();
    const auto& js_layers = j.at("layers");
    if (js_layers.size() + 1 != dims.size()) throw Error(ErrorCode::Parse, "layer count disagrees with config");
    for (std::size_t l = 0; l < js_layers.size(); ++l) {
      DenseLayer layer;
      layer.weight = matrix_from_json(js_layers[l], "weight");
      const auto bias = js_layers[l].at("bias").get<std::vector<double>>();
      layer.bias = Eigen::Map<const Vector>(bias.data(), static_cast<Index>(bias.size()));
      if (layer.weight.rows() != dims[l] || layer.weight.cols() != dims[l + 1] || layer.bias.size() != dims[l + 1])
        throw Error(ErrorCode::Parse, "layer " + std::to_string(l) + " shape disagrees with config");
      m.layers.push_back(std::move(layer));
    }
    m.training_log = j.at("training_log").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("model container: ") + e.what());
  }
  return m;
}

EmbeddingModel init_model(const ModelConfig& config) {
  config.validate();
  EmbeddingModel model;
  model.config = config;
  const auto dims = config.layer_dims();
  model.layers.resize(dims.size() - 1);
  Rng rng(derive_seed(config.seed, Stream::ModelInit));
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    auto& layer = model.layers[l];
    const double gain = model.activated(l) ? 6.0 : 3.0;
    const double a = std::sqrt(gain / dims[l]);
    layer.weight.resize(dims[l], dims[l + 1]);
    for (Index i = 0; i < layer.weight.rows(); ++i)
      for (Index k = 0; k < layer.weight.cols(); ++k) layer.weight(i, k) = rng.uniform(-a, a);
    layer.bias = Vector::Zero(dims[l + 1]);
  }
  return model;
}

Matrix forward_logits(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs) {
  check_inputs(model, inputs);
  return forward_all(model, inputs, model.layers.size() - 1).back();
}

Matrix forward_raw_embed(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs) {
  check_inputs(model, inputs);
  return forward_all(model, inputs, model.embedding_layer()).back();
}

Matrix forward_embed_batch(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs) {
  Matrix emb = forward_raw_embed(model, inputs);
  const auto degenerate = normalize_rows(emb, kDegenerateNorm);
  if (!degenerate.empty())
    throw Error(ErrorCode::DegenerateEmbedding,
                "raw embedding of input row " + std::to_string(degenerate.front()) + " has norm below 1e-12");
  return emb;
}

Vector forward_embed(const EmbeddingModel& model, const Eigen::Ref<const Vector>& input) {
  return forward_embed_batch(model, input.transpose()).row(0).transpose();
}

std::vector<int> classify(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs) {
  const Matrix logits = forward_logits(model, inputs);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

LossAndGrad loss_and_grad(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& inputs,
                          std::span<const int> labels) {
  check_inputs(model, inputs);
  const Index batch = inputs.rows();
  if (batch < 1) throw Error(ErrorCode::InvalidArgument, "empty batch");
  if (static_cast<Index>(labels.size()) != batch)
    throw Error(ErrorCode::LengthMismatch, "batch has " + std::to_string(batch) + " rows and " +
                                               std::to_string(labels.size()) + " labels");
  const int classes = model.config.output_dim;
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");

  const std::size_t depth = model.layers.size();
  const auto pre = forward_all(model, inputs, depth - 1);

  // Softmax cross-entropy on the logits; delta becomes dLoss/dLogits.
  Matrix delta = pre.back();
  double loss = 0.0;
  for (Index i = 0; i < batch; ++i) {
    const double m = delta.row(i).maxCoeff();
    delta.row(i).array() -= m;
    const double lse = std::log(delta.row(i).array().exp().sum());
    const int y = labels[static_cast<std::size_t>(i)];
    loss += lse - delta(i, y);
    delta.row(i) = (delta.row(i).array() - lse).exp().matrix();
    delta(i, y) -= 1.0;
  }
  const double inv = 1.0 / static_cast<double>(batch);
  delta *= inv;

  LossAndGrad out;
  out.loss = loss * inv;
  out.grads.resize(depth);
  for (std::size_t l = depth; l-- > 0;) {
    Matrix act_in;
    if (l == 0) act_in = inputs;
    else if (model.activated(l - 1)) act_in = pre[l - 1].cwiseMax(0.0);
    else act_in = pre[l - 1];
    out.grads[l].weight = act_in.transpose() * delta;
    out.grads[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix back = delta * model.layers[l].weight.transpose();
      if (model.activated(l - 1)) back.array() *= (pre[l - 1].array() > 0.0).cast<double>();
      delta = std::move(back);
    }
  }
  return out;
}

EmbeddingModel train_member(const Eigen::Ref<const Matrix>& inputs, std::span<const int> labels,
                            const ModelConfig& config) {
  if (inputs.rows() < 1) throw Error(ErrorCode::InvalidArgument, "cannot train on an empty dataset");
  EmbeddingModel model = init_model(config);
  check_inputs(model, inputs);
  if (static_cast<Index>(labels.size()) != inputs.rows())
    throw Error(ErrorCode::LengthMismatch, "training set has " + std::to_string(inputs.rows()) + " rows and " +
                                               std::to_string(labels.size()) + " labels");

  std::vector<DenseLayer> velocity(model.layers.size());
  for (std::size_t l = 0; l < velocity.size(); ++l) {
    velocity[l].weight = Matrix::Zero(model.layers[l].weight.rows(), model.layers[l].weight.cols());
    velocity[l].bias = Vector::Zero(model.layers[l].bias.size());
  }

  const auto n = static_cast<std::size_t>(inputs.rows());
  std::vector<Index> order(n);
  std::vector<int> batch_labels;
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(derive_seed(config.seed, Stream::BatchShuffle, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<Index>(order));
    const double lr = config.learning_rate_at(epoch);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t stop = std::min(n, start + batch_size);
      const std::vector<Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(stop));
      batch_labels.clear();
      for (Index r : rows) batch_labels.push_back(labels[static_cast<std::size_t>(r)]);
      const Matrix batch = inputs(rows, Eigen::all);

      const LossAndGrad lg = loss_and_grad(model, batch, batch_labels);
      if (!std::isfinite(lg.loss))
        throw Error(ErrorCode::NonFinite, "training loss diverged in epoch " + std::to_string(epoch));
      epoch_loss += lg.loss * static_cast<double>(rows.size());

      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        velocity[l].weight = config.momentum * velocity[l].weight + lg.grads[l].weight;
        velocity[l].bias = config.momentum * velocity[l].bias + lg.grads[l].bias;
        model.layers[l].weight -= lr * velocity[l].weight;
        model.layers[l].bias -= lr * velocity[l].bias;
      }
    }
    model.training_log.push_back(epoch_loss / static_cast<double>(n));
  }
  return model;
}

EmbeddingModel train_member(const MetaLabeledSet& data, const ModelConfig& config) {
  if (config.output_dim != data.num_meta_classes)
    throw Error(ErrorCode::InvalidArgument, "model output_dim " + std::to_string(config.output_dim) +
                                                " does not match D = " + std::to_string(data.num_meta_classes));
  return train_member(data.features, data.meta_labels, config);
}

void save_model(const EmbeddingModel& model, const std::filesystem::path& path) {
  detail::write_json(path, model.to_json());
}

EmbeddingModel load_model(const std::filesystem::path& path) {
  return EmbeddingModel::from_json(detail::read_json(path));
}

}  // namespace dre
