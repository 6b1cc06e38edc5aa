#include "doctest.h"

#include <cmath>
#include <numbers>

#include "dreml/error.hpp"
#include "dreml/model.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace dre;
using dre::testing::TempDir;

namespace {

void randomize_biases(EmbeddingModel& m, Rng& rng) {
  for (auto& layer : m.layers)
    for (Index j = 0; j < layer.bias.size(); ++j) layer.bias(j) = 0.3 * rng.normal();
}

ModelConfig small_config(int in, std::vector<int> hidden, int out, std::uint64_t seed = 1) {
  ModelConfig c;
  c.input_dim = in;
  c.hidden_dims = std::move(hidden);
  c.output_dim = out;
  c.seed = seed;
  return c;
}

struct Blobs {
  Matrix x;
  std::vector<int> y;
};

Blobs two_blobs(std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  b.x.resize(200, 2);
  for (Index i = 0; i < 200; ++i) {
    const int c = i < 100 ? 0 : 1;
    const double cx = c ? 2.0 : -2.0;
    b.x(i, 0) = cx + 0.5 * rng.normal();
    b.x(i, 1) = cx + 0.5 * rng.normal();
    b.y.push_back(c);
  }
  return b;
}

/// Plain full-batch logistic regression; the oracle that the blobs are separable.
double logistic_regression_accuracy(const Blobs& b) {
  Eigen::Vector2d w = Eigen::Vector2d::Zero();
  double bias = 0.0;
  for (int it = 0; it < 2000; ++it) {
    Eigen::Vector2d gw = Eigen::Vector2d::Zero();
    double gb = 0.0;
    for (Index i = 0; i < b.x.rows(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-(b.x.row(i).dot(w) + bias)));
      const double e = p - b.y[static_cast<std::size_t>(i)];
      gw += e * b.x.row(i).transpose();
      gb += e;
    }
    w -= 0.1 * gw / 200.0;
    bias -= 0.1 * gb / 200.0;
  }
  int correct = 0;
  for (Index i = 0; i < b.x.rows(); ++i)
    correct += ((b.x.row(i).dot(w) + bias > 0) ? 1 : 0) == b.y[static_cast<std::size_t>(i)];
  return correct / 200.0;
}

bool same_parameters(const EmbeddingModel& a, const EmbeddingModel& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    if (a.layers[l].weight != b.layers[l].weight || a.layers[l].bias != b.layers[l].bias) return false;
  return true;
}

}  // namespace

TEST_CASE("init is deterministic, shaped by the config, and seed-dependent") {
  const auto cfg = small_config(8, {16}, 4, 77);
  const auto a = init_model(cfg);
  const auto b = init_model(cfg);
  CHECK(same_parameters(a, b));
  REQUIRE(a.layers.size() == 2);
  CHECK(a.layers[0].weight.rows() == 8);
  CHECK(a.layers[0].weight.cols() == 16);
  CHECK(a.layers[1].weight.rows() == 16);
  CHECK(a.layers[1].weight.cols() == 4);
  CHECK(a.layers[0].bias.isZero());
  CHECK(a.layers[0].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 8));
  CHECK(a.layers[1].weight.cwiseAbs().maxCoeff() <= std::sqrt(3.0 / 16));
  CHECK_FALSE(same_parameters(a, init_model(small_config(8, {16}, 4, 78))));
}

TEST_CASE("invalid configs are rejected") {
  CHECK_THROWS_AS(init_model(small_config(0, {}, 3)), Error);
  CHECK_THROWS_AS(init_model(small_config(3, {}, 0)), Error);
  CHECK_THROWS_AS(init_model(small_config(3, {4, -1}, 2)), Error);
  auto c = small_config(3, {}, 2);
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config(3, {}, 2);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("embeddings have unit norm") {
  Rng rng(4);
  // Wide enough that no input row leaves every unit dead.
  const auto m = init_model(small_config(6, {64, 32}, 5, 3));
  const Matrix x = dre::testing::random_matrix(rng, 50, 6);
  const Matrix e = forward_embed_batch(m, x);
  CHECK(e.cols() == 5);
  CHECK(max_row_norm_error(e) < 1e-12);
  const Vector single = forward_embed(m, x.row(3).transpose());
  CHECK(std::abs(single.norm() - 1.0) < 1e-12);
  CHECK((single.transpose() - e.row(3)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("identity layer on (3, 4) embeds to (0.6, 0.8)") {
  auto m = init_model(small_config(2, {}, 2));
  m.layers[0].weight = Matrix::Identity(2, 2);
  const Vector e = forward_embed(m, Eigen::Vector2d(3.0, 4.0));
  CHECK(e(0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(e(1) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("zero weights give a degenerate-embedding error") {
  auto m = init_model(small_config(3, {4}, 2));
  for (auto& layer : m.layers) layer.weight.setZero();
  try {
    forward_embed(m, Eigen::Vector3d(1.0, 2.0, 3.0));
    FAIL("expected DegenerateEmbedding");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateEmbedding);
  }
  CHECK_THROWS_AS(forward_embed(m, Eigen::Vector2d(1.0, 2.0)), Error);
}

TEST_CASE("uniform logits cost ln(D)") {
  Rng rng(8);
  for (int d : {2, 3, 7}) {
    auto m = init_model(small_config(4, {5}, d));
    m.layers.back().weight.setZero();
    const Matrix x = dre::testing::random_matrix(rng, 9, 4);
    std::vector<int> y;
    for (int i = 0; i < 9; ++i) y.push_back(i % d);
    CHECK(loss_and_grad(m, x, y).loss == doctest::Approx(std::log(double(d))).epsilon(1e-14));
  }
}

TEST_CASE("gradients match central differences on a 5-sample 3-class net") {
  Rng rng(10);
  auto m = init_model(small_config(4, {6}, 3, 5));
  randomize_biases(m, rng);
  const Matrix x = dre::testing::random_matrix(rng, 5, 4);
  const std::vector<int> y{0, 2, 1, 2, 0};
  CHECK(loss_and_grad(m, x, y).loss == doctest::Approx(oracle::loss(m, x, y)).epsilon(1e-12));
  CHECK(oracle::max_gradient_error(m, x, y) < 1e-4);
}

TEST_CASE("property: gradients match central differences on random small configs") {
  Rng rng(11);
  for (int trial = 0; trial < 12; ++trial) {
    const int in = 1 + static_cast<int>(rng.below(5));
    std::vector<int> hidden;
    const auto depth = rng.below(3);
    for (std::uint64_t h = 0; h < depth; ++h) hidden.push_back(1 + static_cast<int>(rng.below(6)));
    const int out = 2 + static_cast<int>(rng.below(4));
    auto cfg = small_config(in, hidden, out, rng.next_u64());
    if (trial % 4 == 3) cfg.embedding_dim = 3;
    auto m = init_model(cfg);
    randomize_biases(m, rng);
    const Index n = 1 + static_cast<Index>(rng.below(6));
    const Matrix x = dre::testing::random_matrix(rng, n, in);
    std::vector<int> y;
    for (Index i = 0; i < n; ++i) y.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(out))));
    CAPTURE(trial);
    CHECK(oracle::max_gradient_error(m, x, y) < 1e-4);
  }
}

TEST_CASE("duplicating the batch leaves the mean loss unchanged") {
  Rng rng(12);
  const auto m = init_model(small_config(3, {4}, 3, 9));
  const Matrix x = dre::testing::random_matrix(rng, 6, 3);
  const std::vector<int> y{0, 1, 2, 2, 1, 0};
  Matrix xx(12, 3);
  xx << x, x;
  std::vector<int> yy = y;
  yy.insert(yy.end(), y.begin(), y.end());
  CHECK(loss_and_grad(m, xx, yy).loss == doctest::Approx(loss_and_grad(m, x, y).loss).epsilon(1e-14));
}

TEST_CASE("out-of-range labels and bad batches are rejected") {
  const auto m = init_model(small_config(2, {}, 3));
  const Matrix x = Matrix::Ones(2, 2);
  CHECK_THROWS_AS(loss_and_grad(m, x, std::vector<int>{0, 3}), Error);
  CHECK_THROWS_AS(loss_and_grad(m, x, std::vector<int>{0, -1}), Error);
  CHECK_THROWS_AS(loss_and_grad(m, x, std::vector<int>{0}), Error);
  CHECK_THROWS_AS(loss_and_grad(m, Matrix(0, 2), std::vector<int>{}), Error);
}

TEST_CASE("step-decay schedule with default hyperparameters") {
  ModelConfig c;
  CHECK(c.learning_rate == 0.01);
  CHECK(c.batch_size == 128);
  CHECK(c.epochs == 12);
  for (int e = 0; e < 4; ++e) CHECK(c.learning_rate_at(e) == doctest::Approx(0.01).epsilon(1e-15));
  for (int e = 4; e < 8; ++e) CHECK(c.learning_rate_at(e) == doctest::Approx(0.001).epsilon(1e-15));
  for (int e = 8; e < 12; ++e) CHECK(c.learning_rate_at(e) == doctest::Approx(0.0001).epsilon(1e-15));
}

TEST_CASE("separable blobs train to near-perfect accuracy") {
  const auto blobs = two_blobs(21);
  REQUIRE(logistic_regression_accuracy(blobs) == 1.0);

  auto cfg = small_config(2, {16}, 2, 4);
  const auto m = train_member(blobs.x, blobs.y, cfg);
  const auto pred = classify(m, blobs.x);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == blobs.y[i];
  CHECK(correct / 200.0 >= 0.99);
  REQUIRE(m.training_log.size() == 12);
  CHECK(m.training_log[11] < m.training_log[0]);
  CHECK(max_row_norm_error(forward_embed_batch(m, blobs.x)) < 1e-12);
}

TEST_CASE("training is deterministic and a zero learning rate changes nothing") {
  const auto blobs = two_blobs(22);
  auto cfg = small_config(2, {8}, 2, 6);
  const auto a = train_member(blobs.x, blobs.y, cfg);
  const auto b = train_member(blobs.x, blobs.y, cfg);
  CHECK(same_parameters(a, b));
  CHECK(a.training_log == b.training_log);

  cfg.learning_rate = 0.0;
  const auto frozen = train_member(blobs.x, blobs.y, cfg);
  CHECK(same_parameters(frozen, init_model(cfg)));
  CHECK(frozen.training_log.size() == 12);
}

TEST_CASE("training on an empty set or with mismatched D fails") {
  auto cfg = small_config(2, {}, 2);
  CHECK_THROWS_AS(train_member(Matrix(0, 2), std::vector<int>{}, cfg), Error);
  MetaLabeledSet set;
  set.features = Matrix::Ones(2, 2);
  set.meta_labels = {0, 1};
  set.num_meta_classes = 3;
  CHECK_THROWS_AS(train_member(set, cfg), Error);
}

TEST_CASE("diverging training raises a non-finite error") {
  const auto blobs = two_blobs(23);
  auto cfg = small_config(2, {8}, 2, 1);
  cfg.learning_rate = 1e300;
  try {
    train_member(blobs.x, blobs.y, cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFinite);
  }
}

TEST_CASE("embedding-dim override inserts a head and embeds before it") {
  auto cfg = small_config(5, {6}, 3, 2);
  cfg.embedding_dim = 8;
  const auto m = init_model(cfg);
  REQUIRE(m.layers.size() == 3);
  CHECK(m.embedding_layer() == 1);
  Rng rng(1);
  const Matrix x = dre::testing::random_matrix(rng, 4, 5);
  CHECK(forward_embed_batch(m, x).cols() == 8);
  CHECK(forward_logits(m, x).cols() == 3);
}

TEST_CASE("model container round-trips forward_embed bit-for-bit") {
  TempDir dir("model_io");
  const auto blobs = two_blobs(24);
  auto cfg = small_config(2, {7, 3}, 2, 12);
  const auto m = train_member(blobs.x, blobs.y, cfg);
  save_model(m, dir / "m.json");
  const auto back = load_model(dir / "m.json");
  CHECK(back.config == m.config);
  CHECK(back.training_log == m.training_log);
  CHECK(same_parameters(back, m));
  CHECK(forward_embed_batch(back, blobs.x) == forward_embed_batch(m, blobs.x));

  auto j = m.to_json();
  j["layers"][0]["rows"] = 3;
  CHECK_THROWS_AS(EmbeddingModel::from_json(j), Error);
  CHECK_THROWS_AS(load_model(dir / "missing.json"), Error);
}
