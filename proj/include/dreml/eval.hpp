#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dreml/types.hpp"

namespace dre {

struct Ensemble;
struct EmbeddingModel;

/// Exhaustive dot-product retrieval over a gallery of unit vectors.
class RetrievalIndex {
 public:
  /// Throws if a row norm deviates from 1 by more than 1e-6 or the label count
  /// differs from the row count.
  RetrievalIndex(Matrix gallery, Labels labels, std::optional<std::vector<std::int64_t>> ids = std::nullopt);

  const Matrix& gallery() const { return gallery_; }
  const Labels& labels() const { return labels_; }
  const std::optional<std::vector<std::int64_t>>& ids() const { return ids_; }
  Index size() const { return gallery_.rows(); }

 private:
  Matrix gallery_;
  Labels labels_;
  std::optional<std::vector<std::int64_t>> ids_;
};

/// Fraction of queries with a same-class item among the K most similar
/// gallery rows, for each K. Equal similarities rank the lower gallery index
/// first. With `self_match_excluded`, query i is gallery row i and may not
/// retrieve itself.
std::map<int, double> recall_at_k(const RetrievalIndex& index, const Eigen::Ref<const Matrix>& queries,
                                  std::span<const Label> query_labels, std::span<const int> ks,
                                  bool self_match_excluded);

struct KMeansOptions {
  int restarts = 10;
  int max_iters = 300;
};

struct KMeansResult {
  Labels assignment;
  Matrix centroids;
  double inertia = 0.0;
  /// Inertia after each assignment step of the winning restart.
  std::vector<double> inertia_trace;
  int winning_restart = 0;
};

/// Lloyd's algorithm from k-means++ seeds; keeps the lowest-inertia restart
/// (earliest on ties). Distance ties go to the lower centroid index, and a
/// centroid that loses all its points stays where it was.
KMeansResult kmeans(const Eigen::Ref<const Matrix>& points, int k, std::uint64_t seed, KMeansOptions options = {});

/// Mutual information normalized by the arithmetic mean of both entropies.
/// Two single-cluster assignments score 1; one single-cluster assignment
/// against a non-trivial one scores 0.
double nmi(std::span<const Label> a, std::span<const Label> b);

struct DotHistograms {
  std::vector<double> edges;  // bins + 1 values spanning [-1, 1]
  std::vector<std::uint64_t> same_counts;
  std::vector<std::uint64_t> diff_counts;
  std::uint64_t same_pairs = 0;
  std::uint64_t diff_pairs = 0;
  double same_mean = 0.0;
  double diff_mean = 0.0;
  double threshold = 0.75;
  std::uint64_t same_above = 0;  // pairs with dot > threshold
  std::uint64_t diff_above = 0;

  double diff_fraction_above() const { return diff_pairs ? double(diff_above) / double(diff_pairs) : 0.0; }
  double separation() const { return same_mean - diff_mean; }
  nlohmann::json to_json() const;
};

/// Histograms of the dot products of all unordered row pairs, split by
/// whether the two labels agree. Throws EmptyStratum when either side has no pairs.
DotHistograms dot_product_histograms(const Eigen::Ref<const Matrix>& embeddings, std::span<const Label> labels,
                                     int bins = 100, double threshold = 0.75);

/// CSV with columns bin_left,bin_right,same_count,diff_count.
void write_histogram_csv(const DotHistograms& h, const std::filesystem::path& path);

struct UnseenSpread {
  Vector max_similarity;  // one entry per test row
  std::vector<Index> nearest_train;
  double mean = 0.0;
  double threshold = 0.75;
  double fraction_above = 0.0;
  nlohmann::json summary_json() const;
};

/// For every test embedding, the largest dot product with any train embedding.
UnseenSpread unseen_spread(const Eigen::Ref<const Matrix>& train_embeddings, const Eigen::Ref<const Matrix>& test_embeddings,
                           double threshold = 0.75);
UnseenSpread unseen_spread(const Ensemble& ensemble, const Eigen::Ref<const Matrix>& train_features,
                           const Eigen::Ref<const Matrix>& test_features, double threshold = 0.75);
UnseenSpread unseen_spread(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& train_features,
                           const Eigen::Ref<const Matrix>& test_features, double threshold = 0.75);

struct EvalReport {
  static constexpr int kFormatVersion = 1;
  std::map<int, double> recall_at;
  std::optional<double> nmi;
  std::map<std::string, DotHistograms> histograms;
  nlohmann::json config = nlohmann::json::object();

  /// Throws unless recall is non-decreasing in K and every value is finite.
  void validate() const;
  nlohmann::json to_json() const;
};

struct RetrievalEvalOptions {
  std::vector<int> ks{1, 2, 4, 8};
  bool with_nmi = false;
  std::uint64_t kmeans_seed = 0;
  KMeansOptions kmeans{};
};

/// Single-set protocol: every row queries all other rows (self excluded); NMI
/// clusters the embeddings with k = number of distinct labels.
EvalReport evaluate_retrieval(const Eigen::Ref<const Matrix>& embeddings, std::span<const Label> labels,
                              const RetrievalEvalOptions& options);

}  // namespace dre
