#include "dreml/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "dreml/ensemble.hpp"
#include "dreml/error.hpp"
#include "dreml/model.hpp"
#include "dreml/random.hpp"

namespace dre {

namespace {

constexpr double kUnitTol = 1e-6;
constexpr Index kRowBlock = 256;

void require_unit_rows(const Eigen::Ref<const Matrix>& m, const char* what) {
  if (max_row_norm_error(m) > kUnitTol)
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " rows must be unit-normalized");
}

/// Dense codes 0..k-1 in order of first appearance.
std::vector<int> encode(std::span<const Label> labels, int& count) {
  std::unordered_map<Label, int> codes;
  std::vector<int> out;
  out.reserve(labels.size());
  for (Label l : labels) out.push_back(codes.try_emplace(l, static_cast<int>(codes.size())).first->second);
  count = static_cast<int>(codes.size());
  return out;
}

double entropy(const std::vector<double>& counts, double n) {
  double h = 0.0;
  for (double c : counts)
    if (c > 0) h -= (c / n) * std::log(c / n);
  return h;
}

Matrix kmeanspp_seeds(const Eigen::Ref<const Matrix>& points, int k, Rng& rng) {
  const Index n = points.rows();
  Matrix centroids(k, points.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  Index first = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
  centroids.row(0) = points.row(first);
  chosen[static_cast<std::size_t>(first)] = true;
  Vector closest = (points.rowwise() - points.row(first)).rowwise().squaredNorm();

  for (int c = 1; c < k; ++c) {
    const double total = closest.sum();
    Index pick = -1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (Index i = 0; i < n; ++i) {
        acc += closest(i);
        if (closest(i) > 0.0 && acc > target) {
          pick = i;
          break;
        }
      }
      // Rounding can leave acc <= target on the final step.
      if (pick < 0)
        for (Index i = n; i-- > 0;)
          if (closest(i) > 0.0) {
            pick = i;
            break;
          }
    } else {
      for (Index i = 0; i < n; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) {
          pick = i;
          break;
        }
    }
    centroids.row(c) = points.row(pick);
    chosen[static_cast<std::size_t>(pick)] = true;
    closest = closest.cwiseMin((points.rowwise() - points.row(pick)).rowwise().squaredNorm());
  }
  return centroids;
}

/// Assign each point to its nearest centroid (lower index on ties); returns inertia.
double assign(const Eigen::Ref<const Matrix>& points, const Matrix& centroids, Labels& assignment) {
  double inertia = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    Index best = 0;
    double best_d = (points.row(i) - centroids.row(0)).squaredNorm();
    for (Index c = 1; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    assignment[static_cast<std::size_t>(i)] = best;
    inertia += best_d;
  }
  return inertia;
}

KMeansResult lloyd(const Eigen::Ref<const Matrix>& points, int k, Rng& rng, int max_iters) {
  KMeansResult r;
  r.centroids = kmeanspp_seeds(points, k, rng);
  r.assignment.assign(static_cast<std::size_t>(points.rows()), 0);
  r.inertia = assign(points, r.centroids, r.assignment);
  r.inertia_trace.push_back(r.inertia);

  Labels previous;
  for (int it = 0; it < max_iters; ++it) {
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < points.rows(); ++i) {
      const auto c = r.assignment[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0)
        r.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);

    previous = r.assignment;
    r.inertia = assign(points, r.centroids, r.assignment);
    r.inertia_trace.push_back(r.inertia);
    if (r.assignment == previous) break;
  }
  return r;
}

}  // namespace

RetrievalIndex::RetrievalIndex(Matrix gallery, Labels labels, std::optional<std::vector<std::int64_t>> ids)
    : gallery_(std::move(gallery)), labels_(std::move(labels)), ids_(std::move(ids)) {
  if (static_cast<Index>(labels_.size()) != gallery_.rows())
    throw Error(ErrorCode::LengthMismatch, "gallery has " + std::to_string(gallery_.rows()) + " rows and " +
                                               std::to_string(labels_.size()) + " labels");
  if (ids_ && static_cast<Index>(ids_->size()) != gallery_.rows())
    throw Error(ErrorCode::LengthMismatch, "gallery ids do not match the row count");
  require_unit_rows(gallery_, "gallery");
}

std::map<int, double> recall_at_k(const RetrievalIndex& index, const Eigen::Ref<const Matrix>& queries,
                                  std::span<const Label> query_labels, std::span<const int> ks,
                                  bool self_match_excluded) {
  const Index n_gallery = index.size();
  const Index n_query = queries.rows();
  if (static_cast<Index>(query_labels.size()) != n_query)
    throw Error(ErrorCode::LengthMismatch, "query labels do not match the query count");
  if (n_query < 1) throw Error(ErrorCode::InvalidArgument, "no queries");
  if (queries.cols() != index.gallery().cols())
    throw Error(ErrorCode::InvalidArgument, "query and gallery dimensions differ");
  if (self_match_excluded && n_query != n_gallery)
    throw Error(ErrorCode::InvalidArgument, "self-match exclusion needs the query set to be the gallery");
  require_unit_rows(queries, "query");
  if (ks.empty()) throw Error(ErrorCode::InvalidArgument, "no K values requested");
  const Index max_k = n_gallery - (self_match_excluded ? 1 : 0);
  for (int k : ks)
    if (k < 1 || k > max_k)
      throw Error(ErrorCode::InvalidArgument, "K = " + std::to_string(k) + " outside [1, " + std::to_string(max_k) + "]");

  // For each query, the rank of its best same-class gallery item; a hit at K
  // means that rank is below K.
  std::vector<Index> first_hit(static_cast<std::size_t>(n_query), std::numeric_limits<Index>::max());
  const auto& gallery = index.gallery();
  const auto& glabels = index.labels();
  for (Index start = 0; start < n_query; start += kRowBlock) {
    const Index rows = std::min(kRowBlock, n_query - start);
    const Matrix sims = queries.middleRows(start, rows) * gallery.transpose();
    for (Index r = 0; r < rows; ++r) {
      const Index q = start + r;
      const Label ql = query_labels[static_cast<std::size_t>(q)];
      Index best = -1;
      for (Index g = 0; g < n_gallery; ++g) {
        if (self_match_excluded && g == q) continue;
        if (glabels[static_cast<std::size_t>(g)] != ql) continue;
        if (best < 0 || sims(r, g) > sims(r, best)) best = g;
      }
      if (best < 0) continue;
      const double s = sims(r, best);
      Index ahead = 0;
      for (Index g = 0; g < n_gallery; ++g) {
        if (self_match_excluded && g == q) continue;
        if (sims(r, g) > s || (sims(r, g) == s && g < best)) ++ahead;
      }
      first_hit[static_cast<std::size_t>(q)] = ahead;
    }
  }

  std::map<int, double> out;
  for (int k : ks) {
    const auto hits = std::count_if(first_hit.begin(), first_hit.end(), [k](Index rank) { return rank < k; });
    out[k] = static_cast<double>(hits) / static_cast<double>(n_query);
  }
  return out;
}

KMeansResult kmeans(const Eigen::Ref<const Matrix>& points, int k, std::uint64_t seed, KMeansOptions options) {
  if (k < 1 || k > points.rows())
    throw Error(ErrorCode::InvalidArgument, "k = " + std::to_string(k) + " outside [1, " + std::to_string(points.rows()) + "]");
  if (!points.allFinite()) throw Error(ErrorCode::NonFinite, "k-means input has non-finite values");
  if (options.restarts < 1 || options.max_iters < 0)
    throw Error(ErrorCode::InvalidArgument, "k-means needs restarts >= 1 and max_iters >= 0");

  KMeansResult best;
  for (int r = 0; r < options.restarts; ++r) {
    Rng rng(derive_seed(seed, Stream::KMeans, static_cast<std::uint64_t>(r)));
    KMeansResult trial = lloyd(points, k, rng, options.max_iters);
    trial.winning_restart = r;
    if (r == 0 || trial.inertia < best.inertia) best = std::move(trial);
  }
  return best;
}

double nmi(std::span<const Label> a, std::span<const Label> b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::LengthMismatch, "assignments have lengths " + std::to_string(a.size()) + " and " +
                                               std::to_string(b.size()));
  if (a.empty()) throw Error(ErrorCode::InvalidArgument, "assignments are empty");
  int ka = 0, kb = 0;
  const auto ca = encode(a, ka);
  const auto cb = encode(b, kb);
  const double n = static_cast<double>(a.size());

  Matrix joint = Matrix::Zero(ka, kb);
  for (std::size_t i = 0; i < ca.size(); ++i) joint(ca[i], cb[i]) += 1.0;
  std::vector<double> ra(static_cast<std::size_t>(ka)), rb(static_cast<std::size_t>(kb));
  for (int i = 0; i < ka; ++i) ra[static_cast<std::size_t>(i)] = joint.row(i).sum();
  for (int j = 0; j < kb; ++j) rb[static_cast<std::size_t>(j)] = joint.col(j).sum();

  const double ha = entropy(ra, n);
  const double hb = entropy(rb, n);
  if (ka == 1 && kb == 1) return 1.0;
  if (ka == 1 || kb == 1) return 0.0;

  double mi = 0.0;
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j) {
      const double c = joint(i, j);
      if (c > 0) mi += (c / n) * std::log(c * n / (ra[static_cast<std::size_t>(i)] * rb[static_cast<std::size_t>(j)]));
    }
  return std::clamp(mi / ((ha + hb) / 2.0), 0.0, 1.0);
}

nlohmann::json DotHistograms::to_json() const {
  return {{"edges", edges},
          {"same_counts", same_counts},
          {"diff_counts", diff_counts},
          {"same_pairs", same_pairs},
          {"diff_pairs", diff_pairs},
          {"same_mean", same_mean},
          {"diff_mean", diff_mean},
          {"separation", separation()},
          {"threshold", threshold},
          {"same_above", same_above},
          {"diff_above", diff_above},
          {"diff_fraction_above", diff_fraction_above()}};
}

DotHistograms dot_product_histograms(const Eigen::Ref<const Matrix>& embeddings, std::span<const Label> labels,
                                     int bins, double threshold) {
  const Index n = embeddings.rows();
  if (static_cast<Index>(labels.size()) != n) throw Error(ErrorCode::LengthMismatch, "labels do not match the row count");
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "need at least two rows");
  if (bins < 1) throw Error(ErrorCode::InvalidArgument, "need at least one bin");
  require_unit_rows(embeddings, "embedding");

  DotHistograms h;
  h.threshold = threshold;
  h.same_counts.assign(static_cast<std::size_t>(bins), 0);
  h.diff_counts.assign(static_cast<std::size_t>(bins), 0);
  for (int b = 0; b <= bins; ++b) h.edges.push_back(-1.0 + 2.0 * b / bins);

  double same_sum = 0.0, diff_sum = 0.0;
  for (Index start = 0; start < n; start += kRowBlock) {
    const Index rows = std::min(kRowBlock, n - start);
    const Matrix sims = embeddings.middleRows(start, rows) * embeddings.transpose();
    for (Index r = 0; r < rows; ++r) {
      const Index i = start + r;
      for (Index j = i + 1; j < n; ++j) {
        const double d = sims(r, j);
        const auto bin = static_cast<std::size_t>(
            std::clamp(static_cast<long>(std::floor((d + 1.0) / 2.0 * bins)), 0L, static_cast<long>(bins - 1)));
        if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
          ++h.same_counts[bin];
          ++h.same_pairs;
          same_sum += d;
          if (d > threshold) ++h.same_above;
        } else {
          ++h.diff_counts[bin];
          ++h.diff_pairs;
          diff_sum += d;
          if (d > threshold) ++h.diff_above;
        }
      }
    }
  }
  if (h.same_pairs == 0) throw Error(ErrorCode::EmptyStratum, "no same-class pairs");
  if (h.diff_pairs == 0) throw Error(ErrorCode::EmptyStratum, "no different-class pairs");
  h.same_mean = same_sum / static_cast<double>(h.same_pairs);
  h.diff_mean = diff_sum / static_cast<double>(h.diff_pairs);
  return h;
}

void write_histogram_csv(const DotHistograms& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "bin_left,bin_right,same_count,diff_count\n";
  for (std::size_t b = 0; b < h.same_counts.size(); ++b)
    out << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.same_counts[b] << ',' << h.diff_counts[b] << '\n';
}

nlohmann::json UnseenSpread::summary_json() const {
  return {{"count", max_similarity.size()}, {"mean", mean}, {"threshold", threshold}, {"fraction_above", fraction_above}};
}

UnseenSpread unseen_spread(const Eigen::Ref<const Matrix>& train_embeddings, const Eigen::Ref<const Matrix>& test_embeddings,
                           double threshold) {
  if (train_embeddings.rows() < 1) throw Error(ErrorCode::InvalidArgument, "empty train set");
  if (test_embeddings.rows() < 1) throw Error(ErrorCode::InvalidArgument, "empty test set");
  if (train_embeddings.cols() != test_embeddings.cols())
    throw Error(ErrorCode::InvalidArgument, "train and test embedding dimensions differ");
  require_unit_rows(train_embeddings, "train embedding");
  require_unit_rows(test_embeddings, "test embedding");

  UnseenSpread s;
  s.threshold = threshold;
  const Index n = test_embeddings.rows();
  s.max_similarity.resize(n);
  s.nearest_train.resize(static_cast<std::size_t>(n));
  for (Index start = 0; start < n; start += kRowBlock) {
    const Index rows = std::min(kRowBlock, n - start);
    const Matrix sims = test_embeddings.middleRows(start, rows) * train_embeddings.transpose();
    for (Index r = 0; r < rows; ++r) {
      Index best = 0;
      s.max_similarity(start + r) = sims.row(r).maxCoeff(&best);
      s.nearest_train[static_cast<std::size_t>(start + r)] = best;
    }
  }
  s.mean = s.max_similarity.mean();
  s.fraction_above = static_cast<double>((s.max_similarity.array() > threshold).count()) / static_cast<double>(n);
  return s;
}

UnseenSpread unseen_spread(const Ensemble& ensemble, const Eigen::Ref<const Matrix>& train_features,
                           const Eigen::Ref<const Matrix>& test_features, double threshold) {
  if (train_features.rows() < 1 || test_features.rows() < 1)
    throw Error(ErrorCode::InvalidArgument, "empty train or test set");
  return unseen_spread(embed_batch(ensemble, train_features), embed_batch(ensemble, test_features), threshold);
}

UnseenSpread unseen_spread(const EmbeddingModel& model, const Eigen::Ref<const Matrix>& train_features,
                           const Eigen::Ref<const Matrix>& test_features, double threshold) {
  if (train_features.rows() < 1 || test_features.rows() < 1)
    throw Error(ErrorCode::InvalidArgument, "empty train or test set");
  return unseen_spread(forward_embed_batch(model, train_features), forward_embed_batch(model, test_features), threshold);
}

void EvalReport::validate() const {
  double prev = -1.0;
  for (const auto& [k, r] : recall_at) {
    if (!std::isfinite(r) || r < 0.0 || r > 1.0)
      throw Error(ErrorCode::NonFinite, "recall@" + std::to_string(k) + " is not a fraction");
    if (r < prev) throw Error(ErrorCode::InvalidArgument, "recall decreases at K = " + std::to_string(k));
    prev = r;
  }
  if (nmi && (!std::isfinite(*nmi) || *nmi < 0.0 || *nmi > 1.0))
    throw Error(ErrorCode::NonFinite, "nmi is not in [0, 1]");
  for (const auto& [name, h] : histograms)
    if (!std::isfinite(h.same_mean) || !std::isfinite(h.diff_mean))
      throw Error(ErrorCode::NonFinite, "histogram '" + name + "' has a non-finite mean");
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [k, r] : recall_at) recall[std::to_string(k)] = r;
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [name, h] : histograms) hist[name] = h.to_json();
  nlohmann::json j = {{"format_version", kFormatVersion}, {"config", config}, {"recall_at", std::move(recall)}};
  j["nmi"] = nmi ? nlohmann::json(*nmi) : nlohmann::json(nullptr);
  j["histograms"] = std::move(hist);
  return j;
}

EvalReport evaluate_retrieval(const Eigen::Ref<const Matrix>& embeddings, std::span<const Label> labels,
                              const RetrievalEvalOptions& options) {
  EvalReport report;
  RetrievalIndex index(embeddings, Labels(labels.begin(), labels.end()));
  report.recall_at = recall_at_k(index, embeddings, labels, options.ks, true);
  if (options.with_nmi) {
    int classes = 0;
    encode(labels, classes);
    const auto clusters = kmeans(embeddings, classes, options.kmeans_seed, options.kmeans);
    report.nmi = nmi(clusters.assignment, labels);
  }
  report.validate();
  return report;
}

}  // namespace dre
