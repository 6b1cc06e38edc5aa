#pragma once

#include <filesystem>
#include <vector>

#include "dreml/data.hpp"
#include "dreml/model.hpp"
#include "dreml/partition.hpp"
#include "dreml/types.hpp"

namespace dre {

/// L independently trained members and the concatenation rule producing the
/// ensemble embedding. Immutable once built; embedding is safe to call from
/// several threads.
struct Ensemble {
  std::vector<EmbeddingModel> members;
  PartitionFamily family;
  /// Config every member was derived from (output_dim and seed are per member).
  ModelConfig config_template;
  /// Scale the concatenation by 1/sqrt(L) so the result has unit norm.
  bool normalize_concat = true;

  std::size_t size() const { return members.size(); }
  Index input_dim() const { return members.empty() ? 0 : members.front().config.input_dim; }
  Index embed_dim() const;
  /// First `count` members together with the matching family prefix.
  Ensemble prefix(std::size_t count) const;
};

/// Seed of member `i`: derived from the template seed so that each member is
/// reproducible on its own.
std::uint64_t member_seed(std::uint64_t template_seed, std::size_t member_index);

/// Train every member on the dataset's training split relabeled by its
/// partition. At most `parallelism` members train at once; the result does not
/// depend on `parallelism`. A failing member aborts the whole ensemble with an
/// error tagged by its member index (the lowest failing index wins).
Ensemble train_ensemble(const LabeledDataset& dataset, const PartitionFamily& family, const ModelConfig& config_template,
                        int parallelism = 1, bool normalize_concat = true);

/// Concatenated member embeddings of one input, in member order.
Vector embed(const Ensemble& ensemble, const Eigen::Ref<const Vector>& input);
/// Row i is embed(ensemble, inputs.row(i)).
Matrix embed_batch(const Ensemble& ensemble, const Eigen::Ref<const Matrix>& inputs);

/// Directory layout: manifest.json plus member_NNN.json for each member.
void save_ensemble(const Ensemble& ensemble, const std::filesystem::path& dir);
Ensemble load_ensemble(const std::filesystem::path& dir);
std::string member_filename(std::size_t member_index);

}  // namespace dre
