#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dreml/types.hpp"

namespace dre {

enum class SplitSide { Train, Test };

/// Which class labels are used for training and which are held out. The two
/// sides are disjoint: splits are by class, never by sample.
struct ClassSplit {
  Labels train;  // sorted, unique
  Labels test;   // sorted, unique
};

/// Feature vectors with class labels and a class-disjoint train/test split.
/// Construct through `LabeledDataset::create`, which checks every invariant.
class LabeledDataset {
 public:
  static LabeledDataset create(Matrix features, Labels labels, ClassSplit split);

  const Matrix& features() const { return features_; }
  const Labels& labels() const { return labels_; }
  const ClassSplit& split() const { return split_; }
  Index size() const { return features_.rows(); }
  Index feature_dim() const { return features_.cols(); }

  const Labels& classes(SplitSide side) const { return side == SplitSide::Train ? split_.train : split_.test; }
  SplitSide side_of(Label label) const;

  /// Row indices (ascending) whose label lies on `side`.
  std::vector<Index> rows(SplitSide side) const;
  Matrix features_of(SplitSide side) const;
  Labels labels_of(SplitSide side) const;

 private:
  LabeledDataset() = default;
  Matrix features_;
  Labels labels_;
  ClassSplit split_;
};

struct SyntheticSpec {
  int num_classes = 40;
  int samples_per_class = 30;
  int feature_dim = 32;
  double center_scale = 1.0;
  double cluster_spread = 0.7;
  std::uint64_t seed = 13;

  void validate() const;
};

/// Gaussian class blobs. With one Rng seeded from `seed`, draw every class
/// center (class order, coordinate order) as center_scale * N(0,1), then every
/// sample (class order, sample order, coordinate order) as center +
/// cluster_spread * N(0,1). Labels are 0..num_classes-1; the first
/// ceil(num_classes/2) classes form the train split, the rest the test split.
LabeledDataset gen_synthetic(const SyntheticSpec& spec);

enum class FeatureFormat { Auto, Csv, Binary };

/// Split descriptor JSON: either a list of train labels (test = every other
/// label present) or {"train": [...], "test": [...]}.
struct SplitDescriptor {
  Labels train;
  std::optional<Labels> test;

  static SplitDescriptor from_json(const nlohmann::json& j);
  static SplitDescriptor load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Resolve a descriptor against the labels actually present.
ClassSplit resolve_split(const SplitDescriptor& descriptor, const Labels& labels);

Matrix read_features_csv(const std::filesystem::path& path);
/// Binary layout: uint64 N, uint64 F, then N*F float64 row-major; all little-endian.
Matrix read_features_binary(const std::filesystem::path& path);
Labels read_labels(const std::filesystem::path& path);

void write_features_csv(const std::filesystem::path& path, const Matrix& features);
void write_features_binary(const std::filesystem::path& path, const Matrix& features);
void write_labels(const std::filesystem::path& path, const Labels& labels);

/// `Auto` picks Binary for .bin/.f64 extensions and CSV otherwise.
LabeledDataset load_features(const std::filesystem::path& features_path, const std::filesystem::path& labels_path,
                             const SplitDescriptor& split, FeatureFormat format = FeatureFormat::Auto);

}  // namespace dre
