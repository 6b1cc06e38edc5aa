#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "json.hpp"

#include "dreml/data.hpp"
#include "dreml/types.hpp"

namespace dre {

/// Balanced map from class labels onto meta-classes 0..D-1 for one ensemble
/// member. Meta-class sizes differ by at most one.
class MetaClassPartition {
 public:
  MetaClassPartition(std::size_t member_index, int num_meta_classes, std::map<Label, int> assignment);

  std::size_t member_index() const { return member_index_; }
  int num_meta_classes() const { return num_meta_classes_; }
  const std::map<Label, int>& assignment() const { return assignment_; }

  /// Throws MissingLabel for a class outside the partition.
  int meta_of(Label label) const;
  bool contains(Label label) const { return assignment_.contains(label); }
  Labels classes() const;
  std::vector<int> meta_class_sizes() const;

  /// Throws if any invariant is violated (range, balance, surjectivity).
  void validate() const;

  friend bool operator==(const MetaClassPartition&, const MetaClassPartition&) = default;

 private:
  std::size_t member_index_;
  int num_meta_classes_;
  std::map<Label, int> assignment_;
};

struct PartitionFamily {
  std::uint64_t seed = 0;
  int num_meta_classes = 0;
  std::vector<MetaClassPartition> partitions;

  std::size_t size() const { return partitions.size(); }
  /// First `count` members; a prefix of a family is itself a valid family.
  PartitionFamily prefix(std::size_t count) const;
  void validate() const;

  nlohmann::json to_json() const;
  /// Parses and re-validates every invariant.
  static PartitionFamily from_json(const nlohmann::json& j);

  friend bool operator==(const PartitionFamily&, const PartitionFamily&) = default;
};

/// Sort the classes, shuffle them with the member's derived stream, then deal
/// them round-robin onto meta-classes 0..D-1.
MetaClassPartition make_partition(std::span<const Label> classes, int num_meta_classes, std::uint64_t seed,
                                  std::size_t member_index);

PartitionFamily make_family(std::span<const Label> classes, int num_meta_classes, int num_members,
                            std::uint64_t seed);

/// Training rows of a dataset carrying meta-labels instead of class labels.
struct MetaLabeledSet {
  Matrix features;
  std::vector<int> meta_labels;
  Labels class_labels;
  std::vector<Index> source_rows;
  int num_meta_classes = 0;
};

/// Relabel the training split of `dataset` under `partition`.
MetaLabeledSet relabel(const LabeledDataset& dataset, const MetaClassPartition& partition);

}  // namespace dre
