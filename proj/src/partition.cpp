#include "dreml/partition.hpp"

#include <algorithm>
#include <string>

#include "dreml/error.hpp"
#include "dreml/random.hpp"

namespace dre {

MetaClassPartition::MetaClassPartition(std::size_t member_index, int num_meta_classes,
                                       std::map<Label, int> assignment)
    : member_index_(member_index), num_meta_classes_(num_meta_classes), assignment_(std::move(assignment)) {}

int MetaClassPartition::meta_of(Label label) const {
  auto it = assignment_.find(label);
  if (it == assignment_.end())
    throw Error(ErrorCode::MissingLabel, "class " + std::to_string(label) + " has no meta-class in partition " +
                                             std::to_string(member_index_));
  return it->second;
}

Labels MetaClassPartition::classes() const {
  Labels out;
  out.reserve(assignment_.size());
  for (const auto& [label, meta] : assignment_) out.push_back(label);
  return out;
}

std::vector<int> MetaClassPartition::meta_class_sizes() const {
  std::vector<int> sizes(static_cast<std::size_t>(std::max(num_meta_classes_, 0)), 0);
  for (const auto& [label, meta] : assignment_)
    if (meta >= 0 && meta < num_meta_classes_) ++sizes[static_cast<std::size_t>(meta)];
  return sizes;
}

void MetaClassPartition::validate() const {
  if (num_meta_classes_ < 1) throw Error(ErrorCode::PartitionBounds, "D must be >= 1");
  if (static_cast<std::size_t>(num_meta_classes_) > assignment_.size())
    throw Error(ErrorCode::PartitionBounds, "D = " + std::to_string(num_meta_classes_) + " exceeds the " +
                                                std::to_string(assignment_.size()) + " classes");
  for (const auto& [label, meta] : assignment_)
    if (meta < 0 || meta >= num_meta_classes_)
      throw Error(ErrorCode::InvalidArgument, "class " + std::to_string(label) + " mapped to meta-class " +
                                                  std::to_string(meta) + " outside [0, D)");
  const auto sizes = meta_class_sizes();
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  if (*lo == 0) throw Error(ErrorCode::InvalidArgument, "partition leaves a meta-class empty");
  if (*hi - *lo > 1) throw Error(ErrorCode::InvalidArgument, "partition meta-class sizes differ by more than one");
}

MetaClassPartition make_partition(std::span<const Label> classes, int num_meta_classes, std::uint64_t seed,
                                  std::size_t member_index) {
  if (classes.empty()) throw Error(ErrorCode::PartitionBounds, "cannot partition an empty class list");
  if (num_meta_classes < 1)
    throw Error(ErrorCode::PartitionBounds, "D = " + std::to_string(num_meta_classes) + " violates D >= 1");
  if (static_cast<std::size_t>(num_meta_classes) > classes.size())
    throw Error(ErrorCode::PartitionBounds, "D = " + std::to_string(num_meta_classes) + " violates D <= |classes| = " +
                                                std::to_string(classes.size()));

  Labels order(classes.begin(), classes.end());
  std::sort(order.begin(), order.end());
  if (auto dup = std::adjacent_find(order.begin(), order.end()); dup != order.end())
    throw Error(ErrorCode::InvalidArgument, "duplicate class label " + std::to_string(*dup));

  Rng rng(derive_seed(seed, Stream::Partition, member_index));
  rng.shuffle(std::span<Label>(order));

  std::map<Label, int> assignment;
  for (std::size_t i = 0; i < order.size(); ++i)
    assignment.emplace(order[i], static_cast<int>(i % static_cast<std::size_t>(num_meta_classes)));
  return MetaClassPartition(member_index, num_meta_classes, std::move(assignment));
}

PartitionFamily make_family(std::span<const Label> classes, int num_meta_classes, int num_members,
                            std::uint64_t seed) {
  if (num_members < 1)
    throw Error(ErrorCode::InvalidArgument, "L = " + std::to_string(num_members) + " violates L >= 1");
  PartitionFamily family;
  family.seed = seed;
  family.num_meta_classes = num_meta_classes;
  family.partitions.reserve(static_cast<std::size_t>(num_members));
  for (int i = 0; i < num_members; ++i)
    family.partitions.push_back(make_partition(classes, num_meta_classes, seed, static_cast<std::size_t>(i)));
  return family;
}

PartitionFamily PartitionFamily::prefix(std::size_t count) const {
  if (count < 1 || count > partitions.size())
    throw Error(ErrorCode::InvalidArgument, "prefix of " + std::to_string(count) + " members from a family of " +
                                                std::to_string(partitions.size()));
  PartitionFamily out = *this;
  out.partitions.resize(count, partitions.front());
  return out;
}

void PartitionFamily::validate() const {
  if (partitions.empty()) throw Error(ErrorCode::InvalidArgument, "L must be >= 1");
  const Labels reference = partitions.front().classes();
  for (std::size_t i = 0; i < partitions.size(); ++i) {
    const auto& p = partitions[i];
    if (p.member_index() != i)
      throw Error(ErrorCode::InvalidArgument, "partition at position " + std::to_string(i) + " has member_index " +
                                                  std::to_string(p.member_index()));
    if (p.num_meta_classes() != num_meta_classes)
      throw Error(ErrorCode::InvalidArgument, "partition " + std::to_string(i) + " has a different D");
    p.validate();
    if (p.classes() != reference)
      throw Error(ErrorCode::InvalidArgument, "partition " + std::to_string(i) + " covers a different class set");
  }
}

nlohmann::json PartitionFamily::to_json() const {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : partitions) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [label, meta] : p.assignment()) pairs.push_back({label, meta});
    parts.push_back(std::move(pairs));
  }
  return {{"seed", seed}, {"D", num_meta_classes}, {"L", partitions.size()}, {"partitions", std::move(parts)}};
}

PartitionFamily PartitionFamily::from_json(const nlohmann::json& j) {
  PartitionFamily family;
  try {
    family.seed = j.at("seed").get<std::uint64_t>();
    family.num_meta_classes = j.at("D").get<int>();
    const auto num_members = j.at("L").get<std::size_t>();
    const auto& parts = j.at("partitions");
    if (parts.size() != num_members)
      throw Error(ErrorCode::InvalidArgument, "family declares L = " + std::to_string(num_members) + " but holds " +
                                                  std::to_string(parts.size()) + " partitions");
    for (std::size_t i = 0; i < parts.size(); ++i) {
      std::map<Label, int> assignment;
      for (const auto& pair : parts[i]) {
        const auto label = pair.at(0).get<Label>();
        if (!assignment.emplace(label, pair.at(1).get<int>()).second)
          throw Error(ErrorCode::InvalidArgument, "class " + std::to_string(label) + " assigned twice in partition " +
                                                      std::to_string(i));
      }
      family.partitions.emplace_back(i, family.num_meta_classes, std::move(assignment));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("partition family: ") + e.what());
  }
  family.validate();
  return family;
}

MetaLabeledSet relabel(const LabeledDataset& dataset, const MetaClassPartition& partition) {
  MetaLabeledSet out;
  out.num_meta_classes = partition.num_meta_classes();
  out.source_rows = dataset.rows(SplitSide::Train);
  out.features = dataset.features()(out.source_rows, Eigen::all);
  out.meta_labels.reserve(out.source_rows.size());
  out.class_labels.reserve(out.source_rows.size());
  for (Index row : out.source_rows) {
    const Label label = dataset.labels()[static_cast<std::size_t>(row)];
    out.meta_labels.push_back(partition.meta_of(label));
    out.class_labels.push_back(label);
  }
  return out;
}

}  // namespace dre
