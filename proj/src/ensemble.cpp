#include "dreml/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <optional>
#include <thread>

#include "dreml/error.hpp"
#include "dreml/random.hpp"
#include "json_io.hpp"

namespace dre {

Index Ensemble::embed_dim() const {
  Index total = 0;
  for (const auto& m : members) total += m.embed_dim();
  return total;
}

Ensemble Ensemble::prefix(std::size_t count) const {
  Ensemble out;
  out.family = family.prefix(count);
  out.members.assign(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(count));
  out.config_template = config_template;
  out.normalize_concat = normalize_concat;
  return out;
}

std::uint64_t member_seed(std::uint64_t template_seed, std::size_t member_index) {
  return derive_seed(template_seed, Stream::MemberSeed, member_index);
}

Ensemble train_ensemble(const LabeledDataset& dataset, const PartitionFamily& family, const ModelConfig& config_template,
                        int parallelism, bool normalize_concat) {
  if (parallelism < 1) throw Error(ErrorCode::InvalidArgument, "parallelism must be >= 1");
  family.validate();
  if (family.partitions.front().classes() != dataset.classes(SplitSide::Train))
    throw Error(ErrorCode::InvalidArgument, "partition family does not cover exactly the dataset's training classes");

  const std::size_t count = family.size();
  std::vector<std::optional<EmbeddingModel>> trained(count);
  std::vector<std::exception_ptr> failures(count);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      try {
        ModelConfig cfg = config_template;
        cfg.input_dim = static_cast<int>(dataset.feature_dim());
        cfg.output_dim = family.num_meta_classes;
        cfg.seed = member_seed(config_template.seed, i);
        trained[i] = train_member(relabel(dataset, family.partitions[i]), cfg);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };

  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(parallelism), count);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < count; ++i) {
    if (!failures[i]) continue;
    try {
      std::rethrow_exception(failures[i]);
    } catch (const Error& e) {
      rethrow_for_member(e, i);
    } catch (const std::exception& e) {
      rethrow_for_member(Error(ErrorCode::InvalidArgument, e.what()), i);
    }
  }

  Ensemble ensemble;
  ensemble.family = family;
  ensemble.config_template = config_template;
  ensemble.config_template.input_dim = static_cast<int>(dataset.feature_dim());
  ensemble.config_template.output_dim = family.num_meta_classes;
  ensemble.normalize_concat = normalize_concat;
  ensemble.members.reserve(count);
  for (auto& m : trained) ensemble.members.push_back(std::move(*m));
  return ensemble;
}

Matrix embed_batch(const Ensemble& ensemble, const Eigen::Ref<const Matrix>& inputs) {
  if (ensemble.members.empty()) throw Error(ErrorCode::InvalidArgument, "ensemble has no members");
  Matrix out(inputs.rows(), ensemble.embed_dim());
  Index col = 0;
  for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
    const auto& member = ensemble.members[i];
    try {
      out.middleCols(col, member.embed_dim()) = forward_embed_batch(member, inputs);
    } catch (const Error& e) {
      rethrow_for_member(e, i);
    }
    col += member.embed_dim();
  }
  if (ensemble.normalize_concat) out /= std::sqrt(static_cast<double>(ensemble.members.size()));
  return out;
}

Vector embed(const Ensemble& ensemble, const Eigen::Ref<const Vector>& input) {
  return embed_batch(ensemble, input.transpose()).row(0).transpose();
}

std::string member_filename(std::size_t member_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "member_%03zu.json", member_index);
  return buf;
}

void save_ensemble(const Ensemble& ensemble, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
    save_model(ensemble.members[i], dir / member_filename(i));
    files.push_back(member_filename(i));
  }
  detail::write_json(dir / "manifest.json", {{"format", "dreml.ensemble"},
                                             {"version", 1},
                                             {"family", ensemble.family.to_json()},
                                             {"config", ensemble.config_template.to_json()},
                                             {"normalize_concat", ensemble.normalize_concat},
                                             {"members", std::move(files)}});
}

Ensemble load_ensemble(const std::filesystem::path& dir) {
  const auto manifest = detail::read_json(dir / "manifest.json");
  Ensemble ensemble;
  try {
    if (manifest.at("format").get<std::string>() != "dreml.ensemble" || manifest.at("version").get<int>() != 1)
      throw Error(ErrorCode::Parse, dir.string() + ": not a version-1 dreml.ensemble manifest");
    ensemble.family = PartitionFamily::from_json(manifest.at("family"));
    ensemble.config_template = ModelConfig::from_json(manifest.at("config"));
    ensemble.normalize_concat = manifest.at("normalize_concat").get<bool>();
    const auto files = manifest.at("members").get<std::vector<std::string>>();
    if (files.size() != ensemble.family.size())
      throw Error(ErrorCode::Parse, dir.string() + ": member count disagrees with the partition family");
    for (const auto& f : files) ensemble.members.push_back(load_model(dir / f));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, dir.string() + "/manifest.json: " + e.what());
  }
  for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
    const auto& m = ensemble.members[i];
    if (m.config.input_dim != ensemble.members.front().config.input_dim ||
        m.config.output_dim != ensemble.family.num_meta_classes)
      throw Error(ErrorCode::Parse, "member " + std::to_string(i) + " shape disagrees with the manifest");
  }
  return ensemble;
}

}  // namespace dre
