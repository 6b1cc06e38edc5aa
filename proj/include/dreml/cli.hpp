#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dreml/data.hpp"
#include "dreml/ensemble.hpp"
#include "dreml/error.hpp"
#include "dreml/eval.hpp"
#include "dreml/model.hpp"

namespace dre::cli {

/// Where the dataset comes from: a synthetic spec, or feature/label files plus
/// a split descriptor.
struct DataSource {
  std::optional<SyntheticSpec> synthetic = SyntheticSpec{};
  std::filesystem::path features;
  std::filesystem::path labels;
  std::filesystem::path split;
  FeatureFormat format = FeatureFormat::Auto;
};

/// Everything a command needs. Loaded from one JSON file, then overridden by
/// command-line flags, then validated before any work starts.
struct RunConfig {
  static constexpr int kFormatVersion = 1;

  DataSource data;
  int num_meta_classes = 5;  // D
  int num_members = 16;      // L
  ModelConfig model = default_model();
  bool normalize_concat = true;
  int parallelism = 1;
  std::filesystem::path output_dir = "dreml_out";
  std::uint64_t seed = 13;

  std::vector<int> ks{1, 2, 4, 8};
  bool nmi = false;
  int histogram_bins = 100;
  double high_dot_threshold = 0.75;

  std::vector<int> sweep_d{2, 5, 10, 20};
  std::vector<int> sweep_l{1, 2, 4, 8, 16};

  static ModelConfig default_model();

  /// Throws InvalidConfig on any bad field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

LabeledDataset load_dataset(const RunConfig& config);

/// Embedding-model seed template: the run seed, routed through its own stream
/// inside train_ensemble.
PartitionFamily make_run_family(const RunConfig& config, const LabeledDataset& dataset, int num_members);
Ensemble train_run(const RunConfig& config, const LabeledDataset& dataset, int num_members);

void cmd_gen_data(const RunConfig& config, FeatureFormat format);

struct TrainResult {
  Ensemble ensemble;
  std::filesystem::path ensemble_dir;
  nlohmann::json report;
};
/// Writes <out>/ensemble/, <out>/training_log.csv and <out>/train_report.json.
TrainResult cmd_train(const RunConfig& config);

/// Retrieval evaluation on the test classes; writes <out>/eval_report.json.
EvalReport cmd_eval(const RunConfig& config, const std::filesystem::path& ensemble_dir);

struct SweepRow {
  int num_meta_classes;
  int num_members;
  double recall_at_1;
};
/// Recall@1 on test classes for every (D, L) in the grid. Within one D, the
/// L-member ensembles are prefixes of one family trained at the largest L.
/// Writes <out>/sweep.csv and <out>/sweep.json.
std::vector<SweepRow> cmd_sweep(const RunConfig& config);

struct AnalysisResult {
  DotHistograms train_histogram;
  DotHistograms test_histogram;
  UnseenSpread spread;
  std::string summary_line;
};
/// Writes histogram_train.csv, histogram_test.csv, unseen_spread.csv and
/// analysis.json under <out>.
AnalysisResult cmd_analyze(const RunConfig& config, const std::filesystem::path& ensemble_dir);

/// One machine-parsable line, e.g. `error code=PARTITION_BOUNDS message="..."`.
std::string error_line(const Error& e);
/// 2 for configuration errors, 1 otherwise.
int exit_status(const Error& e);

}  // namespace dre::cli
