#include "dreml/cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "dreml/partition.hpp"
#include "json_io.hpp"

namespace dre::cli {

namespace {

std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
}

std::string format_name(FeatureFormat f) {
  switch (f) {
    case FeatureFormat::Csv: return "csv";
    case FeatureFormat::Binary: return "binary";
    case FeatureFormat::Auto: break;
  }
  return "auto";
}

FeatureFormat parse_format(const std::string& s) {
  if (s == "auto") return FeatureFormat::Auto;
  if (s == "csv") return FeatureFormat::Csv;
  if (s == "binary") return FeatureFormat::Binary;
  throw Error(ErrorCode::InvalidConfig, "unknown feature format '" + s + "'");
}

nlohmann::json synthetic_to_json(const SyntheticSpec& s) {
  return {{"num_classes", s.num_classes},       {"samples_per_class", s.samples_per_class},
          {"feature_dim", s.feature_dim},       {"center_scale", s.center_scale},
          {"cluster_spread", s.cluster_spread}, {"seed", s.seed}};
}

SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.num_classes = j.value("num_classes", s.num_classes);
  s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
  s.feature_dim = j.value("feature_dim", s.feature_dim);
  s.center_scale = j.value("center_scale", s.center_scale);
  s.cluster_spread = j.value("cluster_spread", s.cluster_spread);
  s.seed = j.value("seed", s.seed);
  return s;
}

nlohmann::json ensemble_echo(const Ensemble& e) {
  return {{"D", e.family.num_meta_classes},
          {"L", e.size()},
          {"family_seed", e.family.seed},
          {"model_seed", e.config_template.seed},
          {"normalize_concat", e.normalize_concat},
          {"embed_dim", e.embed_dim()}};
}

}  // namespace

ModelConfig RunConfig::default_model() {
  ModelConfig m;
  m.hidden_dims = {64};
  return m;
}

void RunConfig::validate() const {
  auto bad = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (data.synthetic) {
    try {
      data.synthetic->validate();
    } catch (const Error& e) {
      bad(e.what());
    }
  } else if (data.features.empty() || data.labels.empty() || data.split.empty()) {
    bad("data source needs either a synthetic spec or features, labels and split paths");
  }
  if (num_meta_classes < 1) bad("D must be >= 1");
  if (num_members < 1) bad("L must be >= 1");
  if (parallelism < 1) bad("parallelism must be >= 1");
  if (ks.empty()) bad("at least one K is required");
  for (int k : ks)
    if (k < 1) bad("K values must be >= 1");
  if (histogram_bins < 1) bad("histogram_bins must be >= 1");
  if (sweep_d.empty() || sweep_l.empty()) bad("sweep grids must be non-empty");
  for (int d : sweep_d)
    if (d < 1) bad("sweep D values must be >= 1");
  for (int l : sweep_l)
    if (l < 1) bad("sweep L values must be >= 1");
  ModelConfig probe = model;
  probe.input_dim = 1;
  probe.output_dim = 1;
  try {
    probe.validate();
  } catch (const Error& e) {
    bad(e.what());
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json d;
  if (data.synthetic) {
    d["synthetic"] = synthetic_to_json(*data.synthetic);
  } else {
    d["features"] = data.features.string();
    d["labels"] = data.labels.string();
    d["split"] = data.split.string();
    d["format"] = format_name(data.format);
  }
  nlohmann::json m = model.to_json();
  m.erase("input_dim");
  m.erase("output_dim");
  m.erase("seed");
  return {{"format_version", kFormatVersion},
          {"data", std::move(d)},
          {"D", num_meta_classes},
          {"L", num_members},
          {"model", std::move(m)},
          {"normalize_concat", normalize_concat},
          {"parallelism", parallelism},
          {"seed", seed},
          {"ks", ks},
          {"nmi", nmi},
          {"histogram_bins", histogram_bins},
          {"high_dot_threshold", high_dot_threshold},
          {"sweep", {{"D", sweep_d}, {"L", sweep_l}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("format_version") && j.at("format_version").get<int>() != kFormatVersion)
      throw Error(ErrorCode::InvalidConfig, "unsupported config format_version");
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("synthetic")) {
        c.data.synthetic = synthetic_from_json(d.at("synthetic"));
      } else {
        c.data.synthetic.reset();
        c.data.features = d.value("features", std::string{});
        c.data.labels = d.value("labels", std::string{});
        c.data.split = d.value("split", std::string{});
        c.data.format = parse_format(d.value("format", std::string("auto")));
      }
    }
    c.num_meta_classes = j.value("D", c.num_meta_classes);
    c.num_members = j.value("L", c.num_members);
    if (j.contains("model")) {
      nlohmann::json m = c.model.to_json();
      m.update(j.at("model"));
      c.model = ModelConfig::from_json(m);
    }
    c.normalize_concat = j.value("normalize_concat", c.normalize_concat);
    c.parallelism = j.value("parallelism", c.parallelism);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    c.seed = j.value("seed", c.seed);
    c.ks = j.value("ks", c.ks);
    c.nmi = j.value("nmi", c.nmi);
    c.histogram_bins = j.value("histogram_bins", c.histogram_bins);
    c.high_dot_threshold = j.value("high_dot_threshold", c.high_dot_threshold);
    if (j.contains("sweep")) {
      c.sweep_d = j.at("sweep").value("D", c.sweep_d);
      c.sweep_l = j.at("sweep").value("L", c.sweep_l);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("run config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  try {
    return from_json(detail::read_json(path));
  } catch (const Error& e) {
    // An unreadable or malformed config file is a configuration error.
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
}

LabeledDataset load_dataset(const RunConfig& config) {
  if (config.data.synthetic) return gen_synthetic(*config.data.synthetic);
  return load_features(config.data.features, config.data.labels, SplitDescriptor::load(config.data.split),
                       config.data.format);
}

PartitionFamily make_run_family(const RunConfig& config, const LabeledDataset& dataset, int num_members) {
  const Labels& classes = dataset.classes(SplitSide::Train);
  return make_family(classes, config.num_meta_classes, num_members, config.seed);
}

Ensemble train_run(const RunConfig& config, const LabeledDataset& dataset, int num_members) {
  const PartitionFamily family = make_run_family(config, dataset, num_members);
  ModelConfig tmpl = config.model;
  tmpl.seed = config.seed;
  return train_ensemble(dataset, family, tmpl, config.parallelism, config.normalize_concat);
}

void cmd_gen_data(const RunConfig& config, FeatureFormat format) {
  config.validate();
  const LabeledDataset data = load_dataset(config);
  ensure_dir(config.output_dir);
  if (format == FeatureFormat::Binary) write_features_binary(config.output_dir / "features.bin", data.features());
  else write_features_csv(config.output_dir / "features.csv", data.features());
  write_labels(config.output_dir / "labels.txt", data.labels());
  SplitDescriptor split{data.split().train, data.split().test};
  detail::write_json(config.output_dir / "split.json", split.to_json());
}

TrainResult cmd_train(const RunConfig& config) {
  config.validate();
  const LabeledDataset data = load_dataset(config);
  TrainResult result;
  result.ensemble = train_run(config, data, config.num_members);
  result.ensemble_dir = config.output_dir / "ensemble";
  save_ensemble(result.ensemble, result.ensemble_dir);

  auto log = open_csv(config.output_dir / "training_log.csv");
  log << "member,epoch,loss\n";
  nlohmann::json members = nlohmann::json::array();
  for (std::size_t i = 0; i < result.ensemble.size(); ++i) {
    const auto& m = result.ensemble.members[i];
    for (std::size_t e = 0; e < m.training_log.size(); ++e) log << i << ',' << e << ',' << fmt(m.training_log[e]) << '\n';
    members.push_back({{"index", i},
                       {"seed", m.config.seed},
                       {"final_loss", m.training_log.empty() ? nlohmann::json(nullptr) : nlohmann::json(m.training_log.back())}});
  }
  result.report = {{"format_version", RunConfig::kFormatVersion},
                   {"config", config.to_json()},
                   {"ensemble", ensemble_echo(result.ensemble)},
                   {"members", std::move(members)}};
  detail::write_json(config.output_dir / "train_report.json", result.report);
  return result;
}

EvalReport cmd_eval(const RunConfig& config, const std::filesystem::path& ensemble_dir) {
  config.validate();
  const LabeledDataset data = load_dataset(config);
  const Ensemble ensemble = load_ensemble(ensemble_dir);
  const Matrix emb = embed_batch(ensemble, data.features_of(SplitSide::Test));
  const Labels labels = data.labels_of(SplitSide::Test);

  RetrievalEvalOptions opts;
  opts.ks = config.ks;
  opts.with_nmi = config.nmi;
  opts.kmeans_seed = config.seed;
  EvalReport report = evaluate_retrieval(emb, labels, opts);
  report.config = {{"run", config.to_json()}, {"ensemble", ensemble_echo(ensemble)}, {"split", "test"}};
  ensure_dir(config.output_dir);
  detail::write_json(config.output_dir / "eval_report.json", report.to_json());
  return report;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& config) {
  config.validate();
  const LabeledDataset data = load_dataset(config);
  const Matrix test_x = data.features_of(SplitSide::Test);
  const Labels test_y = data.labels_of(SplitSide::Test);
  const int max_l = *std::max_element(config.sweep_l.begin(), config.sweep_l.end());
  const std::vector<int> k1{1};

  std::vector<SweepRow> rows;
  for (int d : config.sweep_d) {
    RunConfig cfg = config;
    cfg.num_meta_classes = d;
    const Ensemble full = train_run(cfg, data, max_l);
    for (int l : config.sweep_l) {
      const Matrix emb = embed_batch(full.prefix(static_cast<std::size_t>(l)), test_x);
      RetrievalIndex index(emb, test_y);
      rows.push_back({d, l, recall_at_k(index, emb, test_y, k1, true).at(1)});
    }
  }

  ensure_dir(config.output_dir);
  auto csv = open_csv(config.output_dir / "sweep.csv");
  csv << "D,L,recall_at_1\n";
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& r : rows) {
    csv << r.num_meta_classes << ',' << r.num_members << ',' << fmt(r.recall_at_1) << '\n';
    grid.push_back({{"D", r.num_meta_classes}, {"L", r.num_members}, {"recall_at_1", r.recall_at_1}});
  }
  detail::write_json(config.output_dir / "sweep.json",
                     {{"format_version", RunConfig::kFormatVersion}, {"config", config.to_json()}, {"grid", grid}});
  return rows;
}

AnalysisResult cmd_analyze(const RunConfig& config, const std::filesystem::path& ensemble_dir) {
  config.validate();
  const LabeledDataset data = load_dataset(config);
  const Ensemble ensemble = load_ensemble(ensemble_dir);
  const Matrix train_emb = embed_batch(ensemble, data.features_of(SplitSide::Train));
  const Matrix test_emb = embed_batch(ensemble, data.features_of(SplitSide::Test));
  const Labels train_y = data.labels_of(SplitSide::Train);
  const Labels test_y = data.labels_of(SplitSide::Test);
  const auto test_rows = data.rows(SplitSide::Test);
  const auto train_rows = data.rows(SplitSide::Train);

  AnalysisResult r;
  r.train_histogram = dot_product_histograms(train_emb, train_y, config.histogram_bins, config.high_dot_threshold);
  r.test_histogram = dot_product_histograms(test_emb, test_y, config.histogram_bins, config.high_dot_threshold);
  r.spread = unseen_spread(train_emb, test_emb, config.high_dot_threshold);

  ensure_dir(config.output_dir);
  write_histogram_csv(r.train_histogram, config.output_dir / "histogram_train.csv");
  write_histogram_csv(r.test_histogram, config.output_dir / "histogram_test.csv");
  auto csv = open_csv(config.output_dir / "unseen_spread.csv");
  csv << "test_row,label,max_similarity,nearest_train_row\n";
  for (std::size_t i = 0; i < test_rows.size(); ++i)
    csv << test_rows[i] << ',' << test_y[i] << ',' << fmt(r.spread.max_similarity(static_cast<Index>(i))) << ','
        << train_rows[static_cast<std::size_t>(r.spread.nearest_train[i])] << '\n';

  std::ostringstream line;
  line << "diff_test_pairs_above_" << fmt(config.high_dot_threshold) << '=' << fmt(r.test_histogram.diff_fraction_above())
       << " test_separation=" << fmt(r.test_histogram.separation())
       << " unseen_mean_max_similarity=" << fmt(r.spread.mean);
  r.summary_line = line.str();

  detail::write_json(config.output_dir / "analysis.json",
                     {{"format_version", RunConfig::kFormatVersion},
                      {"config", {{"run", config.to_json()}, {"ensemble", ensemble_echo(ensemble)}}},
                      {"histograms", {{"train", r.train_histogram.to_json()}, {"test", r.test_histogram.to_json()}}},
                      {"unseen_spread", r.spread.summary_json()},
                      {"summary", r.summary_line}});
  return r;
}

std::string error_line(const Error& e) {
  std::string msg = e.what();
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  std::string escaped;
  for (char c : msg) {
    if (c == '"' || c == '\\') escaped.push_back('\\');
    escaped.push_back(c);
  }
  std::string line = "error code=" + std::string(error_code_name(e.code()));
  if (e.member_index()) line += " member=" + std::to_string(*e.member_index());
  return line + " message=\"" + escaped + "\"";
}

int exit_status(const Error& e) { return is_config_error(e.code()) ? 2 : 1; }

}  // namespace dre::cli
