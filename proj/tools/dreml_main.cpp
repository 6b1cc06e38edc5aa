// dreml: train randomized label-bagging embedding ensembles and evaluate them.

#include <iostream>
#include <optional>
#include <string>
#include <sstream>
#include <vector>

#include "CLI11.hpp"

#include "dreml/cli.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<int> d, l, parallelism, epochs, batch_size, bins;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, momentum, threshold;
  std::optional<std::string> out, features, labels, split, hidden;
  std::optional<std::vector<int>> ks, sweep_d, sweep_l;
  bool nmi = false;
  bool no_normalize = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run config (flags override it)");
  cmd->add_option("--D", o.d, "meta-classes per member");
  cmd->add_option("--L", o.l, "ensemble members");
  cmd->add_option("--seed", o.seed, "root seed");
  cmd->add_option("--parallelism", o.parallelism, "members trained concurrently");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--lr", o.lr, "initial learning rate");
  cmd->add_option("--momentum", o.momentum);
  cmd->add_option("--hidden", o.hidden, "comma-separated hidden widths, empty for none");
  cmd->add_option("--features", o.features, "feature file (.csv, or .bin/.f64 binary)");
  cmd->add_option("--labels", o.labels, "label file, one integer per line");
  cmd->add_option("--split", o.split, "split descriptor JSON");
  cmd->add_flag("--no-normalize-concat", o.no_normalize, "keep the raw concatenation (norm sqrt(L))");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}

dre::cli::RunConfig build_config(const Overrides& o) {
  using dre::cli::RunConfig;
  RunConfig c = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
  if (o.d) c.num_meta_classes = *o.d;
  if (o.l) c.num_members = *o.l;
  if (o.seed) c.seed = *o.seed;
  if (o.parallelism) c.parallelism = *o.parallelism;
  if (o.out) c.output_dir = *o.out;
  if (o.epochs) c.model.epochs = *o.epochs;
  if (o.batch_size) c.model.batch_size = *o.batch_size;
  if (o.lr) c.model.learning_rate = *o.lr;
  if (o.momentum) c.model.momentum = *o.momentum;
  if (o.hidden) {
    try {
      c.model.hidden_dims = parse_int_list(*o.hidden);
    } catch (const std::exception&) {
      throw dre::Error(dre::ErrorCode::InvalidConfig, "bad --hidden list '" + *o.hidden + "'");
    }
  }
  if (o.features || o.labels || o.split) {
    c.data.synthetic.reset();
    if (o.features) c.data.features = *o.features;
    if (o.labels) c.data.labels = *o.labels;
    if (o.split) c.data.split = *o.split;
  }
  if (o.no_normalize) c.normalize_concat = false;
  if (o.ks) c.ks = *o.ks;
  if (o.nmi) c.nmi = true;
  if (o.bins) c.histogram_bins = *o.bins;
  if (o.threshold) c.high_dot_threshold = *o.threshold;
  if (o.sweep_d) c.sweep_d = *o.sweep_d;
  if (o.sweep_l) c.sweep_l = *o.sweep_l;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Randomized label-bagging embedding ensembles"};
  app.require_subcommand(1);
  Overrides o;
  std::string ensemble_dir;
  std::string gen_format = "csv";

  auto* gen = app.add_subcommand("gen-data", "write the synthetic benchmark as feature/label/split files");
  add_common(gen, o);
  gen->add_option("--format", gen_format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}));

  auto* train = app.add_subcommand("train", "build the partition family and train the ensemble");
  add_common(train, o);

  auto* eval = app.add_subcommand("eval", "Recall@K (and optionally NMI) on the test classes");
  add_common(eval, o);
  eval->add_option("--ensemble", ensemble_dir, "ensemble directory")->required();
  eval->add_option("--k", o.ks, "K values")->delimiter(',');
  eval->add_flag("--nmi", o.nmi, "also cluster and report NMI");

  auto* sweep = app.add_subcommand("sweep", "Recall@1 grid over D and L");
  add_common(sweep, o);
  sweep->add_option("--D-list", o.sweep_d, "D values")->delimiter(',');
  sweep->add_option("--L-list", o.sweep_l, "L values")->delimiter(',');

  auto* analyze = app.add_subcommand("analyze", "dot-product histograms and unseen-class spread");
  add_common(analyze, o);
  analyze->add_option("--ensemble", ensemble_dir, "ensemble directory")->required();
  analyze->add_option("--bins", o.bins, "histogram bins over [-1, 1]");
  analyze->add_option("--threshold", o.threshold, "high dot-product threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << dre::cli::error_line(dre::Error(dre::ErrorCode::InvalidConfig, e.what())) << '\n';
    return 2;
  }

  try {
    const auto config = build_config(o);
    if (*gen) {
      dre::cli::cmd_gen_data(config, gen_format == "binary" ? dre::FeatureFormat::Binary : dre::FeatureFormat::Csv);
      std::cout << "wrote dataset to " << config.output_dir.string() << '\n';
    } else if (*train) {
      const auto r = dre::cli::cmd_train(config);
      std::cout << "trained " << r.ensemble.size() << " members (D=" << r.ensemble.family.num_meta_classes
                << ", embedding dim " << r.ensemble.embed_dim() << ") into " << r.ensemble_dir.string() << '\n';
    } else if (*eval) {
      const auto report = dre::cli::cmd_eval(config, ensemble_dir);
      std::cout << report.to_json().dump(2) << '\n';
    } else if (*sweep) {
      const auto rows = dre::cli::cmd_sweep(config);
      std::cout << "D,L,recall_at_1\n";
      for (const auto& r : rows) std::cout << r.num_meta_classes << ',' << r.num_members << ',' << r.recall_at_1 << '\n';
    } else if (*analyze) {
      const auto r = dre::cli::cmd_analyze(config, ensemble_dir);
      std::cout << r.summary_line << '\n';
    }
  } catch (const dre::Error& e) {
    std::cerr << dre::cli::error_line(e) << '\n';
    return dre::cli::exit_status(e);
  } catch (const std::exception& e) {
    std::cerr << dre::cli::error_line(dre::Error(dre::ErrorCode::Io, e.what())) << '\n';
    return 1;
  }
  return 0;
}
