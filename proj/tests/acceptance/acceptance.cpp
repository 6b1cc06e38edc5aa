// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
// Criteria 5 to 8 run on the default synthetic benchmark (seed 13). Criteria 7
// and 8 use D = 5 with L in {1, 4, 24}, the L = 1 and L = 4 ensembles being
// prefixes of the L = 24 one; the single-model baseline is L = 1, D = 20.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>

#include "dreml/cli.hpp"
#include "dreml/ensemble.hpp"
#include "dreml/eval.hpp"
#include "dreml/partition.hpp"
#include "dreml/random.hpp"
#include "oracles.hpp"

using namespace dre;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

Matrix random_unit_rows(Rng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  normalize_rows(m);
  return m;
}

Labels random_labels(Rng& rng, Index n, int classes) {
  Labels l;
  for (Index i = 0; i < n; ++i) l.push_back(static_cast<Label>(rng.below(static_cast<std::uint64_t>(classes))));
  return l;
}

std::filesystem::path scratch_dir() {
  auto p = std::filesystem::temp_directory_path() / ("dre_acceptance_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Shared state, built lazily: the default benchmark and the D = 5, L = 24 ensemble.
struct Bench {
  cli::RunConfig config;
  LabeledDataset data;
  Ensemble ens24;
  Ensemble baseline;
};

Bench& bench() {
  static Bench b = [] {
    cli::RunConfig cfg;
    cfg.num_meta_classes = 5;
    LabeledDataset data = cli::load_dataset(cfg);
    Ensemble e24 = cli::train_run(cfg, data, 24);
    cli::RunConfig base = cfg;
    base.num_meta_classes = static_cast<int>(data.classes(SplitSide::Train).size());
    Ensemble single = cli::train_run(base, data, 1);
    return Bench{cfg, std::move(data), std::move(e24), std::move(single)};
  }();
  return b;
}

Outcome partition_suite() {
  Rng rng(1001);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(197));
    const int d = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const auto seed = rng.next_u64();
    Labels classes;
    for (int i = 0; i < n; ++i) classes.push_back(3 * i - 50);
    const auto p = make_partition(classes, d, seed, static_cast<std::size_t>(trial % 7));
    std::vector<int> sizes(static_cast<std::size_t>(d), 0);
    std::size_t assigned = 0;
    for (Label c : classes) {
      const int m = p.meta_of(c);
      if (m < 0 || m >= d) return {false, "meta-class out of range"};
      ++sizes[static_cast<std::size_t>(m)];
      ++assigned;
    }
    if (p.assignment().size() != classes.size() || assigned != classes.size())
      return {false, "partition is not total over the classes"};
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    if (*lo < 1 || *hi - *lo > 1) return {false, "unbalanced partition at trial " + std::to_string(trial)};
    if (!(make_partition(classes, d, seed, static_cast<std::size_t>(trial % 7)) == p))
      return {false, "non-deterministic partition"};
  }
  return {true, "500 triples"};
}

Outcome gradient_check() {
  Rng rng(2002);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c;
    c.input_dim = 1 + static_cast<int>(rng.below(6));
    const auto depth = rng.below(3);
    for (std::uint64_t h = 0; h < depth; ++h) c.hidden_dims.push_back(1 + static_cast<int>(rng.below(7)));
    c.output_dim = 2 + static_cast<int>(rng.below(5));
    if (trial % 5 == 4) c.embedding_dim = 2 + static_cast<int>(rng.below(4));
    c.seed = rng.next_u64();
    auto m = init_model(c);
    for (auto& layer : m.layers)
      for (Index j = 0; j < layer.bias.size(); ++j) layer.bias(j) = 0.3 * rng.normal();
    const Index n = 1 + static_cast<Index>(rng.below(8));
    Matrix x(n, c.input_dim);
    for (Index i = 0; i < x.rows(); ++i)
      for (Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    std::vector<int> y;
    for (Index i = 0; i < n; ++i) y.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(c.output_dim))));
    worst = std::max(worst, oracle::max_gradient_error(m, x, y));
  }
  return {worst < 1e-4, "max relative error " + sci(worst)};
}

Outcome metric_oracles() {
  Rng rng(3003);
  double worst_nmi = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(199));
    const Index dim = 1 + static_cast<Index>(rng.below(8));
    const int classes = 1 + static_cast<int>(rng.below(10));
    Matrix g = random_unit_rows(rng, n, dim);
    for (Index i = 3; i < n; i += 11) g.row(i) = g.row(i - 3);
    const Labels gl = random_labels(rng, n, classes);
    std::vector<int> ks;
    for (int k = 1; k < n; ++k) ks.push_back(k);
    RetrievalIndex index(g, gl);
    const auto got = recall_at_k(index, g, gl, ks, true);
    double prev = 0.0;
    for (int k : ks) {
      if (got.at(k) != oracle::recall(g, gl, g, gl, k, true))
        return {false, "recall mismatch at trial " + std::to_string(trial) + " K=" + std::to_string(k)};
      if (got.at(k) < prev) return {false, "recall decreased in K"};
      prev = got.at(k);
    }
    const Labels other = random_labels(rng, n, 1 + static_cast<int>(rng.below(10)));
    worst_nmi = std::max(worst_nmi, std::abs(nmi(gl, other) - oracle::nmi(gl, other)));
    if (trial % 10 == 0) {
      const int k = std::min<int>(classes, static_cast<int>(n));
      KMeansOptions opts;
      opts.restarts = 2;
      const auto km = kmeans(g, k, rng.next_u64(), opts);
      worst_nmi = std::max(worst_nmi, std::abs(nmi(km.assignment, gl) - oracle::nmi(km.assignment, gl)));
    }
  }
  return {worst_nmi < 1e-10, "100 instances, max NMI deviation " + sci(worst_nmi)};
}

Outcome concat_identity() {
  auto& b = bench();
  Rng rng(4004);
  double worst = 0.0;
  for (std::size_t l : {1u, 4u, 24u}) {
    const Ensemble e = b.ens24.prefix(l);
    for (int pair = 0; pair < 100; ++pair) {
      const Vector x = b.data.features().row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(b.data.size())))).transpose();
      const Vector y = b.data.features().row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(b.data.size())))).transpose();
      double member_mean = 0.0;
      for (const auto& m : e.members) member_mean += forward_embed(m, x).dot(forward_embed(m, y));
      member_mean /= double(l);
      worst = std::max(worst, std::abs(embed(e, x).dot(embed(e, y)) - member_mean));
    }
  }
  return {worst < 1e-6, "max deviation " + sci(worst)};
}

struct SweepResult {
  std::map<std::pair<int, int>, double> r1;
  double seconds = 0.0;
};

SweepResult& sweep() {
  static SweepResult s = [] {
    SweepResult out;
    cli::RunConfig cfg;
    cfg.output_dir = scratch_dir() / "sweep";
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& row : cli::cmd_sweep(cfg)) out.r1[{row.num_meta_classes, row.num_members}] = row.recall_at_1;
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }();
  return s;
}

Outcome ensemble_size_trend() {
  const auto& s = sweep();
  std::ostringstream d;
  bool ok = s.r1.at({5, 16}) - s.r1.at({5, 1}) >= 0.02;
  double prev = -1.0;
  d << "D=5 R@1:";
  for (int l : {1, 2, 4, 8, 16}) {
    const double v = s.r1.at({5, l});
    if (prev >= 0.0 && v < prev - 0.02) ok = false;
    prev = v;
    d << " L" << l << '=' << fixed(v);
  }
  d << ", sweep " << fixed(s.seconds, 1) << " s";
  return {ok && s.seconds < 600.0, d.str()};
}

Outcome meta_class_size_trend() {
  const auto& s = sweep();
  const int num_train = static_cast<int>(bench().data.classes(SplitSide::Train).size());
  if (num_train != 20) return {false, "benchmark does not have 20 training classes"};
  const double low = s.r1.at({2, 16});
  const double high = s.r1.at({20, 16});
  bool ok = false;
  std::ostringstream d;
  d << "L=16 R@1: D2=" << fixed(low);
  for (int dd : {5, 10}) {
    const double v = s.r1.at({dd, 16});
    ok |= v > low && v > high;
    d << " D" << dd << '=' << fixed(v);
  }
  d << " D20=" << fixed(high);
  return {ok, d.str()};
}

Outcome distribution_separation() {
  auto& b = bench();
  const Matrix test_x = b.data.features_of(SplitSide::Test);
  const Labels test_y = b.data.labels_of(SplitSide::Test);
  std::vector<DotHistograms> h;
  for (std::size_t l : {1u, 4u, 24u})
    h.push_back(dot_product_histograms(embed_batch(b.ens24.prefix(l), test_x), test_y, 100, 0.75));
  const bool increasing = h[0].separation() < h[1].separation() && h[1].separation() < h[2].separation();
  const bool fewer_high = h[2].diff_fraction_above() < h[0].diff_fraction_above();
  std::ostringstream d;
  d << "separation L1=" << fixed(h[0].separation()) << " L4=" << fixed(h[1].separation())
    << " L24=" << fixed(h[2].separation()) << "; diff>0.75 L1=" << fixed(h[0].diff_fraction_above())
    << " L24=" << fixed(h[2].diff_fraction_above());
  return {increasing && fewer_high, d.str()};
}

Outcome unseen_class_spread() {
  auto& b = bench();
  const Matrix train_x = b.data.features_of(SplitSide::Train);
  const Matrix test_x = b.data.features_of(SplitSide::Test);
  const double ens = unseen_spread(b.ens24, train_x, test_x).mean;
  const double single = unseen_spread(b.baseline, train_x, test_x).mean;
  return {ens < single, "mean max-similarity L24,D5=" + fixed(ens) + " baseline L1,D20=" + fixed(single)};
}

Outcome end_to_end_determinism() {
  const auto dir = scratch_dir();
  cli::RunConfig cfg;
  cfg.output_dir = dir / "a";
  const auto ta = cli::cmd_train(cfg);
  const auto ra = cli::cmd_eval(cfg, ta.ensemble_dir).to_json();
  cfg.output_dir = dir / "b";
  const auto tb = cli::cmd_train(cfg);
  const auto rb = cli::cmd_eval(cfg, tb.ensemble_dir).to_json();
  if (ra != rb) return {false, "EvalReports differ between identical runs"};

  auto& data = bench().data;
  cli::RunConfig p1 = cfg, p4 = cfg;
  p1.parallelism = 1;
  p4.parallelism = 4;
  const auto e1 = cli::train_run(p1, data, cfg.num_members);
  const auto e4 = cli::train_run(p4, data, cfg.num_members);
  for (std::size_t i = 0; i < e1.size(); ++i)
    if (e1.members[i].to_json() != e4.members[i].to_json())
      return {false, "member " + std::to_string(i) + " differs between parallelism 1 and 4"};
  std::filesystem::remove_all(dir);
  return {true, "R@1=" + fixed(ra.at("recall_at").at("1").get<double>()) + ", " + std::to_string(e1.size()) +
                    " members identical"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    double budget_seconds;  // 0 for none
  };
  const std::vector<Criterion> criteria{
      {1, "partition suite", partition_suite, 5.0},
      {2, "gradient check", gradient_check, 30.0},
      {3, "metric oracles", metric_oracles, 60.0},
      {4, "concatenation identity", concat_identity, 0.0},
      {5, "ensemble-size trend", ensemble_size_trend, 0.0},
      {6, "meta-class-size trend", meta_class_size_trend, 0.0},
      {7, "distribution separation", distribution_separation, 0.0},
      {8, "unseen-class spread", unseen_class_spread, 0.0},
      {9, "end-to-end determinism", end_to_end_determinism, 0.0},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs >= c.budget_seconds) {
      o.pass = false;
      o.detail += "; over the " + fixed(c.budget_seconds, 0) + " s budget";
    }
    failures += !o.pass;
    std::printf("[%s] %d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
