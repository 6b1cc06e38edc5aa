#include "dreml/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "dreml/error.hpp"
#include "dreml/random.hpp"

namespace dre {

namespace {

Labels sorted_unique(Labels v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

double parse_double(const std::string& token, const std::filesystem::path& path, std::size_t line) {
  double v = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw Error(ErrorCode::Parse, path.string() + ":" + std::to_string(line) + ": bad number '" + token + "'");
  return v;
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) throw Error(ErrorCode::Parse, "truncated binary header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

LabeledDataset LabeledDataset::create(Matrix features, Labels labels, ClassSplit split) {
  if (features.rows() < 1) throw Error(ErrorCode::InvalidArgument, "dataset needs at least one sample");
  if (features.cols() < 1) throw Error(ErrorCode::InvalidArgument, "dataset needs at least one feature column");
  if (static_cast<Index>(labels.size()) != features.rows())
    throw Error(ErrorCode::LengthMismatch, "have " + std::to_string(labels.size()) + " labels for " +
                                               std::to_string(features.rows()) + " feature rows");
  if (!features.allFinite()) throw Error(ErrorCode::NonFinite, "features contain non-finite values");

  split.train = sorted_unique(std::move(split.train));
  split.test = sorted_unique(std::move(split.test));
  std::vector<Label> both;
  std::set_intersection(split.train.begin(), split.train.end(), split.test.begin(), split.test.end(),
                        std::back_inserter(both));
  if (!both.empty())
    throw Error(ErrorCode::OverlappingSplit, "class " + std::to_string(both.front()) + " is on both sides of the split");

  for (Label l : labels) {
    if (!std::binary_search(split.train.begin(), split.train.end(), l) &&
        !std::binary_search(split.test.begin(), split.test.end(), l))
      throw Error(ErrorCode::MissingLabel, "class " + std::to_string(l) + " is on neither side of the split");
  }

  LabeledDataset d;
  d.features_ = std::move(features);
  d.labels_ = std::move(labels);
  d.split_ = std::move(split);
  return d;
}

SplitSide LabeledDataset::side_of(Label label) const {
  if (std::binary_search(split_.train.begin(), split_.train.end(), label)) return SplitSide::Train;
  if (std::binary_search(split_.test.begin(), split_.test.end(), label)) return SplitSide::Test;
  throw Error(ErrorCode::MissingLabel, "class " + std::to_string(label) + " is not in this dataset's split");
}

std::vector<Index> LabeledDataset::rows(SplitSide side) const {
  const Labels& cls = classes(side);
  std::vector<Index> out;
  for (Index i = 0; i < size(); ++i)
    if (std::binary_search(cls.begin(), cls.end(), labels_[static_cast<std::size_t>(i)])) out.push_back(i);
  return out;
}

Matrix LabeledDataset::features_of(SplitSide side) const {
  return features_(rows(side), Eigen::all);
}

Labels LabeledDataset::labels_of(SplitSide side) const {
  Labels out;
  for (Index i : rows(side)) out.push_back(labels_[static_cast<std::size_t>(i)]);
  return out;
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw Error(ErrorCode::InvalidArgument, "synthetic num_classes must be >= 2");
  if (samples_per_class < 1) throw Error(ErrorCode::InvalidArgument, "synthetic samples_per_class must be >= 1");
  if (feature_dim < 1) throw Error(ErrorCode::InvalidArgument, "synthetic feature_dim must be >= 1");
  if (!(center_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "synthetic center_scale must be > 0");
  if (!(cluster_spread > 0.0)) throw Error(ErrorCode::InvalidArgument, "synthetic cluster_spread must be > 0");
}

LabeledDataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, Stream::Synthetic));

  Matrix centers(spec.num_classes, spec.feature_dim);
  for (Index c = 0; c < centers.rows(); ++c)
    for (Index j = 0; j < centers.cols(); ++j) centers(c, j) = spec.center_scale * rng.normal();

  const Index n = static_cast<Index>(spec.num_classes) * spec.samples_per_class;
  Matrix features(n, spec.feature_dim);
  Labels labels(static_cast<std::size_t>(n));
  Index row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int s = 0; s < spec.samples_per_class; ++s, ++row) {
      for (Index j = 0; j < features.cols(); ++j)
        features(row, j) = centers(c, j) + spec.cluster_spread * rng.normal();
      labels[static_cast<std::size_t>(row)] = c;
    }
  }

  ClassSplit split;
  const int num_train = (spec.num_classes + 1) / 2;
  for (int c = 0; c < spec.num_classes; ++c) (c < num_train ? split.train : split.test).push_back(c);
  return LabeledDataset::create(std::move(features), std::move(labels), std::move(split));
}

SplitDescriptor SplitDescriptor::from_json(const nlohmann::json& j) {
  SplitDescriptor d;
  try {
    if (j.is_array()) {
      d.train = j.get<Labels>();
    } else if (j.is_object() && j.contains("train") && j.contains("test")) {
      d.train = j.at("train").get<Labels>();
      d.test = j.at("test").get<Labels>();
    } else {
      throw Error(ErrorCode::Parse, "split descriptor must be a label list or {\"train\": [...], \"test\": [...]}");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("split descriptor: ") + e.what());
  }
  return d;
}

SplitDescriptor SplitDescriptor::load(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
}

nlohmann::json SplitDescriptor::to_json() const {
  if (!test) return train;
  return {{"train", train}, {"test", *test}};
}

ClassSplit resolve_split(const SplitDescriptor& descriptor, const Labels& labels) {
  ClassSplit split;
  split.train = sorted_unique(descriptor.train);
  if (descriptor.test) {
    split.test = sorted_unique(*descriptor.test);
  } else {
    for (Label l : sorted_unique(labels))
      if (!std::binary_search(split.train.begin(), split.train.end(), l)) split.test.push_back(l);
  }
  if (descriptor.train.size() != split.train.size())
    throw Error(ErrorCode::InvalidArgument, "split descriptor lists a train label twice");
  return split;
}

Matrix read_features_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::vector<double> row;
    std::stringstream ss(t);
    std::string tok;
    while (std::getline(ss, tok, ',')) row.push_back(parse_double(trim(tok), path, lineno));
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorCode::LengthMismatch, path.string() + ":" + std::to_string(lineno) + ": expected " +
                                                 std::to_string(rows.front().size()) + " columns, got " +
                                                 std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::Parse, path.string() + ": no feature rows");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

Matrix read_features_binary(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::binary);
  const auto n = read_u64_le(in);
  const auto f = read_u64_le(in);
  if (n == 0 || f == 0 || n > (1ULL << 32) || f > (1ULL << 24))
    throw Error(ErrorCode::Parse, path.string() + ": implausible header N=" + std::to_string(n) + " F=" + std::to_string(f));
  Matrix m(static_cast<Index>(n), static_cast<Index>(f));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const std::uint64_t bits = read_u64_le(in);
      m(i, j) = std::bit_cast<double>(bits);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::Parse, path.string() + ": trailing bytes");
  return m;
}

Labels read_labels(const std::filesystem::path& path) {
  auto in = open_in(path);
  Labels labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    Label v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size())
      throw Error(ErrorCode::Parse, path.string() + ":" + std::to_string(lineno) + ": bad label '" + t + "'");
    labels.push_back(v);
  }
  return labels;
}

void write_features_csv(const std::filesystem::path& path, const Matrix& features) {
  auto out = open_out(path);
  char buf[32];
  for (Index i = 0; i < features.rows(); ++i) {
    for (Index j = 0; j < features.cols(); ++j) {
      // Shortest representation that round-trips.
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, features(i, j));
      (void)ec;
      if (j) out << ',';
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
}

void write_features_binary(const std::filesystem::path& path, const Matrix& features) {
  auto out = open_out(path, std::ios::binary);
  write_u64_le(out, static_cast<std::uint64_t>(features.rows()));
  write_u64_le(out, static_cast<std::uint64_t>(features.cols()));
  for (Index i = 0; i < features.rows(); ++i)
    for (Index j = 0; j < features.cols(); ++j) write_u64_le(out, std::bit_cast<std::uint64_t>(features(i, j)));
}

void write_labels(const std::filesystem::path& path, const Labels& labels) {
  auto out = open_out(path);
  for (Label l : labels) out << l << '\n';
}

LabeledDataset load_features(const std::filesystem::path& features_path, const std::filesystem::path& labels_path,
                             const SplitDescriptor& split, FeatureFormat format) {
  if (format == FeatureFormat::Auto) {
    const auto ext = features_path.extension().string();
    format = (ext == ".bin" || ext == ".f64") ? FeatureFormat::Binary : FeatureFormat::Csv;
  }
  Matrix features = format == FeatureFormat::Binary ? read_features_binary(features_path)
                                                     : read_features_csv(features_path);
  Labels labels = read_labels(labels_path);
  if (static_cast<Index>(labels.size()) != features.rows())
    throw Error(ErrorCode::LengthMismatch, labels_path.string() + " has " + std::to_string(labels.size()) +
                                               " labels but " + features_path.string() + " has " +
                                               std::to_string(features.rows()) + " rows");
  ClassSplit resolved = resolve_split(split, labels);
  return LabeledDataset::create(std::move(features), std::move(labels), std::move(resolved));
}

}  // namespace dre
