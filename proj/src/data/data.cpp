#include "hybridflow/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "hybridflow/random.hpp"
#include "hybridflow/serialize.hpp"

namespace hybridflow::data {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\"");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_line(const std::string& line, char delimiter) {
  std::vector<std::string> out;
  if (delimiter == '\0') {
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
  }
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, delimiter)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == delimiter) out.emplace_back();
  return out;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

Tensor gather_cols(const Tensor& t, const std::vector<std::size_t>& cols) {
  Tensor out({t.rows(), cols.size()});
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t j = 0; j < cols.size(); ++j) out(r, j) = t(r, cols[j]);
  return out;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out = *this;
  out.x = x.gather_rows(rows);
  out.y = y.gather_rows(rows);
  if (!true_noise_variance.empty()) {
    out.true_noise_variance.clear();
    for (std::size_t r : rows) out.true_noise_variance.push_back(true_noise_variance[r]);
  }
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& target_columns,
                 const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadError::Kind::unreadable, "cannot read " + path.string());
  std::string line;
  std::vector<std::string> names;
  std::size_t width = 0;
  if (options.header) {
    while (std::getline(in, line) && trim(line).empty()) {
    }
    names = split_line(line, options.delimiter);
    width = names.size();
  }

  std::vector<std::vector<double>> rows;
  std::size_t dropped = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_line(line, options.delimiter);
    if (width == 0) width = cells.size();
    if (names.empty()) {
      for (std::size_t j = 0; j < width; ++j) names.push_back(std::to_string(j));
    }
    std::vector<double> vals;
    bool ok = cells.size() == width;
    for (std::size_t j = 0; ok && j < cells.size(); ++j) {
      auto v = parse_number(cells[j]);
      if (!v) ok = false;
      else vals.push_back(*v);
    }
    if (ok) rows.push_back(std::move(vals));
    else ++dropped;
  }

  std::vector<std::size_t> targets;
  for (const std::string& t : target_columns) {
    auto it = std::find(names.begin(), names.end(), t);
    if (it == names.end()) {
      throw LoadError(LoadError::Kind::unknown_column, path.string() + ": unknown column '" + t + "'");
    }
    targets.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  if (targets.empty()) throw LoadError(LoadError::Kind::unknown_column, path.string() + ": no target columns given");
  if (rows.empty()) throw LoadError(LoadError::Kind::no_usable_rows, path.string() + ": no usable rows");

  std::vector<std::size_t> features;
  for (std::size_t j = 0; j < width; ++j)
    if (std::find(targets.begin(), targets.end(), j) == targets.end()) features.push_back(j);

  Dataset ds;
  ds.name = path.stem().string();
  ds.x = Tensor({rows.size(), features.size()});
  ds.y = Tensor({rows.size(), targets.size()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t j = 0; j < features.size(); ++j) ds.x(r, j) = rows[r][features[j]];
    for (std::size_t j = 0; j < targets.size(); ++j) ds.y(r, j) = rows[r][targets[j]];
  }
  for (std::size_t j : features) ds.feature_names.push_back(names[j]);
  for (std::size_t j : targets) ds.target_names.push_back(names[j]);
  ds.dropped_rows = dropped;
  ds.provenance = path.string();
  return ds;
}

Split split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split: test fraction must lie in (0, 1)");
  }
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_test == 0 || n_test >= n) {
    throw std::invalid_argument("split: " + std::to_string(n) + " rows at fraction " + std::to_string(test_fraction) +
                                " leaves an empty partition");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  Split s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  return s;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  const Split s = split_indices(ds.rows(), test_fraction, seed);
  return {ds.subset(s.train), ds.subset(s.test)};
}

std::string Normalizer::fingerprint() const {
  nlohmann::json j;
  j["kept"] = kept_features;
  j["x_mean"] = tensor_to_json(Tensor({x_mean.size()}, x_mean));
  j["x_std"] = tensor_to_json(Tensor({x_std.size()}, x_std));
  j["y_mean"] = tensor_to_json(Tensor({y_mean.size()}, y_mean));
  j["y_std"] = tensor_to_json(Tensor({y_std.size()}, y_std));
  return sha256_hex(j.dump());
}

Normalizer normalize_fit(const Dataset& train) {
  if (train.rows() == 0) throw std::invalid_argument("normalize_fit: empty training set");
  auto stats = [](const Tensor& t, std::size_t col) {
    double m = 0.0;
    for (std::size_t r = 0; r < t.rows(); ++r) m += t(r, col);
    m /= static_cast<double>(t.rows());
    double v = 0.0;
    for (std::size_t r = 0; r < t.rows(); ++r) v += (t(r, col) - m) * (t(r, col) - m);
    return std::make_pair(m, std::sqrt(v / static_cast<double>(t.rows())));
  };
  Normalizer n;
  for (std::size_t j = 0; j < train.x.cols(); ++j) {
    auto [m, s] = stats(train.x, j);
    if (!(s > 0.0)) {
      const std::string name = j < train.feature_names.size() ? train.feature_names[j] : std::to_string(j);
      n.warnings.push_back("feature column '" + name + "' is constant on the training split; dropped");
      continue;
    }
    n.kept_features.push_back(j);
    n.x_mean.push_back(m);
    n.x_std.push_back(s);
  }
  for (std::size_t j = 0; j < train.y.cols(); ++j) {
    auto [m, s] = stats(train.y, j);
    if (!(s > 0.0)) {
      n.warnings.push_back("target column " + std::to_string(j) + " is constant on the training split; std kept at 1");
      s = 1.0;
    }
    n.y_mean.push_back(m);
    n.y_std.push_back(s);
  }
  for (const std::string& w : n.warnings) std::cerr << "warning: " << w << '\n';
  return n;
}

Dataset normalize_apply(const Normalizer& norm, const Dataset& ds) {
  if (ds.y.cols() != norm.y_mean.size()) throw std::invalid_argument("normalize_apply: target width mismatch");
  if (!norm.kept_features.empty() && norm.kept_features.back() >= ds.x.cols()) {
    throw std::invalid_argument("normalize_apply: feature width mismatch");
  }
  Dataset out = ds;
  out.x = gather_cols(ds.x, norm.kept_features);
  for (std::size_t r = 0; r < out.x.rows(); ++r) {
    for (std::size_t j = 0; j < out.x.cols(); ++j) out.x(r, j) = (out.x(r, j) - norm.x_mean[j]) / norm.x_std[j];
    for (std::size_t j = 0; j < out.y.cols(); ++j) out.y(r, j) = (out.y(r, j) - norm.y_mean[j]) / norm.y_std[j];
  }
  out.feature_names.clear();
  for (std::size_t j : norm.kept_features) {
    out.feature_names.push_back(j < ds.feature_names.size() ? ds.feature_names[j] : std::to_string(j));
  }
  out.normalizer_fingerprint = norm.fingerprint();
  return out;
}

Tensor denormalize_targets(const Normalizer& norm, const Tensor& values) {
  if (values.cols() != norm.y_mean.size()) throw std::invalid_argument("denormalize_targets: width mismatch");
  Tensor out = values;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) = out(r, j) * norm.y_std[j] + norm.y_mean[j];
  return out;
}

Tensor denormalize_variances(const Normalizer& norm, const Tensor& variances) {
  if (variances.cols() != norm.y_std.size()) throw std::invalid_argument("denormalize_variances: width mismatch");
  Tensor out = variances;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) *= norm.y_std[j] * norm.y_std[j];
  return out;
}

Dataset synth_heteroscedastic(std::size_t n, std::uint64_t seed, const SynthSpec& spec) {
  if (n < 10) throw std::invalid_argument("synth_heteroscedastic: need at least 10 rows");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(spec.x_lo, spec.x_hi);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.name = "synth_heteroscedastic";
  ds.x = Tensor({n, 1});
  ds.y = Tensor({n, 1});
  ds.feature_names = {"x"};
  ds.target_names = {"y"};
  ds.provenance = "synthetic, seed " + std::to_string(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = u(rng);
    const double sd = spec.noise_sd(x);
    ds.x[i] = x;
    ds.y[i] = std::sin(spec.freq * x) + sd * normal(rng);
    ds.true_noise_variance.push_back(sd * sd);
  }
  return ds;
}

std::map<std::string, ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadError::Kind::unreadable, "cannot read manifest " + path.string());
  std::map<std::string, ManifestEntry> out;
  std::optional<ManifestEntry> cur;
  auto flush = [&] {
    if (!cur) return;
    if (cur->path.empty() || cur->target_columns.empty()) {
      throw LoadError(LoadError::Kind::bad_manifest, "manifest entry '" + cur->dataset + "' needs path and target-columns");
    }
    out[cur->dataset] = *cur;
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw LoadError(LoadError::Kind::bad_manifest, path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (key == "dataset") {
      flush();
      cur = ManifestEntry{};
      cur->dataset = value;
      continue;
    }
    if (!cur) throw LoadError(LoadError::Kind::bad_manifest, path.string() + ": key before any dataset line");
    if (key == "path") {
      cur->path = path.parent_path() / value;
    } else if (key == "target-columns") {
      for (const std::string& c : split_line(value, ',')) cur->target_columns.push_back(c);
    } else if (key == "delimiter") {
      if (value == "comma") cur->csv.delimiter = ',';
      else if (value == "whitespace") cur->csv.delimiter = '\0';
      else if (value == "semicolon") cur->csv.delimiter = ';';
      else if (value == "tab") cur->csv.delimiter = '\t';
      else throw LoadError(LoadError::Kind::bad_manifest, "manifest: unknown delimiter '" + value + "'");
    } else if (key == "header") {
      cur->csv.header = value == "true" || value == "yes" || value == "1";
    } else {
      throw LoadError(LoadError::Kind::bad_manifest, "manifest: unknown key '" + key + "'");
    }
  }
  flush();
  return out;
}

Dataset load_dataset(const ManifestEntry& entry) {
  Dataset ds = load_csv(entry.path, entry.target_columns, entry.csv);
  ds.name = entry.dataset;
  return ds;
}

}  // namespace hybridflow::data
