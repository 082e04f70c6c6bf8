#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace prtree {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, inconsistent dimensions, out-of-range parameters.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine produced a non-finite or otherwise unusable result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/**
 * @brief Feature matrix plus target, the substrate every learner trains on.
 *
 * Rows are observations in file order. Features are stored column-major
 * so that per-coordinate scans (split enumeration, scaling) are contiguous.
 */
struct Dataset {
  Matrix features;
  Vector target;
  std::vector<std::string> feature_names;

  std::size_t n() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(features.cols()); }

  Vector row(std::size_t i) const { return features.row(static_cast<Eigen::Index>(i)).transpose(); }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.target.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(rows[r]));
      out.target(static_cast<Eigen::Index>(r)) = target(static_cast<Eigen::Index>(rows[r]));
    }
    out.feature_names = feature_names;
    return out;
  }

  Dataset with_target(Vector y) const {
    if (y.size() != features.rows()) throw ValidationError("target length does not match row count");
    Dataset out{features, std::move(y), feature_names};
    return out;
  }

  void validate() const {
    if (features.rows() < 1 || features.cols() < 1) throw ValidationError("dataset must have n >= 1 and p >= 1");
    if (target.size() != features.rows()) throw ValidationError("target length does not match row count");
    if (!features.allFinite() || !target.allFinite()) throw ValidationError("dataset contains non-finite values");
  }
};

/**
 * @brief Axis-aligned hyper-rectangle (lower, upper] with possibly infinite bounds.
 *
 * Hard assignment uses the half-open convention lower < x <= upper on every
 * coordinate, so the two children of a split tile their parent exactly.
 */
class Region {
 public:
  Region() = default;

  explicit Region(std::size_t p) : lower_(p, -kInf), upper_(p, kInf) {}

  Region(std::vector<double> lower, std::vector<double> upper)
      : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() != upper_.size()) throw ValidationError("region bound vectors differ in length");
    for (std::size_t j = 0; j < lower_.size(); ++j) {
      if (std::isnan(lower_[j]) || std::isnan(upper_[j]) || !(lower_[j] < upper_[j]))
        throw ValidationError("region requires lower < upper on coordinate " + std::to_string(j));
    }
  }

  static Region whole(std::size_t p) { return Region(p); }

  std::size_t dim() const { return lower_.size(); }
  double lower(std::size_t j) const { return lower_[j]; }
  double upper(std::size_t j) const { return upper_[j]; }
  const std::vector<double>& lower_bounds() const { return lower_; }
  const std::vector<double>& upper_bounds() const { return upper_; }

  bool bounded(std::size_t j) const { return lower_[j] != -kInf || upper_[j] != kInf; }

  template <class Point>
  bool contains(const Point& x) const {
    for (std::size_t j = 0; j < lower_.size(); ++j) {
      const double v = x[static_cast<Eigen::Index>(j)];
      if (!(lower_[j] < v && v <= upper_[j])) return false;
    }
    return true;
  }

  bool contains_row(const Matrix& features, std::size_t i) const {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < lower_.size(); ++j) {
      const double v = features(r, static_cast<Eigen::Index>(j));
      if (!(lower_[j] < v && v <= upper_[j])) return false;
    }
    return true;
  }

  /// Splits at s on coordinate j into (lower, s] and (s, upper].
  std::pair<Region, Region> split(std::size_t j, double s) const {
    if (j >= dim()) throw ValidationError("split coordinate out of range");
    if (!(lower_[j] < s && s < upper_[j]))
      throw ValidationError("split value " + std::to_string(s) + " outside the region's open interval on coordinate " +
                            std::to_string(j));
    Region left = *this;
    Region right = *this;
    left.upper_[j] = s;
    right.lower_[j] = s;
    return {std::move(left), std::move(right)};
  }

  bool operator==(const Region&) const = default;

 private:
  std::vector<double> lower_;
  std::vector<double> upper_;
};

/// Per-feature input-noise scales. A zero entry selects the hard indicator on that coordinate.
struct SigmaVector {
  std::vector<double> values;

  SigmaVector() = default;
  explicit SigmaVector(std::vector<double> v) : values(std::move(v)) {
    for (double s : values)
      if (!(s >= 0.0) || !std::isfinite(s)) throw ValidationError("sigma entries must be finite and non-negative");
  }

  static SigmaVector zeros(std::size_t p) { return SigmaVector(std::vector<double>(p, 0.0)); }

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t j) const { return values[j]; }
  bool operator==(const SigmaVector&) const = default;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/**
 * @brief Names one deterministic random stream.
 *
 * Distinct stream ids under the same seed produce decorrelated engines;
 * child() derives named sub-streams so that every consumer owns its own.
 */
struct RngSpec {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  std::mt19937_64 engine() const {
    const std::uint64_t s = detail::splitmix64(seed ^ detail::splitmix64(stream_id + 0x632be59bd9b4e019ULL));
    return std::mt19937_64(s);
  }

  RngSpec child(std::uint64_t id) const {
    return RngSpec{detail::splitmix64(seed ^ detail::splitmix64(stream_id)), id};
  }
};

// ---------------------------------------------------------------------------
// CSV ingestion

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

}  // namespace detail

/**
 * @brief Reads a comma-separated file with a header row.
 *
 * Every non-target column must be numeric. Errors name the 1-based data row
 * and the column header.
 */
inline Dataset load_csv(const std::string& path, const std::string& target_column) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ValidationError("file '" + path + "' is empty");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  std::vector<std::string> header = detail::split_csv_line(line);
  for (auto& h : header) h = std::string(detail::trim(h));

  std::size_t target_idx = header.size();
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == target_column) target_idx = c;
  if (target_idx == header.size()) throw ValidationError("target column not found: '" + target_column + "'");

  std::vector<std::vector<double>> rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row_no;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ValidationError("row " + std::to_string(row_no) + ": expected " + std::to_string(header.size()) +
                            " cells, found " + std::to_string(cells.size()));
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (detail::trim(cells[c]).empty())
        throw ValidationError("row " + std::to_string(row_no) + ", column '" + header[c] + "': blank cell");
      if (!detail::parse_double(cells[c], values[c]))
        throw ValidationError("row " + std::to_string(row_no) + ", column '" + header[c] + "': non-numeric cell '" +
                              cells[c] + "'");
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ValidationError("file '" + path + "' has no data rows");
  if (header.size() < 2) throw ValidationError("file '" + path + "' has no feature columns");

  Dataset d;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(header.size() - 1);
  d.features.resize(n, p);
  d.target.resize(n);
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != target_idx) d.feature_names.push_back(header[c]);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index col = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == target_idx)
        d.target(i) = rows[static_cast<std::size_t>(i)][c];
      else
        d.features(i, col++) = rows[static_cast<std::size_t>(i)][c];
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Standard scaling

/// Per-column centering and scaling statistics (sample std, divisor n-1).
struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t size() const { return mean.size(); }

  Dataset apply(const Dataset& d) const {
    if (d.p() != size()) throw ValidationError("scaler dimension does not match dataset");
    Dataset out = d;
    for (std::size_t j = 0; j < size(); ++j) {
      auto col = out.features.col(static_cast<Eigen::Index>(j));
      col = ((col.array() - mean[j]) / std[j]).matrix();
    }
    return out;
  }

  Vector apply(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != size()) throw ValidationError("scaler dimension does not match point");
    Vector out(x.size());
    for (std::size_t j = 0; j < size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      out(jj) = (x(jj) - mean[j]) / std[j];
    }
    return out;
  }

  static Scaler identity(std::size_t p) { return Scaler{std::vector<double>(p, 0.0), std::vector<double>(p, 1.0)}; }
};

inline Scaler fit_scaler(const Dataset& d) {
  if (d.n() < 2) throw ValidationError("standard scaling needs at least 2 rows");
  Scaler s;
  const double n = static_cast<double>(d.n());
  for (std::size_t j = 0; j < d.p(); ++j) {
    const auto col = d.features.col(static_cast<Eigen::Index>(j));
    const double mean = col.sum() / n;
    const double ss = (col.array() - mean).square().sum();
    double sd = std::sqrt(ss / (n - 1.0));
    // constant columns are centered only
    if (!(sd > 0.0) || sd <= 1e-12 * std::max(1.0, std::abs(mean))) sd = 1.0;
    s.mean.push_back(mean);
    s.std.push_back(sd);
  }
  return s;
}

/// Fits a scaler on d and returns the transformed copy together with the parameters.
inline std::pair<Dataset, Scaler> standard_scale(const Dataset& d) {
  Scaler s = fit_scaler(d);
  return {s.apply(d), std::move(s)};
}

/// Sample standard deviation (divisor n-1) of each feature column.
inline std::vector<double> feature_stddev(const Dataset& d) {
  std::vector<double> out(d.p(), 0.0);
  if (d.n() < 2) return out;
  const double n = static_cast<double>(d.n());
  for (std::size_t j = 0; j < d.p(); ++j) {
    const auto col = d.features.col(static_cast<Eigen::Index>(j));
    const double mean = col.sum() / n;
    out[j] = std::sqrt((col.array() - mean).square().sum() / (n - 1.0));
  }
  return out;
}

}  // namespace prtree
