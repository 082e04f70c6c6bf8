#pragma once

#include "prtree/core.hpp"
#include "prtree/kernel.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace prtree {

/// Growth limits for a single tree. The leaf-size rule counts hard-assigned rows.
struct StoppingRule {
  double min_leaf_fraction = 0.10;
  std::optional<int> max_depth;
  std::optional<std::size_t> max_leaves;

  void validate() const {
    if (!(min_leaf_fraction > 0.0 && min_leaf_fraction <= 0.5))
      throw ValidationError("min_leaf_fraction must lie in (0, 0.5]");
    if (max_depth && *max_depth < 0) throw ValidationError("max_depth must be non-negative");
    if (max_leaves && *max_leaves < 1) throw ValidationError("max_leaves must be at least 1");
  }

  /// Smallest admissible hard-assigned leaf size for a training set of n rows.
  std::size_t min_leaf_count(std::size_t n) const {
    const double need = min_leaf_fraction * static_cast<double>(n);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(need - 1e-9)));
  }
};

struct SplitChoice {
  std::size_t feature = 0;
  double threshold = 0.0;
  double sse = 0.0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int leaf = -1;  // column of the membership matrix for leaves
  int depth = 0;

  bool is_leaf() const { return feature < 0; }
};

/**
 * @brief A fitted probabilistic regression tree.
 *
 * The prediction at x is sum_k gamma_k * psi(x, leaf_regions[k], sigma).
 * `nodes[0]` is the root; leaf nodes index into `leaf_regions` and `gamma`.
 */
struct PRTree {
  std::vector<TreeNode> nodes;
  std::vector<Region> leaf_regions;
  Vector gamma;
  SigmaVector sigma;
  std::vector<double> sse_trace;  // training SSE after each accepted split, root first

  std::size_t leaf_count() const { return leaf_regions.size(); }
  std::size_t dim() const { return sigma.size(); }

  template <class Point>
  double predict(const Point& x) const {
    if (static_cast<std::size_t>(x.size()) != dim())
      throw ValidationError("point has " + std::to_string(x.size()) + " coordinates, tree expects " +
                            std::to_string(dim()));
    double out = 0.0;
    for (std::size_t k = 0; k < leaf_regions.size(); ++k)
      out += gamma(static_cast<Eigen::Index>(k)) * psi(x, leaf_regions[k], sigma);
    return out;
  }

  Vector predict(const Dataset& d) const {
    Vector out(d.features.rows());
    for (Eigen::Index i = 0; i < d.features.rows(); ++i) out(i) = predict(d.features.row(i));
    return out;
  }
};

template <class Point>
double predict_tree(const PRTree& t, const Point& x) {
  return t.predict(x);
}

// ---------------------------------------------------------------------------
// Leaf weights

/// True when every entry is 0 or 1 and every row has at most one 1.
inline bool is_hard_partition(const Matrix& P) {
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    int ones = 0;
    for (Eigen::Index k = 0; k < P.cols(); ++k) {
      const double v = P(i, k);
      if (v == 1.0)
        ++ones;
      else if (v != 0.0)
        return false;
    }
    if (ones > 1) return false;
  }
  return true;
}

/**
 * @brief Minimum-norm least-squares weights, gamma = pinv(P) y.
 *
 * Singular values below 1e-10 times the largest are treated as zero. A
 * disjoint 0/1 indicator matrix is solved directly by per-column means,
 * which is the same pseudo-inverse in closed form.
 */
inline Vector fit_weights(const Matrix& P, const Vector& y) {
  if (P.rows() != y.size()) throw ValidationError("membership rows do not match target length");
  const Eigen::Index K = P.cols();
  if (K == 0) return Vector();

  if (is_hard_partition(P)) {
    Vector sum = Vector::Zero(K);
    std::vector<std::size_t> count(static_cast<std::size_t>(K), 0);
    for (Eigen::Index i = 0; i < P.rows(); ++i)
      for (Eigen::Index k = 0; k < K; ++k)
        if (P(i, k) == 1.0) {
          sum(k) += y(i);
          ++count[static_cast<std::size_t>(k)];
        }
    Vector gamma = Vector::Zero(K);
    for (Eigen::Index k = 0; k < K; ++k)
      if (count[static_cast<std::size_t>(k)] > 0) gamma(k) = sum(k) / static_cast<double>(count[static_cast<std::size_t>(k)]);
    return gamma;
  }

  Eigen::JacobiSVD<Matrix> svd(P, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff = sv.size() > 0 ? 1e-10 * sv(0) : 0.0;
  Vector uty = svd.matrixU().transpose() * y;
  for (Eigen::Index i = 0; i < sv.size(); ++i) uty(i) = sv(i) > cutoff ? uty(i) / sv(i) : 0.0;
  Vector gamma = svd.matrixV() * uty;
  if (!gamma.allFinite()) throw NumericalError("least-squares leaf weights are not finite");
  return gamma;
}

inline Vector fit_weights(const MembershipMatrix& P, const Vector& y) { return fit_weights(P.values, y); }

inline double residual_sse(const Matrix& P, const Vector& gamma, const Vector& y) {
  return (y - P * gamma).squaredNorm();
}

// ---------------------------------------------------------------------------
// Split enumeration

/// Rows of d hard-assigned (sigma = 0) to region r.
inline std::vector<std::size_t> rows_in_region(const Dataset& d, const Region& r) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < d.n(); ++i)
    if (r.contains_row(d.features, i)) rows.push_back(i);
  return rows;
}

namespace detail {

inline std::vector<double> sorted_feature(const Dataset& d, std::span<const std::size_t> rows, std::size_t j) {
  std::vector<double> v;
  v.reserve(rows.size());
  const auto col = d.features.col(static_cast<Eigen::Index>(j));
  for (std::size_t i : rows) v.push_back(col(static_cast<Eigen::Index>(i)));
  std::sort(v.begin(), v.end());
  return v;
}

inline double midpoint(double a, double b) { return a + 0.5 * (b - a); }

/// Midpoint thresholds of the sorted values together with the number of values <= threshold.
inline std::vector<std::pair<double, std::size_t>> midpoints_with_counts(const std::vector<double>& sorted) {
  std::vector<std::pair<double, std::size_t>> out;
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i] == sorted[i - 1]) continue;
    const double s = midpoint(sorted[i - 1], sorted[i]);
    if (!(s < sorted[i])) continue;  // adjacent doubles leave no room for a threshold
    out.emplace_back(s, i);
  }
  return out;
}

}  // namespace detail

/// Midpoints between consecutive distinct values of feature j among the given rows.
inline std::vector<double> split_candidates(const Dataset& d, std::span<const std::size_t> rows, std::size_t j) {
  std::vector<double> out;
  for (const auto& [s, c] : detail::midpoints_with_counts(detail::sorted_feature(d, rows, j))) out.push_back(s);
  return out;
}

/// Midpoints between consecutive distinct values of feature j among rows hard-assigned to the region.
inline std::vector<double> split_candidates(const Dataset& d, const Region& region, std::size_t j) {
  const auto rows = rows_in_region(d, region);
  return split_candidates(d, rows, j);
}

/**
 * @brief Ranks coordinates by their best hard-CART variance reduction over `rows`.
 *
 * Returns up to k coordinates (descending reduction, ascending index on ties).
 * A coordinate qualifies only if some split leaves at least `min_leaf_count`
 * rows on each side. When `allowed` is non-empty only those coordinates are
 * considered.
 */
inline std::vector<std::size_t> candidate_variables(const Dataset& d, std::span<const std::size_t> rows,
                                                    std::size_t k = 3, std::size_t min_leaf_count = 1,
                                                    std::span<const std::size_t> allowed = {}) {
  if (rows.empty()) throw ValidationError("candidate_variables needs a non-empty row set");
  min_leaf_count = std::max<std::size_t>(1, min_leaf_count);

  const std::size_t m = rows.size();
  double mean = 0.0;
  for (std::size_t i : rows) mean += d.target(static_cast<Eigen::Index>(i));
  mean /= static_cast<double>(m);

  std::vector<std::size_t> coords;
  if (allowed.empty()) {
    coords.resize(d.p());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
  } else {
    coords.assign(allowed.begin(), allowed.end());
    std::sort(coords.begin(), coords.end());
  }

  std::vector<std::pair<double, std::size_t>> scored;
  std::vector<std::pair<double, double>> xy(m);
  for (std::size_t j : coords) {
    const auto col = d.features.col(static_cast<Eigen::Index>(j));
    for (std::size_t r = 0; r < m; ++r)
      xy[r] = {col(static_cast<Eigen::Index>(rows[r])), d.target(static_cast<Eigen::Index>(rows[r])) - mean};
    std::sort(xy.begin(), xy.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    double total = 0.0;
    for (const auto& e : xy) total += e.second;
    double left = 0.0;
    double best = -1.0;
    for (std::size_t r = 0; r + 1 < m; ++r) {
      left += xy[r].second;
      if (xy[r].first == xy[r + 1].first) continue;
      const std::size_t nl = r + 1, nr = m - nl;
      if (nl < min_leaf_count || nr < min_leaf_count) continue;
      const double ml = left / static_cast<double>(nl);
      const double mr = (total - left) / static_cast<double>(nr);
      const double red = static_cast<double>(nl) * static_cast<double>(nr) / static_cast<double>(m) * (ml - mr) * (ml - mr);
      best = std::max(best, red);
    }
    if (best >= 0.0) scored.emplace_back(best, j);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(scored[i].second);
  return out;
}

// ---------------------------------------------------------------------------
// Greedy split search

namespace detail {

/// Scores are screened against this relative window before the exact refit decides.
inline constexpr double kScreenWindow = 1e-9;
/// Two exact SSE values closer than this (relative) are treated as tied.
inline constexpr double kTieTolerance = 1e-12;

/// True when `a` beats the incumbent `b` by more than the tie tolerance.
inline bool strictly_better(double a, double b) { return a < b - kTieTolerance * (1.0 + std::abs(b)); }

/**
 * Incremental state of a growing tree.
 *
 * The span of the current membership columns is tracked by an orthonormal
 * basis. Splitting column k into (u, c_k - u) enlarges that span by u alone,
 * so the refit SSE of a candidate is sse - (r.u_perp)^2 / |u_perp|^2 where r
 * is the current least-squares residual and u_perp is u with the basis
 * projected out. Candidates close to the best screened score are then
 * re-evaluated with a full pseudo-inverse refit, which is the reference.
 */
class SplitSearch {
 public:
  struct Candidate {
    std::size_t feature;
    double threshold;
    double u_sq = 0.0;
    Vector ortho;  // empty when not cached
    double ortho_sq = 0.0;
  };

  struct Leaf {
    Region region;
    std::vector<std::size_t> rows;
    int depth = 0;
    int node = 0;
    std::vector<Candidate> candidates;
    std::vector<std::pair<std::size_t, Vector>> others;  // per feature: product of the other coordinates' factors
  };

  struct Pick {
    std::size_t leaf;
    SplitChoice choice;
  };

  SplitSearch(const Dataset& d, const Vector& y, const SigmaVector& sigma, const StoppingRule& rule,
              std::span<const std::size_t> allowed, std::size_t cache_budget)
      : d_(d), y_(y), sigma_(sigma), rule_(rule), allowed_(allowed.begin(), allowed.end()),
        min_count_(rule.min_leaf_count(d.n())), cache_budget_(cache_budget) {
    yty_ = y_.squaredNorm();
  }

  /// Starts from a single root leaf.
  void init_root() {
    P_ = build_membership(d_, {Region::whole(d_.p())}, sigma_);
    nodes_.assign(1, TreeNode{});
    rebuild_fit();
    std::vector<std::size_t> all(d_.n());
    std::iota(all.begin(), all.end(), std::size_t{0});
    leaves_.clear();
    leaves_.push_back(make_leaf(Region::whole(d_.p()), std::move(all), 0, 0, {}));
  }

  /// Starts from an arbitrary membership matrix and searches only column k.
  void init_single(const MembershipMatrix& P, std::size_t k, std::span<const std::size_t> vars) {
    P_ = P;
    rebuild_fit();
    leaves_.clear();
    single_leaf_index_ = k;
    leaves_.push_back(make_leaf(P.regions[k], rows_in_region(d_, P.regions[k]), 0, 0, vars));
  }

  double sse() const { return sse_; }
  const MembershipMatrix& membership() const { return P_; }
  const Vector& gamma() const { return gamma_; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t leaf_count() const { return leaves_.size(); }

  /// Best admissible split over all leaves, by exact refit SSE; ties go to the earlier leaf, then smaller (j, s).
  std::optional<Pick> best(double stop_below_gain = -1.0) {
    double best_score = kInf;
    for (const auto& leaf : leaves_)
      for (const auto& c : leaf.candidates) best_score = std::min(best_score, screen(leaf, c));
    if (best_score == kInf) return std::nullopt;
    if (stop_below_gain >= 0.0 && sse_ - best_score < 0.5 * stop_below_gain) return std::nullopt;

    const double window = kScreenWindow * (1.0 + std::abs(sse_));
    std::optional<Pick> pick;
    for (std::size_t li = 0; li < leaves_.size(); ++li) {
      for (const auto& c : leaves_[li].candidates) {
        if (!(screen(leaves_[li], c) <= best_score + window)) continue;
        const double exact = exact_sse(li, c.feature, c.threshold);
        if (!pick || strictly_better(exact, pick->choice.sse)) pick = Pick{li, SplitChoice{c.feature, c.threshold, exact}};
      }
    }
    return pick;
  }

  /// Exact refit SSE after splitting leaf li at (j, s).
  double exact_sse(std::size_t li, std::size_t j, double s) const {
    const auto Pn = split_membership_column(P_, column_of(li), j, s, d_, sigma_);
    const Vector g = fit_weights(Pn.values, y_);
    return residual_sse(Pn.values, g, y_);
  }

  void apply(const Pick& pick) {
    const std::size_t li = pick.leaf;
    const std::size_t j = pick.choice.feature;
    const double s = pick.choice.threshold;
    Leaf parent = std::move(leaves_[li]);
    forget(parent);

    P_ = split_membership_column(P_, li, j, s, d_, sigma_);
    const auto kk = static_cast<Eigen::Index>(li);
    const Vector left_col = P_.values.col(kk);
    rebuild_fit();
    std::optional<Vector> q = extend_basis(left_col);
    if (q) {
      for (auto& leaf : leaves_)
        if (&leaf != &leaves_[li])
          for (auto& c : leaf.candidates)
            if (c.ortho.size() > 0) {
              c.ortho -= q->dot(c.ortho) * *q;
              c.ortho_sq = c.ortho.squaredNorm();
            }
    }

    // tree bookkeeping
    const int node = parent.node;
    const int depth = parent.depth;
    const int left_node = static_cast<int>(nodes_.size());
    nodes_.push_back(TreeNode{-1, 0.0, -1, -1, -1, depth + 1});
    nodes_.push_back(TreeNode{-1, 0.0, -1, -1, -1, depth + 1});
    nodes_[static_cast<std::size_t>(node)].feature = static_cast<int>(j);
    nodes_[static_cast<std::size_t>(node)].threshold = s;
    nodes_[static_cast<std::size_t>(node)].left = left_node;
    nodes_[static_cast<std::size_t>(node)].right = left_node + 1;
    nodes_[static_cast<std::size_t>(node)].leaf = -1;

    std::vector<std::size_t> lrows, rrows;
    const auto col = d_.features.col(static_cast<Eigen::Index>(j));
    for (std::size_t i : parent.rows) (col(static_cast<Eigen::Index>(i)) <= s ? lrows : rrows).push_back(i);

    Leaf left = make_leaf(P_.regions[li], std::move(lrows), depth + 1, left_node, {});
    Leaf right = make_leaf(P_.regions[li + 1], std::move(rrows), depth + 1, left_node + 1, {});
    leaves_[li] = std::move(left);
    leaves_.insert(leaves_.begin() + static_cast<std::ptrdiff_t>(li) + 1, std::move(right));
    for (std::size_t k = 0; k < leaves_.size(); ++k) nodes_[static_cast<std::size_t>(leaves_[k].node)].leaf = static_cast<int>(k);
  }

  const Leaf& leaf(std::size_t i) const { return leaves_[i]; }

 private:
  std::size_t column_of(std::size_t li) const { return single_leaf_index_ ? *single_leaf_index_ : li; }

  void rebuild_fit() {
    gamma_ = fit_weights(P_.values, y_);
    resid_ = y_ - P_.values * gamma_;
    sse_ = resid_.squaredNorm();
    if (basis_.empty()) {
      for (Eigen::Index k = 0; k < P_.values.cols(); ++k) extend_basis(P_.values.col(k));
    }
  }

  void orthogonalize(Vector& v) const {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : basis_) v -= q.dot(v) * q;
  }

  std::optional<Vector> extend_basis(const Vector& col) {
    const double norm0 = col.norm();
    if (!(norm0 > 0.0)) return std::nullopt;
    Vector v = col;
    orthogonalize(v);
    const double nv = v.norm();
    if (!(nv > 1e-10 * norm0)) return std::nullopt;
    v /= nv;
    basis_.push_back(v);
    return v;
  }

  void left_column(const Leaf& leaf, std::size_t j, double s, Vector& out) const {
    const Vector* others = nullptr;
    for (const auto& [f, v] : leaf.others)
      if (f == j) others = &v;
    const auto col = d_.features.col(static_cast<Eigen::Index>(j));
    const double lo = leaf.region.lower(j), sg = sigma_[j];
    out.resize(col.size());
    for (Eigen::Index i = 0; i < col.size(); ++i) out(i) = (*others)(i) * coordinate_mass(col(i), lo, s, sg);
  }

  double screen(const Leaf& leaf, const Candidate& c) const {
    double ortho_sq = c.ortho_sq;
    double dot = 0.0;
    if (c.ortho.size() > 0) {
      dot = resid_.dot(c.ortho);
    } else {
      Vector u;
      left_column(leaf, c.feature, c.threshold, u);
      const double u_sq = u.squaredNorm();
      orthogonalize(u);
      ortho_sq = u.squaredNorm();
      if (!(ortho_sq > 1e-20 * u_sq)) return sse_;
      dot = resid_.dot(u);
    }
    if (!(ortho_sq > 1e-20 * c.u_sq)) return sse_;
    return std::max(0.0, sse_ - dot * dot / ortho_sq);
  }

  Leaf make_leaf(Region region, std::vector<std::size_t> rows, int depth, int node, std::span<const std::size_t> vars) {
    Leaf leaf;
    leaf.region = std::move(region);
    leaf.rows = std::move(rows);
    leaf.depth = depth;
    leaf.node = node;
    if (rule_.max_depth && depth >= *rule_.max_depth && !single_leaf_index_) return leaf;
    if (leaf.rows.size() < 2 * min_count_) return leaf;

    std::vector<std::size_t> features;
    if (!vars.empty())
      features.assign(vars.begin(), vars.end());
    else
      features = candidate_variables(d_, leaf.rows, 3, min_count_, allowed_);
    std::sort(features.begin(), features.end());
    features.erase(std::unique(features.begin(), features.end()), features.end());

    const Eigen::Index n = d_.features.rows();
    for (std::size_t j : features) {
      const auto sorted = sorted_feature(d_, leaf.rows, j);
      const auto mids = midpoints_with_counts(sorted);
      std::vector<std::pair<double, std::size_t>> admissible;
      for (const auto& [s, cnt] : mids)
        if (cnt >= min_count_ && sorted.size() - cnt >= min_count_) admissible.emplace_back(s, cnt);
      if (admissible.empty()) continue;

      Vector others = Vector::Ones(n);
      for (std::size_t jj = 0; jj < leaf.region.dim(); ++jj) {
        if (jj == j || !leaf.region.bounded(jj)) continue;
        const auto cj = d_.features.col(static_cast<Eigen::Index>(jj));
        for (Eigen::Index i = 0; i < n; ++i)
          others(i) *= coordinate_mass(cj(i), leaf.region.lower(jj), leaf.region.upper(jj), sigma_[jj]);
      }
      leaf.others.emplace_back(j, std::move(others));

      for (const auto& [s, cnt] : admissible) {
        Candidate c{j, s};
        Vector u;
        left_column(leaf, j, s, u);
        c.u_sq = u.squaredNorm();
        if (cached_ + static_cast<std::size_t>(n) <= cache_budget_) {
          orthogonalize(u);
          c.ortho_sq = u.squaredNorm();
          c.ortho = std::move(u);
          cached_ += static_cast<std::size_t>(n);
        }
        leaf.candidates.push_back(std::move(c));
      }
    }
    return leaf;
  }

  void forget(const Leaf& leaf) {
    for (const auto& c : leaf.candidates)
      if (c.ortho.size() > 0) cached_ -= static_cast<std::size_t>(c.ortho.size());
  }

  const Dataset& d_;
  const Vector& y_;
  SigmaVector sigma_;
  StoppingRule rule_;
  std::vector<std::size_t> allowed_;
  std::size_t min_count_;
  std::size_t cache_budget_;
  std::size_t cached_ = 0;
  std::optional<std::size_t> single_leaf_index_;

  double yty_ = 0.0;
  MembershipMatrix P_;
  Vector gamma_;
  Vector resid_;
  double sse_ = 0.0;
  std::vector<Vector> basis_;
  std::vector<Leaf> leaves_;
  std::vector<TreeNode> nodes_;
};

inline constexpr std::size_t kDefaultCacheBudget = std::size_t{1} << 23;  // doubles

}  // namespace detail

/**
 * @brief Best split of leaf k of P over the given variables.
 *
 * Minimizes the training SSE after replacing column k by its two children
 * and refitting every weight. Splits leaving fewer hard-assigned rows than
 * the leaf-size rule allows on either side are skipped. Ties go to the
 * smaller feature index, then the smaller threshold.
 */
inline std::optional<SplitChoice> find_best_split(const Dataset& d, const MembershipMatrix& P, const Vector& y,
                                                  std::size_t k, std::span<const std::size_t> vars,
                                                  const SigmaVector& sigma, const StoppingRule& rule) {
  if (k >= P.cols()) throw ValidationError("leaf index out of range");
  if (P.rows() != d.n() || static_cast<std::size_t>(y.size()) != d.n())
    throw ValidationError("membership matrix, dataset and target disagree on row count");
  check_sigma(sigma, d.p());
  rule.validate();
  if (vars.empty()) return std::nullopt;
  detail::SplitSearch search(d, y, sigma, rule, {}, detail::kDefaultCacheBudget);
  search.init_single(P, k, vars);
  auto pick = search.best();
  if (!pick) return std::nullopt;
  return pick->choice;
}

/**
 * @brief Grows a PR tree greedily, one globally best split per iteration.
 *
 * `allowed_vars` restricts the coordinates that may be split on (empty means
 * all). The fit is deterministic; `rng` is accepted for interface symmetry
 * with the ensemble learners.
 */
inline PRTree fit_prtree(const Dataset& d, const SigmaVector& sigma, const StoppingRule& rule, const RngSpec& rng = {},
                         std::span<const std::size_t> allowed_vars = {}) {
  (void)rng;
  d.validate();
  if (d.n() < 2) throw ValidationError("fit_prtree needs at least 2 rows");
  check_sigma(sigma, d.p());
  rule.validate();
  for (std::size_t j : allowed_vars)
    if (j >= d.p()) throw ValidationError("allowed variable index out of range");

  detail::SplitSearch search(d, d.target, sigma, rule, allowed_vars, detail::kDefaultCacheBudget);
  search.init_root();
  std::vector<double> trace{search.sse()};
  while (true) {
    if (rule.max_leaves && search.leaf_count() >= *rule.max_leaves) break;
    const double threshold = detail::kTieTolerance * (1.0 + search.sse());
    auto pick = search.best(threshold);
    if (!pick) break;
    // splits must beat the admission threshold
    if (!(pick->choice.sse < search.sse() - threshold)) break;
    search.apply(*pick);
    trace.push_back(search.sse());
  }

  PRTree t;
  t.nodes = search.nodes();
  t.leaf_regions = search.membership().regions;
  t.gamma = search.gamma();
  t.sigma = sigma;
  t.sse_trace = std::move(trace);
  return t;
}

}  // namespace prtree
