#pragma once

#include "prtree/tree.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

namespace prtree {

// ---------------------------------------------------------------------------
// Hyperparameters

enum class MoveKind { grow = 0, prune = 1, change = 2, swap = 3, identity = 4 };

inline const char* move_name(MoveKind k) {
  switch (k) {
    case MoveKind::grow: return "grow";
    case MoveKind::prune: return "prune";
    case MoveKind::change: return "change";
    case MoveKind::swap: return "swap";
    case MoveKind::identity: return "identity";
  }
  return "?";
}

struct MoveProbs {
  double grow = 0.25;
  double prune = 0.25;
  double change = 0.25;
  double swap = 0.25;

  double of(MoveKind k) const {
    switch (k) {
      case MoveKind::grow: return grow;
      case MoveKind::prune: return prune;
      case MoveKind::change: return change;
      case MoveKind::swap: return swap;
      default: return 0.0;
    }
  }
};

/**
 * @brief Priors, chain length and proposal settings of the sampler.
 *
 * `lambda` and `sigma_gamma` are calibrated from the data when unset.
 * `fixed_sigma_tilde` freezes the noise scale and `tree_moves = false`
 * replaces every topology proposal by the identity; both exist for
 * diagnostics on tiny problems.
 */
struct PBartHyper {
  std::size_t m = 50;
  double alpha = 0.95;
  double beta = 2.0;
  double nu = 3.0;
  std::optional<double> lambda;
  std::optional<double> sigma_gamma;
  std::size_t it_burn = 200;
  std::size_t it_max = 1000;
  MoveProbs move_probs;
  StoppingRule rule{0.10, std::nullopt, std::nullopt};
  std::optional<double> fixed_sigma_tilde;
  bool tree_moves = true;

  void validate() const {
    if (m < 1) throw ValidationError("P-BART needs at least one tree");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
    if (!(beta >= 0.0)) throw ValidationError("beta must be non-negative");
    if (!(nu > 0.0)) throw ValidationError("nu must be positive");
    if (lambda && !(*lambda > 0.0)) throw ValidationError("lambda must be positive");
    if (sigma_gamma && !(*sigma_gamma > 0.0)) throw ValidationError("sigma_gamma must be positive");
    if (!(it_burn < it_max)) throw ValidationError("it_burn must be smaller than it_max");
    const MoveProbs& q = move_probs;
    if (q.grow < 0 || q.prune < 0 || q.change < 0 || q.swap < 0 ||
        std::abs(q.grow + q.prune + q.change + q.swap - 1.0) > 1e-9)
      throw ValidationError("move probabilities must be non-negative and sum to 1");
    if (fixed_sigma_tilde && !(*fixed_sigma_tilde > 0.0)) throw ValidationError("fixed sigma_tilde must be positive");
    rule.validate();
  }
};

// ---------------------------------------------------------------------------
// Tree topology used by the sampler

struct BartNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int parent = -1;
  int depth = 0;

  bool is_leaf() const { return feature < 0; }
};

/**
 * @brief Binary split tree whose leaves are numbered in left-to-right order.
 *
 * Growing leaf k puts the children at positions k and k + 1, so leaf weights
 * line up with the columns of the membership matrix.
 */
class BartTree {
 public:
  BartTree() : nodes_(1) {}

  const std::vector<BartNode>& nodes() const { return nodes_; }
  const BartNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

  std::vector<int> leaves() const {
    std::vector<int> out;
    walk(0, [&](int i) {
      if (node(i).is_leaf()) out.push_back(i);
    });
    return out;
  }

  std::vector<int> internal_nodes() const {
    std::vector<int> out;
    walk(0, [&](int i) {
      if (!node(i).is_leaf()) out.push_back(i);
    });
    return out;
  }

  /// Internal nodes whose two children are both leaves.
  std::vector<int> prunable() const {
    std::vector<int> out;
    for (int i : internal_nodes())
      if (node(node(i).left).is_leaf() && node(node(i).right).is_leaf()) out.push_back(i);
    return out;
  }

  /// (parent, child) pairs of internal nodes.
  std::vector<std::pair<int, int>> swappable() const {
    std::vector<std::pair<int, int>> out;
    for (int i : internal_nodes()) {
      if (!node(node(i).left).is_leaf()) out.emplace_back(i, node(i).left);
      if (!node(node(i).right).is_leaf()) out.emplace_back(i, node(i).right);
    }
    return out;
  }

  std::size_t leaf_count() const { return leaves().size(); }

  int max_depth() const {
    int d = 0;
    for (const auto& n : nodes_) d = std::max(d, n.depth);
    return d;
  }

  /// Position of a leaf node in left-to-right order.
  std::size_t leaf_position(int leaf) const {
    const auto ls = leaves();
    return static_cast<std::size_t>(std::find(ls.begin(), ls.end(), leaf) - ls.begin());
  }

  void grow(int leaf, std::size_t j, double s) {
    const int l = static_cast<int>(nodes_.size());
    const int depth = node(leaf).depth + 1;
    nodes_.push_back(BartNode{-1, 0.0, -1, -1, leaf, depth});
    nodes_.push_back(BartNode{-1, 0.0, -1, -1, leaf, depth});
    auto& nd = nodes_[static_cast<std::size_t>(leaf)];
    nd.feature = static_cast<int>(j);
    nd.threshold = s;
    nd.left = l;
    nd.right = l + 1;
  }

  void prune(int i) {
    auto& nd = nodes_[static_cast<std::size_t>(i)];
    nd.feature = -1;
    nd.threshold = 0.0;
    nd.left = nd.right = -1;
    compact();
  }

  void set_rule(int i, std::size_t j, double s) {
    nodes_[static_cast<std::size_t>(i)].feature = static_cast<int>(j);
    nodes_[static_cast<std::size_t>(i)].threshold = s;
  }

  /**
   * Region of every node, or nothing if some split value falls outside the
   * open interval its ancestors leave on that coordinate.
   */
  std::optional<std::vector<Region>> regions(std::size_t p) const {
    std::vector<Region> out(nodes_.size());
    out[0] = Region::whole(p);
    bool ok = true;
    walk(0, [&](int i) {
      const auto& nd = node(i);
      if (!ok || nd.is_leaf()) return;
      const Region& r = out[static_cast<std::size_t>(i)];
      const auto j = static_cast<std::size_t>(nd.feature);
      if (!(r.lower(j) < nd.threshold && nd.threshold < r.upper(j))) {
        ok = false;
        return;
      }
      auto [a, b] = r.split(j, nd.threshold);
      out[static_cast<std::size_t>(nd.left)] = std::move(a);
      out[static_cast<std::size_t>(nd.right)] = std::move(b);
    });
    if (!ok) return std::nullopt;
    return out;
  }

  std::vector<Region> leaf_regions(std::size_t p) const {
    auto all = regions(p);
    if (!all) throw ValidationError("tree has a split outside its node's region");
    std::vector<Region> out;
    for (int i : leaves()) out.push_back((*all)[static_cast<std::size_t>(i)]);
    return out;
  }

  PRTree to_prtree(const Vector& gamma, const SigmaVector& sigma) const {
    PRTree t;
    t.sigma = sigma;
    t.gamma = gamma;
    t.leaf_regions = leaf_regions(sigma.size());
    std::vector<int> index(nodes_.size(), -1);
    std::vector<int> order;
    walk(0, [&](int i) { order.push_back(i); });
    for (std::size_t k = 0; k < order.size(); ++k) index[static_cast<std::size_t>(order[k])] = static_cast<int>(k);
    int leaf = 0;
    for (int i : order) {
      const auto& nd = node(i);
      TreeNode tn;
      tn.depth = nd.depth;
      if (nd.is_leaf()) {
        tn.leaf = leaf++;
      } else {
        tn.feature = nd.feature;
        tn.threshold = nd.threshold;
        tn.left = index[static_cast<std::size_t>(nd.left)];
        tn.right = index[static_cast<std::size_t>(nd.right)];
      }
      t.nodes.push_back(tn);
    }
    return t;
  }

  bool operator==(const BartTree& o) const {
    // structural comparison in traversal order
    std::vector<std::tuple<int, double, int>> a, b;
    walk(0, [&](int i) { a.emplace_back(node(i).feature, node(i).threshold, node(i).depth); });
    o.walk(0, [&](int i) { b.emplace_back(o.node(i).feature, o.node(i).threshold, o.node(i).depth); });
    return a == b;
  }

  /// Pre-order traversal, left subtree first.
  template <class F>
  void walk(int i, F&& f) const {
    f(i);
    const auto& nd = node(i);
    if (!nd.is_leaf()) {
      walk(nd.left, f);
      walk(nd.right, f);
    }
  }

 private:
  void compact() {
    std::vector<BartNode> out;
    std::vector<int> map(nodes_.size(), -1);
    walk(0, [&](int i) {
      map[static_cast<std::size_t>(i)] = static_cast<int>(out.size());
      out.push_back(node(i));
    });
    for (auto& nd : out) {
      if (nd.parent >= 0) nd.parent = map[static_cast<std::size_t>(nd.parent)];
      if (!nd.is_leaf()) {
        nd.left = map[static_cast<std::size_t>(nd.left)];
        nd.right = map[static_cast<std::size_t>(nd.right)];
      }
    }
    nodes_ = std::move(out);
  }

  std::vector<BartNode> nodes_;
};

// ---------------------------------------------------------------------------
// Data-dependent counting helpers

namespace detail {

/// Number of candidate cuts of coordinate j inside a region.
inline std::size_t cut_count(const Dataset& d, const Region& r, std::size_t j) {
  return split_candidates(d, r, j).size();
}

/// Coordinates that have at least one candidate cut inside the region.
inline std::vector<std::size_t> splittable_vars(const Dataset& d, const Region& r) {
  const auto rows = rows_in_region(d, r);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < d.p(); ++j) {
    const auto col = d.features.col(static_cast<Eigen::Index>(j));
    for (std::size_t a = 1; a < rows.size(); ++a)
      if (col(static_cast<Eigen::Index>(rows[a])) != col(static_cast<Eigen::Index>(rows[0]))) {
        out.push_back(j);
        break;
      }
  }
  return out;
}

inline bool depth_allows_split(const StoppingRule& rule, int depth) { return !rule.max_depth || depth < *rule.max_depth; }

inline std::vector<int> growable_leaves(const BartTree& t, const std::vector<Region>& regions, const Dataset& d,
                                        const StoppingRule& rule) {
  std::vector<int> out;
  for (int i : t.leaves())
    if (depth_allows_split(rule, t.node(i).depth) && !splittable_vars(d, regions[static_cast<std::size_t>(i)]).empty())
      out.push_back(i);
  return out;
}

}  // namespace detail

/**
 * @brief Log prior of a tree topology.
 *
 * A node at depth d splits with probability alpha / (1 + d)^beta. Each
 * split additionally pays -log p for its variable and -log(#cuts) for its
 * cut point, both uniform. Cuts are counted among observations of `d` in the
 * node's region.
 */
inline double tree_log_prior(const BartTree& t, double alpha, double beta, const Dataset& d) {
  const auto regions = t.regions(d.p());
  if (!regions) return -kInf;
  double lp = 0.0;
  t.walk(0, [&](int i) {
    const auto& nd = t.node(i);
    const double split = alpha / std::pow(1.0 + nd.depth, beta);
    if (nd.is_leaf()) {
      lp += std::log1p(-split);
    } else {
      const std::size_t cuts = detail::cut_count(d, (*regions)[static_cast<std::size_t>(i)], static_cast<std::size_t>(nd.feature));
      lp += std::log(split) - std::log(static_cast<double>(d.p())) -
            (cuts > 0 ? std::log(static_cast<double>(cuts)) : 0.0);
    }
  });
  return lp;
}

// ---------------------------------------------------------------------------
// Marginal likelihood

struct MarginalLikelihood {
  double log_density;
  double log_det;  // log det(sigma_tilde^2 I + sigma_gamma^2 P P^T)
};

/**
 * @brief Log density of R under N(0, sigma_tilde^2 I + sigma_gamma^2 P P^T).
 *
 * The inverse is built implicitly by rank-one Sherman-Morrison updates, one
 * per column, starting from sigma_tilde^2 I and adding columns K..1. The
 * determinant follows from the matrix determinant lemma applied at each
 * step:  det = sigma_tilde^(2n) * prod_j (1 + sigma_gamma^2 c_j' A_j^-1 c_j).
 */
inline MarginalLikelihood marginal_log_likelihood(const Vector& R, const Matrix& P, double sigma_gamma,
                                                  double sigma_tilde) {
  if (!(sigma_tilde > 0.0)) throw ValidationError("sigma_tilde must be positive");
  if (!(sigma_gamma > 0.0)) throw ValidationError("sigma_gamma must be positive");
  if (P.rows() != R.size()) throw ValidationError("membership rows do not match residual length");
  const Eigen::Index n = R.size(), K = P.cols();
  const double s2 = sigma_tilde * sigma_tilde;
  const double g2 = sigma_gamma * sigma_gamma;

  std::vector<Vector> w(static_cast<std::size_t>(K));
  std::vector<double> dd(static_cast<std::size_t>(K));
  double log_det = static_cast<double>(n) * std::log(s2);
  double quad = R.squaredNorm() / s2;
  for (Eigen::Index j = K - 1; j >= 0; --j) {
    const auto c = P.col(j);
    Vector v = c / s2;
    for (Eigen::Index i = j + 1; i < K; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      v -= w[ii] * (w[ii].dot(c) / dd[ii]);
    }
    const double ctv = c.dot(v);
    dd[static_cast<std::size_t>(j)] = 1.0 / g2 + ctv;
    log_det += std::log1p(g2 * ctv);
    const double wr = v.dot(R);
    quad -= wr * wr / dd[static_cast<std::size_t>(j)];
    w[static_cast<std::size_t>(j)] = std::move(v);
  }
  const double ll = -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + log_det + quad);
  if (!std::isfinite(ll)) throw NumericalError("marginal likelihood is not finite");
  return {ll, log_det};
}

// ---------------------------------------------------------------------------
// Proposals

struct Proposal {
  BartTree tree;
  double log_q_ratio = 0.0;  // log q(t* -> t) - log q(t -> t*)
  MoveKind kind = MoveKind::identity;
  std::size_t leaf_index = 0;  // grow: leaf that was split; prune: left child position

  bool valid() const { return log_q_ratio != -kInf; }
};

namespace detail {

inline Proposal invalid(const BartTree& t, MoveKind k) { return Proposal{t, -kInf, k, 0}; }

/// Checks depth, region non-degeneracy and hard leaf sizes of a candidate tree.
inline bool admissible(const BartTree& t, const Dataset& d, const StoppingRule& rule) {
  if (rule.max_depth && t.max_depth() > *rule.max_depth) return false;
  const auto regions = t.regions(d.p());
  if (!regions) return false;
  const std::size_t need = rule.min_leaf_count(d.n());
  for (int i : t.leaves())
    if (rows_in_region(d, (*regions)[static_cast<std::size_t>(i)]).size() < need) return false;
  return true;
}

template <class Engine>
std::size_t uniform_index(Engine& eng, std::size_t size) {
  return std::uniform_int_distribution<std::size_t>(0, size - 1)(eng);
}

}  // namespace detail

/**
 * @brief Draws one grow, prune, change or swap proposal.
 *
 * Grow picks a uniform growable leaf, a uniform splittable variable and a
 * uniform candidate cut. Prune collapses a uniform node whose children are
 * both leaves. Change redraws the rule of a uniform internal node and swap
 * exchanges the rules of a uniform (parent, child) internal pair. Proposals
 * that are impossible or violate depth or leaf-size limits come back with a
 * log q-ratio of minus infinity.
 */
template <class Engine>
Proposal propose_tree(const BartTree& t, Engine& eng, const MoveProbs& probs, const Dataset& d,
                      const StoppingRule& rule) {
  std::discrete_distribution<int> pick_move({probs.grow, probs.prune, probs.change, probs.swap});
  const auto kind = static_cast<MoveKind>(pick_move(eng));
  const auto regions = t.regions(d.p());
  if (!regions) return detail::invalid(t, kind);
  auto region_of = [&](const std::vector<Region>& rs, int i) -> const Region& { return rs[static_cast<std::size_t>(i)]; };

  switch (kind) {
    case MoveKind::grow: {
      const auto growable = detail::growable_leaves(t, *regions, d, rule);
      if (growable.empty() || probs.prune == 0.0) return detail::invalid(t, kind);
      const int leaf = growable[detail::uniform_index(eng, growable.size())];
      const Region& r = region_of(*regions, leaf);
      const auto vars = detail::splittable_vars(d, r);
      const std::size_t j = vars[detail::uniform_index(eng, vars.size())];
      const auto cuts = split_candidates(d, r, j);
      const double s = cuts[detail::uniform_index(eng, cuts.size())];

      Proposal out{t, 0.0, kind, t.leaf_position(leaf)};
      out.tree.grow(leaf, j, s);
      if (!detail::admissible(out.tree, d, rule)) return detail::invalid(t, kind);
      const double nprune = static_cast<double>(out.tree.prunable().size());
      out.log_q_ratio = std::log(static_cast<double>(growable.size()) * static_cast<double>(vars.size()) *
                                 static_cast<double>(cuts.size())) -
                        std::log(nprune) + std::log(probs.prune) - std::log(probs.grow);
      return out;
    }
    case MoveKind::prune: {
      const auto prunable = t.prunable();
      if (prunable.empty() || probs.grow == 0.0) return detail::invalid(t, kind);
      const int i = prunable[detail::uniform_index(eng, prunable.size())];
      const Region& r = region_of(*regions, i);
      Proposal out{t, 0.0, kind, t.leaf_position(t.node(i).left)};
      out.tree.prune(i);
      if (!detail::admissible(out.tree, d, rule)) return detail::invalid(t, kind);
      const auto new_regions = out.tree.regions(d.p());
      const double ngrow = static_cast<double>(detail::growable_leaves(out.tree, *new_regions, d, rule).size());
      const double nvars = static_cast<double>(detail::splittable_vars(d, r).size());
      const double ncuts = static_cast<double>(detail::cut_count(d, r, static_cast<std::size_t>(t.node(i).feature)));
      out.log_q_ratio = std::log(static_cast<double>(prunable.size())) - std::log(ngrow * nvars * ncuts) +
                        std::log(probs.grow) - std::log(probs.prune);
      return out;
    }
    case MoveKind::change: {
      const auto internal = t.internal_nodes();
      if (internal.empty()) return detail::invalid(t, kind);
      const int i = internal[detail::uniform_index(eng, internal.size())];
      const Region& r = region_of(*regions, i);
      const auto vars = detail::splittable_vars(d, r);
      if (vars.empty()) return detail::invalid(t, kind);
      const std::size_t j = vars[detail::uniform_index(eng, vars.size())];
      const auto cuts = split_candidates(d, r, j);
      const double s = cuts[detail::uniform_index(eng, cuts.size())];
      const double old_cuts = static_cast<double>(detail::cut_count(d, r, static_cast<std::size_t>(t.node(i).feature)));
      Proposal out{t, 0.0, kind, 0};
      out.tree.set_rule(i, j, s);
      if (!detail::admissible(out.tree, d, rule) || old_cuts == 0.0) return detail::invalid(t, kind);
      out.log_q_ratio = std::log(static_cast<double>(cuts.size())) - std::log(old_cuts);
      return out;
    }
    case MoveKind::swap: {
      const auto pairs = t.swappable();
      if (pairs.empty()) return detail::invalid(t, kind);
      const auto [a, b] = pairs[detail::uniform_index(eng, pairs.size())];
      Proposal out{t, 0.0, kind, 0};
      const auto& na = t.node(a);
      const auto& nb = t.node(b);
      out.tree.set_rule(a, static_cast<std::size_t>(nb.feature), nb.threshold);
      out.tree.set_rule(b, static_cast<std::size_t>(na.feature), na.threshold);
      if (!detail::admissible(out.tree, d, rule)) return detail::invalid(t, kind);
      return out;
    }
    default:
      return Proposal{t, 0.0, MoveKind::identity, 0};
  }
}

/// log of the Metropolis-Hastings ratio for replacing t by the proposal.
inline double mh_log_ratio(const BartTree& t, const Proposal& prop, const Vector& R, const Matrix& P,
                           const Matrix& P_star, double sigma_gamma, double sigma_tilde, const PBartHyper& hyper,
                           const Dataset& d) {
  if (!prop.valid()) return -kInf;
  if (prop.kind == MoveKind::identity) return 0.0;
  const double ll_new = marginal_log_likelihood(R, P_star, sigma_gamma, sigma_tilde).log_density;
  const double ll_old = marginal_log_likelihood(R, P, sigma_gamma, sigma_tilde).log_density;
  return prop.log_q_ratio + ll_new - ll_old + tree_log_prior(prop.tree, hyper.alpha, hyper.beta, d) -
         tree_log_prior(t, hyper.alpha, hyper.beta, d);
}

/// Accepts with probability min(1, exp(log_ratio)).
template <class Engine>
bool mh_accept(double log_ratio, Engine& eng) {
  if (log_ratio == -kInf || std::isnan(log_ratio)) return false;
  if (log_ratio >= 0.0) return true;
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(eng);
  return std::log(u) < log_ratio;
}

template <class Engine>
bool mh_accept(const BartTree& t, const Proposal& prop, const Vector& R, const Matrix& P, const Matrix& P_star,
               double sigma_gamma, double sigma_tilde, const PBartHyper& hyper, const Dataset& d, Engine& eng) {
  return mh_accept(mh_log_ratio(t, prop, R, P, P_star, sigma_gamma, sigma_tilde, hyper, d), eng);
}

// ---------------------------------------------------------------------------
// Gibbs draws

/// Conditional mean and variance of gamma_k given the other weights.
struct WeightConditional {
  double mean;
  double var;
};

inline WeightConditional weight_conditional(double A, double B, double sigma_gamma, double sigma_tilde) {
  const double s2 = sigma_tilde * sigma_tilde, g2 = sigma_gamma * sigma_gamma;
  const double denom = s2 + g2 * A;
  return {g2 * B / denom, s2 * g2 / denom};
}

/**
 * @brief One Gibbs sweep over the leaf weights, k = 1..K in order.
 *
 * Each gamma_k is drawn from its normal full conditional given the freshest
 * values of the others. `fit` must equal P * gamma on entry and is kept in
 * sync.
 */
template <class Engine>
void draw_gammas(const Matrix& P, const Vector& R, Vector& gamma, Vector& fit, double sigma_gamma, double sigma_tilde,
                 Engine& eng) {
  if (P.cols() != gamma.size() || P.rows() != R.size()) throw ValidationError("draw_gammas dimension mismatch");
  std::normal_distribution<double> z(0.0, 1.0);
  for (Eigen::Index k = 0; k < P.cols(); ++k) {
    const auto c = P.col(k);
    const double A = c.squaredNorm();
    const double B = c.dot(R - fit) + gamma(k) * A;
    const auto [mean, var] = weight_conditional(A, B, sigma_gamma, sigma_tilde);
    const double g = mean + std::sqrt(var) * z(eng);
    fit += (g - gamma(k)) * c;
    gamma(k) = g;
  }
}

template <class Engine>
Vector draw_gammas(const Matrix& P, const Vector& R, const Vector& gamma, double sigma_gamma, double sigma_tilde,
                   Engine& eng) {
  Vector g = gamma;
  Vector fit = P * g;
  draw_gammas(P, R, g, fit, sigma_gamma, sigma_tilde, eng);
  return g;
}

struct InverseGamma {
  double shape;
  double scale;
};

inline InverseGamma sigma_tilde_posterior(double nu, double lambda, std::size_t n, double sse) {
  return {(nu + static_cast<double>(n)) / 2.0, (nu * lambda + sse) / 2.0};
}

/// Draws sigma_tilde with sigma_tilde^2 ~ IG((nu + n) / 2, (nu * lambda + SSE) / 2).
template <class Engine>
double draw_sigma_tilde(const Vector& y, const Vector& fit, double nu, double lambda, Engine& eng) {
  if (y.size() != fit.size()) throw ValidationError("draw_sigma_tilde length mismatch");
  const double sse = y.size() > 0 ? (y - fit).squaredNorm() : 0.0;
  const auto ig = sigma_tilde_posterior(nu, lambda, static_cast<std::size_t>(y.size()), sse);
  const double g = std::gamma_distribution<double>(ig.shape, 1.0)(eng);
  return std::sqrt(ig.scale / g);
}

/// lambda such that IG(nu/2, nu*lambda/2) puts probability 0.9 below `variance`.
inline double calibrate_lambda(double variance, double nu) {
  const boost::math::chi_squared_distribution<double> chi(nu);
  return variance * boost::math::quantile(chi, 0.1) / nu;
}

// ---------------------------------------------------------------------------
// Chain

struct MoveStats {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
};

struct PBartChain {
  PBartHyper hyper;  // with lambda and sigma_gamma resolved
  SigmaVector sigma;
  double y_min = 0.0;
  double y_range = 1.0;
  std::vector<std::vector<PRTree>> snapshots;  // retained iterations, m trees each, normalized units
  std::vector<double> sigma_trace;             // sigma_tilde after every iteration, normalized units
  std::array<MoveStats, 5> acceptance_log{};   // indexed by MoveKind
  std::vector<double> acceptance_trace;        // fraction of accepted proposals per iteration

  std::size_t total_proposals() const {
    std::size_t s = 0;
    for (const auto& m : acceptance_log) s += m.proposed;
    return s;
  }

  double unscale(double v) const { return (v + 0.5) * y_range + y_min; }

  /// Sum of the trees of one snapshot, in normalized units.
  template <class Point>
  double snapshot_value(std::size_t s, const Point& x) const {
    double v = 0.0;
    for (const auto& t : snapshots[s]) v += t.predict(x);
    return v;
  }

  template <class Point>
  double predict(const Point& x) const {
    if (snapshots.empty()) throw ValidationError("chain has no retained snapshots");
    if (static_cast<std::size_t>(x.size()) != sigma.size()) throw ValidationError("point dimension does not match chain");
    double acc = 0.0;
    for (std::size_t s = 0; s < snapshots.size(); ++s) acc += snapshot_value(s, x);
    return unscale(acc / static_cast<double>(snapshots.size()));
  }

  Vector predict(const Dataset& d) const {
    Vector out(d.features.rows());
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = predict(d.features.row(i));
    return out;
  }
};

template <class Point>
double predict_pbart(const PBartChain& c, const Point& x) {
  return c.predict(x);
}

namespace detail {

struct ChainTree {
  BartTree tree;
  std::vector<Region> regions;  // leaf regions
  Matrix P;
  Vector gamma;
  Vector fit;
};

/// Membership columns for new_regions, copying columns whose region already appears in old_regions.
inline Matrix reuse_membership(const Dataset& d, const std::vector<Region>& new_regions,
                               const std::vector<Region>& old_regions, const Matrix& old_P, const SigmaVector& sigma) {
  Matrix P(d.features.rows(), static_cast<Eigen::Index>(new_regions.size()));
  for (std::size_t k = 0; k < new_regions.size(); ++k) {
    const auto it = std::find(old_regions.begin(), old_regions.end(), new_regions[k]);
    if (it != old_regions.end())
      P.col(static_cast<Eigen::Index>(k)) = old_P.col(it - old_regions.begin());
    else
      membership_column(d.features, new_regions[k], sigma, P.col(static_cast<Eigen::Index>(k)));
  }
  return P;
}

/// Carries leaf weights across an accepted move.
inline Vector carry_weights(const Vector& gamma, const Proposal& prop) {
  const auto k = static_cast<Eigen::Index>(prop.leaf_index);
  const Eigen::Index K = gamma.size();
  if (prop.kind == MoveKind::grow) {
    Vector g(K + 1);
    g.head(k + 1) = gamma.head(k + 1);
    g.tail(K - k) = gamma.tail(K - k);
    return g;
  }
  if (prop.kind == MoveKind::prune) {
    Vector g(K - 1);
    g.head(k) = gamma.head(k);
    g(k) = 0.5 * (gamma(k) + gamma(k + 1));
    g.tail(K - k - 2) = gamma.tail(K - k - 2);
    return g;
  }
  return gamma;
}

}  // namespace detail

/**
 * @brief Runs the P-BART sampler for hyper.it_max iterations.
 *
 * The target is mapped to [-0.5, 0.5] internally. Each iteration visits the
 * m trees in turn: form the partial residual, propose a move, accept or
 * reject it with the weight-marginalized likelihood, then refresh the leaf
 * weights by one Gibbs sweep. The noise scale is redrawn once per
 * iteration. Iterations after it_burn are stored as snapshots.
 */
template <class Log = std::nullptr_t>
PBartChain fit_pbart(const Dataset& d, PBartHyper hyper, const SigmaVector& sigma, const RngSpec& rng,
                     Log log = nullptr) {
  d.validate();
  if (d.n() < 2) throw ValidationError("P-BART needs at least 2 rows");
  check_sigma(sigma, d.p());
  hyper.validate();

  PBartChain chain;
  chain.sigma = sigma;
  const double lo = d.target.minCoeff(), hi = d.target.maxCoeff();
  if (!std::isfinite(hi - lo)) throw NumericalError("target range overflows double precision");
  chain.y_min = lo;
  chain.y_range = hi > lo ? hi - lo : 1.0;
  const Vector y = ((d.target.array() - lo) / chain.y_range - 0.5).matrix();
  const Eigen::Index n = y.size();

  if (!hyper.lambda) {
    const double mean = y.mean();
    const double var = (y.array() - mean).square().sum() / static_cast<double>(n - 1);
    hyper.lambda = calibrate_lambda(var > 0.0 ? var : 1e-4, hyper.nu);
  }
  if (!hyper.sigma_gamma) hyper.sigma_gamma = 0.5 / (2.0 * std::sqrt(static_cast<double>(hyper.m)));
  chain.hyper = hyper;
  const double sg = *hyper.sigma_gamma;

  auto eng = rng.engine();
  std::normal_distribution<double> z(0.0, 1.0);

  std::vector<detail::ChainTree> trees(hyper.m);
  Vector total = Vector::Zero(n);
  for (auto& ct : trees) {
    ct.regions = {Region::whole(d.p())};
    ct.P = Matrix::Ones(n, 1);
    ct.gamma = Vector::Constant(1, sg * z(eng));
    ct.fit = ct.P * ct.gamma;
    total += ct.fit;
  }
  double sigma_tilde;
  if (hyper.fixed_sigma_tilde) {
    sigma_tilde = *hyper.fixed_sigma_tilde;
  } else {
    const double g = std::gamma_distribution<double>(hyper.nu / 2.0, 1.0)(eng);
    sigma_tilde = std::sqrt(hyper.nu * *hyper.lambda / 2.0 / g);
  }

  for (std::size_t it = 1; it <= hyper.it_max; ++it) {
    std::size_t accepted_now = 0;
    for (auto& ct : trees) {
      const Vector R = y - (total - ct.fit);
      Proposal prop = hyper.tree_moves ? propose_tree(ct.tree, eng, hyper.move_probs, d, hyper.rule)
                                       : Proposal{ct.tree, 0.0, MoveKind::identity, 0};
      bool accept = false;
      std::vector<Region> new_regions;
      Matrix P_star;
      if (prop.kind == MoveKind::identity) {
        accept = true;
      } else if (prop.valid()) {
        new_regions = prop.tree.leaf_regions(d.p());
        P_star = detail::reuse_membership(d, new_regions, ct.regions, ct.P, sigma);
        accept = mh_accept(ct.tree, prop, R, ct.P, P_star, sg, sigma_tilde, hyper, d, eng);
      }
      auto& stats = chain.acceptance_log[static_cast<std::size_t>(prop.kind)];
      ++stats.proposed;
      if (accept) {
        ++stats.accepted;
        ++accepted_now;
        if (prop.kind != MoveKind::identity) {
          ct.gamma = detail::carry_weights(ct.gamma, prop);
          ct.tree = std::move(prop.tree);
          ct.regions = std::move(new_regions);
          ct.P = std::move(P_star);
        }
      }
      total -= ct.fit;
      ct.fit = ct.P * ct.gamma;
      draw_gammas(ct.P, R, ct.gamma, ct.fit, sg, sigma_tilde, eng);
      total += ct.fit;
    }
    // rebuild the running total so rounding from incremental updates cannot accumulate
    total.setZero();
    for (const auto& ct : trees) total += ct.fit;
    if (!hyper.fixed_sigma_tilde) sigma_tilde = draw_sigma_tilde(y, total, hyper.nu, *hyper.lambda, eng);
    if (!std::isfinite(sigma_tilde) || !total.allFinite()) throw NumericalError("P-BART chain diverged");
    chain.sigma_trace.push_back(sigma_tilde);
    chain.acceptance_trace.push_back(static_cast<double>(accepted_now) / static_cast<double>(hyper.m));

    if (it > hyper.it_burn) {
      std::vector<PRTree> snap;
      snap.reserve(trees.size());
      for (const auto& ct : trees) snap.push_back(ct.tree.to_prtree(ct.gamma, sigma));
      chain.snapshots.push_back(std::move(snap));
    }
    if constexpr (!std::is_same_v<Log, std::nullptr_t>) log(it, chain);
  }
  return chain;
}

}  // namespace prtree
