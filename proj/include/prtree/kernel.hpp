#pragma once

#include "prtree/core.hpp"

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace prtree {

/// Upper tail 1 - Phi(t) of the standard normal, accurate for large t.
inline double normal_sf(double t) { return 0.5 * std::erfc(t / std::numbers::sqrt2); }

/// Standard normal CDF, evaluated through erfc so both tails keep full relative precision.
inline double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); }

/// Standard normal mass of the interval (l, u]; l and u may be infinite.
inline double normal_interval_mass(double l, double u) {
  if (!(l < u)) return 0.0;
  if (l >= 0.0) return normal_sf(l) - normal_sf(u);
  if (u <= 0.0) return normal_sf(-u) - normal_sf(-l);
  return 1.0 - normal_sf(-l) - normal_sf(u);
}

/**
 * @brief One-coordinate factor of the membership function.
 *
 * Gaussian mass of (lo, hi] centred at x with scale sigma; sigma == 0 gives
 * the half-open indicator lo < x <= hi.
 */
inline double coordinate_mass(double x, double lo, double hi, double sigma) {
  if (sigma == 0.0) return (lo < x && x <= hi) ? 1.0 : 0.0;
  return normal_interval_mass((lo - x) / sigma, (hi - x) / sigma);
}

/// Soft membership of point x in region r: product of per-coordinate Gaussian masses.
template <class Point>
double psi(const Point& x, const Region& r, const SigmaVector& sigma) {
  double out = 1.0;
  for (std::size_t j = 0; j < r.dim(); ++j) {
    if (!r.bounded(j)) continue;
    out *= coordinate_mass(x[static_cast<Eigen::Index>(j)], r.lower(j), r.upper(j), sigma[j]);
  }
  return out;
}

/// Writes psi(x_i, r, sigma) for every row of `features` into `out`.
inline void membership_column(const Matrix& features, const Region& r, const SigmaVector& sigma, Eigen::Ref<Vector> out) {
  out.setOnes();
  const Eigen::Index n = features.rows();
  for (std::size_t j = 0; j < r.dim(); ++j) {
    if (!r.bounded(j)) continue;
    const auto col = features.col(static_cast<Eigen::Index>(j));
    const double lo = r.lower(j), hi = r.upper(j), s = sigma[j];
    for (Eigen::Index i = 0; i < n; ++i) out(i) *= coordinate_mass(col(i), lo, hi, s);
  }
}

inline Vector membership_column(const Matrix& features, const Region& r, const SigmaVector& sigma) {
  Vector out(features.rows());
  membership_column(features, r, sigma, out);
  return out;
}

/**
 * @brief n x K soft-assignment matrix P with P(i,k) = psi(x_i, R_k, sigma).
 *
 * Column k belongs to regions[k]. When the regions partition R^p every row
 * sums to one.
 */
struct MembershipMatrix {
  Matrix values;
  std::vector<Region> regions;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

inline void check_sigma(const SigmaVector& sigma, std::size_t p) {
  if (sigma.size() != p)
    throw ValidationError("sigma has " + std::to_string(sigma.size()) + " entries, expected " + std::to_string(p));
}

inline MembershipMatrix build_membership(const Dataset& d, std::vector<Region> regions, const SigmaVector& sigma) {
  if (regions.empty()) throw ValidationError("build_membership needs at least one region");
  check_sigma(sigma, d.p());
  MembershipMatrix P;
  P.values.resize(d.features.rows(), static_cast<Eigen::Index>(regions.size()));
  for (std::size_t k = 0; k < regions.size(); ++k) {
    if (regions[k].dim() != d.p()) throw ValidationError("region dimension does not match dataset");
    membership_column(d.features, regions[k], sigma, P.values.col(static_cast<Eigen::Index>(k)));
  }
  P.regions = std::move(regions);
  return P;
}

/**
 * @brief Replaces column k by the memberships of its two children after splitting
 * region k at s on coordinate j.
 *
 * The left child (x_j <= s) takes position k and the right child is inserted
 * at k + 1; all other columns keep their values and relative order.
 */
inline MembershipMatrix split_membership_column(const MembershipMatrix& P, std::size_t k, std::size_t j, double s,
                                                const Dataset& d, const SigmaVector& sigma) {
  if (k >= P.cols()) throw ValidationError("membership column index out of range");
  check_sigma(sigma, d.p());
  auto [left, right] = P.regions[k].split(j, s);

  const Eigen::Index K = P.values.cols();
  const auto kk = static_cast<Eigen::Index>(k);
  MembershipMatrix out;
  out.values.resize(P.values.rows(), K + 1);
  out.values.leftCols(kk) = P.values.leftCols(kk);
  membership_column(d.features, left, sigma, out.values.col(kk));
  membership_column(d.features, right, sigma, out.values.col(kk + 1));
  out.values.rightCols(K - kk - 1) = P.values.rightCols(K - kk - 1);

  out.regions = P.regions;
  out.regions[k] = std::move(left);
  out.regions.insert(out.regions.begin() + static_cast<std::ptrdiff_t>(k) + 1, std::move(right));
  return out;
}

}  // namespace prtree
