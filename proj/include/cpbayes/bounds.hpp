#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpbayes/cp_factors.hpp"
#include "cpbayes/errors.hpp"
#include "cpbayes/sampler.hpp"
#include "cpbayes/shape.hpp"

namespace cpbayes {

// ---------------------------------------------------------------------------
// Rate-bound evaluators
// ---------------------------------------------------------------------------

/// Inputs to the rate-bound evaluators: problem sizes, the true rank, and
/// norms of a generating decomposition of the truth.
struct ProblemProfile {
    Shape dims;
    std::int64_t n = 0;
    std::int64_t d_star = 0;
    double frob_sq_sum = 0.0;  ///< sum_k squared Frobenius norms of the true factors
    double max2 = 0.0;         ///< factor column-norm bound of the truth
    Hyperparams hp;

    void validate() const {
        hp.validate();
        if (n < 1) throw validation_error("ProblemProfile: n must be >= 1");
        if (d_star < 1) throw validation_error("ProblemProfile: d_star must be >= 1");
        if (d_star > hp.d_max) {
            throw validation_error("ProblemProfile: d_star must not exceed d_max");
        }
        if (!(frob_sq_sum >= 0.0) || !std::isfinite(frob_sq_sum)) {
            throw validation_error("ProblemProfile: frob_sq_sum must be finite and nonnegative");
        }
        if (!(max2 >= 0.0) || !std::isfinite(max2)) {
            throw validation_error("ProblemProfile: max2 must be finite and nonnegative");
        }
    }
};

/// Profile of a synthetic problem, reading the norms off the generating
/// decomposition.
[[nodiscard]] inline ProblemProfile make_profile(const CPFactors& truth, std::int64_t n,
                                                 const Hyperparams& hp) {
    double frob_sq = 0.0;
    for (int k = 0; k < truth.shape().order(); ++k) frob_sq += truth.factor(k).squaredNorm();
    ProblemProfile profile{truth.shape(), n, truth.rank(), frob_sq, max2_upper_bound(truth), hp};
    profile.validate();
    return profile;
}

/// Upper bound on the prior mass exponent -log Pi(|A - A*|_n < r/sqrt(n)):
/// d* (sum_k M_k) log[(6/xi) max(sqrt(n) sigma_p^K K (max2/sigma_p + 1)^{K-1} / r, 1)]
///   + d* frob_sq_sum / (2 sigma_p^2).
/// The argument r places the bound at radius r/sqrt(n).
[[nodiscard]] inline double xi_upper_bound(const ProblemProfile& profile, double r) {
    profile.validate();
    if (!(r > 0.0) || !std::isfinite(r)) throw validation_error("xi_upper_bound: r must be positive");
    const auto order = static_cast<double>(profile.dims.order());
    const double sum_m = static_cast<double>(profile.dims.dim_sum());
    const double d_star = static_cast<double>(profile.d_star);
    const double sigma_p = profile.hp.sigma_p;
    const double arg = std::sqrt(static_cast<double>(profile.n)) * std::pow(sigma_p, order) *
                       order * std::pow(profile.max2 / sigma_p + 1.0, order - 1.0) / r;
    return d_star * sum_m * std::log((6.0 / profile.hp.xi) * std::max(arg, 1.0)) +
           d_star * profile.frob_sq_sum / (2.0 * sigma_p * sigma_p);
}

/// The scale constant c_nk = 3 K sqrt(n) (4 sigma_p^2 Xi(1/sqrt(n)) / d*)^{K/2}
/// evaluated through xi_upper_bound at r = 1, and the exponent fraction
/// c_eps = min(|log xi| / log(c_nk), 1) / 4.
struct BoundConstants {
    double c_nk;
    double c_eps;
};

[[nodiscard]] inline BoundConstants bound_constants(const ProblemProfile& profile) {
    profile.validate();
    const auto order = static_cast<double>(profile.dims.order());
    const double sigma_p = profile.hp.sigma_p;
    const double xi_at_1 = xi_upper_bound(profile, 1.0);
    const double c_nk =
        3.0 * order * std::sqrt(static_cast<double>(profile.n)) *
        std::pow(4.0 * sigma_p * sigma_p * xi_at_1 / static_cast<double>(profile.d_star),
                 order / 2.0);
    if (!(c_nk > 1.0)) {
        throw validation_error("bound_constants: degenerate profile, scale constant " +
                               std::to_string(c_nk) + " is not > 1");
    }
    const double c_eps =
        std::min(std::abs(std::log(profile.hp.xi)) / std::log(c_nk), 1.0) / 4.0;
    return {c_nk, c_eps};
}

/// Rate-bound shapes (the theorem right-hand sides with the universal
/// constant fixed to 1).  Out-of-sample entries require a radius R and are
/// absent without one.
struct BoundReport {
    std::vector<std::pair<double, double>> xi_values;  ///< (r, prior-mass exponent bound)
    double c_nk = 0.0;
    double c_eps = 0.0;
    double rate_in_sample = 0.0;
    std::optional<double> rate_out_infinity;
    std::optional<double> rate_out_max;
};

namespace detail {

/// 8^K (K+1)!, the metric-entropy overcount term in the rate bounds.
[[nodiscard]] inline double entropy_overcount(int order) {
    double value = std::pow(8.0, order);
    for (int i = 2; i <= order + 1; ++i) value *= static_cast<double>(i);
    return value;
}

}  // namespace detail

/// Evaluates the bound shapes: the in-sample posterior accuracy rate, and
/// (when R is present) the out-of-sample rates under sup-norm and
/// column-norm rejection.  With require_out_of_sample, a missing R is a
/// configuration error instead of absent entries.
[[nodiscard]] inline BoundReport theorem_bounds(const ProblemProfile& profile,
                                                std::span<const double> extra_radii = {},
                                                bool require_out_of_sample = false) {
    profile.validate();
    if (require_out_of_sample && !profile.hp.R) {
        throw config_error("theorem_bounds: out-of-sample bounds need a rejection radius R");
    }
    const auto order = static_cast<double>(profile.dims.order());
    const double sum_m = static_cast<double>(profile.dims.dim_sum());
    const double d_star = static_cast<double>(profile.d_star);
    const double n = static_cast<double>(profile.n);
    const double abs_log_xi = std::abs(std::log(profile.hp.xi));

    BoundReport report;
    const BoundConstants constants = bound_constants(profile);
    report.c_nk = constants.c_nk;
    report.c_eps = constants.c_eps;

    const double xi_at_1 = xi_upper_bound(profile, 1.0);
    const double xi_at_eps = xi_upper_bound(profile, std::sqrt(constants.c_eps));
    report.xi_values.emplace_back(1.0, xi_at_1);
    report.xi_values.emplace_back(std::sqrt(constants.c_eps), xi_at_eps);
    for (double r : extra_radii) report.xi_values.emplace_back(r, xi_upper_bound(profile, r));

    const double log_c_nk = std::log(constants.c_nk);
    const double shared_tail = xi_at_eps / constants.c_eps +
                               std::log(static_cast<double>(profile.hp.d_max)) +
                               detail::entropy_overcount(profile.dims.order());
    report.rate_in_sample =
        (d_star * (sum_m + 1.0 / abs_log_xi) * log_c_nk + shared_tail + order) / n;

    if (profile.hp.R) {
        const double radius = *profile.hp.R;
        report.rate_out_infinity =
            std::max(radius * radius, 1.0) / n *
            (d_star * (sum_m + 3.0 / abs_log_xi) * log_c_nk + shared_tail);
        // Column-norm rejection restates the scale constant as
        // 3 K sqrt(n) R^{K/2}; the dimension term drops out of the log.
        const double c_nk_column = 3.0 * order * std::sqrt(n) * std::pow(radius, order / 2.0);
        report.rate_out_max = d_star * sum_m / n *
                              std::max(1.0, std::pow(radius, 2.0 * order)) *
                              std::log(c_nk_column * std::pow(profile.hp.sigma_p, order) /
                                       profile.hp.xi);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Verified numeric inequalities
// ---------------------------------------------------------------------------

/// Chi-square tail bounds for k degrees of freedom.
struct Chi2TailBounds {
    double threshold;  ///< k + 2 sqrt(k x) + 2 x
    double b1;         ///< exp(-x), bounding the mass above `threshold`
    double b2;         ///< exp(k/2 + (k/2) log(x/k) - x/2), bounding the mass above x
};

/// Deviation-form tail bound alone: P(chi2_k >= k + 2 sqrt(k x) + 2 x)
/// <= exp(-x), valid for every x > 0.  Returns (threshold, bound).
[[nodiscard]] inline std::pair<double, double> chi2_deviation_bound(std::int64_t k, double x) {
    if (k < 1) throw validation_error("chi2_deviation_bound: k must be >= 1");
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw validation_error("chi2_deviation_bound: x must be positive and finite");
    }
    const double kd = static_cast<double>(k);
    return {kd + 2.0 * std::sqrt(kd * x) + 2.0 * x, std::exp(-x)};
}

/// Both chi-square tail bounds; the direct bound b2 needs x >= k.
[[nodiscard]] inline Chi2TailBounds chi2_tail_bounds(std::int64_t k, double x) {
    const auto [threshold, b1] = chi2_deviation_bound(k, x);
    const double kd = static_cast<double>(k);
    if (x < kd) throw validation_error("chi2_tail_bounds: direct bound requires x >= k");
    const double b2 = std::exp(0.5 * kd + 0.5 * kd * std::log(x / kd) - 0.5 * x);
    return {threshold, b1, b2};
}

/// Gaussian small-ball bound: for g with d iid N(0, sigma^2) coordinates,
/// P(|g| <= eps) >= (eps / (3 sigma sqrt(d)))^d on 0 < eps <= sigma sqrt(d).
[[nodiscard]] inline double small_ball_lower_bound(std::int64_t d, double sigma, double eps) {
    if (d < 1) throw validation_error("small_ball_lower_bound: d must be >= 1");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw validation_error("small_ball_lower_bound: sigma must be positive and finite");
    }
    const double limit = sigma * std::sqrt(static_cast<double>(d));
    if (!(eps > 0.0) || eps > limit) {
        throw validation_error("small_ball_lower_bound: eps must lie in (0, sigma sqrt(d)]");
    }
    return std::pow(eps / (3.0 * limit), static_cast<double>(d));
}

/// Closed form of int_{x >= a} x exp(-c x^{2/K}) dx:
/// (1/2) sum_{i=1}^{K} [K (K-1) ... (K-i+1) / c^i] a^{(K-i) 2/K} exp(-c a^{2/K}).
[[nodiscard]] inline double tail_integral_closed_form(double a, double c, std::int64_t order) {
    if (!(a > 0.0) || !(c > 0.0) || !std::isfinite(a) || !std::isfinite(c)) {
        throw validation_error("tail_integral_closed_form: a and c must be positive and finite");
    }
    if (order < 1) throw validation_error("tail_integral_closed_form: K must be >= 1");
    const double kd = static_cast<double>(order);
    double falling = 1.0;
    double series = 0.0;
    for (std::int64_t i = 1; i <= order; ++i) {
        falling *= kd - static_cast<double>(i - 1);
        series += falling / std::pow(c, static_cast<double>(i)) *
                  std::pow(a, static_cast<double>(order - i) * 2.0 / kd);
    }
    return 0.5 * series * std::exp(-c * std::pow(a, 2.0 / kd));
}

/// Product-sum bound pieces: |sum_i prod_k u_k(i)| and its majorant
/// prod_k |u_k|_K, with K the number of vectors.
struct ProductBound {
    double product_sum;
    double majorant;
};

[[nodiscard]] inline ProductBound holder_product_bound(std::span<const Eigen::VectorXd> vectors) {
    if (vectors.size() < 2) throw validation_error("holder_product_bound: need at least 2 vectors");
    const Eigen::Index d = vectors[0].size();
    const double p = static_cast<double>(vectors.size());
    double majorant = 1.0;
    Eigen::VectorXd product = Eigen::VectorXd::Ones(d);
    for (const Eigen::VectorXd& u : vectors) {
        if (u.size() != d) throw structural_error("holder_product_bound: length mismatch");
        product.array() *= u.array();
        majorant *= std::pow(u.array().abs().pow(p).sum(), 1.0 / p);
    }
    return {std::abs(product.sum()), majorant};
}

}  // namespace cpbayes
