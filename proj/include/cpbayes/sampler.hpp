#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpbayes/cp_factors.hpp"
#include "cpbayes/dense_tensor.hpp"
#include "cpbayes/design.hpp"
#include "cpbayes/errors.hpp"
#include "cpbayes/norms.hpp"
#include "cpbayes/rng.hpp"
#include "cpbayes/shape.hpp"

namespace cpbayes {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Model hyperparameters.  Factor entries have prior N(0, sigma_p^2 / d')
/// under rank d', and the rank itself has unnormalized prior mass
/// xi^{d' (M_1 + ... + M_K)} on {1, ..., d_max}.
struct Hyperparams {
    double sigma = 1.0;    ///< noise standard deviation
    double sigma_p = 1.0;  ///< prior scale
    double xi = 0.5;       ///< rank decay, in (0, 1)
    std::int64_t d_max = 1;
    std::optional<double> R;  ///< rejection radius, when a run uses one

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) {
            throw validation_error("Hyperparams: sigma must be positive and finite");
        }
        if (!(sigma_p > 0.0) || !std::isfinite(sigma_p)) {
            throw validation_error("Hyperparams: sigma_p must be positive and finite");
        }
        if (!(xi > 0.0) || !(xi < 1.0)) throw validation_error("Hyperparams: xi must lie in (0,1)");
        if (d_max < 1) throw validation_error("Hyperparams: d_max must be >= 1");
        if (R && (!(*R > 0.0) || !std::isfinite(*R))) {
            throw validation_error("Hyperparams: R must be positive and finite when present");
        }
    }
};

/// Posterior-sample filter applied to retained draws.
struct Rejection {
    enum class Kind { None, InfinityNorm, MaxNorm };

    Kind kind = Kind::None;
    double radius = 0.0;

    [[nodiscard]] static Rejection none() { return {}; }
    [[nodiscard]] static Rejection infinity_norm(double radius) {
        if (!(radius > 0.0) || !std::isfinite(radius)) {
            throw validation_error("Rejection: radius must be positive and finite");
        }
        return {Kind::InfinityNorm, radius};
    }
    [[nodiscard]] static Rejection max_norm(double radius) {
        if (!(radius > 0.0) || !std::isfinite(radius)) {
            throw validation_error("Rejection: radius must be positive and finite");
        }
        return {Kind::MaxNorm, radius};
    }
};

struct ChainConfig {
    std::optional<std::int64_t> burn_in;  ///< default: equal to n_samples
    std::int64_t n_samples = 1000;        ///< post burn-in draws considered (before rejection)
    std::int64_t thin = 1;
    double rank_move_prob = 0.2;
    Rejection rejection = Rejection::none();

    /// Cells (flat offsets) whose posterior means are tracked individually.
    /// Mandatory when the tensor exceeds dense_mean_cell_limit cells, in
    /// which case no dense mean is accumulated.
    std::vector<std::int64_t> probe_cells;
    std::int64_t dense_mean_cell_limit = 10'000'000;

    void validate() const {
        if (burn_in && *burn_in < 0) throw validation_error("ChainConfig: burn_in must be >= 0");
        if (n_samples < 1) throw validation_error("ChainConfig: n_samples must be >= 1");
        if (thin < 1) throw validation_error("ChainConfig: thin must be >= 1");
        if (!(rank_move_prob >= 0.0 && rank_move_prob <= 1.0)) {
            throw validation_error("ChainConfig: rank_move_prob must lie in [0,1]");
        }
        if (rejection.kind != Rejection::Kind::None &&
            (!(rejection.radius > 0.0) || !std::isfinite(rejection.radius))) {
            throw validation_error("ChainConfig: rejection radius must be positive and finite");
        }
        if (dense_mean_cell_limit < 0) {
            throw validation_error("ChainConfig: dense_mean_cell_limit must be >= 0");
        }
    }
};

struct SamplerState {
    CPFactors factors;
    Rng rng;
    std::int64_t sweep_count = 0;
};

struct PosteriorSummary {
    /// Monte Carlo estimate of the posterior mean over accepted draws;
    /// absent when only probe cells were tracked.
    std::optional<DenseTensor> mean;
    /// (flat cell, mean value) for each requested probe cell.
    std::vector<std::pair<std::int64_t, double>> probe_means;
    std::int64_t n_kept = 0;
    std::int64_t n_accepted = 0;
    std::int64_t n_proposed_rank_moves = 0;
    std::int64_t n_accepted_rank_moves = 0;
    std::map<std::int64_t, std::int64_t> rank_histogram;
    double rejection_rate = 0.0;  ///< 1 - n_accepted / n_kept
};

// ---------------------------------------------------------------------------
// Log densities
// ---------------------------------------------------------------------------

/// Gaussian log-likelihood of the responses given the CP-parameterized
/// tensor: -(n/2) log(2 pi sigma^2) - (1/2 sigma^2) sum_i (y_i - <A_U, X_i>)^2.
[[nodiscard]] inline double log_likelihood(const CPFactors& factors, const DesignSet& design,
                                           const Hyperparams& hp) {
    if (factors.shape() != design.shape()) throw structural_error("log_likelihood: shape mismatch");
    const double sigma_sq = hp.sigma * hp.sigma;
    double rss = 0.0;
    for (const Observation& obs : design) {
        const double r = obs.y - predict(factors, obs.x);
        rss += r * r;
    }
    return -0.5 * static_cast<double>(design.size()) * std::log(2.0 * std::numbers::pi * sigma_sq) -
           0.5 * rss / sigma_sq;
}

/// Joint log prior of rank and factors: the fully normalized Gaussian
/// density with per-coordinate variance sigma_p^2 / d' over all d' sum_k M_k
/// coordinates, plus the unnormalized rank mass d' (sum_k M_k) log xi.
[[nodiscard]] inline double log_prior(const CPFactors& factors, const Hyperparams& hp) {
    const std::int64_t d = factors.rank();
    if (d < 1) throw structural_error("log_prior: rank must be >= 1");
    const Shape& shape = factors.shape();
    const double sum_m = static_cast<double>(shape.dim_sum());
    const double coords = static_cast<double>(d) * sum_m;
    double frob_sq = 0.0;
    for (int k = 0; k < shape.order(); ++k) frob_sq += factors.factor(k).squaredNorm();
    const double var = hp.sigma_p * hp.sigma_p / static_cast<double>(d);
    return -0.5 * coords * std::log(2.0 * std::numbers::pi * var) - 0.5 * frob_sq / var +
           static_cast<double>(d) * sum_m * std::log(hp.xi);
}

// ---------------------------------------------------------------------------
// Gibbs updates
// ---------------------------------------------------------------------------

namespace detail {

/// Cholesky with escalating diagonal jitter (base step 1e-10 trace/dim,
/// up to three retries); the conditional precisions are positive definite
/// by construction, so this guards only floating-point edge cases.
inline Eigen::LLT<Eigen::MatrixXd> robust_llt(Eigen::MatrixXd m) {
    double diag_trace = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) diag_trace += m(i, i);
    double jitter = 1e-10 * diag_trace / static_cast<double>(m.rows());
    for (int attempt = 0; attempt <= 3; ++attempt) {
        if (attempt > 0) {
            m.diagonal().array() += jitter;
            jitter *= 10.0;
        }
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() == Eigen::Success) return llt;
    }
    throw numerical_error("gibbs update: conditional precision not positive definite");
}

/// Linear system(s) defining mode k's Gaussian full conditional.  Each
/// observation contributes a coefficient matrix B_i with
/// B_i[r, j] = sum over entries of x_i having j_k = j of
/// w prod_{k' != k} U^{(k')}(r, j_{k'}), so that y_i = <B_i, U^{(k)}> + eps_i.
/// With vec stacking columns ((r, j) -> j d + r) the precision is
/// (d/sigma_p^2) I + (1/sigma^2) sum_i vec(B_i) vec(B_i)^T.  For
/// element-indicator designs every B_i touches a single column, so the
/// system factorizes into one d x d block per column; only the lower
/// triangles are maintained here.
struct ModeSystem {
    bool factorized;
    std::vector<Eigen::MatrixXd> precision;
    std::vector<Eigen::VectorXd> rhs;
};

inline ModeSystem assemble_mode_system(const CPFactors& factors, int mode,
                                       const DesignSet& design, const Hyperparams& hp) {
    const std::int64_t d = factors.rank();
    const Shape& shape = factors.shape();
    const std::int64_t m = shape.dim(mode);
    const int order = shape.order();
    const double inv_noise = 1.0 / (hp.sigma * hp.sigma);
    const double prior_precision = static_cast<double>(d) / (hp.sigma_p * hp.sigma_p);

    ModeSystem sys;
    sys.factorized = design.kind() == DesignKind::ElementIndicator;
    if (sys.factorized) {
        sys.precision.assign(static_cast<std::size_t>(m),
                             prior_precision * Eigen::MatrixXd::Identity(d, d));
        sys.rhs.assign(static_cast<std::size_t>(m), Eigen::VectorXd::Zero(d));
        Eigen::VectorXd b(d);
        for (const Observation& obs : design) {
            const std::span<const std::int64_t> idx = obs.x.index(0);
            const auto j = static_cast<std::size_t>(idx[static_cast<std::size_t>(mode)]);
            b.setConstant(obs.x.weight(0));
            for (int kp = 0; kp < order; ++kp) {
                if (kp == mode) continue;
                b.array() *= factors.factor(kp).col(idx[static_cast<std::size_t>(kp)]).array();
            }
            sys.precision[j].selfadjointView<Eigen::Lower>().rankUpdate(b, inv_noise);
            sys.rhs[j] += (inv_noise * obs.y) * b;
        }
    } else {
        const std::int64_t dim = d * m;
        sys.precision.assign(1, prior_precision * Eigen::MatrixXd::Identity(dim, dim));
        sys.rhs.assign(1, Eigen::VectorXd::Zero(dim));
        Eigen::VectorXd v(dim);
        Eigen::VectorXd term(d);
        for (const Observation& obs : design) {
            v.setZero();
            for (std::int64_t e = 0; e < obs.x.n_entries(); ++e) {
                const std::span<const std::int64_t> idx = obs.x.index(e);
                term.setConstant(obs.x.weight(e));
                for (int kp = 0; kp < order; ++kp) {
                    if (kp == mode) continue;
                    term.array() *= factors.factor(kp).col(idx[static_cast<std::size_t>(kp)]).array();
                }
                v.segment(idx[static_cast<std::size_t>(mode)] * d, d) += term;
            }
            sys.precision[0].selfadjointView<Eigen::Lower>().rankUpdate(v, inv_noise);
            sys.rhs[0] += (inv_noise * obs.y) * v;
        }
    }
    return sys;
}

inline void check_mode_update_args(const CPFactors& factors, int mode, const DesignSet& design,
                                   const Hyperparams& hp) {
    hp.validate();
    if (mode < 0 || mode >= factors.shape().order()) {
        throw structural_error("gibbs update: mode index out of range");
    }
    if (factors.rank() < 1) throw structural_error("gibbs update: rank must be >= 1");
    if (factors.shape() != design.shape()) throw structural_error("gibbs update: shape mismatch");
}

}  // namespace detail

/// Mean (d' x M_k) and precision ((d' M_k) square, vec order (r, j) -> j d' + r)
/// of mode k's Gaussian full conditional.
struct ModeConditional {
    Eigen::MatrixXd mean;
    Eigen::MatrixXd precision;
};

[[nodiscard]] inline ModeConditional gibbs_full_conditional(const CPFactors& factors, int mode,
                                                            const DesignSet& design,
                                                            const Hyperparams& hp) {
    detail::check_mode_update_args(factors, mode, design, hp);
    const std::int64_t d = factors.rank();
    const std::int64_t m = factors.shape().dim(mode);
    const detail::ModeSystem sys = detail::assemble_mode_system(factors, mode, design, hp);

    ModeConditional out{Eigen::MatrixXd(d, m), Eigen::MatrixXd::Zero(d * m, d * m)};
    if (sys.factorized) {
        for (std::int64_t j = 0; j < m; ++j) {
            const auto& p = sys.precision[static_cast<std::size_t>(j)];
            out.mean.col(j) = detail::robust_llt(p).solve(sys.rhs[static_cast<std::size_t>(j)]);
            out.precision.block(j * d, j * d, d, d) = p.selfadjointView<Eigen::Lower>();
        }
    } else {
        const Eigen::VectorXd mean_vec = detail::robust_llt(sys.precision[0]).solve(sys.rhs[0]);
        out.mean = Eigen::Map<const Eigen::MatrixXd>(mean_vec.data(), d, m);
        out.precision = sys.precision[0].selfadjointView<Eigen::Lower>();
    }
    return out;
}

/// Replaces mode k's factor matrix with an exact draw from its Gaussian
/// full conditional.  Standard normals are consumed in vec order, so the
/// factorized and general paths use identical RNG streams.
inline void gibbs_update_mode(SamplerState& state, int mode, const DesignSet& design,
                              const Hyperparams& hp) {
    detail::check_mode_update_args(state.factors, mode, design, hp);
    const std::int64_t d = state.factors.rank();
    const std::int64_t m = state.factors.shape().dim(mode);
    const detail::ModeSystem sys = detail::assemble_mode_system(state.factors, mode, design, hp);

    Eigen::MatrixXd u(d, m);
    if (sys.factorized) {
        Eigen::VectorXd z(d);
        for (std::int64_t j = 0; j < m; ++j) {
            const auto llt = detail::robust_llt(sys.precision[static_cast<std::size_t>(j)]);
            for (std::int64_t r = 0; r < d; ++r) z(r) = draw_normal(state.rng);
            u.col(j) = llt.solve(sys.rhs[static_cast<std::size_t>(j)]) + llt.matrixU().solve(z);
        }
    } else {
        const auto llt = detail::robust_llt(sys.precision[0]);
        Eigen::VectorXd z(d * m);
        for (std::int64_t i = 0; i < d * m; ++i) z(i) = draw_normal(state.rng);
        const Eigen::VectorXd v = llt.solve(sys.rhs[0]) + llt.matrixU().solve(z);
        u = Eigen::Map<const Eigen::MatrixXd>(v.data(), d, m);
    }
    state.factors.set_factor(mode, std::move(u));
}

/// One full conditional pass over modes 1..K.
inline void gibbs_sweep(SamplerState& state, const DesignSet& design, const Hyperparams& hp) {
    for (int k = 0; k < state.factors.shape().order(); ++k) {
        gibbs_update_mode(state, k, design, hp);
    }
    ++state.sweep_count;
}

// ---------------------------------------------------------------------------
// Trans-dimensional rank moves
// ---------------------------------------------------------------------------

struct RankMoveResult {
    bool was_birth = false;
    bool accepted = false;
};

/// Metropolis-Hastings birth/death move on the rank.
///
/// Birth d' -> d'+1 draws one new component row per mode from the
/// (d'+1)-rank prior N(0, sigma_p^2/(d'+1)), inserts it at a uniformly
/// chosen position, and rescales existing factors by sqrt(d'/(d'+1)) so
/// their prior density stays form-invariant under the new per-coordinate
/// precision.  Death deletes a uniformly chosen component and rescales by
/// sqrt(d'/(d'-1)).  The uniform insertion position mirrors the uniform
/// deletion choice, so those proposal factors cancel and the acceptance
/// ratio reduces to the density ratio, the new-row proposal density, and
/// the Jacobian of the deterministic rescaling.  Moves are proposed
/// birth/death with probability 1/2 each; boundary moves count as rejected.
inline RankMoveResult rank_move(SamplerState& state, const DesignSet& design,
                                const Hyperparams& hp) {
    hp.validate();
    if (state.factors.shape() != design.shape()) throw structural_error("rank_move: shape mismatch");
    const std::int64_t d = state.factors.rank();
    if (d < 1 || d > hp.d_max) throw structural_error("rank_move: rank outside [1, d_max]");
    const Shape& shape = state.factors.shape();
    const int order = shape.order();
    const double sum_m = static_cast<double>(shape.dim_sum());

    const bool birth = draw_uniform(state.rng) < 0.5;
    if (birth && d == hp.d_max) return {true, false};
    if (!birth && d == 1) return {false, false};

    const double current_density =
        log_prior(state.factors, hp) + log_likelihood(state.factors, design, hp);

    const std::int64_t dn = birth ? d + 1 : d - 1;
    const std::int64_t low = std::min(d, dn);   // rank whose coordinates get rescaled
    const std::int64_t high = std::max(d, dn);  // rank under which new/deleted rows are Gaussian
    const double row_sd = hp.sigma_p / std::sqrt(static_cast<double>(high));
    const double scale = std::sqrt(static_cast<double>(d) / static_cast<double>(dn));
    const std::int64_t position = draw_index(state.rng, high);

    double log_row_density = 0.0;
    std::vector<Eigen::MatrixXd> proposal(static_cast<std::size_t>(order));
    for (int k = 0; k < order; ++k) {
        const Eigen::MatrixXd& u = state.factors.factor(k);
        const std::int64_t cols = shape.dim(k);
        Eigen::MatrixXd un(dn, cols);
        if (birth) {
            Eigen::RowVectorXd row(cols);
            for (std::int64_t j = 0; j < cols; ++j) row(j) = row_sd * draw_normal(state.rng);
            un.topRows(position) = scale * u.topRows(position);
            un.row(position) = row;
            un.bottomRows(d - position) = scale * u.bottomRows(d - position);
            log_row_density += -0.5 * static_cast<double>(cols) *
                                   std::log(2.0 * std::numbers::pi * row_sd * row_sd) -
                               0.5 * row.squaredNorm() / (row_sd * row_sd);
        } else {
            un.topRows(position) = scale * u.topRows(position);
            un.bottomRows(dn - position) = scale * u.bottomRows(d - 1 - position);
            log_row_density += -0.5 * static_cast<double>(cols) *
                                   std::log(2.0 * std::numbers::pi * row_sd * row_sd) -
                               0.5 * u.row(position).squaredNorm() / (row_sd * row_sd);
        }
        proposal[static_cast<std::size_t>(k)] = std::move(un);
    }
    const CPFactors proposed(shape, std::move(proposal));
    const double proposed_density = log_prior(proposed, hp) + log_likelihood(proposed, design, hp);

    // log |det| of rescaling low * sum_m coordinates by `scale`.
    const double log_jacobian =
        0.5 * static_cast<double>(low) * sum_m *
        std::log(static_cast<double>(d) / static_cast<double>(dn));
    const double log_ratio = birth
        ? proposed_density - current_density - log_row_density + log_jacobian
        : proposed_density - current_density + log_row_density + log_jacobian;

    if (std::log(draw_uniform(state.rng)) < log_ratio) {
        state.factors = proposed;
        return {birth, true};
    }
    return {birth, false};
}

// ---------------------------------------------------------------------------
// Chain driver
// ---------------------------------------------------------------------------

[[nodiscard]] inline bool passes_rejection(const CPFactors& factors, const Rejection& rejection) {
    switch (rejection.kind) {
        case Rejection::Kind::None:
            return true;
        case Rejection::Kind::InfinityNorm: {
            const double sup = factors.shape().total() <= 1'000'000
                                   ? norm(cp_compose(factors), NormKind::infinity())
                                   : cp_infinity_norm(factors);
            return sup <= rejection.radius;
        }
        case Rejection::Kind::MaxNorm:
            return max2_upper_bound(factors) <= rejection.radius;
    }
    throw structural_error("passes_rejection: unknown rejection kind");
}

/// Draws the initial state with factors from the prior.  init_rank 0 selects
/// the default rank min(2, d_max); any other value is used as-is and must lie
/// in [1, d_max].  Starting at d_max lets the chain explore ranks from above,
/// which is the only direction rank moves travel easily once the factors fit
/// the data.
[[nodiscard]] inline SamplerState make_initial_state(const Shape& shape, const Hyperparams& hp,
                                                     std::uint64_t seed,
                                                     std::int64_t init_rank = 0) {
    hp.validate();
    if (init_rank < 0 || init_rank > hp.d_max) {
        throw validation_error("make_initial_state: init_rank must lie in [1, d_max]");
    }
    Rng rng(seed);
    const std::int64_t d0 = init_rank == 0 ? std::min<std::int64_t>(2, hp.d_max) : init_rank;
    const double sd = hp.sigma_p / std::sqrt(static_cast<double>(d0));
    std::vector<Eigen::MatrixXd> factors(static_cast<std::size_t>(shape.order()));
    for (int k = 0; k < shape.order(); ++k) {
        Eigen::MatrixXd u(d0, shape.dim(k));
        for (std::int64_t r = 0; r < d0; ++r) {
            for (std::int64_t j = 0; j < shape.dim(k); ++j) u(r, j) = sd * draw_normal(rng);
        }
        factors[static_cast<std::size_t>(k)] = std::move(u);
    }
    return SamplerState{CPFactors(shape, std::move(factors)), std::move(rng), 0};
}

/// Called on every post burn-in, thinned draw with its rejection verdict.
using DrawObserver = std::function<void(const CPFactors&, bool accepted)>;

/// Runs one chain: repeated Gibbs sweeps interleaved with rank moves at
/// probability rank_move_prob, then collection of every thin-th post
/// burn-in state that passes the rejection filter into a running mean.
[[nodiscard]] inline PosteriorSummary run_chain(const DesignSet& design, const Hyperparams& hp,
                                                const ChainConfig& cfg, SamplerState state,
                                                const DrawObserver& observer = {}) {
    hp.validate();
    cfg.validate();
    if (design.empty()) throw validation_error("run_chain: design must be nonempty");
    if (design.shape() != state.factors.shape()) throw structural_error("run_chain: shape mismatch");
    if (state.factors.rank() < 1 || state.factors.rank() > hp.d_max) {
        throw structural_error("run_chain: initial rank outside [1, d_max]");
    }
    const Shape& shape = design.shape();
    const bool dense_mean = shape.total() <= cfg.dense_mean_cell_limit;
    if (!dense_mean && cfg.probe_cells.empty()) {
        throw config_error(
            "run_chain: tensor exceeds the dense-mean cell limit; request probe cells");
    }
    std::vector<MultiIndex> probe_indices;
    probe_indices.reserve(cfg.probe_cells.size());
    for (std::int64_t cell : cfg.probe_cells) probe_indices.push_back(shape.unravel(cell));

    const std::int64_t burn = cfg.burn_in.value_or(cfg.n_samples);
    const std::int64_t total_iters = burn + cfg.n_samples * cfg.thin;

    PosteriorSummary summary;
    std::vector<double> mean_values;
    if (dense_mean) mean_values.assign(static_cast<std::size_t>(shape.total()), 0.0);
    std::vector<double> probe_values(cfg.probe_cells.size(), 0.0);

    for (std::int64_t iter = 1; iter <= total_iters; ++iter) {
        gibbs_sweep(state, design, hp);
        if (cfg.rank_move_prob > 0.0 && draw_uniform(state.rng) < cfg.rank_move_prob) {
            ++summary.n_proposed_rank_moves;
            if (rank_move(state, design, hp).accepted) ++summary.n_accepted_rank_moves;
        }
        if (iter <= burn || (iter - burn) % cfg.thin != 0) continue;

        ++summary.n_kept;
        const bool accepted = passes_rejection(state.factors, cfg.rejection);
        if (observer) observer(state.factors, accepted);
        if (!accepted) continue;
        ++summary.n_accepted;
        ++summary.rank_histogram[state.factors.rank()];
        const double w = 1.0 / static_cast<double>(summary.n_accepted);
        if (dense_mean) {
            const DenseTensor draw = cp_compose(state.factors);
            for (std::int64_t c = 0; c < shape.total(); ++c) {
                auto& acc = mean_values[static_cast<std::size_t>(c)];
                acc += (draw[c] - acc) * w;
            }
            for (std::size_t i = 0; i < probe_values.size(); ++i) {
                probe_values[i] = mean_values[static_cast<std::size_t>(cfg.probe_cells[i])];
            }
        } else {
            for (std::size_t i = 0; i < probe_values.size(); ++i) {
                const double v = cp_element(state.factors, probe_indices[i]);
                probe_values[i] += (v - probe_values[i]) * w;
            }
        }
    }

    if (summary.n_accepted == 0) {
        throw estimation_error(
            "run_chain: no draws passed the rejection filter; increase R or the sampling budget");
    }
    summary.rejection_rate =
        1.0 - static_cast<double>(summary.n_accepted) / static_cast<double>(summary.n_kept);
    if (dense_mean) summary.mean = DenseTensor(shape, std::move(mean_values));
    summary.probe_means.reserve(cfg.probe_cells.size());
    for (std::size_t i = 0; i < probe_values.size(); ++i) {
        summary.probe_means.emplace_back(cfg.probe_cells[i], probe_values[i]);
    }
    return summary;
}

[[nodiscard]] inline PosteriorSummary run_chain(const DesignSet& design, const Hyperparams& hp,
                                                const ChainConfig& cfg, std::uint64_t seed,
                                                const DrawObserver& observer = {}) {
    return run_chain(design, hp, cfg, make_initial_state(design.shape(), hp, seed), observer);
}

/// Most frequent rank among accepted draws; smallest wins ties.
[[nodiscard]] inline std::int64_t posterior_rank_mode(const PosteriorSummary& summary) {
    if (summary.rank_histogram.empty()) {
        throw structural_error("posterior_rank_mode: empty rank histogram");
    }
    std::int64_t best_rank = 0;
    std::int64_t best_count = -1;
    for (const auto& [rank, count] : summary.rank_histogram) {
        if (count > best_count) {
            best_rank = rank;
            best_count = count;
        }
    }
    return best_rank;
}

/// Pools chains over the same problem: means merge by n_accepted-weighted
/// averaging, counts add, histograms add.
[[nodiscard]] inline PosteriorSummary merge_summaries(std::span<const PosteriorSummary> parts) {
    if (parts.empty()) throw validation_error("merge_summaries: no summaries given");
    PosteriorSummary out;
    for (const PosteriorSummary& part : parts) {
        if (part.mean.has_value() != parts[0].mean.has_value() ||
            part.probe_means.size() != parts[0].probe_means.size()) {
            throw structural_error("merge_summaries: summaries track different quantities");
        }
        out.n_kept += part.n_kept;
        out.n_accepted += part.n_accepted;
        out.n_proposed_rank_moves += part.n_proposed_rank_moves;
        out.n_accepted_rank_moves += part.n_accepted_rank_moves;
        for (const auto& [rank, count] : part.rank_histogram) out.rank_histogram[rank] += count;
    }
    if (out.n_accepted == 0) throw estimation_error("merge_summaries: no accepted draws");
    if (parts[0].mean) {
        std::vector<double> mean_values(static_cast<std::size_t>(parts[0].mean->size()), 0.0);
        for (const PosteriorSummary& part : parts) {
            if (part.mean->shape() != parts[0].mean->shape()) {
                throw structural_error("merge_summaries: mean shape mismatch");
            }
            const double w =
                static_cast<double>(part.n_accepted) / static_cast<double>(out.n_accepted);
            for (std::int64_t c = 0; c < part.mean->size(); ++c) {
                mean_values[static_cast<std::size_t>(c)] += w * (*part.mean)[c];
            }
        }
        out.mean = DenseTensor(parts[0].mean->shape(), std::move(mean_values));
    }
    if (!parts[0].probe_means.empty()) {
        std::vector<double> probe_values(parts[0].probe_means.size(), 0.0);
        for (const PosteriorSummary& part : parts) {
            const double w =
                static_cast<double>(part.n_accepted) / static_cast<double>(out.n_accepted);
            for (std::size_t i = 0; i < part.probe_means.size(); ++i) {
                if (part.probe_means[i].first != parts[0].probe_means[i].first) {
                    throw structural_error("merge_summaries: probe cell mismatch");
                }
                probe_values[i] += w * part.probe_means[i].second;
            }
        }
        for (std::size_t i = 0; i < probe_values.size(); ++i) {
            out.probe_means.emplace_back(parts[0].probe_means[i].first, probe_values[i]);
        }
    }
    out.rejection_rate =
        1.0 - static_cast<double>(out.n_accepted) / static_cast<double>(out.n_kept);
    return out;
}

}  // namespace cpbayes
