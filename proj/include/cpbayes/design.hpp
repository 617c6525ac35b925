#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpbayes/cp_factors.hpp"
#include "cpbayes/dense_tensor.hpp"
#include "cpbayes/errors.hpp"
#include "cpbayes/norms.hpp"
#include "cpbayes/rng.hpp"
#include "cpbayes/shape.hpp"

namespace cpbayes {

/// Slack admitted on the unit weight-norm gate, absorbing rescaling
/// round-off without letting a genuinely heavier measurement through.
inline constexpr double kL1Slack = 1e-12;

/// Linear measurement functional sum_e w_e A[j_e] over finitely many cells.
/// Entries are canonicalized at construction: duplicate cells merged by
/// summing weights, zero weights dropped, cells sorted by flat offset.
class SparseMeasurement {
  public:
    struct Entry {
        MultiIndex index;
        double weight;
    };

    SparseMeasurement(Shape shape, const std::vector<Entry>& entries) : shape_(std::move(shape)) {
        const int order = shape_.order();
        std::vector<std::pair<std::int64_t, double>> cells;
        cells.reserve(entries.size());
        for (const Entry& e : entries) {
            if (!std::isfinite(e.weight)) {
                throw validation_error("SparseMeasurement: non-finite weight");
            }
            cells.emplace_back(shape_.ravel(e.index), e.weight);
        }
        std::sort(cells.begin(), cells.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        for (std::size_t i = 0; i < cells.size();) {
            std::int64_t flat = cells[i].first;
            double weight = 0.0;
            while (i < cells.size() && cells[i].first == flat) weight += cells[i++].second;
            if (weight == 0.0) continue;
            flats_.push_back(flat);
            weights_.push_back(weight);
        }
        indices_.reserve(flats_.size() * static_cast<std::size_t>(order));
        for (std::int64_t flat : flats_) {
            const MultiIndex index = shape_.unravel(flat);
            indices_.insert(indices_.end(), index.begin(), index.end());
        }
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::int64_t n_entries() const { return static_cast<std::int64_t>(weights_.size()); }

    [[nodiscard]] std::span<const std::int64_t> index(std::int64_t e) const {
        const auto order = static_cast<std::size_t>(shape_.order());
        return {indices_.data() + static_cast<std::size_t>(e) * order, order};
    }
    [[nodiscard]] std::int64_t flat(std::int64_t e) const {
        return flats_[static_cast<std::size_t>(e)];
    }
    [[nodiscard]] double weight(std::int64_t e) const {
        return weights_[static_cast<std::size_t>(e)];
    }

    [[nodiscard]] double l1_norm() const {
        double s = 0.0;
        for (double w : weights_) s += std::abs(w);
        return s;
    }

    [[nodiscard]] SparseMeasurement scaled(double factor) const {
        SparseMeasurement out = *this;
        for (double& w : out.weights_) w *= factor;
        return out;
    }

  private:
    Shape shape_;
    std::vector<std::int64_t> indices_;
    std::vector<std::int64_t> flats_;
    std::vector<double> weights_;
};

struct Observation {
    SparseMeasurement x;
    double y;
};

enum class DesignKind {
    ElementIndicator,  ///< every measurement reads one cell with weight 1
    TaskSlice,         ///< measurements live on one mode-3 fiber each
    GenericSparse,
};

/// Measurement collection feeding one regression run.  Every member must
/// satisfy the unit weight-norm bound; the kind tag records structure that
/// the sampler can exploit.
class DesignSet {
  public:
    DesignSet(Shape shape, std::vector<Observation> observations, DesignKind kind)
        : shape_(std::move(shape)), observations_(std::move(observations)), kind_(kind) {
        for (const Observation& obs : observations_) {
            if (obs.x.shape() != shape_) {
                throw structural_error("DesignSet: measurement shape mismatch");
            }
            const double l1 = obs.x.l1_norm();
            if (l1 > 1.0 + kL1Slack) {
                throw validation_error("DesignSet: measurement weight norm " +
                                       std::to_string(l1) + " exceeds 1");
            }
            if (!std::isfinite(obs.y)) throw validation_error("DesignSet: non-finite response");
            if (kind_ == DesignKind::ElementIndicator &&
                (obs.x.n_entries() != 1 || obs.x.weight(0) != 1.0)) {
                throw structural_error(
                    "DesignSet: element-indicator measurements must read one cell with weight 1");
            }
            if (kind_ == DesignKind::TaskSlice) {
                if (shape_.order() != 3) {
                    throw structural_error("DesignSet: task-slice designs need three modes");
                }
                for (std::int64_t e = 1; e < obs.x.n_entries(); ++e) {
                    if (obs.x.index(e)[0] != obs.x.index(0)[0] ||
                        obs.x.index(e)[1] != obs.x.index(0)[1]) {
                        throw structural_error(
                            "DesignSet: task-slice measurements must stay on one mode-3 fiber");
                    }
                }
            }
        }
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] DesignKind kind() const { return kind_; }
    [[nodiscard]] std::int64_t size() const { return static_cast<std::int64_t>(observations_.size()); }
    [[nodiscard]] bool empty() const { return observations_.empty(); }
    [[nodiscard]] const Observation& operator[](std::int64_t i) const {
        return observations_[static_cast<std::size_t>(i)];
    }
    [[nodiscard]] auto begin() const { return observations_.begin(); }
    [[nodiscard]] auto end() const { return observations_.end(); }

  private:
    Shape shape_;
    std::vector<Observation> observations_;
    DesignKind kind_;
};

struct NoiseSpec {
    double sigma;
    explicit NoiseSpec(double sigma_in) : sigma(sigma_in) {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) {
            throw validation_error("NoiseSpec: sigma must be positive and finite");
        }
    }
};

enum class GatePolicy { Reject, Rescale };

struct GateResult {
    SparseMeasurement x;
    double scale;  ///< factor applied to the weights (1 when already compliant)
};

/// Enforces the unit weight-norm bound.  Reject raises on violation;
/// Rescale divides the weights by max(1, |x|_1) and reports the factor so
/// responses can be co-scaled.
[[nodiscard]] inline GateResult normalize_l1_gate(const SparseMeasurement& x, GatePolicy policy) {
    const double l1 = x.l1_norm();
    if (l1 <= 1.0 + kL1Slack) return {x, 1.0};
    if (policy == GatePolicy::Reject) {
        throw validation_error("normalize_l1_gate: weight norm " + std::to_string(l1) +
                               " exceeds 1");
    }
    const double scale = 1.0 / l1;
    return {x.scaled(scale), scale};
}

/// n single-cell indicator measurements at uniformly random cells
/// (with replacement), the completion sampling scheme.
[[nodiscard]] inline std::vector<SparseMeasurement> make_completion_design(const Shape& shape,
                                                                           std::int64_t n,
                                                                           Rng& rng) {
    if (n < 1) throw validation_error("make_completion_design: n must be >= 1");
    std::vector<SparseMeasurement> out;
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const MultiIndex index = shape.unravel(draw_index(rng, shape.total()));
        out.emplace_back(shape, std::vector<SparseMeasurement::Entry>{{index, 1.0}});
    }
    return out;
}

/// One multitask regression case: a pair of categorical attributes picking
/// the mode-1/mode-2 cell, and a predictor vector along mode 3.
struct MultitaskCase {
    std::int64_t j1;
    std::int64_t j2;
    std::vector<double> predictor;
};

/// Measurements placing each case's predictor on the mode-3 fiber at
/// (j1, j2), gated to the unit weight norm under the given policy.
[[nodiscard]] inline std::vector<SparseMeasurement> make_multitask_design(
    std::int64_t m1, std::int64_t m2, std::int64_t m3,
    std::span<const MultitaskCase> cases, GatePolicy policy = GatePolicy::Reject) {
    const Shape shape({m1, m2, m3});
    std::vector<SparseMeasurement> out;
    out.reserve(cases.size());
    for (const MultitaskCase& c : cases) {
        if (static_cast<std::int64_t>(c.predictor.size()) != m3) {
            throw structural_error("make_multitask_design: predictor length must equal M_3");
        }
        std::vector<SparseMeasurement::Entry> entries;
        entries.reserve(c.predictor.size());
        for (std::int64_t j = 0; j < m3; ++j) {
            const double w = c.predictor[static_cast<std::size_t>(j)];
            if (w == 0.0) continue;
            entries.push_back({MultiIndex{c.j1, c.j2, j}, w});
        }
        out.push_back(normalize_l1_gate(SparseMeasurement(shape, entries), policy).x);
    }
    return out;
}

/// Measurement value of the CP-parameterized tensor, touching only the
/// stored cells.
[[nodiscard]] inline double predict(const CPFactors& factors, const SparseMeasurement& x) {
    if (factors.shape() != x.shape()) throw structural_error("predict: shape mismatch");
    double value = 0.0;
    for (std::int64_t e = 0; e < x.n_entries(); ++e) {
        value += x.weight(e) * cp_element(factors, x.index(e));
    }
    return value;
}

/// Measurement value of a dense tensor.
[[nodiscard]] inline double inner_product(const DenseTensor& a, const SparseMeasurement& x) {
    if (a.shape() != x.shape()) throw structural_error("inner_product: shape mismatch");
    double value = 0.0;
    for (std::int64_t e = 0; e < x.n_entries(); ++e) {
        value += x.weight(e) * a[x.flat(e)];
    }
    return value;
}

[[nodiscard]] inline DesignKind detect_design_kind(std::span<const SparseMeasurement> xs) {
    for (const SparseMeasurement& x : xs) {
        if (x.n_entries() != 1 || x.weight(0) != 1.0) return DesignKind::GenericSparse;
    }
    return DesignKind::ElementIndicator;
}

/// Draws y_i = <A*, X_i> + sigma eps_i with standard normal noise, one
/// engine draw per measurement in order.
[[nodiscard]] inline DesignSet generate_responses(const CPFactors& truth,
                                                  std::span<const SparseMeasurement> xs,
                                                  const NoiseSpec& noise, Rng& rng,
                                                  std::optional<DesignKind> kind = std::nullopt) {
    std::vector<Observation> observations;
    observations.reserve(xs.size());
    for (const SparseMeasurement& x : xs) {
        const double y = predict(truth, x) + noise.sigma * draw_normal(rng);
        observations.push_back({x, y});
    }
    return DesignSet(truth.shape(), std::move(observations),
                     kind.value_or(detect_design_kind(xs)));
}

/// Mean squared measurement-space distance (1/n) sum_i <a - b, X_i>^2.
[[nodiscard]] inline double empirical_sq_norm(const DenseTensor& a, const DenseTensor& b,
                                              const DesignSet& design) {
    if (design.empty()) throw validation_error("empirical_sq_norm: empty design");
    if (a.shape() != design.shape() || b.shape() != design.shape()) {
        throw structural_error("empirical_sq_norm: shape mismatch");
    }
    const DenseTensor diff = subtract(a, b);
    double total = 0.0;
    for (const Observation& obs : design) {
        const double v = inner_product(diff, obs.x);
        total += v * v;
    }
    return total / static_cast<double>(design.size());
}

}  // namespace cpbayes
