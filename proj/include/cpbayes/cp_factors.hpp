#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "cpbayes/dense_tensor.hpp"
#include "cpbayes/errors.hpp"
#include "cpbayes/shape.hpp"

namespace cpbayes {

/// Rank-d' CP parameterization of an order-K tensor: one d' x M_k factor
/// matrix per mode, row r holding component r's loadings along that mode.
/// The represented tensor is A[j] = sum_r prod_k U_k(r, j_k).
class CPFactors {
  public:
    CPFactors(Shape shape, std::vector<Eigen::MatrixXd> factors)
        : shape_(std::move(shape)), factors_(std::move(factors)) {
        if (static_cast<int>(factors_.size()) != shape_.order()) {
            throw structural_error("CPFactors: one factor matrix per mode required");
        }
        const Eigen::Index rank = factors_[0].rows();
        for (int k = 0; k < shape_.order(); ++k) {
            const auto& u = factors_[static_cast<std::size_t>(k)];
            if (u.rows() != rank) throw structural_error("CPFactors: inconsistent rank across modes");
            if (u.cols() != shape_.dim(k)) {
                throw structural_error("CPFactors: factor columns do not match mode dimension");
            }
            if (!u.allFinite()) throw validation_error("CPFactors: non-finite factor entry");
        }
        if (rank < 0) throw structural_error("CPFactors: negative rank");
    }

    [[nodiscard]] static CPFactors zeros(const Shape& shape, std::int64_t rank) {
        std::vector<Eigen::MatrixXd> factors;
        factors.reserve(static_cast<std::size_t>(shape.order()));
        for (int k = 0; k < shape.order(); ++k) {
            factors.emplace_back(Eigen::MatrixXd::Zero(rank, shape.dim(k)));
        }
        return CPFactors(shape, std::move(factors));
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::int64_t rank() const { return factors_[0].rows(); }
    [[nodiscard]] const Eigen::MatrixXd& factor(int k) const {
        return factors_[static_cast<std::size_t>(k)];
    }

    /// Replaces mode k's factor matrix; dimensions must be preserved.
    void set_factor(int k, Eigen::MatrixXd u) {
        if (k < 0 || k >= shape_.order()) throw structural_error("CPFactors: mode out of range");
        if (u.rows() != rank() || u.cols() != shape_.dim(k)) {
            throw structural_error("CPFactors: replacement factor has wrong dimensions");
        }
        if (!u.allFinite()) throw validation_error("CPFactors: non-finite factor entry");
        factors_[static_cast<std::size_t>(k)] = std::move(u);
    }

  private:
    Shape shape_;
    std::vector<Eigen::MatrixXd> factors_;
};

/// Single tensor entry sum_r prod_k U_k(r, j_k); zero when the rank is zero.
[[nodiscard]] inline double cp_element(const CPFactors& factors,
                                       std::span<const std::int64_t> index) {
    const Shape& shape = factors.shape();
    if (static_cast<int>(index.size()) != shape.order()) {
        throw structural_error("cp_element: index order mismatch");
    }
    for (int k = 0; k < shape.order(); ++k) {
        if (index[static_cast<std::size_t>(k)] < 0 ||
            index[static_cast<std::size_t>(k)] >= shape.dim(k)) {
            throw structural_error("cp_element: index out of range");
        }
    }
    double value = 0.0;
    for (std::int64_t r = 0; r < factors.rank(); ++r) {
        double term = 1.0;
        for (int k = 0; k < shape.order(); ++k) {
            term *= factors.factor(k)(r, index[static_cast<std::size_t>(k)]);
        }
        value += term;
    }
    return value;
}

/// Materializes the represented tensor in canonical cell order.
[[nodiscard]] inline DenseTensor cp_compose(const CPFactors& factors) {
    const Shape& shape = factors.shape();
    std::vector<double> values(static_cast<std::size_t>(shape.total()), 0.0);
    const int order = shape.order();
    for (std::int64_t r = 0; r < factors.rank(); ++r) {
        MultiIndex index(static_cast<std::size_t>(order), 0);
        std::size_t flat = 0;
        do {
            double term = 1.0;
            for (int k = 0; k < order; ++k) {
                term *= factors.factor(k)(r, index[static_cast<std::size_t>(k)]);
            }
            values[flat++] += term;
        } while (shape.next_index(index));
    }
    return DenseTensor(shape, std::move(values));
}

/// Largest Euclidean column norm across all factor matrices.  Bounds the
/// represented tensor's sup norm from above once raised to the order K
/// and multiplied out, and is cheap to evaluate at any scale.
[[nodiscard]] inline double max2_upper_bound(const CPFactors& factors) {
    double best = 0.0;
    for (int k = 0; k < factors.shape().order(); ++k) {
        const auto& u = factors.factor(k);
        for (Eigen::Index j = 0; j < u.cols(); ++j) {
            best = std::max(best, u.col(j).norm());
        }
    }
    return best;
}

/// Sup norm of the represented tensor, streamed cell by cell without
/// materializing it.
[[nodiscard]] inline double cp_infinity_norm(const CPFactors& factors) {
    const Shape& shape = factors.shape();
    double best = 0.0;
    MultiIndex index(static_cast<std::size_t>(shape.order()), 0);
    do {
        best = std::max(best, std::abs(cp_element(factors, index)));
    } while (shape.next_index(index));
    return best;
}

}  // namespace cpbayes
