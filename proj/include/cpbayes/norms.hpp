#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>

#include "cpbayes/dense_tensor.hpp"
#include "cpbayes/errors.hpp"

namespace cpbayes {

namespace detail {

/// Above this many terms, plain left-to-right accumulation gives way to
/// pairwise summation to keep rounding error logarithmic in the length.
inline constexpr std::int64_t kNaiveSumLimit = 1'000'000;

template <typename Term>
double pairwise_sum(std::int64_t begin, std::int64_t end, const Term& term) {
    const std::int64_t n = end - begin;
    if (n <= 4096) {
        double s = 0.0;
        for (std::int64_t i = begin; i < end; ++i) s += term(i);
        return s;
    }
    const std::int64_t mid = begin + n / 2;
    return pairwise_sum(begin, mid, term) + pairwise_sum(mid, end, term);
}

template <typename Term>
double sum_terms(std::int64_t n, const Term& term) {
    if (n <= kNaiveSumLimit) {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i) s += term(i);
        return s;
    }
    return pairwise_sum<Term>(0, n, term);
}

}  // namespace detail

/// Norm selector: entrywise l_p for p >= 1, the sup norm, or the factor
/// column-norm bound (defined for CP parameterizations only).
class NormKind {
  public:
    enum class Tag { Lp, Infinity, Max2UpperBound };

    [[nodiscard]] static NormKind lp(double p) {
        if (!(p >= 1.0)) throw validation_error("NormKind: l_p requires p >= 1");
        return NormKind(Tag::Lp, p);
    }
    [[nodiscard]] static NormKind infinity() { return NormKind(Tag::Infinity, 0.0); }
    [[nodiscard]] static NormKind max2_upper_bound() { return NormKind(Tag::Max2UpperBound, 0.0); }

    [[nodiscard]] Tag tag() const { return tag_; }
    [[nodiscard]] double p() const { return p_; }

  private:
    NormKind(Tag tag, double p) : tag_(tag), p_(p) {}
    Tag tag_;
    double p_;
};

[[nodiscard]] inline double norm(const DenseTensor& a, const NormKind& kind) {
    const std::span<const double> v = a.values();
    switch (kind.tag()) {
        case NormKind::Tag::Infinity: {
            double best = 0.0;
            for (double x : v) best = std::max(best, std::abs(x));
            return best;
        }
        case NormKind::Tag::Lp: {
            const double p = kind.p();
            const double total = detail::sum_terms(
                a.size(), [&](std::int64_t i) { return std::pow(std::abs(v[static_cast<std::size_t>(i)]), p); });
            return std::pow(total, 1.0 / p);
        }
        case NormKind::Tag::Max2UpperBound:
            throw unsupported_error("norm: column-norm bound is defined for CP factors, not dense tensors");
    }
    throw structural_error("norm: unknown kind");
}

/// Euclidean inner product of two dense tensors of equal shape.
[[nodiscard]] inline double inner_product(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) throw structural_error("inner_product: shape mismatch");
    const std::span<const double> va = a.values();
    const std::span<const double> vb = b.values();
    return detail::sum_terms(a.size(), [&](std::int64_t i) {
        return va[static_cast<std::size_t>(i)] * vb[static_cast<std::size_t>(i)];
    });
}

/// Mean squared entry difference, the squared distance under a uniformly
/// random single-cell measurement.
[[nodiscard]] inline double population_sq_norm_uniform(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) throw structural_error("population_sq_norm_uniform: shape mismatch");
    const std::span<const double> va = a.values();
    const std::span<const double> vb = b.values();
    const double total = detail::sum_terms(a.size(), [&](std::int64_t i) {
        const double d = va[static_cast<std::size_t>(i)] - vb[static_cast<std::size_t>(i)];
        return d * d;
    });
    return total / static_cast<double>(a.size());
}

}  // namespace cpbayes
