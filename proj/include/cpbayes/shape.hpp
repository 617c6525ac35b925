#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cpbayes/errors.hpp"

namespace cpbayes {

/// Index tuple (j_1, ..., j_K), zero-based.
using MultiIndex = std::vector<std::int64_t>;

/// Dimensions (M_1, ..., M_K) of an order-K tensor, K >= 2.
///
/// Cells are linearized in canonical order with the last index varying
/// fastest, so flat(j) = ((j_1 M_2 + j_2) M_3 + ...) + j_K.
class Shape {
  public:
    Shape() = default;

    explicit Shape(std::vector<std::int64_t> dims) : dims_(std::move(dims)) {
        if (dims_.size() < 2) {
            throw structural_error("Shape: tensor order must be at least 2");
        }
        total_ = 1;
        for (std::int64_t m : dims_) {
            if (m < 1) throw structural_error("Shape: every dimension must be >= 1");
            if (total_ > std::numeric_limits<std::int64_t>::max() / m) {
                throw structural_error("Shape: element count overflows 64-bit range");
            }
            total_ *= m;
        }
    }

    [[nodiscard]] int order() const { return static_cast<int>(dims_.size()); }
    [[nodiscard]] std::int64_t dim(int k) const { return dims_[static_cast<std::size_t>(k)]; }
    [[nodiscard]] const std::vector<std::int64_t>& dims() const { return dims_; }
    [[nodiscard]] std::int64_t total() const { return total_; }

    [[nodiscard]] std::int64_t dim_sum() const {
        std::int64_t s = 0;
        for (std::int64_t m : dims_) s += m;
        return s;
    }

    /// Flat offset of a multi-index, with bounds checking.
    [[nodiscard]] std::int64_t ravel(std::span<const std::int64_t> index) const {
        if (static_cast<int>(index.size()) != order()) {
            throw structural_error("Shape::ravel: index order mismatch");
        }
        std::int64_t flat = 0;
        for (int k = 0; k < order(); ++k) {
            const std::int64_t j = index[static_cast<std::size_t>(k)];
            if (j < 0 || j >= dim(k)) {
                throw structural_error("Shape::ravel: index out of range along mode " +
                                       std::to_string(k + 1));
            }
            flat = flat * dim(k) + j;
        }
        return flat;
    }

    [[nodiscard]] MultiIndex unravel(std::int64_t flat) const {
        if (flat < 0 || flat >= total_) throw structural_error("Shape::unravel: offset out of range");
        MultiIndex index(static_cast<std::size_t>(order()), 0);
        for (int k = order() - 1; k >= 0; --k) {
            index[static_cast<std::size_t>(k)] = flat % dim(k);
            flat /= dim(k);
        }
        return index;
    }

    /// Advances a multi-index one step in canonical order; false after the
    /// last cell.  Start from the all-zero index.
    bool next_index(MultiIndex& index) const {
        for (int k = order() - 1; k >= 0; --k) {
            auto& j = index[static_cast<std::size_t>(k)];
            if (++j < dim(k)) return true;
            j = 0;
        }
        return false;
    }

    friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }
    friend bool operator!=(const Shape& a, const Shape& b) { return !(a == b); }

  private:
    std::vector<std::int64_t> dims_;
    std::int64_t total_ = 0;
};

}  // namespace cpbayes
