#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cpbayes/errors.hpp"
#include "cpbayes/shape.hpp"

namespace cpbayes {

/// Order-K tensor held as a flat value array in canonical cell order.
class DenseTensor {
  public:
    DenseTensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        if (static_cast<std::int64_t>(values_.size()) != shape_.total()) {
            throw structural_error("DenseTensor: value count does not match shape");
        }
        for (double v : values_) {
            if (!std::isfinite(v)) throw validation_error("DenseTensor: non-finite entry");
        }
    }

    [[nodiscard]] static DenseTensor zeros(const Shape& shape) {
        return DenseTensor(shape, std::vector<double>(static_cast<std::size_t>(shape.total()), 0.0));
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::int64_t size() const { return shape_.total(); }
    [[nodiscard]] std::span<const double> values() const { return values_; }

    [[nodiscard]] double operator[](std::int64_t flat) const {
        return values_[static_cast<std::size_t>(flat)];
    }

    [[nodiscard]] double at(std::span<const std::int64_t> index) const {
        return values_[static_cast<std::size_t>(shape_.ravel(index))];
    }

  private:
    Shape shape_;
    std::vector<double> values_;
};

/// Entrywise difference; shapes must agree.
[[nodiscard]] inline DenseTensor subtract(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) throw structural_error("subtract: shape mismatch");
    std::vector<double> out(static_cast<std::size_t>(a.size()));
    for (std::int64_t i = 0; i < a.size(); ++i) {
        out[static_cast<std::size_t>(i)] = a[i] - b[i];
    }
    return DenseTensor(a.shape(), std::move(out));
}

}  // namespace cpbayes
