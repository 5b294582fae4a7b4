#include "blflab/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "blflab/error.hpp"

namespace blflab {

std::size_t shape_product(std::span<const std::size_t> shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(std::span<const std::size_t> shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_)) {
        throw DomainError("Tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                          shape_string(shape_));
    }
}

std::size_t Tensor::row_size() const noexcept {
    if (shape_.empty()) return 0;
    return shape_product(std::span(shape_).subspan(1));
}

std::span<double> Tensor::row(std::size_t i) noexcept {
    const std::size_t n = row_size();
    return std::span<double>(data_).subspan(i * n, n);
}

std::span<const double> Tensor::row(std::size_t i) const noexcept {
    const std::size_t n = row_size();
    return std::span<const double>(data_).subspan(i * n, n);
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > batch()) throw DomainError("slice_rows: range out of bounds");
    const std::size_t n = row_size();
    auto shape = shape_;
    shape[0] = end - begin;
    return Tensor(std::move(shape), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * n),
                                                        data_.begin() + static_cast<std::ptrdiff_t>(end * n)));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
    const std::size_t n = row_size();
    auto shape = shape_;
    shape[0] = rows.size();
    std::vector<double> out;
    out.reserve(rows.size() * n);
    for (std::size_t r : rows) {
        if (r >= batch()) throw DomainError("gather_rows: row out of bounds");
        auto src = row(r);
        out.insert(out.end(), src.begin(), src.end());
    }
    return Tensor(std::move(shape), std::move(out));
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace blflab
