#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace blflab {

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Leading dimension (batch size); 0 for an empty tensor.
    std::size_t batch() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
    /// Elements per leading-dimension row.
    std::size_t row_size() const noexcept;
    std::span<double> row(std::size_t i) noexcept;
    std::span<const double> row(std::size_t i) const noexcept;

    /// Same data, new shape; throws DomainError when element counts differ.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    /// Rows [begin, end) along the leading dimension.
    Tensor slice_rows(std::size_t begin, std::size_t end) const;
    /// Gather the listed rows along the leading dimension.
    Tensor gather_rows(std::span<const std::size_t> rows) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape) noexcept;
std::string shape_string(std::span<const std::size_t> shape);

}  // namespace blflab
