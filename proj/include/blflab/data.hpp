#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "blflab/tensor.hpp"

namespace blflab::data {

enum class Normalization { Raw, UnitInterval };

struct Dataset {
    Tensor images;  // [N, C, H, W] or [N, D]
    std::vector<std::size_t> labels;
    std::string name;
    Normalization normalization = Normalization::UnitInterval;

    std::size_t size() const noexcept { return labels.size(); }
    /// 1 + largest label.
    std::size_t classes() const;
    /// Same samples viewed with a new per-sample shape.
    Dataset reshaped(std::vector<std::size_t> sample_shape) const;
    std::vector<std::size_t> sample_shape() const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255 and returned as [N, 1, H, W].
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes images as unsigned bytes round(255 * v) and labels as bytes.
/// Images must be [N, H, W] or [N, 1, H, W] or [N, D] (written as [N, 1, D]).
void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Gaussian clusters around uniform-random centers in [0,1]^dim, clipped to [0,1].
/// Samples are ordered class by class.
Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed);

/// First n samples of a seeded permutation.
Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed);

struct Batch {
    Tensor x;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> indices;  // positions in the source dataset
};

/// Seeded shuffled batches; the last partial batch is kept.
class BatchIterator {
public:
    BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed);

    std::optional<Batch> next();
    std::size_t batch_count() const noexcept;

private:
    const Dataset* ds_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

/// Shuffled n-sample subset split into batches.
class SubsetBatches {
public:
    SubsetBatches(const Dataset& ds, std::size_t n, std::size_t batch_size, std::uint64_t seed);
    SubsetBatches(const SubsetBatches&) = delete;
    SubsetBatches& operator=(const SubsetBatches&) = delete;

    std::optional<Batch> next() { return it_.next(); }
    std::size_t batch_count() const noexcept { return it_.batch_count(); }
    const Dataset& subset() const noexcept { return subset_; }

private:
    Dataset subset_;
    BatchIterator it_;
};

/// Seeded permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

Batch make_batch(const Dataset& ds, std::vector<std::size_t> indices);

}  // namespace blflab::data
