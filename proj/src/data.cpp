#include "blflab/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "blflab/error.hpp"

namespace blflab::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(ParseError::Kind::Io, "cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off, const std::filesystem::path& path) {
    if (buf.size() < off + 4) throw ParseError(ParseError::Kind::Truncated, path.string() + ": truncated header");
    return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) | (std::uint32_t{buf[off + 2]} << 8) |
           std::uint32_t{buf[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                static_cast<char>(v)};
    out.write(b.data(), 4);
}

}  // namespace

std::size_t Dataset::classes() const {
    if (labels.empty()) return 0;
    return *std::max_element(labels.begin(), labels.end()) + 1;
}

std::vector<std::size_t> Dataset::sample_shape() const {
    auto s = images.shape();
    if (!s.empty()) s.erase(s.begin());
    return s;
}

Dataset Dataset::reshaped(std::vector<std::size_t> sample_shape) const {
    Dataset out = *this;
    sample_shape.insert(sample_shape.begin(), images.batch());
    out.images = images.reshaped(std::move(sample_shape));
    return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);

    if (read_be32(img, 0, images_path) != kImageMagic) {
        throw ParseError(ParseError::Kind::BadMagic, images_path.string() + ": not an IDX image file (magic mismatch)");
    }
    if (read_be32(lab, 0, labels_path) != kLabelMagic) {
        throw ParseError(ParseError::Kind::BadMagic, labels_path.string() + ": not an IDX label file (magic mismatch)");
    }
    const std::size_t n = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    const std::size_t n_labels = read_be32(lab, 4, labels_path);
    if (n != n_labels) {
        throw ParseError(ParseError::Kind::CountMismatch, "image count " + std::to_string(n) +
                                                              " does not match label count " + std::to_string(n_labels));
    }
    const std::size_t pixels = n * rows * cols;
    if (img.size() < 16 + pixels) throw ParseError(ParseError::Kind::Truncated, images_path.string() + ": truncated payload");
    if (lab.size() < 8 + n) throw ParseError(ParseError::Kind::Truncated, labels_path.string() + ": truncated payload");

    Dataset ds;
    ds.name = images_path.stem().string();
    std::vector<double> px(pixels);
    for (std::size_t i = 0; i < pixels; ++i) px[i] = static_cast<double>(img[16 + i]) / 255.0;
    ds.images = Tensor({n, 1, rows, cols}, std::move(px));
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = lab[8 + i];
    return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto& s = ds.images.shape();
    std::size_t rows = 0, cols = 0;
    if (s.size() == 2) {
        rows = 1;
        cols = s[1];
    } else if (s.size() == 3) {
        rows = s[1];
        cols = s[2];
    } else if (s.size() == 4 && s[1] == 1) {
        rows = s[2];
        cols = s[3];
    } else {
        throw DomainError("write_idx: unsupported image shape " + shape_string(s));
    }
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw ParseError(ParseError::Kind::Io, "cannot open IDX output files");

    put_be32(img, kImageMagic);
    put_be32(img, static_cast<std::uint32_t>(ds.size()));
    put_be32(img, static_cast<std::uint32_t>(rows));
    put_be32(img, static_cast<std::uint32_t>(cols));
    for (double v : ds.images.storage()) {
        const double clipped = std::clamp(v, 0.0, 1.0);
        img.put(static_cast<char>(static_cast<unsigned char>(std::lround(clipped * 255.0))));
    }
    put_be32(lab, kLabelMagic);
    put_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (std::size_t l : ds.labels) {
        if (l > 255) throw DomainError("write_idx: label does not fit in a byte");
        lab.put(static_cast<char>(static_cast<unsigned char>(l)));
    }
}

Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed) {
    if (classes < 2) throw DomainError("synth_blobs: need at least 2 classes");
    if (dim == 0 || per_class == 0) throw DomainError("synth_blobs: dim and per_class must be positive");
    if (!(spread >= 0.0)) throw DomainError("synth_blobs: spread must be >= 0");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    std::vector<double> centers(classes * dim);
    for (double& c : centers) c = unit(rng);

    Dataset ds;
    ds.name = "blobs";
    std::vector<double> px;
    px.reserve(classes * per_class * dim);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            for (std::size_t d = 0; d < dim; ++d) {
                const double v = centers[c * dim + d] + spread * noise(rng);
                px.push_back(std::clamp(v, 0.0, 1.0));
            }
            ds.labels.push_back(c);
        }
    }
    ds.images = Tensor({classes * per_class, dim}, std::move(px));
    return ds;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
    if (n > ds.size()) throw DomainError("subset: requested " + std::to_string(n) + " of " + std::to_string(ds.size()));
    auto idx = permutation(ds.size(), seed);
    idx.resize(n);
    Dataset out;
    out.name = ds.name;
    out.normalization = ds.normalization;
    out.images = ds.images.gather_rows(idx);
    for (std::size_t i : idx) out.labels.push_back(ds.labels[i]);
    return out;
}

Batch make_batch(const Dataset& ds, std::vector<std::size_t> indices) {
    Batch b;
    b.x = ds.images.gather_rows(indices);
    for (std::size_t i : indices) b.labels.push_back(ds.labels[i]);
    b.indices = std::move(indices);
    return b;
}

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), order_(permutation(ds.size(), seed)) {
    if (batch_size == 0) throw DomainError("BatchIterator: batch size must be positive");
}

std::optional<Batch> BatchIterator::next() {
    if (pos_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
    std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return make_batch(*ds_, std::move(idx));
}

std::size_t BatchIterator::batch_count() const noexcept {
    return (order_.size() + batch_size_ - 1) / batch_size_;
}

SubsetBatches::SubsetBatches(const Dataset& ds, std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : subset_(data::subset(ds, n, seed)), it_(subset_, batch_size, seed + 1) {}

}  // namespace blflab::data
