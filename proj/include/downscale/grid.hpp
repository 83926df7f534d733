#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "downscale/errors.hpp"

namespace downscale {

/// Dense row-major tensor of 32-bit floats. Canonical layout is 4-D
/// batch x channel x height x width; rank-1/2/3 tensors are used for single
/// fields, token matrices and parameters. The last two dimensions are always
/// the spatial (or row/column) axes for the grid kernels below.
class GridTensor {
public:
    GridTensor() = default;

    explicit GridTensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<std::size_t>(check_shape(shape_)), 0.0f);
    }

    GridTensor(std::vector<int> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (check_shape(shape_) != static_cast<std::int64_t>(data_.size()))
            throw ShapeError("element count does not match shape");
    }

    static GridTensor zeros(std::vector<int> shape) { return GridTensor(std::move(shape)); }

    static GridTensor full(std::vector<int> shape, float v) {
        GridTensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    /// Height/width = trailing two dims; everything before them is "planes".
    int height() const { return rank() >= 2 ? dim(rank() - 2) : 1; }
    int width() const { return rank() >= 1 ? dim(rank() - 1) : 1; }
    std::int64_t planes() const {
        std::int64_t p = 1;
        for (int i = 0; i + 2 < rank(); ++i) p *= dim(i);
        return rank() >= 2 ? p : 1;
    }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    /// 4-D accessor (batch, channel, row, col).
    float& at(int b, int c, int y, int x) {
        return data_[idx4(b, c, y, x)];
    }
    float at(int b, int c, int y, int x) const { return data_[idx4(b, c, y, x)]; }

    /// 2-D accessor (row, col) for token matrices and single fields.
    float& at(int r, int c) { return data_[static_cast<std::size_t>(r) * width() + c]; }
    float at(int r, int c) const { return data_[static_cast<std::size_t>(r) * width() + c]; }

    bool same_shape(const GridTensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const;

    /// Reshape without copying; element count must be preserved.
    GridTensor reshaped(std::vector<int> shape) const {
        GridTensor t;
        if (check_shape(shape) != numel())
            throw ShapeError("reshape changes element count");
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    std::string shape_str() const;

private:
    std::size_t idx4(int b, int c, int y, int x) const {
        const int C = dim(1), H = dim(2), W = dim(3);
        return ((static_cast<std::size_t>(b) * C + c) * H + y) * W + x;
    }

    static std::int64_t check_shape(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 1) throw ShapeError("dimension sizes must be >= 1");
            n *= d;
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<float> data_;
};

/// Complex-valued grid stored as separate real/imaginary float planes,
/// same shape conventions as GridTensor.
struct ComplexGrid {
    std::vector<int> shape;
    std::vector<float> re;
    std::vector<float> im;

    ComplexGrid() = default;
    explicit ComplexGrid(std::vector<int> s);

    std::int64_t numel() const { return static_cast<std::int64_t>(re.size()); }
    int height() const { return shape.size() >= 2 ? shape[shape.size() - 2] : 1; }
    int width() const { return shape.empty() ? 1 : shape.back(); }
    std::int64_t planes() const {
        std::int64_t p = 1;
        for (std::size_t i = 0; i + 2 < shape.size(); ++i) p *= shape[i];
        return shape.size() >= 2 ? p : 1;
    }
};

/// Per-variable normalization statistics in physical units.
struct NormStats {
    double mean = 0.0;
    double std = 1.0;
    std::int64_t n_cells = 0;

    void validate() const {
        if (!(std > 0.0)) throw StatsError("std must be > 0");
    }
};

// --- grid kernels -----------------------------------------------------------

/// Block mean pooling by factor k over the trailing two axes. Both spatial
/// dims must be divisible by k. Block sums accumulate in float64.
GridTensor avg_pool(const GridTensor& t, int k);

/// Separable cubic-convolution upsampling (Keys kernel, a = -0.5) by an
/// integer factor >= 2 over the trailing two axes. Sample coordinates follow
/// the align-corners=false convention: HR cell centers at (i + 0.5)/factor -
/// 0.5 in LR index space, out-of-range taps clamped to the border. Requires
/// H, W >= 4.
GridTensor bicubic_upsample(const GridTensor& t, int factor);

/// Unnormalized forward 2-D DFT of each plane (radix-2; H and W must be
/// powers of two).
ComplexGrid fft2(const GridTensor& t);

/// Inverse 2-D DFT including the 1/(H*W) factor; returns the real part.
GridTensor ifft2(const ComplexGrid& c);

/// (x - mean) / std elementwise.
GridTensor normalize(const GridTensor& t, const NormStats& s);

/// x * std + mean elementwise; exact inverse of normalize.
GridTensor denormalize(const GridTensor& t, const NormStats& s);

// --- small helpers shared across modules ------------------------------------

bool is_power_of_two(int n);

/// Mean of all elements, accumulated in float64.
double grid_mean(const GridTensor& t);

/// FNV-1a 64-bit over a byte buffer; used for provenance hashes.
std::uint64_t fnv1a64(const void* data, std::size_t n);
std::string fnv1a64_hex(const void* data, std::size_t n);

} // namespace downscale
