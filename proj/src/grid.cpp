#include "downscale/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace downscale {

bool GridTensor::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string GridTensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (int i = 0; i < rank(); ++i) os << (i ? "," : "") << dim(i);
    os << ")";
    return os.str();
}

ComplexGrid::ComplexGrid(std::vector<int> s) : shape(std::move(s)) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 1) throw ShapeError("dimension sizes must be >= 1");
        n *= d;
    }
    re.assign(static_cast<std::size_t>(n), 0.0f);
    im.assign(static_cast<std::size_t>(n), 0.0f);
}

bool is_power_of_two(int n) { return n >= 1 && (n & (n - 1)) == 0; }

double grid_mean(const GridTensor& t) {
    double s = 0.0;
    for (std::int64_t i = 0; i < t.numel(); ++i) s += t[i];
    return s / static_cast<double>(t.numel());
}

std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fnv1a64_hex(const void* data, std::size_t n) {
    static const char* digits = "0123456789abcdef";
    std::uint64_t h = fnv1a64(data, n);
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

// --- pooling -----------------------------------------------------------------

GridTensor avg_pool(const GridTensor& t, int k) {
    if (k < 1) throw ShapeError("pooling factor must be >= 1");
    if (t.rank() < 2) throw ShapeError("avg_pool needs at least 2 dims, got " + t.shape_str());
    const int H = t.height(), W = t.width();
    if (H % k != 0) throw ShapeError("height " + std::to_string(H) + " not divisible by pooling factor " + std::to_string(k));
    if (W % k != 0) throw ShapeError("width " + std::to_string(W) + " not divisible by pooling factor " + std::to_string(k));

    std::vector<int> out_shape = t.shape();
    out_shape[out_shape.size() - 2] = H / k;
    out_shape[out_shape.size() - 1] = W / k;
    GridTensor out(out_shape);

    const int Ho = H / k, Wo = W / k;
    const double inv = 1.0 / (static_cast<double>(k) * k);
    const std::int64_t plane_in = static_cast<std::int64_t>(H) * W;
    const std::int64_t plane_out = static_cast<std::int64_t>(Ho) * Wo;
    for (std::int64_t p = 0; p < t.planes(); ++p) {
        const float* src = t.data() + p * plane_in;
        float* dst = out.data() + p * plane_out;
        for (int yo = 0; yo < Ho; ++yo) {
            for (int xo = 0; xo < Wo; ++xo) {
                double s = 0.0;
                for (int dy = 0; dy < k; ++dy) {
                    const float* row = src + static_cast<std::int64_t>(yo * k + dy) * W + xo * k;
                    for (int dx = 0; dx < k; ++dx) s += row[dx];
                }
                dst[static_cast<std::int64_t>(yo) * Wo + xo] = static_cast<float>(s * inv);
            }
        }
    }
    return out;
}

// --- bicubic -----------------------------------------------------------------

namespace {

// Keys cubic convolution kernel, a = -0.5.
double keys_weight(double s) {
    s = std::fabs(s);
    constexpr double a = -0.5;
    if (s <= 1.0) return ((a + 2.0) * s - (a + 3.0)) * s * s + 1.0;
    if (s < 2.0) return a * (((s - 5.0) * s + 8.0) * s - 4.0);
    return 0.0;
}

struct TapTable {
    std::vector<int> idx;     // 4 clamped source indices per output coordinate
    std::vector<double> w;    // 4 kernel weights per output coordinate
};

TapTable make_taps(int n_in, int n_out, int factor) {
    TapTable t;
    t.idx.resize(static_cast<std::size_t>(n_out) * 4);
    t.w.resize(static_cast<std::size_t>(n_out) * 4);
    for (int o = 0; o < n_out; ++o) {
        const double src = (o + 0.5) / factor - 0.5;
        const int base = static_cast<int>(std::floor(src));
        for (int j = 0; j < 4; ++j) {
            const int raw = base - 1 + j;
            t.idx[static_cast<std::size_t>(o) * 4 + j] = std::clamp(raw, 0, n_in - 1);
            t.w[static_cast<std::size_t>(o) * 4 + j] = keys_weight(src - raw);
        }
    }
    return t;
}

} // namespace

GridTensor bicubic_upsample(const GridTensor& t, int factor) {
    if (factor < 2) throw ShapeError("upsample factor must be >= 2");
    if (t.rank() < 2) throw ShapeError("bicubic_upsample needs at least 2 dims, got " + t.shape_str());
    const int H = t.height(), W = t.width();
    if (H < 4) throw ShapeError("height " + std::to_string(H) + " too small for bicubic (need >= 4)");
    if (W < 4) throw ShapeError("width " + std::to_string(W) + " too small for bicubic (need >= 4)");

    const int Ho = H * factor, Wo = W * factor;
    std::vector<int> out_shape = t.shape();
    out_shape[out_shape.size() - 2] = Ho;
    out_shape[out_shape.size() - 1] = Wo;
    GridTensor out(out_shape);

    const TapTable ty = make_taps(H, Ho, factor);
    const TapTable tx = make_taps(W, Wo, factor);

    const std::int64_t plane_in = static_cast<std::int64_t>(H) * W;
    const std::int64_t plane_out = static_cast<std::int64_t>(Ho) * Wo;
    std::vector<double> rowbuf(static_cast<std::size_t>(Wo));
    for (std::int64_t p = 0; p < t.planes(); ++p) {
        const float* src = t.data() + p * plane_in;
        float* dst = out.data() + p * plane_out;
        for (int yo = 0; yo < Ho; ++yo) {
            const int* yi = &ty.idx[static_cast<std::size_t>(yo) * 4];
            const double* wy = &ty.w[static_cast<std::size_t>(yo) * 4];
            // horizontal pass for the 4 contributing rows, fused vertically
            for (int xo = 0; xo < Wo; ++xo) rowbuf[static_cast<std::size_t>(xo)] = 0.0;
            for (int j = 0; j < 4; ++j) {
                const float* row = src + static_cast<std::int64_t>(yi[j]) * W;
                const double wj = wy[j];
                for (int xo = 0; xo < Wo; ++xo) {
                    const int* xi = &tx.idx[static_cast<std::size_t>(xo) * 4];
                    const double* wx = &tx.w[static_cast<std::size_t>(xo) * 4];
                    rowbuf[static_cast<std::size_t>(xo)] +=
                        wj * (wx[0] * row[xi[0]] + wx[1] * row[xi[1]] + wx[2] * row[xi[2]] + wx[3] * row[xi[3]]);
                }
            }
            for (int xo = 0; xo < Wo; ++xo)
                dst[static_cast<std::int64_t>(yo) * Wo + xo] = static_cast<float>(rowbuf[static_cast<std::size_t>(xo)]);
        }
    }
    return out;
}

// --- FFT ----------------------------------------------------------------------

namespace {

// Iterative radix-2 DIT over strided complex data. The whole transform runs
// in float64 work buffers and quantizes once on write-back.
void fft_strided(float* re, float* im, int n, std::int64_t stride, bool inverse) {
    if (n == 1) return;
    thread_local std::vector<double> wr_buf, wi_buf;
    wr_buf.resize(static_cast<std::size_t>(n));
    wi_buf.resize(static_cast<std::size_t>(n));
    double* br = wr_buf.data();
    double* bi = wi_buf.data();
    // gather with bit reversal
    for (int i = 0, j = 0; i < n; ++i) {
        br[j] = re[i * stride];
        bi[j] = im[i * stride];
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
    }
    const double sign = inverse ? 1.0 : -1.0;
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * M_PI / len;
        const double wr0 = std::cos(ang), wi0 = std::sin(ang);
        for (int i = 0; i < n; i += len) {
            double wr = 1.0, wi = 0.0;
            for (int j = 0; j < len / 2; ++j) {
                const double tr = wr * br[i + j + len / 2] - wi * bi[i + j + len / 2];
                const double ti = wr * bi[i + j + len / 2] + wi * br[i + j + len / 2];
                const double ar = br[i + j], ai = bi[i + j];
                br[i + j] = ar + tr;
                bi[i + j] = ai + ti;
                br[i + j + len / 2] = ar - tr;
                bi[i + j + len / 2] = ai - ti;
                const double nwr = wr * wr0 - wi * wi0;
                wi = wr * wi0 + wi * wr0;
                wr = nwr;
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        re[i * stride] = static_cast<float>(br[i]);
        im[i * stride] = static_cast<float>(bi[i]);
    }
}

void check_fft_shape(int H, int W) {
    if (!is_power_of_two(H))
        throw ShapeError("height " + std::to_string(H) + " is not a power of two (radix-2 FFT)");
    if (!is_power_of_two(W))
        throw ShapeError("width " + std::to_string(W) + " is not a power of two (radix-2 FFT)");
}

void fft2_planes(std::vector<int> const& shape, std::int64_t planes, int H, int W,
                 float* re, float* im, bool inverse) {
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    for (std::int64_t p = 0; p < planes; ++p) {
        float* pr = re + p * plane;
        float* pi = im + p * plane;
        for (int y = 0; y < H; ++y)
            fft_strided(pr + static_cast<std::int64_t>(y) * W, pi + static_cast<std::int64_t>(y) * W, W, 1, inverse);
        for (int x = 0; x < W; ++x)
            fft_strided(pr + x, pi + x, H, W, inverse);
    }
    (void)shape;
}

} // namespace

ComplexGrid fft2(const GridTensor& t) {
    if (t.rank() < 2) throw ShapeError("fft2 needs at least 2 dims, got " + t.shape_str());
    const int H = t.height(), W = t.width();
    check_fft_shape(H, W);
    ComplexGrid c(t.shape());
    std::copy(t.data(), t.data() + t.numel(), c.re.begin());
    fft2_planes(c.shape, c.planes(), H, W, c.re.data(), c.im.data(), false);
    return c;
}

GridTensor ifft2(const ComplexGrid& c) {
    if (c.shape.size() < 2) throw ShapeError("ifft2 needs at least 2 dims");
    const int H = c.height(), W = c.width();
    check_fft_shape(H, W);
    ComplexGrid w = c;
    fft2_planes(w.shape, w.planes(), H, W, w.re.data(), w.im.data(), true);
    GridTensor out(c.shape);
    const float scale = 1.0f / (static_cast<float>(H) * static_cast<float>(W));
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = w.re[static_cast<std::size_t>(i)] * scale;
    return out;
}

// --- normalization -------------------------------------------------------------

GridTensor normalize(const GridTensor& t, const NormStats& s) {
    s.validate();
    GridTensor out = t;
    const float mean = static_cast<float>(s.mean);
    const float inv = static_cast<float>(1.0 / s.std);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - mean) * inv;
    return out;
}

GridTensor denormalize(const GridTensor& t, const NormStats& s) {
    s.validate();
    GridTensor out = t;
    const float mean = static_cast<float>(s.mean);
    const float sd = static_cast<float>(s.std);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] * sd + mean;
    return out;
}

} // namespace downscale
