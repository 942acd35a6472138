#include <algorithm>
#include <cstdint>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "smog/kernels.hpp"

namespace smog::kernels {

using Index = std::int64_t;

namespace {

// Strided views let one tiled routine serve all three matmul layouts:
// element (i, p) of A sits at a[i * ai + p * ap], element (p, j) of B at
// b[p * bp + j * bj].
struct Operands {
    const double* a;
    std::size_t ai, ap;
    const double* b;
    std::size_t bp, bj;
};

constexpr std::size_t kRows = 4;
constexpr std::size_t kCols = 8;

// B repacked into column panels of width kCols, p-major inside a panel, so
// the micro-kernel streams contiguous loads. Panel tails are zero-filled and
// never stored back.
std::vector<double> pack_b(const Operands& o, std::size_t k, std::size_t n) {
    const std::size_t panels = (n + kCols - 1) / kCols;
    std::vector<double> packed(panels * k * kCols, 0.0);
#pragma omp parallel for schedule(static)
    for (Index panel = 0; panel < static_cast<Index>(panels); ++panel) {
        const std::size_t j0 = panel * kCols, nr = std::min(kCols, n - j0);
        double* dst = packed.data() + panel * k * kCols;
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t q = 0; q < nr; ++q) dst[p * kCols + q] = o.b[p * o.bp + (j0 + q) * o.bj];
    }
    return packed;
}

// Four lanes of independent elementwise arithmetic; lowered to whatever
// SIMD width the target offers.
using Lane4 = double __attribute__((vector_size(32)));
constexpr std::size_t kLanes = kCols / 4;

// c[i][j] = sum over p ascending, starting from 0.0; accumulators stay in
// registers across the whole p loop.
template <std::size_t MR>
void tile(const Operands& o, const double* panel, double* c, std::size_t ldc, std::size_t i0, std::size_t j0,
          std::size_t nr, std::size_t k) {
    Lane4 acc[MR][kLanes] = {};
    const double* arow[MR];
    for (std::size_t r = 0; r < MR; ++r) arow[r] = o.a + (i0 + r) * o.ai;
    for (std::size_t p = 0; p < k; ++p) {
        Lane4 bv[kLanes];
        std::memcpy(bv, panel + p * kCols, sizeof bv);
        for (std::size_t r = 0; r < MR; ++r) {
            const double av = arow[r][p * o.ap];
            for (std::size_t q = 0; q < kLanes; ++q) acc[r][q] += av * bv[q];
        }
    }
    for (std::size_t r = 0; r < MR; ++r) {
        double out[kCols];
        std::memcpy(out, acc[r], sizeof out);
        std::copy_n(out, nr, c + (i0 + r) * ldc + j0);
    }
}

void gemm(const Operands& o, double* c, std::size_t m, std::size_t k, std::size_t n) {
    if (m == 0 || n == 0) return;
    const std::vector<double> packed = pack_b(o, k, n);
    const std::size_t panels = (n + kCols - 1) / kCols;
    const Index row_blocks = static_cast<Index>((m + kRows - 1) / kRows);
#pragma omp parallel for schedule(static)
    for (Index blk = 0; blk < row_blocks; ++blk) {
        const std::size_t i0 = static_cast<std::size_t>(blk) * kRows;
        const std::size_t mr = std::min(kRows, m - i0);
        for (std::size_t panel = 0; panel < panels; ++panel) {
            const std::size_t j0 = panel * kCols, nr = std::min(kCols, n - j0);
            const double* pb = packed.data() + panel * k * kCols;
            if (mr == kRows) {
                tile<kRows>(o, pb, c, n, i0, j0, nr, k);
            } else {
                for (std::size_t r = 0; r < mr; ++r) tile<1>(o, pb, c, n, i0 + r, j0, nr, k);
            }
        }
    }
}

// Patch matrix: row (sample, oy, ox), column (channel, ky, kx); padded taps
// hold 0.0 so they enter every reduction as explicit zero terms.
std::vector<double> im2col(const ConvGeometry& g, std::span<const double> input) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const std::size_t cols = g.in_channels * g.kernel_h * g.kernel_w;
    std::vector<double> patches(g.batch * oh * ow * cols);
#pragma omp parallel for schedule(static)
    for (Index row = 0; row < static_cast<Index>(g.batch * oh * ow); ++row) {
        const std::size_t n = row / (oh * ow), oy = (row / ow) % oh, ox = row % ow;
        double* dst = patches.data() + row * cols;
        for (std::size_t ch = 0; ch < g.in_channels; ++ch) {
            const double* plane = input.data() + (n * g.in_channels + ch) * g.height * g.width;
            for (std::size_t u = 0; u < g.kernel_h; ++u) {
                const Index iy = static_cast<Index>(oy * g.stride + u) - static_cast<Index>(g.padding);
                const bool row_ok = iy >= 0 && iy < static_cast<Index>(g.height);
                for (std::size_t v = 0; v < g.kernel_w; ++v) {
                    const Index ix = static_cast<Index>(ox * g.stride + v) - static_cast<Index>(g.padding);
                    *dst++ = (row_ok && ix >= 0 && ix < static_cast<Index>(g.width)) ? plane[iy * g.width + ix]
                                                                                      : 0.0;
                }
            }
        }
    }
    return patches;
}

// NFP -> (NP)F, the row layout shared with the patch matrix.
std::vector<double> output_rows(const ConvGeometry& g, std::span<const double> grad_output) {
    const std::size_t plane = g.out_h() * g.out_w();
    std::vector<double> rows(g.batch * plane * g.filters);
#pragma omp parallel for schedule(static)
    for (Index n = 0; n < static_cast<Index>(g.batch); ++n)
        for (std::size_t f = 0; f < g.filters; ++f)
            for (std::size_t pos = 0; pos < plane; ++pos)
                rows[(n * plane + pos) * g.filters + f] = grad_output[(n * g.filters + f) * plane + pos];
    return rows;
}

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
    gemm({a.data(), k, 1, b.data(), n, 1}, c.data(), m, k, n);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
    gemm({a.data(), k, 1, b.data(), 1, k}, c.data(), m, k, n);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
    gemm({a.data(), 1, m, b.data(), n, 1}, c.data(), m, k, n);
}

// Patches times the transposed kernel; per output element the reduction
// runs over (channel, ky, kx) ascending.
void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> kernel,
                    std::span<double> output) {
    const std::size_t plane = g.out_h() * g.out_w(), rows = g.batch * plane;
    const std::size_t cols = g.in_channels * g.kernel_h * g.kernel_w;
    const std::vector<double> patches = im2col(g, input);
    std::vector<double> out_rows(rows * g.filters);
    gemm({patches.data(), cols, 1, kernel.data(), 1, cols}, out_rows.data(), rows, cols, g.filters);
#pragma omp parallel for schedule(static)
    for (Index n = 0; n < static_cast<Index>(g.batch); ++n)
        for (std::size_t f = 0; f < g.filters; ++f)
            for (std::size_t pos = 0; pos < plane; ++pos)
                output[(n * g.filters + f) * plane + pos] = out_rows[(n * plane + pos) * g.filters + f];
}

// Patch-space gradient (summed over filters), then a scatter back onto the
// image. Each (sample, channel) plane is owned by one thread and receives
// contributions in ascending (oy, ox) order.
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow;
    const std::size_t kplane = g.kernel_h * g.kernel_w, cols = g.in_channels * kplane;
    const std::vector<double> gout = output_rows(g, grad_output);
    std::vector<double> gpatch(g.batch * plane * cols);
    gemm({gout.data(), g.filters, 1, kernel.data(), cols, 1}, gpatch.data(), g.batch * plane, g.filters, cols);
    const Index jobs = static_cast<Index>(g.batch * g.in_channels);
#pragma omp parallel for schedule(static)
    for (Index job = 0; job < jobs; ++job) {
        const std::size_t n = job / g.in_channels, ch = job % g.in_channels;
        double* gin = grad_input.data() + job * g.height * g.width;
        std::fill(gin, gin + g.height * g.width, 0.0);
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double* src = gpatch.data() + ((n * plane) + oy * ow + ox) * cols + ch * kplane;
                for (std::size_t u = 0; u < g.kernel_h; ++u) {
                    const Index iy = static_cast<Index>(oy * g.stride + u) - static_cast<Index>(g.padding);
                    if (iy < 0 || iy >= static_cast<Index>(g.height)) continue;
                    for (std::size_t v = 0; v < g.kernel_w; ++v) {
                        const Index ix = static_cast<Index>(ox * g.stride + v) - static_cast<Index>(g.padding);
                        if (ix < 0 || ix >= static_cast<Index>(g.width)) continue;
                        gin[iy * g.width + ix] += src[u * g.kernel_w + v];
                    }
                }
            }
    }
}

// Transposed output gradient times patches; per weight the reduction runs
// over (sample, oy, ox) ascending.
void conv2d_backward_kernel(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel) {
    const std::size_t rows = g.batch * g.out_h() * g.out_w();
    const std::size_t cols = g.in_channels * g.kernel_h * g.kernel_w;
    const std::vector<double> patches = im2col(g, input);
    const std::vector<double> gout = output_rows(g, grad_output);
    gemm({gout.data(), 1, g.filters, patches.data(), cols, 1}, grad_kernel.data(), g.filters, rows, cols);
}

void set_thread_count(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace smog::kernels
