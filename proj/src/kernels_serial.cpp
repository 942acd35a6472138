#include <cstdint>

#include "smog/kernels.hpp"

namespace smog::kernels::serial {

namespace {

// Input value read by output coordinate (oy, ox) through tap (u, v); zero
// padding reads as 0.0.
double tap(std::span<const double> plane, std::size_t oy, std::size_t ox, std::size_t u, std::size_t v,
           const ConvGeometry& g) {
    const auto iy = static_cast<std::int64_t>(oy * g.stride + u) - static_cast<std::int64_t>(g.padding);
    const auto ix = static_cast<std::int64_t>(ox * g.stride + v) - static_cast<std::int64_t>(g.padding);
    if (iy < 0 || iy >= static_cast<std::int64_t>(g.height) || ix < 0 || ix >= static_cast<std::int64_t>(g.width))
        return 0.0;
    return plane[static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)];
}

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
    }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
            c[i * n + j] = s;
        }
    }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
            c[i * n + j] = s;
        }
    }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> kernel,
                    std::span<double> output) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const std::size_t plane = g.height * g.width;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t f = 0; f < g.filters; ++f)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double s = 0.0;
                    for (std::size_t ch = 0; ch < g.in_channels; ++ch) {
                        const auto in = input.subspan((n * g.in_channels + ch) * plane, plane);
                        for (std::size_t u = 0; u < g.kernel_h; ++u)
                            for (std::size_t v = 0; v < g.kernel_w; ++v)
                                s += tap(in, oy, ox, u, v, g) *
                                     kernel[((f * g.in_channels + ch) * g.kernel_h + u) * g.kernel_w + v];
                    }
                    output[((n * g.filters + f) * oh + oy) * ow + ox] = s;
                }
}

// Gather form. Per input pixel, contributing output positions are visited
// in ascending (oy, ox) order; each contribution is first summed over
// filters.
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const auto kh = static_cast<std::int64_t>(g.kernel_h), kw = static_cast<std::int64_t>(g.kernel_w);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t ch = 0; ch < g.in_channels; ++ch)
            for (std::size_t y = 0; y < g.height; ++y)
                for (std::size_t x = 0; x < g.width; ++x) {
                    double s = 0.0;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const auto u = static_cast<std::int64_t>(y + g.padding) - static_cast<std::int64_t>(oy * g.stride);
                        if (u < 0 || u >= kh) continue;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const auto v =
                                static_cast<std::int64_t>(x + g.padding) - static_cast<std::int64_t>(ox * g.stride);
                            if (v < 0 || v >= kw) continue;
                            double t = 0.0;
                            for (std::size_t f = 0; f < g.filters; ++f)
                                t += grad_output[((n * g.filters + f) * oh + oy) * ow + ox] *
                                     kernel[((f * g.in_channels + ch) * g.kernel_h + u) * g.kernel_w + v];
                            s += t;
                        }
                    }
                    grad_input[((n * g.in_channels + ch) * g.height + y) * g.width + x] = s;
                }
}

void conv2d_backward_kernel(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const std::size_t plane = g.height * g.width;
    for (std::size_t f = 0; f < g.filters; ++f)
        for (std::size_t ch = 0; ch < g.in_channels; ++ch)
            for (std::size_t u = 0; u < g.kernel_h; ++u)
                for (std::size_t v = 0; v < g.kernel_w; ++v) {
                    double s = 0.0;
                    for (std::size_t n = 0; n < g.batch; ++n) {
                        const auto in = input.subspan((n * g.in_channels + ch) * plane, plane);
                        for (std::size_t oy = 0; oy < oh; ++oy)
                            for (std::size_t ox = 0; ox < ow; ++ox)
                                s += grad_output[((n * g.filters + f) * oh + oy) * ow + ox] *
                                     tap(in, oy, ox, u, v, g);
                    }
                    grad_kernel[((f * g.in_channels + ch) * g.kernel_h + u) * g.kernel_w + v] = s;
                }
}

}  // namespace smog::kernels::serial
