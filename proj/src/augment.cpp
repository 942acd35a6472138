#include "smog/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "smog/errors.hpp"

namespace smog {

namespace {

void check_probability(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment: ") + name + " must be in [0, 1]");
}

void check_range(CropRange r, const char* name) {
    if (!(r.min_scale > 0.0 && r.min_scale <= r.max_scale && r.max_scale <= 1.0)) {
        throw ConfigError(std::string("augment: ") + name + " scale range must satisfy 0 < min <= max <= 1");
    }
}

void clamp01(Tensor& t) {
    for (double& v : t.values()) v = std::clamp(v, 0.0, 1.0);
}

std::size_t plane_size(const Tensor& t) { return t.dim(1) * t.dim(2); }

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

bool coin(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

// Luma weights for saturation and contrast references.
double gray_at(const Tensor& t, std::size_t pixel) {
    if (t.dim(0) != 3) return t[pixel];
    const std::size_t hw = plane_size(t);
    return 0.299 * t[pixel] + 0.587 * t[hw + pixel] + 0.114 * t[2 * hw + pixel];
}

}  // namespace

void AugScheme::validate() const {
    check_probability(flip_p, "flip_p");
    check_probability(jitter.p, "jitter p");
    check_probability(blur_p, "blur_p");
    check_probability(solarize_p, "solarize_p");
    if (jitter.brightness < 0.0 || jitter.contrast < 0.0 || jitter.saturation < 0.0 || jitter.brightness > 1.0 ||
        jitter.contrast > 1.0 || jitter.saturation > 1.0) {
        throw ConfigError("augment: jitter strengths must be in [0, 1]");
    }
    if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) {
        throw ConfigError("augment: blur sigma range must satisfy 0 < min <= max");
    }
}

AugScheme scheme_a() {
    AugScheme s;
    s.blur_p = 1.0;
    s.solarize_p = 0.0;
    return s;
}

AugScheme scheme_b() {
    AugScheme s;
    s.blur_p = 0.1;
    s.solarize_p = 0.2;
    return s;
}

void AugmentConfig::validate() const {
    if (large_size == 0 || small_size == 0) throw ConfigError("augment: crop sizes must be positive");
    check_range(large_scale, "large");
    check_range(small_scale, "small");
    if (!(min_ratio > 0.0 && min_ratio <= max_ratio)) throw ConfigError("augment: bad aspect ratio range");
    a.validate();
    b.validate();
}

int scheme_parity(std::uint64_t iteration) { return static_cast<int>(iteration % 2); }

CropBox sample_crop(std::size_t height, std::size_t width, CropRange range, double min_ratio, double max_ratio,
                    Rng& rng) {
    const double h = static_cast<double>(height), w = static_cast<double>(width);
    const double area = h * w;
    const double log_lo = std::log(min_ratio), log_hi = std::log(max_ratio);
    double target = 0.0;
    for (int attempt = 0; attempt < 10; ++attempt) {
        target = area * uniform(rng, range.min_scale, range.max_scale);
        const double ratio = std::exp(uniform(rng, log_lo, log_hi));
        const double cw = std::sqrt(target * ratio), ch = std::sqrt(target / ratio);
        if (cw <= w && ch <= h) return {uniform(rng, 0.0, w - cw), uniform(rng, 0.0, h - ch), cw, ch};
    }
    const double ratio = std::clamp(w / h, min_ratio, max_ratio);
    double cw = std::sqrt(target * ratio), ch = std::sqrt(target / ratio);
    if (cw > w) cw = w, ch = target / w;
    if (ch > h) ch = h, cw = target / h;
    return {uniform(rng, 0.0, w - cw), uniform(rng, 0.0, h - ch), cw, ch};
}

Tensor resized_crop(const Tensor& image, const CropBox& box, std::size_t size) {
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out({c, size, size});
    const double sx = box.width / static_cast<double>(size), sy = box.height / static_cast<double>(size);
    const double max_x = static_cast<double>(w - 1), max_y = static_cast<double>(h - 1);
    for (std::size_t v = 0; v < size; ++v) {
        const double y = std::clamp(box.y0 + (static_cast<double>(v) + 0.5) * sy - 0.5, 0.0, max_y);
        const std::size_t y0 = static_cast<std::size_t>(y), y1 = std::min(y0 + 1, h - 1);
        const double fy = y - static_cast<double>(y0);
        for (std::size_t u = 0; u < size; ++u) {
            const double x = std::clamp(box.x0 + (static_cast<double>(u) + 0.5) * sx - 0.5, 0.0, max_x);
            const std::size_t x0 = static_cast<std::size_t>(x), x1 = std::min(x0 + 1, w - 1);
            const double fx = x - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double* p = image.data() + ch * h * w;
                const double top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                const double bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out[(ch * size + v) * size + u] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    return out;
}

Tensor hflip(const Tensor& view) {
    const std::size_t c = view.dim(0), h = view.dim(1), w = view.dim(2);
    Tensor out(view.shape());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = view[(ch * h + y) * w + (w - 1 - x)];
    return out;
}

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> taps(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        taps[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        total += taps[i + radius];
    }
    for (double& t : taps) t /= total;
    return taps;
}

Tensor gaussian_blur(const Tensor& view, double sigma) {
    const auto taps = gaussian_kernel(sigma);
    const long radius = static_cast<long>(taps.size() / 2);
    const long c = static_cast<long>(view.dim(0)), h = static_cast<long>(view.dim(1)), w = static_cast<long>(view.dim(2));
    Tensor tmp(view.shape()), out(view.shape());
    for (long ch = 0; ch < c; ++ch)
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                double s = 0.0;
                for (long k = -radius; k <= radius; ++k)
                    s += taps[k + radius] * view[(ch * h + y) * w + std::clamp(x + k, 0L, w - 1)];
                tmp[(ch * h + y) * w + x] = s;
            }
    for (long ch = 0; ch < c; ++ch)
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                double s = 0.0;
                for (long k = -radius; k <= radius; ++k)
                    s += taps[k + radius] * tmp[(ch * h + std::clamp(y + k, 0L, h - 1)) * w + x];
                out[(ch * h + y) * w + x] = s;
            }
    return out;
}

Tensor solarize(const Tensor& view, double threshold) {
    Tensor out = view;
    for (double& v : out.values())
        if (v > threshold) v = 1.0 - v;
    return out;
}

Tensor color_jitter(const Tensor& view, const ColorJitter& jitter, Rng& rng) {
    const double b = uniform(rng, 1.0 - jitter.brightness, 1.0 + jitter.brightness);
    const double k = uniform(rng, 1.0 - jitter.contrast, 1.0 + jitter.contrast);
    const double s = uniform(rng, 1.0 - jitter.saturation, 1.0 + jitter.saturation);
    const std::size_t c = view.dim(0), hw = plane_size(view);

    Tensor out = view;
    for (double& v : out.values()) v *= b;
    clamp01(out);

    double mean_gray = 0.0;
    for (std::size_t p = 0; p < hw; ++p) mean_gray += gray_at(out, p);
    mean_gray /= static_cast<double>(hw);
    for (double& v : out.values()) v = (v - mean_gray) * k + mean_gray;
    clamp01(out);

    if (c == 3) {
        for (std::size_t p = 0; p < hw; ++p) {
            const double g = gray_at(out, p);
            for (std::size_t ch = 0; ch < c; ++ch) out[ch * hw + p] = (out[ch * hw + p] - g) * s + g;
        }
        clamp01(out);
    }
    return out;
}

Tensor apply_scheme(const Tensor& view, const AugScheme& scheme, Rng& rng) {
    // Every draw happens regardless of outcome so the stream layout is fixed.
    const bool flip = coin(rng, scheme.flip_p);
    const bool jitter = coin(rng, scheme.jitter.p);
    Rng jitter_rng(rng());
    const bool blur = coin(rng, scheme.blur_p);
    const double sigma = uniform(rng, scheme.blur_sigma_min, scheme.blur_sigma_max);
    const bool solar = coin(rng, scheme.solarize_p);

    Tensor out = flip ? hflip(view) : view;
    clamp01(out);
    if (jitter) out = color_jitter(out, scheme.jitter, jitter_rng);
    if (blur) {
        out = gaussian_blur(out, sigma);
        clamp01(out);
    }
    if (solar) out = solarize(out, scheme.solarize_threshold);
    clamp01(out);
    return out;
}

ViewBatch make_views(const Tensor& image, std::uint64_t iteration, std::uint64_t sample_index, std::uint64_t seed,
                     const AugmentConfig& config) {
    if (image.rank() != 3) throw DimensionError("make_views: expected C x H x W, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (h < config.small_size || w < config.small_size) {
        throw DimensionError("make_views: image " + shape_str(image.shape()) + " smaller than small crop size " +
                             std::to_string(config.small_size));
    }
    Rng rng(derive_seed(seed, {tag(Stream::augment), iteration, sample_index}));
    ViewBatch out;
    out.scheme_parity = scheme_parity(iteration);
    auto scheme_for_stream = [&](std::size_t stream) -> const AugScheme& {
        return (static_cast<int>(stream % 2) ^ out.scheme_parity) == 0 ? config.a : config.b;
    };
    for (std::size_t v = 0; v < 2; ++v) {
        const auto box = sample_crop(h, w, config.large_scale, config.min_ratio, config.max_ratio, rng);
        out.large_boxes.push_back(box);
        out.large.push_back(apply_scheme(resized_crop(image, box, config.large_size), scheme_for_stream(v), rng));
    }
    for (std::size_t v = 0; v < config.small_views; ++v) {
        const auto box = sample_crop(h, w, config.small_scale, config.min_ratio, config.max_ratio, rng);
        out.small_boxes.push_back(box);
        out.small.push_back(apply_scheme(resized_crop(image, box, config.small_size), scheme_for_stream(v), rng));
    }
    return out;
}

BatchViews make_batch_views(const Tensor& images, std::span<const std::size_t> sample_ids, std::uint64_t iteration,
                            std::uint64_t seed, const AugmentConfig& config) {
    if (images.rank() != 4) throw DimensionError("make_batch_views: expected N x C x H x W");
    const std::size_t n = sample_ids.size(), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t image_size = c * h * w;
    const std::size_t large_size = c * config.large_size * config.large_size;
    const std::size_t small_size = c * config.small_size * config.small_size;

    BatchViews out;
    for (int v = 0; v < 2; ++v) out.large.emplace_back(Shape{n, c, config.large_size, config.large_size});
    for (std::size_t v = 0; v < config.small_views; ++v)
        out.small.emplace_back(Shape{n, c, config.small_size, config.small_size});

    for (std::size_t id : sample_ids)
        if (id >= images.dim(0)) throw Error("make_batch_views: sample " + std::to_string(id) + " out of range");
    if (h < config.small_size || w < config.small_size) {
        throw DimensionError("make_batch_views: images " + shape_str(images.shape()) + " smaller than small crop size " +
                             std::to_string(config.small_size));
    }

    // Each sample writes only its own slots, so scheduling cannot change the output.
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        Tensor image(Shape{c, h, w});
        std::copy_n(images.data() + sample_ids[i] * image_size, image_size, image.data());
        const auto views = make_views(image, iteration, sample_ids[i], seed, config);
        for (std::size_t v = 0; v < 2; ++v)
            std::copy_n(views.large[v].data(), large_size, out.large[v].data() + i * large_size);
        for (std::size_t v = 0; v < config.small_views; ++v)
            std::copy_n(views.small[v].data(), small_size, out.small[v].data() + i * small_size);
    }
    return out;
}

}  // namespace smog
