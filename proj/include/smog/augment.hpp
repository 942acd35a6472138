#pragma once

// Multi-crop augmentation with two photometric schemes that swap between the
// Siamese streams every iteration. Images are C x H x W tensors in [0, 1].

#include <cstdint>
#include <span>
#include <vector>

#include "smog/rng.hpp"
#include "smog/tensor.hpp"

namespace smog {

struct ColorJitter {
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.2;
    double p = 0.8;
};

// Photometric part of a view's pipeline.
struct AugScheme {
    double flip_p = 0.5;
    ColorJitter jitter;
    double blur_p = 0.0;
    // Blur sigma in output pixels, sampled uniformly.
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 1.5;
    double solarize_p = 0.0;
    double solarize_threshold = 0.5;

    void validate() const;
};

AugScheme scheme_a();  // strong blur, no solarization
AugScheme scheme_b();  // weak blur, some solarization

struct CropRange {
    double min_scale;
    double max_scale;
};

struct AugmentConfig {
    std::size_t large_size = 32;
    std::size_t small_size = 12;
    std::size_t small_views = 4;
    CropRange large_scale{0.2, 1.0};
    CropRange small_scale{0.05, 0.2};
    // Aspect ratio bounds for crops (w / h).
    double min_ratio = 3.0 / 4.0;
    double max_ratio = 4.0 / 3.0;
    AugScheme a = scheme_a();
    AugScheme b = scheme_b();

    void validate() const;
};

// Sub-pixel crop box in source pixel units.
struct CropBox {
    double x0, y0, width, height;
};

struct ViewBatch {
    std::vector<Tensor> large;  // 2 views, C x large_size x large_size
    std::vector<Tensor> small;  // small_views views, C x small_size x small_size
    std::vector<CropBox> large_boxes;
    std::vector<CropBox> small_boxes;
    // Scheme that large stream 0 received: 0 for A, 1 for B. Stream 1 got
    // the other; small view j follows stream j % 2.
    int scheme_parity = 0;
};

// 0 when stream 0 gets scheme A at this iteration.
int scheme_parity(std::uint64_t iteration);

// Area fraction drawn from `range` and log-uniform aspect ratio; falls back
// to a clamped ratio after ten misses so the area always stays in range.
CropBox sample_crop(std::size_t height, std::size_t width, CropRange range, double min_ratio, double max_ratio,
                    Rng& rng);
// Bilinear resample of `box` to size x size with edge clamping.
Tensor resized_crop(const Tensor& image, const CropBox& box, std::size_t size);

Tensor hflip(const Tensor& view);
// Normalized 1-D Gaussian taps, radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);
// Separable blur with replicated borders.
Tensor gaussian_blur(const Tensor& view, double sigma);
Tensor solarize(const Tensor& view, double threshold = 0.5);
// Channel-wise affine jitter with factors drawn from [1 - s, 1 + s].
Tensor color_jitter(const Tensor& view, const ColorJitter& jitter, Rng& rng);

// flip -> jitter -> blur -> solarize, clamped to [0, 1] after each stage.
Tensor apply_scheme(const Tensor& view, const AugScheme& scheme, Rng& rng);

// Pure function of (image, seed, iteration, sample index).
ViewBatch make_views(const Tensor& image, std::uint64_t iteration, std::uint64_t sample_index, std::uint64_t seed,
                     const AugmentConfig& config);

// Batched views, N x C x S x S per stream, stacked in `sample_ids` order.
struct BatchViews {
    std::vector<Tensor> large;
    std::vector<Tensor> small;
};

// `images` is the full N_total x C x H x W dataset; `sample_ids` picks the
// batch. Samples are augmented in parallel.
BatchViews make_batch_views(const Tensor& images, std::span<const std::size_t> sample_ids, std::uint64_t iteration,
                            std::uint64_t seed, const AugmentConfig& config);

}  // namespace smog
