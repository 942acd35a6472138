#pragma once

// Synthetic datasets, the single-file dataset format and checkpoints. All
// binary I/O is little-endian regardless of host byte order.
//
// Dataset file ("SMG1"):
//   magic "SMG1" | N C H W C_cls as u32 | N*C*H*W f32 images | N u16 labels
//
// Checkpoint file ("SMCK"):
//   magic "SMCK" | version u32 | config text (u32 length + bytes) |
//   config hash u64 | iteration u64 | tensor count u32 |
//   per tensor: name (u32 length + bytes), rank u32, dims u32..., f32 data |
//   counter count u32 | per counter: name, u64 length, u64 values

#include <cstdint>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

#include "smog/errors.hpp"
#include "smog/tensor.hpp"

namespace smog {

struct Dataset {
    Tensor images;  // N x C x H x W, values in [0, 1] representable as f32
    std::vector<std::uint16_t> labels;
    std::size_t class_count = 0;

    std::size_t size() const { return labels.size(); }
};

// The only view of a dataset that pretraining receives. It holds no labels,
// so label access from the pretraining path does not compile.
class UnlabeledImages {
public:
    explicit UnlabeledImages(const Dataset& dataset) : images_(&dataset.images) {}
    explicit UnlabeledImages(const Tensor& images) : images_(&images) {}

    const Tensor& images() const { return *images_; }
    std::size_t size() const { return images_->rank() ? images_->dim(0) : 0; }

private:
    const Tensor* images_;
};

template <typename T>
concept HasLabels = requires(const T& t) { t.labels; };
static_assert(!HasLabels<UnlabeledImages>);
static_assert(HasLabels<Dataset>);

struct SyntheticSpec {
    std::size_t classes = 4;
    std::size_t per_class = 250;
    std::size_t size = 32;
    std::size_t channels = 3;
    // Scales clutter and photometric variation; 0 leaves geometric jitter as
    // the only within-class variation.
    double noise = 1.5;
    std::uint64_t seed = 0;

    void validate() const;
};

// Placement of one prototype rendering.
struct GeometricJitter {
    double shift_x = 0.0;  // fraction of the image side
    double shift_y = 0.0;
    double angle = 0.0;  // radians
    double scale = 1.0;
};

GeometricJitter sample_jitter(std::uint64_t seed, std::size_t index);
// Class prototype texture rendered at size x size; values in [0, 1].
Tensor render_prototype(std::size_t cls, const GeometricJitter& jitter, std::size_t size, std::size_t channels);

// Balanced; sample i belongs to class i % classes.
Dataset gen_synthetic(const SyntheticSpec& spec);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

class IncompatibleCheckpointError : public FormatError {
public:
    using FormatError::FormatError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct NamedCounters {
    std::string name;
    std::vector<std::uint64_t> values;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string config_text;
    std::uint64_t config_hash = 0;
    std::uint64_t iteration = 0;
    std::vector<NamedTensor> tensors;
    std::vector<NamedCounters> counters;

    const Tensor& tensor(const std::string& name) const;
    const std::vector<std::uint64_t>& counter(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
};

// Written to a sibling temp file and renamed into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Shared by dataset and checkpoint writers.
void write_file_atomically(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace smog
