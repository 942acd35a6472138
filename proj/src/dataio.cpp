#include "smog/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>

#include "smog/rng.hpp"

namespace smog {

namespace {

constexpr double kPi = std::numbers::pi;

// Two-tone palette shared by every class, so colour alone never identifies one.
constexpr double kBackground[3] = {0.20, 0.30, 0.50};
constexpr double kForeground[3] = {0.85, 0.75, 0.30};
constexpr double kClutterPerUnit = 6.0;

double wave(double x) { return 0.5 + 0.5 * std::sin(2.0 * kPi * x); }

// Pattern intensity in [0, 1] at prototype coordinates (x, y) in [-1, 1].
double pattern(std::size_t cls, double x, double y) {
    const double freq = 1.0 + 0.5 * static_cast<double>(cls / 8);
    const double r = std::hypot(x, y), theta = std::atan2(y, x);
    switch (cls % 8) {
        case 0: return wave(3.0 * freq * y);
        case 1: return 0.5 + 0.5 * std::sin(2.0 * kPi * 2.0 * freq * x) * std::sin(2.0 * kPi * 2.0 * freq * y);
        case 2: return wave(3.0 * freq * r);
        case 3: {
            const double cell = 0.5 / freq;
            const double dx = x - cell * std::round(x / cell), dy = y - cell * std::round(y / cell);
            return std::exp(-(dx * dx + dy * dy) / (0.02 / (freq * freq)));
        }
        case 4: return wave(3.0 * freq * (x + y) / std::numbers::sqrt2);
        case 5: return 0.5 + 0.5 * std::cos(6.0 * freq * theta);
        case 6: return 0.5 + 0.5 * std::cos(2.0 * kPi * 2.0 * freq * r + 3.0 * theta);
        default: return std::max(wave(3.0 * freq * x), wave(3.0 * freq * y));
    }
}

// Little-endian byte buffer writer.
class Writer {
public:
    template <typename T>
    void put(T v) {
        static_assert(std::is_integral_v<T>);
        for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
    void put_f32(double v) { put(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void put_raw(const char* s, std::size_t n) { bytes_.insert(bytes_.end(), s, s + n); }
    void put_string(const std::string& s) {
        put(static_cast<std::uint32_t>(s.size()));
        put_raw(s.data(), s.size());
    }
    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    Reader(std::vector<std::uint8_t> bytes, std::string what) : bytes_(std::move(bytes)), what_(std::move(what)) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }
    double get_f32() { return static_cast<double>(std::bit_cast<float>(get<std::uint32_t>())); }
    std::string get_raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::string get_string() { return get_raw(get<std::uint32_t>()); }
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(what_ + ": truncated at byte offset " + std::to_string(pos_) + " (need " +
                              std::to_string(n) + " more bytes, " + std::to_string(bytes_.size() - pos_) + " left)");
        }
    }
    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }
    [[noreturn]] void fail(const std::string& message, std::size_t at) const {
        throw FormatError(what_ + ": " + message + " at byte offset " + std::to_string(at));
    }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void SyntheticSpec::validate() const {
    if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (classes > 65535) throw ConfigError("synthetic data supports at most 65535 classes");
    if (size < 16) throw ConfigError("synthetic image size must be at least 16, got " + std::to_string(size));
    if (channels != 1 && channels != 3) throw ConfigError("synthetic images have 1 or 3 channels");
    if (!(noise >= 0.0)) throw ConfigError("synthetic noise must be non-negative");
}

namespace {

// Per-image variation the augmentations can undo: a global contrast and
// brightness change inside the jitter range, plus local clutter (opaque
// soft discs of random colour). Two random crops of one image share the
// texture but rarely the same clutter. Strength n scales the disc count and
// the photometric ranges.
Tensor apply_nuisance(const Tensor& img, double n, Rng& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double strength = std::min(n, 1.0);
    const double contrast = 1.0 - 0.4 * strength * u01(rng);
    const double brightness = 0.15 * strength * (2.0 * u01(rng) - 1.0);
    const std::size_t channels = img.dim(0), size = img.dim(1), hw = size * size;
    Tensor out = img;
    for (double& v : out.values()) v = (v - 0.5) * contrast + 0.5 + brightness;

    const auto discs = static_cast<std::size_t>(std::lround(kClutterPerUnit * n));
    const double side = static_cast<double>(size);
    for (std::size_t k = 0; k < discs; ++k) {
        const double cx = side * u01(rng), cy = side * u01(rng);
        const double radius = side * (0.06 + 0.10 * u01(rng));
        double colour[3];
        for (double& c : colour) c = u01(rng);
        for (std::size_t py = 0; py < size; ++py)
            for (std::size_t px = 0; px < size; ++px) {
                const double dist = std::hypot(static_cast<double>(px) + 0.5 - cx, static_cast<double>(py) + 0.5 - cy);
                const double cover = std::clamp(radius + 0.5 - dist, 0.0, 1.0);
                if (cover == 0.0) continue;
                for (std::size_t ch = 0; ch < channels; ++ch) {
                    double& v = out[ch * hw + py * size + px];
                    v += cover * ((channels == 3 ? colour[ch] : colour[0]) - v);
                }
            }
    }
    std::normal_distribution<double> gauss(0.0, 0.03 * strength);
    for (double& v : out.values()) v += gauss(rng);
    return out;
}

}  // namespace

GeometricJitter sample_jitter(std::uint64_t seed, std::size_t index) {
    Rng rng(derive_seed(seed, {tag(Stream::data), index, 0}));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    GeometricJitter j;
    j.shift_x = 0.25 * unit(rng);
    j.shift_y = 0.25 * unit(rng);
    j.angle = (15.0 * kPi / 180.0) * unit(rng);
    j.scale = std::exp(0.35 * unit(rng));
    return j;
}

Tensor render_prototype(std::size_t cls, const GeometricJitter& jitter, std::size_t size, std::size_t channels) {
    Tensor out({channels, size, size});
    const double c = std::cos(-jitter.angle), s = std::sin(-jitter.angle);
    const double half = static_cast<double>(size) / 2.0;
    for (std::size_t py = 0; py < size; ++py)
        for (std::size_t px = 0; px < size; ++px) {
            const double u = (static_cast<double>(px) + 0.5) / half - 1.0 - 2.0 * jitter.shift_x;
            const double v = (static_cast<double>(py) + 0.5) / half - 1.0 - 2.0 * jitter.shift_y;
            const double x = (c * u - s * v) / jitter.scale, y = (s * u + c * v) / jitter.scale;
            const double p = pattern(cls, x, y);
            for (std::size_t ch = 0; ch < channels; ++ch) {
                const double bg = channels == 3 ? kBackground[ch] : 0.3;
                const double fg = channels == 3 ? kForeground[ch] : 0.8;
                out[(ch * size + py) * size + px] = bg + (fg - bg) * p;
            }
        }
    return out;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t n = spec.classes * spec.per_class, hw = spec.size * spec.size;
    Dataset ds;
    ds.class_count = spec.classes;
    ds.images = Tensor({n, spec.channels, spec.size, spec.size});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % spec.classes;
        ds.labels[i] = static_cast<std::uint16_t>(cls);
        Tensor img = render_prototype(cls, sample_jitter(spec.seed, i), spec.size, spec.channels);
        if (spec.noise > 0.0) {
            Rng rng(derive_seed(spec.seed, {tag(Stream::data), i, 1}));
            img = apply_nuisance(img, spec.noise, rng);
        }
        for (double& v : img.values()) v = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
        std::copy(img.values().begin(), img.values().end(), ds.images.data() + i * spec.channels * hw);
    }
    return ds;
}

void write_file_atomically(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    const std::size_t n = ds.size();
    if (n > 0 && (ds.images.rank() != 4 || ds.images.dim(0) != n)) {
        throw DimensionError("save_dataset: images " + shape_str(ds.images.shape()) + " vs " + std::to_string(n) +
                             " labels");
    }
    Writer w;
    w.put_raw("SMG1", 4);
    const auto dim = [&](std::size_t axis) -> std::uint32_t {
        return ds.images.rank() == 4 ? static_cast<std::uint32_t>(ds.images.dim(axis)) : 0;
    };
    w.put(static_cast<std::uint32_t>(n));
    w.put(dim(1));
    w.put(dim(2));
    w.put(dim(3));
    w.put(static_cast<std::uint32_t>(ds.class_count));
    for (double v : ds.images.values()) w.put_f32(v);
    for (auto label : ds.labels) w.put(label);
    write_file_atomically(path, w.bytes());
}

Dataset load_dataset(const std::filesystem::path& path) {
    Reader r(read_file(path), "dataset " + path.string());
    if (r.get_raw(4) != "SMG1") r.fail("bad magic (expected SMG1)", 0);
    const std::size_t n = r.get<std::uint32_t>(), c = r.get<std::uint32_t>(), h = r.get<std::uint32_t>(),
                      w = r.get<std::uint32_t>(), classes = r.get<std::uint32_t>();
    const long double expected = static_cast<long double>(n) * c * h * w * 4 + static_cast<long double>(n) * 2;
    if (expected > static_cast<long double>(SIZE_MAX / 2)) r.fail("header describes an impossible size", 4);
    const std::size_t count = n * c * h * w;
    r.need(count * 4 + n * 2);
    Dataset ds;
    ds.class_count = classes;
    ds.images = Tensor({n, c, h, w});
    for (std::size_t i = 0; i < count; ++i) ds.images[i] = r.get_f32();
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = r.offset();
        ds.labels[i] = r.get<std::uint16_t>();
        if (ds.labels[i] >= classes) r.fail("label " + std::to_string(ds.labels[i]) + " out of range", at);
    }
    if (!r.at_end()) r.fail("trailing bytes", r.offset());
    return ds;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.value;
    throw FormatError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has_tensor(const std::string& name) const {
    return std::any_of(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
}

const std::vector<std::uint64_t>& Checkpoint::counter(const std::string& name) const {
    for (const auto& c : counters)
        if (c.name == name) return c.values;
    throw FormatError("checkpoint has no counter '" + name + "'");
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    Writer w;
    w.put_raw("SMCK", 4);
    w.put(ck.version);
    w.put_string(ck.config_text);
    w.put(ck.config_hash);
    w.put(ck.iteration);
    w.put(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
        w.put_string(t.name);
        w.put(static_cast<std::uint32_t>(t.value.rank()));
        for (std::size_t d : t.value.shape()) w.put(static_cast<std::uint32_t>(d));
        for (double v : t.value.values()) w.put_f32(v);
    }
    w.put(static_cast<std::uint32_t>(ck.counters.size()));
    for (const auto& c : ck.counters) {
        w.put_string(c.name);
        w.put(static_cast<std::uint64_t>(c.values.size()));
        for (auto v : c.values) w.put(v);
    }
    write_file_atomically(path, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Reader r(read_file(path), "checkpoint " + path.string());
    if (r.get_raw(4) != "SMCK") r.fail("bad magic (expected SMCK)", 0);
    Checkpoint ck;
    ck.version = r.get<std::uint32_t>();
    if (ck.version != kCheckpointVersion) {
        throw IncompatibleCheckpointError("checkpoint " + path.string() + " has format version " +
                                          std::to_string(ck.version) + ", this build reads version " +
                                          std::to_string(kCheckpointVersion));
    }
    ck.config_text = r.get_string();
    ck.config_hash = r.get<std::uint64_t>();
    ck.iteration = r.get<std::uint64_t>();
    const std::size_t tensor_count = r.get<std::uint32_t>();
    for (std::size_t i = 0; i < tensor_count; ++i) {
        NamedTensor t;
        t.name = r.get_string();
        const std::size_t rank = r.get<std::uint32_t>();
        Shape shape;
        for (std::size_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint32_t>());
        long double expected = 4;
        for (std::size_t d : shape) expected *= static_cast<long double>(d);
        if (expected > static_cast<long double>(SIZE_MAX / 2)) r.fail("tensor '" + t.name + "' has an impossible size", r.offset());
        const std::size_t count = shape_numel(shape);
        r.need(count * 4);
        t.value = Tensor(shape);
        for (std::size_t k = 0; k < count; ++k) t.value[k] = r.get_f32();
        ck.tensors.push_back(std::move(t));
    }
    const std::size_t counter_count = r.get<std::uint32_t>();
    for (std::size_t i = 0; i < counter_count; ++i) {
        NamedCounters c;
        c.name = r.get_string();
        const std::uint64_t len = r.get<std::uint64_t>();
        if (len > SIZE_MAX / 16) r.fail("counter '" + c.name + "' has an impossible length", r.offset());
        r.need(len * 8);
        for (std::uint64_t k = 0; k < len; ++k) c.values.push_back(r.get<std::uint64_t>());
        ck.counters.push_back(std::move(c));
    }
    if (!r.at_end()) r.fail("trailing bytes", r.offset());
    return ck;
}

}  // namespace smog
