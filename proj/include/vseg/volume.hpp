#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace vseg {

// Axis order is (W, H, D) with W fastest in memory: index = (z*H + y)*W + x.

struct Volume {
    std::array<int, 3> dims{0, 0, 0};           // (W, H, D)
    std::array<float, 3> spacing{1.f, 1.f, 1.f};  // mm per voxel
    std::vector<float> data;

    Volume() = default;
    Volume(int w, int h, int d, float value = 0.f)
        : dims{w, h, d}, data(static_cast<std::size_t>(w) * h * d, value) {}

    std::size_t size() const { return data.size(); }
    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
    }
    float& at(int x, int y, int z) { return data[index(x, y, z)]; }
    float at(int x, int y, int z) const { return data[index(x, y, z)]; }
};

struct Mask {
    std::array<int, 3> dims{0, 0, 0};
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int w, int h, int d) : dims{w, h, d}, data(static_cast<std::size_t>(w) * h * d, 0) {}

    std::size_t size() const { return data.size(); }
    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
    }
    std::uint8_t& at(int x, int y, int z) { return data[index(x, y, z)]; }
    std::uint8_t at(int x, int y, int z) const { return data[index(x, y, z)]; }

    std::size_t count() const {
        std::size_t c = 0;
        for (auto v : data) c += v;
        return c;
    }
};

// Per-voxel foreground probability plus the number of sliding windows that
// contributed to each voxel.
struct ProbMap {
    std::array<int, 3> dims{0, 0, 0};
    std::vector<float> data;
    std::vector<std::int32_t> counts;

    ProbMap() = default;
    ProbMap(int w, int h, int d)
        : dims{w, h, d}, data(static_cast<std::size_t>(w) * h * d, 0.f),
          counts(static_cast<std::size_t>(w) * h * d, 0) {}

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
    }

    Mask threshold(float t) const {
        Mask m(dims[0], dims[1], dims[2]);
        for (std::size_t i = 0; i < data.size(); ++i) m.data[i] = data[i] >= t ? 1 : 0;
        return m;
    }
};

// Axis-aligned integer box, min inclusive, max exclusive.
struct BoundingBox {
    std::array<int, 3> min{0, 0, 0};
    std::array<int, 3> max{0, 0, 0};

    std::array<int, 3> extents() const {
        return {max[0] - min[0], max[1] - min[1], max[2] - min[2]};
    }
    bool inside(const std::array<int, 3>& dims) const {
        for (int a = 0; a < 3; ++a)
            if (min[a] < 0 || max[a] > dims[a] || min[a] >= max[a]) return false;
        return true;
    }
    bool operator==(const BoundingBox& o) const = default;
};

// Raised when the coarse stage finds no foreground at all.
struct NoForegroundError : std::runtime_error {
    NoForegroundError() : std::runtime_error("mask has no foreground voxels") {}
};

// ---------------------------------------------------------------------------

// Clamp to [lo, hi], then shift/scale the whole volume to zero mean and unit
// variance (population statistics). A post-clamp constant volume maps to all
// zeros rather than erroring.
inline Volume truncate_normalize(const Volume& vol, float lo, float hi) {
    if (!(lo < hi)) throw std::invalid_argument("truncate_normalize: lo must be < hi");
    Volume out = vol;
    double sum = 0.0;
    for (auto& v : out.data) {
        v = std::clamp(v, lo, hi);
        sum += v;
    }
    const double mean = sum / static_cast<double>(out.size());
    double sq = 0.0;
    for (auto v : out.data) {
        const double d = v - mean;
        sq += d * d;
    }
    const double var = sq / static_cast<double>(out.size());
    if (var == 0.0) {
        std::fill(out.data.begin(), out.data.end(), 0.f);
        return out;
    }
    const double inv_std = 1.0 / std::sqrt(var);
    for (auto& v : out.data) v = static_cast<float>((v - mean) * inv_std);
    return out;
}

// Mean/std of the clamped volume, for normalizing perturbed copies with the
// clean volume's statistics.
inline std::pair<double, double> truncated_stats(const Volume& vol, float lo, float hi) {
    double sum = 0.0;
    for (auto v : vol.data) sum += std::clamp(v, lo, hi);
    const double mean = sum / static_cast<double>(vol.size());
    double sq = 0.0;
    for (auto v : vol.data) {
        const double d = std::clamp(v, lo, hi) - mean;
        sq += d * d;
    }
    return {mean, std::sqrt(sq / static_cast<double>(vol.size()))};
}

// ---------------------------------------------------------------------------
// Rigid axis-permutation augmentations: quarter-turn rotations about each
// axis plus flips along each axis.
// ---------------------------------------------------------------------------

enum class AugmentOp {
    Identity,
    RotX90, RotX180, RotX270,  // about the W axis (rotates H-D plane)
    RotY90, RotY180, RotY270,  // about the H axis (rotates W-D plane)
    RotZ90, RotZ180, RotZ270,  // about the D axis (rotates W-H plane)
    FlipX, FlipY, FlipZ,       // reverse along W / H / D
};

inline const std::vector<AugmentOp>& all_augment_ops() {
    static const std::vector<AugmentOp> ops{
        AugmentOp::Identity, AugmentOp::RotX90,  AugmentOp::RotX180, AugmentOp::RotX270,
        AugmentOp::RotY90,   AugmentOp::RotY180, AugmentOp::RotY270, AugmentOp::RotZ90,
        AugmentOp::RotZ180,  AugmentOp::RotZ270, AugmentOp::FlipX,   AugmentOp::FlipY,
        AugmentOp::FlipZ};
    return ops;
}

namespace detail {

// Output dims and output->input index map for one op.
struct AugmentMap {
    std::array<int, 3> out_dims;
    // src = f(out coordinates)
    std::array<int, 3> (*map)(const std::array<int, 3>& o, const std::array<int, 3>& in_dims);
};

inline AugmentMap augment_map(AugmentOp op, const std::array<int, 3>& in) {
    using A3 = std::array<int, 3>;
    switch (op) {
        case AugmentOp::Identity:
            return {in, [](const A3& o, const A3&) { return o; }};
        // rot90 about axis a sends plane coords (b, c) -> (c, B-1-b);
        // inverse map: src_b = in_b - 1 - out_c, src_c = out_b
        case AugmentOp::RotX90:
            return {{in[0], in[2], in[1]},
                    [](const A3& o, const A3& d) { return A3{o[0], d[1] - 1 - o[2], o[1]}; }};
        case AugmentOp::RotX180:
            return {in, [](const A3& o, const A3& d) {
                        return A3{o[0], d[1] - 1 - o[1], d[2] - 1 - o[2]};
                    }};
        case AugmentOp::RotX270:
            return {{in[0], in[2], in[1]},
                    [](const A3& o, const A3& d) { return A3{o[0], o[2], d[2] - 1 - o[1]}; }};
        case AugmentOp::RotY90:
            return {{in[2], in[1], in[0]},
                    [](const A3& o, const A3& d) { return A3{d[0] - 1 - o[2], o[1], o[0]}; }};
        case AugmentOp::RotY180:
            return {in, [](const A3& o, const A3& d) {
                        return A3{d[0] - 1 - o[0], o[1], d[2] - 1 - o[2]};
                    }};
        case AugmentOp::RotY270:
            return {{in[2], in[1], in[0]},
                    [](const A3& o, const A3& d) { return A3{o[2], o[1], d[2] - 1 - o[0]}; }};
        case AugmentOp::RotZ90:
            return {{in[1], in[0], in[2]},
                    [](const A3& o, const A3& d) { return A3{d[0] - 1 - o[1], o[0], o[2]}; }};
        case AugmentOp::RotZ180:
            return {in, [](const A3& o, const A3& d) {
                        return A3{d[0] - 1 - o[0], d[1] - 1 - o[1], o[2]};
                    }};
        case AugmentOp::RotZ270:
            return {{in[1], in[0], in[2]},
                    [](const A3& o, const A3& d) { return A3{o[1], d[1] - 1 - o[0], o[2]}; }};
        case AugmentOp::FlipX:
            return {in, [](const A3& o, const A3& d) { return A3{d[0] - 1 - o[0], o[1], o[2]}; }};
        case AugmentOp::FlipY:
            return {in, [](const A3& o, const A3& d) { return A3{o[0], d[1] - 1 - o[1], o[2]}; }};
        case AugmentOp::FlipZ:
            return {in, [](const A3& o, const A3& d) { return A3{o[0], o[1], d[2] - 1 - o[2]}; }};
    }
    throw std::invalid_argument("augment: unknown op");
}

}  // namespace detail

inline AugmentOp inverse_augment_op(AugmentOp op) {
    switch (op) {
        case AugmentOp::RotX90: return AugmentOp::RotX270;
        case AugmentOp::RotX270: return AugmentOp::RotX90;
        case AugmentOp::RotY90: return AugmentOp::RotY270;
        case AugmentOp::RotY270: return AugmentOp::RotY90;
        case AugmentOp::RotZ90: return AugmentOp::RotZ270;
        case AugmentOp::RotZ270: return AugmentOp::RotZ90;
        default: return op;  // identity, 180s and flips are self-inverse
    }
}

inline std::pair<Volume, Mask> augment(const Volume& vol, const Mask& mask, AugmentOp op) {
    if (vol.dims != mask.dims) throw std::invalid_argument("augment: volume/mask dims mismatch");
    const auto m = detail::augment_map(op, vol.dims);
    Volume ov(m.out_dims[0], m.out_dims[1], m.out_dims[2]);
    ov.spacing = vol.spacing;
    Mask om(m.out_dims[0], m.out_dims[1], m.out_dims[2]);
    for (int z = 0; z < m.out_dims[2]; ++z)
        for (int y = 0; y < m.out_dims[1]; ++y)
            for (int x = 0; x < m.out_dims[0]; ++x) {
                const auto s = m.map({x, y, z}, vol.dims);
                ov.at(x, y, z) = vol.at(s[0], s[1], s[2]);
                om.at(x, y, z) = mask.at(s[0], s[1], s[2]);
            }
    return {std::move(ov), std::move(om)};
}

// ---------------------------------------------------------------------------

// Dice-Sorensen coefficient; two empty masks score 1 by convention.
inline double dsc(const Mask& pred, const Mask& truth) {
    if (pred.dims != truth.dims) throw std::invalid_argument("dsc: dims mismatch");
    std::size_t p = 0, y = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        p += pred.data[i];
        y += truth.data[i];
        both += pred.data[i] & truth.data[i];
    }
    if (p + y == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + y);
}

// Tightest box over all 1-voxels, padded by `margin` on every face, clipped
// to `clip_dims`.
inline BoundingBox bounding_box_of(const Mask& mask, int margin,
                                   const std::array<int, 3>& clip_dims) {
    BoundingBox box;
    box.min = {mask.dims[0], mask.dims[1], mask.dims[2]};
    box.max = {0, 0, 0};
    bool any = false;
    for (int z = 0; z < mask.dims[2]; ++z)
        for (int y = 0; y < mask.dims[1]; ++y)
            for (int x = 0; x < mask.dims[0]; ++x)
                if (mask.at(x, y, z)) {
                    any = true;
                    box.min[0] = std::min(box.min[0], x);
                    box.min[1] = std::min(box.min[1], y);
                    box.min[2] = std::min(box.min[2], z);
                    box.max[0] = std::max(box.max[0], x + 1);
                    box.max[1] = std::max(box.max[1], y + 1);
                    box.max[2] = std::max(box.max[2], z + 1);
                }
    if (!any) throw NoForegroundError();
    for (int a = 0; a < 3; ++a) {
        box.min[a] = std::max(0, box.min[a] - margin);
        box.max[a] = std::min(clip_dims[a], box.max[a] + margin);
    }
    return box;
}

template <typename Grid>
Grid crop_grid(const Grid& g, const BoundingBox& box) {
    if (!box.inside(g.dims)) throw std::invalid_argument("crop: box out of range");
    const auto e = box.extents();
    Grid out(e[0], e[1], e[2]);
    for (int z = 0; z < e[2]; ++z)
        for (int y = 0; y < e[1]; ++y)
            for (int x = 0; x < e[0]; ++x)
                out.at(x, y, z) = g.at(box.min[0] + x, box.min[1] + y, box.min[2] + z);
    return out;
}

inline Volume crop(const Volume& vol, const BoundingBox& box) {
    Volume out = crop_grid(vol, box);
    out.spacing = vol.spacing;
    return out;
}
inline Mask crop(const Mask& mask, const BoundingBox& box) { return crop_grid(mask, box); }

// Element-wise replacement of the box region of `coarse` by `fine`.
inline Mask decrop(const Mask& fine, const Mask& coarse, const BoundingBox& box) {
    if (!box.inside(coarse.dims)) throw std::invalid_argument("decrop: box out of range");
    if (fine.dims != box.extents()) throw std::invalid_argument("decrop: fine dims mismatch");
    Mask out = coarse;
    const auto e = box.extents();
    for (int z = 0; z < e[2]; ++z)
        for (int y = 0; y < e[1]; ++y)
            for (int x = 0; x < e[0]; ++x)
                out.at(box.min[0] + x, box.min[1] + y, box.min[2] + z) = fine.at(x, y, z);
    return out;
}

// ---------------------------------------------------------------------------

// Connected components under 26-connectivity; components strictly smaller
// than fraction * (total predicted voxels) are dropped.
inline Mask remove_small_components(const Mask& mask, double fraction) {
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("remove_small_components: fraction out of [0,1]");
    const std::size_t total = mask.count();
    Mask out(mask.dims[0], mask.dims[1], mask.dims[2]);
    if (total == 0) return out;
    const double threshold = fraction * static_cast<double>(total);

    std::vector<std::uint8_t> visited(mask.size(), 0);
    std::vector<std::size_t> stack, component;
    const int W = mask.dims[0], H = mask.dims[1], D = mask.dims[2];
    for (std::size_t seed = 0; seed < mask.size(); ++seed) {
        if (!mask.data[seed] || visited[seed]) continue;
        component.clear();
        stack.assign(1, seed);
        visited[seed] = 1;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            component.push_back(i);
            const int x = static_cast<int>(i % W);
            const int y = static_cast<int>((i / W) % H);
            const int z = static_cast<int>(i / (static_cast<std::size_t>(W) * H));
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dx && !dy && !dz) continue;
                        const int nx = x + dx, ny = y + dy, nz = z + dz;
                        if (nx < 0 || nx >= W || ny < 0 || ny >= H || nz < 0 || nz >= D) continue;
                        const std::size_t ni = mask.index(nx, ny, nz);
                        if (mask.data[ni] && !visited[ni]) {
                            visited[ni] = 1;
                            stack.push_back(ni);
                        }
                    }
        }
        if (static_cast<double>(component.size()) >= threshold)
            for (auto i : component) out.data[i] = 1;
    }
    return out;
}

}  // namespace vseg
