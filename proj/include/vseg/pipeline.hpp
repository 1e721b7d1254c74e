#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vseg/net.hpp"
#include "vseg/optimizer.hpp"
#include "vseg/rng.hpp"
#include "vseg/tensor.hpp"
#include "vseg/volume.hpp"

namespace vseg {

// ---------------------------------------------------------------------------
// Sliding-window planning. Per axis the window count is floor(dim/patch) + n;
// origins are a real-valued linspace over [0, dim - patch] rounded to integers.
// Duplicate origins are kept (they only re-weight fusion) except in the trivial
// dim == patch case, which has a single valid placement.
// ---------------------------------------------------------------------------

struct WindowPlan {
    int patch_edge = 0;
    int n = 0;
    std::vector<std::array<int, 3>> starts;  // (x, y, z) origins
};

inline std::vector<int> plan_axis(int dim, int patch, int n) {
    if (patch > dim) throw std::invalid_argument("plan_windows: patch larger than axis");
    if (dim == patch) return {0};
    const int count = dim / patch + n;
    std::vector<int> starts(count);
    const double span = dim - patch;
    for (int i = 0; i < count; ++i)
        starts[i] = static_cast<int>(std::lround(span * i / (count - 1)));
    return starts;
}

inline WindowPlan plan_windows(const std::array<int, 3>& dims, int patch_edge, int n) {
    if (patch_edge < 1) throw std::invalid_argument("plan_windows: patch_edge < 1");
    if (n < 1) throw std::invalid_argument("plan_windows: overlap parameter must be >= 1");
    WindowPlan plan;
    plan.patch_edge = patch_edge;
    plan.n = n;
    const auto xs = plan_axis(dims[0], patch_edge, n);
    const auto ys = plan_axis(dims[1], patch_edge, n);
    const auto zs = plan_axis(dims[2], patch_edge, n);
    plan.starts.reserve(xs.size() * ys.size() * zs.size());
    for (int z : zs)
        for (int y : ys)
            for (int x : xs) plan.starts.push_back({x, y, z});
    return plan;
}

// ---------------------------------------------------------------------------
// Zero padding for volumes smaller than the patch. Intensities are padded with
// 0 (the post-normalization background value), masks with background.
// ---------------------------------------------------------------------------

inline std::array<int, 3> padded_dims(const std::array<int, 3>& dims, int patch) {
    return {std::max(dims[0], patch), std::max(dims[1], patch), std::max(dims[2], patch)};
}

inline Volume pad_to_patch(const Volume& vol, int patch) {
    const auto pd = padded_dims(vol.dims, patch);
    if (pd == vol.dims) return vol;
    Volume out(pd[0], pd[1], pd[2]);
    out.spacing = vol.spacing;
    for (int z = 0; z < vol.dims[2]; ++z)
        for (int y = 0; y < vol.dims[1]; ++y)
            for (int x = 0; x < vol.dims[0]; ++x) out.at(x, y, z) = vol.at(x, y, z);
    return out;
}

inline Mask pad_to_patch(const Mask& mask, int patch) {
    const auto pd = padded_dims(mask.dims, patch);
    if (pd == mask.dims) return mask;
    Mask out(pd[0], pd[1], pd[2]);
    for (int z = 0; z < mask.dims[2]; ++z)
        for (int y = 0; y < mask.dims[1]; ++y)
            for (int x = 0; x < mask.dims[0]; ++x) out.at(x, y, z) = mask.at(x, y, z);
    return out;
}

// ---------------------------------------------------------------------------
// Patch extraction. Volume and Tensor share the W-fastest layout, so a patch
// maps onto a (1, 1, D, H, W) tensor coordinate-for-coordinate.
// ---------------------------------------------------------------------------

inline void extract_patch(const Volume& vol, const std::array<int, 3>& start, int patch,
                          Tensor<float>& out, int batch_index = 0) {
    for (int z = 0; z < patch; ++z)
        for (int y = 0; y < patch; ++y) {
            const float* src = &vol.data[vol.index(start[0], start[1] + y, start[2] + z)];
            float* dst = &out.at(batch_index, 0, z, y, 0);
            std::copy(src, src + patch, dst);
        }
}

inline void extract_patch(const Mask& mask, const std::array<int, 3>& start, int patch,
                          Tensor<std::uint8_t>& out, int batch_index = 0) {
    for (int z = 0; z < patch; ++z)
        for (int y = 0; y < patch; ++y) {
            const std::uint8_t* src = &mask.data[mask.index(start[0], start[1] + y, start[2] + z)];
            std::uint8_t* dst = &out.at(batch_index, 0, z, y, 0);
            std::copy(src, src + patch, dst);
        }
}

// ---------------------------------------------------------------------------
// Training-time patch samplers.
// ---------------------------------------------------------------------------

inline std::array<int, 3> sample_origin(const std::array<int, 3>& dims, int patch,
                                        std::mt19937_64& rng) {
    std::array<int, 3> o;
    for (int a = 0; a < 3; ++a) o[a] = uniform_int(rng, 0, dims[a] - patch);
    return o;
}

// Uniform over all valid origins; may land entirely in background
// (hard negative mining).
inline std::pair<Volume, Mask> sample_coarse_patch(const Volume& vol, const Mask& mask, int patch,
                                                   std::mt19937_64& rng) {
    const Volume v = pad_to_patch(vol, patch);
    const Mask m = pad_to_patch(mask, patch);
    const auto o = sample_origin(v.dims, patch, rng);
    BoundingBox box{{o[0], o[1], o[2]}, {o[0] + patch, o[1] + patch, o[2] + patch}};
    return {crop(v, box), crop(m, box)};
}

// Origin drawn uniformly among origins whose patch intersects the foreground
// bounding box; patches that still miss every foreground voxel (possible since
// the box overapproximates the voxel set) are rejected and redrawn.
inline std::pair<Volume, Mask> sample_fine_patch(const Volume& vol, const Mask& mask, int patch,
                                                 std::mt19937_64& rng) {
    const Volume v = pad_to_patch(vol, patch);
    const Mask m = pad_to_patch(mask, patch);
    const BoundingBox fg = bounding_box_of(m, 0, m.dims);  // throws if mask is empty

    std::array<int, 3> lo, hi;  // inclusive origin range intersecting the box
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max(0, fg.min[a] - patch + 1);
        hi[a] = std::min(v.dims[a] - patch, fg.max[a] - 1);
    }
    for (int attempt = 0; attempt < 64; ++attempt) {
        std::array<int, 3> o;
        for (int a = 0; a < 3; ++a) o[a] = uniform_int(rng, lo[a], hi[a]);
        BoundingBox box{{o[0], o[1], o[2]}, {o[0] + patch, o[1] + patch, o[2] + patch}};
        Mask pm = crop(m, box);
        if (pm.count() > 0) return {crop(v, box), std::move(pm)};
    }
    // deterministic fallback: enclose the box corner
    std::array<int, 3> o;
    for (int a = 0; a < 3; ++a) o[a] = std::clamp(fg.min[a], 0, v.dims[a] - patch);
    BoundingBox box{{o[0], o[1], o[2]}, {o[0] + patch, o[1] + patch, o[2] + patch}};
    return {crop(v, box), crop(m, box)};
}

// ---------------------------------------------------------------------------
// Sliding-window inference and fusion.
// ---------------------------------------------------------------------------

enum class Fusion { Average, Vote };

inline Fusion fusion_from_name(const std::string& s) {
    if (s == "average") return Fusion::Average;
    if (s == "vote") return Fusion::Vote;
    throw std::invalid_argument("unknown fusion: " + s);
}

// Runs `eval` on every window of the plan and fuses per voxel. `eval` maps a
// window origin to patch^3 foreground probabilities in W-fastest order.
// Average fusion stores the mean probability; vote fusion stores the fraction
// of thresholded window predictions (ties resolve to foreground at the 0.5
// binarization threshold downstream).
template <typename EvalFn>
ProbMap fuse_windows(const std::array<int, 3>& dims, const WindowPlan& plan, Fusion fusion,
                     EvalFn&& eval, float vote_threshold = 0.5f) {
    const int p = plan.patch_edge;
    ProbMap out(dims[0], dims[1], dims[2]);
    std::vector<float> win;
    for (const auto& s : plan.starts) {
        win = eval(s);
        if (win.size() != static_cast<std::size_t>(p) * p * p)
            throw std::invalid_argument("fuse_windows: evaluator returned wrong patch size");
        std::size_t wi = 0;
        for (int z = 0; z < p; ++z)
            for (int y = 0; y < p; ++y) {
                std::size_t oi = out.index(s[0], s[1] + y, s[2] + z);
                for (int x = 0; x < p; ++x, ++oi, ++wi) {
                    out.data[oi] += fusion == Fusion::Average
                                        ? win[wi]
                                        : (win[wi] >= vote_threshold ? 1.f : 0.f);
                    out.counts[oi] += 1;
                }
            }
    }
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (out.counts[i] > 0) out.data[i] /= static_cast<float>(out.counts[i]);
    return out;
}

// `vol` must already be truncate-normalized. Volumes smaller than the patch on
// any axis are zero-padded for inference and the pad region discarded.
template <typename T>
ProbMap predict_volume(NetworkGraph<T>& graph, const Volume& vol, int n, Fusion fusion) {
    const int p = graph.spec.input_size;
    const Volume padded = pad_to_patch(vol, p);
    const WindowPlan plan = plan_windows(padded.dims, p, n);

    Tensor<T> x(1, 1, p, p, p);
    Tensor<float> xf(1, 1, p, p, p);
    auto eval = [&](const std::array<int, 3>& s) {
        extract_patch(padded, s, p, xf);
        if constexpr (std::is_same_v<T, float>)
            x.data = xf.data;
        else
            for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = static_cast<T>(xf.data[i]);
        auto acts = graph.forward(x, /*train=*/false, /*with_aux=*/false);
        Tensor<T> prob = softmax_prob_fg(acts.logits_main);
        std::vector<float> win(prob.size());
        for (std::size_t i = 0; i < win.size(); ++i) win[i] = static_cast<float>(prob.data[i]);
        return win;
    };
    ProbMap full = fuse_windows(padded.dims, plan, fusion, eval);

    if (padded.dims == vol.dims) return full;
    ProbMap out(vol.dims[0], vol.dims[1], vol.dims[2]);
    for (int z = 0; z < vol.dims[2]; ++z)
        for (int y = 0; y < vol.dims[1]; ++y)
            for (int x2 = 0; x2 < vol.dims[0]; ++x2) {
                out.data[out.index(x2, y, z)] = full.data[full.index(x2, y, z)];
                out.counts[out.index(x2, y, z)] = full.counts[full.index(x2, y, z)];
            }
    return out;
}

// ---------------------------------------------------------------------------
// Coarse-to-fine orchestration.
// ---------------------------------------------------------------------------

struct C2FConfig {
    int n_coarse = 6;
    int n_fine = 12;
    int margin = 16;
    Fusion fusion = Fusion::Average;
    double min_component_fraction = 0.2;
    float prob_threshold = 0.5f;
    // If set, the fine stage sees intensities multiplied by the coarse mask
    // instead of the raw crop. Off by default: the fine stage needs boundary
    // context the mask would erase.
    bool mask_intensities = false;
};

struct C2FResult {
    Mask mask;
    bool coarse_miss = false;
    BoundingBox box;
    Mask coarse_mask;
    ProbMap coarse_prob;
};

template <typename T>
C2FResult coarse_to_fine(NetworkGraph<T>& coarse_graph, NetworkGraph<T>& fine_graph,
                         const Volume& vol, const C2FConfig& cfg) {
    if (coarse_graph.spec.input_size != fine_graph.spec.input_size)
        throw std::invalid_argument("coarse_to_fine: patch edge mismatch between stages");
    C2FResult r;
    r.coarse_prob = predict_volume(coarse_graph, vol, cfg.n_coarse, cfg.fusion);
    Mask pc = r.coarse_prob.threshold(cfg.prob_threshold);
    pc = remove_small_components(pc, cfg.min_component_fraction);
    r.coarse_mask = pc;
    if (pc.count() == 0) {
        r.coarse_miss = true;
        r.mask = Mask(vol.dims[0], vol.dims[1], vol.dims[2]);
        return r;
    }
    r.box = bounding_box_of(pc, cfg.margin, vol.dims);
    Volume region = crop(vol, r.box);
    if (cfg.mask_intensities) {
        const Mask mc = crop(pc, r.box);
        for (std::size_t i = 0; i < region.data.size(); ++i)
            if (!mc.data[i]) region.data[i] = 0.f;
    }
    ProbMap pf = predict_volume(fine_graph, region, cfg.n_fine, cfg.fusion);
    r.mask = decrop(pf.threshold(cfg.prob_threshold), pc, r.box);
    return r;
}

// ---------------------------------------------------------------------------
// Training loop, shared between natural and adversarial training: a perturb
// hook maps the sampled batch to the batch actually fed to the network.
// ---------------------------------------------------------------------------

struct Sample {
    Volume vol;  // truncate-normalized
    Mask mask;
};
using Dataset = std::vector<Sample>;

enum class Stage { Coarse, Fine };

inline Stage stage_from_name(const std::string& s) {
    if (s == "coarse") return Stage::Coarse;
    if (s == "fine") return Stage::Fine;
    throw std::invalid_argument("unknown stage: " + s);
}

struct TrainRecipe {
    OptimState optim;       // lr schedule, momentum, weight decay
    int iterations = 2000;  // usually == optim.max_iter
    int batch = 1;
    bool augment = true;
    int log_every = 100;
};

struct TrainLogEntry {
    int iter = 0;
    double lr = 0.0;
    double total = 0.0, main = 0.0, aux1 = 0.0, aux2 = 0.0;
};
using TrainLogFn = std::function<void(const TrainLogEntry&)>;

struct DivergenceError : std::runtime_error {
    explicit DivergenceError(int iter)
        : std::runtime_error("training diverged (non-finite loss) at iteration " +
                             std::to_string(iter)) {}
};

// Perturb hook: (batch, labels, rng_pool, iter) -> batch to train on.
template <typename T>
using PerturbFn =
    std::function<Tensor<T>(const Tensor<T>&, const Tensor<std::uint8_t>&, int iter)>;

template <typename T>
double train_loop(NetworkGraph<T>& graph, const Dataset& data, Stage stage, TrainRecipe& recipe,
                  const RngPool& rngs, const PerturbFn<T>& perturb, const TrainLogFn& log) {
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    const int p = graph.spec.input_size;
    auto sample_rng = rngs.stream("sampling");
    auto augment_rng = rngs.stream("augment");
    const auto& ops = all_augment_ops();

    Tensor<T> x(recipe.batch, 1, p, p, p);
    Tensor<std::uint8_t> labels(recipe.batch, 1, p, p, p);
    Tensor<float> patchf(1, 1, p, p, p);
    Tensor<std::uint8_t> patchm(1, 1, p, p, p);
    double last_total = 0.0;

    for (int iter = 0; iter < recipe.iterations; ++iter) {
        for (int b = 0; b < recipe.batch; ++b) {
            const Sample& s = data[static_cast<std::size_t>(
                uniform_int(sample_rng, 0, static_cast<int>(data.size()) - 1))];
            auto [pv, pm] = stage == Stage::Coarse
                                ? sample_coarse_patch(s.vol, s.mask, p, sample_rng)
                                : sample_fine_patch(s.vol, s.mask, p, sample_rng);
            if (recipe.augment) {
                const AugmentOp op = ops[static_cast<std::size_t>(
                    uniform_int(augment_rng, 0, static_cast<int>(ops.size()) - 1))];
                std::tie(pv, pm) = augment(pv, pm, op);
            }
            extract_patch(pv, {0, 0, 0}, p, patchf);
            extract_patch(pm, {0, 0, 0}, p, patchm);
            for (std::size_t i = 0; i < patchf.size(); ++i) {
                x.data[static_cast<std::size_t>(b) * patchf.size() + i] =
                    static_cast<T>(patchf.data[i]);
                labels.data[static_cast<std::size_t>(b) * patchm.size() + i] = patchm.data[i];
            }
        }

        Tensor<T> x_used = perturb ? perturb(x, labels, iter) : x;

        graph.zero_grad();
        auto acts = graph.forward(x_used, /*train=*/true);
        auto r = graph.loss_backward(acts, labels);
        if (!std::isfinite(r.total)) throw DivergenceError(iter);
        last_total = r.total;

        const double lr = poly_lr(recipe.optim);
        auto params = graph.params();
        sgd_step(params, recipe.optim);

        if (log && (iter % recipe.log_every == 0 || iter + 1 == recipe.iterations)) {
            TrainLogEntry e;
            e.iter = iter;
            e.lr = lr;
            e.total = r.total;
            e.main = r.main;
            e.aux1 = r.aux1;
            e.aux2 = r.aux2;
            log(e);
        }
    }
    return last_total;
}

template <typename T>
double train(NetworkGraph<T>& graph, const Dataset& data, Stage stage, TrainRecipe& recipe,
             const RngPool& rngs, const TrainLogFn& log = nullptr) {
    return train_loop(graph, data, stage, recipe, rngs, PerturbFn<T>(), log);
}

}  // namespace vseg
