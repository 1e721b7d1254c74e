#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vseg/net.hpp"
#include "vseg/pipeline.hpp"
#include "vseg/rng.hpp"
#include "vseg/tensor.hpp"
#include "vseg/volume.hpp"

namespace vseg {

// Perturbations live in the truncated-intensity space, where the dynamic
// range Lambda = hi - lo gives epsilon its physical meaning; volumes are
// re-normalized with the clean volume's statistics before each forward pass.
struct AttackConfig {
    double lambda_range = 340.0;       // hi - lo of the truncation window
    double epsilon = 0.03 * 340.0;     // max-norm bound, intensity units
    double alpha = 0.01 * 340.0;       // per-step size, intensity units
    int iters = 5;
    bool skip_background_windows = true;

    void validate() const {
        if (iters < 1) throw std::invalid_argument("attack: iters must be >= 1");
        if (epsilon < 0.0) throw std::invalid_argument("attack: epsilon must be >= 0");
        if (epsilon > 0.0 && !(alpha > 0.0 && alpha <= epsilon))
            throw std::invalid_argument("attack: need 0 < alpha <= epsilon");
    }
};

template <typename T>
inline T sign_of(T v) {
    return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

// Clip v into [center - eps, center + eps] such that the bound also holds for
// the rounded float subtraction |v - center|; a plain clamp can land half an
// ulp outside the ball.
inline float clip_to_ball(float v, float center, float eps) {
    float out = std::clamp(v, center - eps, center + eps);
    while (out - center > eps) out = std::nextafterf(out, center);
    while (center - out > eps) out = std::nextafterf(out, center);
    return out;
}

// ---------------------------------------------------------------------------
// Whole-volume loss gradient: per-window gradients of the full deeply
// supervised loss, averaged voxel-wise over overlapping windows. The volume
// is given in truncated-intensity units together with frozen normalization
// stats (mean, std) from the clean volume; the returned gradient is w.r.t.
// the intensity-space input (chain rule absorbs the 1/std).
// BN runs in eval mode: the attack targets the deployed network.
// ---------------------------------------------------------------------------

template <typename T>
Volume volume_gradient(NetworkGraph<T>& graph, const Volume& vol, const Mask& labels,
                       const WindowPlan& plan, double norm_mean, double norm_std,
                       bool skip_background_windows) {
    if (vol.dims != labels.dims)
        throw std::invalid_argument("volume_gradient: volume/labels dims mismatch");
    const int p = plan.patch_edge;
    if (graph.spec.input_size != p)
        throw std::invalid_argument("volume_gradient: plan patch does not match graph input");
    const double inv_std = norm_std > 0.0 ? 1.0 / norm_std : 0.0;

    Volume grad(vol.dims[0], vol.dims[1], vol.dims[2]);
    std::vector<std::int32_t> counts(grad.size(), 0);

    Tensor<float> xf(1, 1, p, p, p);
    Tensor<std::uint8_t> lab(1, 1, p, p, p);
    Tensor<T> x(1, 1, p, p, p);
    for (const auto& s : plan.starts) {
        extract_patch(labels, s, p, lab);
        if (skip_background_windows) {
            bool any = false;
            for (auto v : lab.data)
                if (v) {
                    any = true;
                    break;
                }
            if (!any) continue;
        }
        extract_patch(vol, s, p, xf);
        for (std::size_t i = 0; i < x.size(); ++i)
            x.data[i] = static_cast<T>((xf.data[i] - norm_mean) * inv_std);

        graph.zero_grad();
        auto acts = graph.forward(x, /*train=*/false);
        auto r = graph.loss_backward(acts, lab);

        std::size_t wi = 0;
        for (int z = 0; z < p; ++z)
            for (int y = 0; y < p; ++y) {
                std::size_t oi = grad.index(s[0], s[1] + y, s[2] + z);
                for (int xx = 0; xx < p; ++xx, ++oi, ++wi) {
                    grad.data[oi] += static_cast<float>(r.d_input.data[wi] * inv_std);
                    counts[oi] += 1;
                }
            }
    }
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (counts[i] > 0) grad.data[i] /= static_cast<float>(counts[i]);
    return grad;
}

// X_adv = X + epsilon * sign(grad); sign(0) = 0.
inline Volume fgsm(const Volume& vol, const Volume& grad, const AttackConfig& cfg) {
    if (vol.dims != grad.dims) throw std::invalid_argument("fgsm: dims mismatch");
    cfg.validate();
    Volume out = vol;
    const float eps = static_cast<float>(cfg.epsilon);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = clip_to_ball(out.data[i] + eps * sign_of(grad.data[i]), out.data[i], eps);
    return out;
}

// Iterative FGSM with per-step clipping to the epsilon-ball around the clean
// volume. `vol` is in truncated-intensity units; normalization stats are
// frozen from the clean volume.
template <typename T>
Volume ifgsm(NetworkGraph<T>& graph, const Volume& vol, const Mask& labels,
             const WindowPlan& plan, const AttackConfig& cfg, double norm_mean,
             double norm_std) {
    cfg.validate();
    const float eps = static_cast<float>(cfg.epsilon);
    const float alpha = static_cast<float>(cfg.alpha);
    Volume adv = vol;
    for (int it = 0; it < cfg.iters; ++it) {
        Volume g = volume_gradient(graph, adv, labels, plan, norm_mean, norm_std,
                                   cfg.skip_background_windows);
        for (std::size_t i = 0; i < adv.size(); ++i)
            adv.data[i] =
                clip_to_ball(adv.data[i] + alpha * sign_of(g.data[i]), vol.data[i], eps);
    }
    return adv;
}

// ---------------------------------------------------------------------------
// Adversarial training: min over parameters of the max over perturbations.
// Each iteration perturbs the sampled patch with a random start in the
// epsilon-ball followed by I-FGSM, then takes one SGD step on the result.
// With epsilon = 0 the perturbation collapses to the identity and the loop
// degenerates to natural training step-for-step.
//
// Patches arrive already normalized; epsilon/alpha are divided by the dataset
// normalization std to act on the same physical scale.
// ---------------------------------------------------------------------------

template <typename T>
double adversarial_train(NetworkGraph<T>& graph, const Dataset& data, Stage stage,
                         TrainRecipe& recipe, const AttackConfig& cfg, double norm_std,
                         const RngPool& rngs, const TrainLogFn& log = nullptr) {
    cfg.validate();
    const double inv_std = norm_std > 0.0 ? 1.0 / norm_std : 0.0;
    const T eps = static_cast<T>(cfg.epsilon * inv_std);
    const T alpha = static_cast<T>(cfg.alpha * inv_std);
    auto noise_rng = rngs.stream("attack_noise");

    PerturbFn<T> perturb = [&graph, &noise_rng, cfg, eps, alpha](
                               const Tensor<T>& x, const Tensor<std::uint8_t>& labels,
                               int) -> Tensor<T> {
        Tensor<T> adv = x;
        for (auto& v : adv.data)
            v += static_cast<T>(uniform_real(noise_rng, -double(eps), double(eps)));
        for (int it = 0; it < cfg.iters; ++it) {
            graph.zero_grad();
            // eval-mode BN: the inner maximization must not touch running
            // stats, so with epsilon = 0 this loop is a bit-exact no-op
            auto acts = graph.forward(adv, /*train=*/false);
            auto r = graph.loss_backward(acts, labels);
            for (std::size_t i = 0; i < adv.size(); ++i) {
                T v = adv.data[i] + alpha * sign_of(r.d_input.data[i]);
                adv.data[i] = std::clamp(v, x.data[i] - eps, x.data[i] + eps);
            }
        }
        return adv;
    };
    return train_loop(graph, data, stage, recipe, rngs, perturb, log);
}

// ---------------------------------------------------------------------------
// Robustness comparison: each model evaluated on clean, FGSM and I-FGSM inputs;
// reports mean/std DSC per condition and the maximum drop vs clean.
// ---------------------------------------------------------------------------

struct RobustnessRow {
    std::string model;
    double clean_mean = 0, clean_std = 0;
    double fgsm_mean = 0, fgsm_std = 0;
    double ifgsm_mean = 0, ifgsm_std = 0;
    double max_drop = 0;  // max over attacks of (clean_mean - attack_mean)
};

struct ReportTable {
    std::vector<RobustnessRow> rows;
};

struct EvalCase {
    Volume truncated;  // clamped to the intensity window, pre-normalization
    Mask mask;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double sum = 0;
    for (double x : xs) sum += x;
    const double mean = sum / xs.size();
    double sq = 0;
    for (double x : xs) sq += (x - mean) * (x - mean);
    return {mean, std::sqrt(sq / xs.size())};
}

}  // namespace detail

// Predicts `truncated` (intensity units) with frozen normalization stats.
template <typename T>
Mask predict_truncated(NetworkGraph<T>& graph, const Volume& truncated, int n, Fusion fusion,
                       double norm_mean, double norm_std, float prob_threshold = 0.5f) {
    Volume norm = truncated;
    const double inv_std = norm_std > 0.0 ? 1.0 / norm_std : 0.0;
    for (auto& v : norm.data) v = static_cast<float>((v - norm_mean) * inv_std);
    return predict_volume(graph, norm, n, fusion).threshold(prob_threshold);
}

template <typename T>
RobustnessRow robustness_row(const std::string& name, NetworkGraph<T>& graph,
                             const std::vector<EvalCase>& cases, const AttackConfig& cfg, int n,
                             Fusion fusion) {
    RobustnessRow row;
    row.model = name;
    std::vector<double> clean, fg, ifg;
    for (const auto& c : cases) {
        const auto [mean, sd] = [&] {
            double s = 0;
            for (auto v : c.truncated.data) s += v;
            const double mu = s / c.truncated.size();
            double sq = 0;
            for (auto v : c.truncated.data) sq += (v - mu) * (v - mu);
            return std::pair<double, double>{mu, std::sqrt(sq / c.truncated.size())};
        }();
        const Volume padded = pad_to_patch(c.truncated, graph.spec.input_size);
        const Mask padded_mask = pad_to_patch(c.mask, graph.spec.input_size);
        const WindowPlan plan = plan_windows(padded.dims, graph.spec.input_size, n);

        clean.push_back(dsc(predict_truncated(graph, c.truncated, n, fusion, mean, sd), c.mask));

        auto attacked_dsc = [&](const Volume& x_adv) {
            Mask pred = predict_truncated(graph, x_adv, n, fusion, mean, sd);
            if (pred.dims != c.mask.dims) pred = crop(pred, BoundingBox{{0, 0, 0}, c.mask.dims});
            return dsc(pred, c.mask);
        };
        Volume g = volume_gradient(graph, padded, padded_mask, plan, mean, sd,
                                   cfg.skip_background_windows);
        fg.push_back(attacked_dsc(fgsm(padded, g, cfg)));
        ifg.push_back(attacked_dsc(ifgsm(graph, padded, padded_mask, plan, cfg, mean, sd)));
    }
    std::tie(row.clean_mean, row.clean_std) = detail::mean_std(clean);
    std::tie(row.fgsm_mean, row.fgsm_std) = detail::mean_std(fg);
    std::tie(row.ifgsm_mean, row.ifgsm_std) = detail::mean_std(ifg);
    row.max_drop = std::max(row.clean_mean - row.fgsm_mean, row.clean_mean - row.ifgsm_mean);
    return row;
}

template <typename T>
ReportTable robustness_report(NetworkGraph<T>& nat_graph, NetworkGraph<T>& adv_graph,
                              const std::vector<EvalCase>& cases, const AttackConfig& cfg, int n,
                              Fusion fusion) {
    ReportTable t;
    t.rows.push_back(robustness_row("natural", nat_graph, cases, cfg, n, fusion));
    t.rows.push_back(robustness_row("adversarial", adv_graph, cases, cfg, n, fusion));
    return t;
}

}  // namespace vseg
