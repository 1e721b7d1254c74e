#pragma once

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "vseg/rng.hpp"
#include "vseg/volume.hpp"

namespace vseg {

// CT-like phantom generator: noisy low-intensity background, a few mid-gray
// distractor blobs, and 1-3 bright ellipsoidal "organs" of varying size,
// position and orientation. Organ voxels form the ground-truth mask. Raw
// intensities deliberately span beyond the [-100, 240] truncation window.
struct SynthConfig {
    std::array<int, 3> dims{48, 48, 48};
    int min_organs = 1, max_organs = 3;
    int min_distractors = 2, max_distractors = 4;
    double bg_level = -250.0, bg_noise = 60.0;
    double organ_lo = 160.0, organ_hi = 280.0;   // partially above the window
    double distractor_lo = -40.0, distractor_hi = 90.0;
    double voxel_noise = 25.0;
    double min_fg_fraction = 0.001, max_fg_fraction = 0.10;
};

struct SynthCase {
    Volume vol;  // raw intensities, pre-truncation
    Mask mask;
};

namespace detail {

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> semi;
    std::array<std::array<double, 3>, 3> rot;  // row-major rotation matrix

    bool contains(double x, double y, double z) const {
        const double px = x - center[0], py = y - center[1], pz = z - center[2];
        double s = 0;
        for (int r = 0; r < 3; ++r) {
            const double q =
                (rot[r][0] * px + rot[r][1] * py + rot[r][2] * pz) / semi[r];
            s += q * q;
        }
        return s <= 1.0;
    }
};

inline std::array<std::array<double, 3>, 3> random_rotation(std::mt19937_64& rng) {
    // rotation from a uniform random unit quaternion
    std::normal_distribution<double> n(0.0, 1.0);
    double q[4];
    double norm = 0;
    do {
        norm = 0;
        for (auto& v : q) {
            v = n(rng);
            norm += v * v;
        }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    const double w = q[0] / norm, x = q[1] / norm, y = q[2] / norm, z = q[3] / norm;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

inline Ellipsoid random_ellipsoid(const std::array<int, 3>& dims, double min_semi,
                                  double max_semi, std::mt19937_64& rng) {
    Ellipsoid e;
    e.rot = random_rotation(rng);
    for (int a = 0; a < 3; ++a) {
        e.semi[a] = uniform_real(rng, min_semi, max_semi);
        const double margin = e.semi[a] + 1.0;
        e.center[a] = uniform_real(rng, margin, dims[a] - margin);
    }
    return e;
}

}  // namespace detail

inline SynthCase synth_case(const SynthConfig& cfg, std::mt19937_64& rng) {
    const auto& d = cfg.dims;
    const double min_dim = std::min({d[0], d[1], d[2]});
    std::normal_distribution<double> noise(0.0, 1.0);

    for (int attempt = 0; attempt < 32; ++attempt) {
        SynthCase c{Volume(d[0], d[1], d[2]), Mask(d[0], d[1], d[2])};

        std::vector<detail::Ellipsoid> organs, distractors;
        std::vector<double> organ_level, distractor_level;
        const int n_org = uniform_int(rng, cfg.min_organs, cfg.max_organs);
        for (int i = 0; i < n_org; ++i) {
            organs.push_back(detail::random_ellipsoid(d, 3.5, min_dim / 5.5, rng));
            organ_level.push_back(uniform_real(rng, cfg.organ_lo, cfg.organ_hi));
        }
        const int n_dis = uniform_int(rng, cfg.min_distractors, cfg.max_distractors);
        for (int i = 0; i < n_dis; ++i) {
            distractors.push_back(detail::random_ellipsoid(d, 2.5, min_dim / 6.0, rng));
            distractor_level.push_back(uniform_real(rng, cfg.distractor_lo, cfg.distractor_hi));
        }

        for (int z = 0; z < d[2]; ++z)
            for (int y = 0; y < d[1]; ++y)
                for (int x = 0; x < d[0]; ++x) {
                    double v = cfg.bg_level + cfg.bg_noise * noise(rng);
                    for (std::size_t i = 0; i < distractors.size(); ++i)
                        if (distractors[i].contains(x, y, z)) v = distractor_level[i];
                    bool fg = false;
                    for (std::size_t i = 0; i < organs.size(); ++i)
                        if (organs[i].contains(x, y, z)) {
                            v = organ_level[i];
                            fg = true;
                        }
                    v += cfg.voxel_noise * noise(rng);
                    c.vol.at(x, y, z) = static_cast<float>(v);
                    c.mask.at(x, y, z) = fg ? 1 : 0;
                }

        const double fraction =
            static_cast<double>(c.mask.count()) / static_cast<double>(c.mask.size());
        if (fraction >= cfg.min_fg_fraction && fraction <= cfg.max_fg_fraction) return c;
    }
    throw std::runtime_error("synth_case: could not hit the foreground fraction window");
}

inline std::vector<SynthCase> synth_cases(int count, const SynthConfig& cfg,
                                          std::mt19937_64& rng) {
    std::vector<SynthCase> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(synth_case(cfg, rng));
    return out;
}

}  // namespace vseg
