#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <set>

#include "vseg/volume.hpp"

using namespace vseg;

namespace {

Mask random_mask(std::mt19937_64& rng, int w, int h, int d, double density) {
    Mask m(w, h, d);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : m.data) v = u(rng) < density ? 1 : 0;
    return m;
}

// enumeration oracle for bounding boxes
BoundingBox bbox_oracle(const Mask& m, int margin, const std::array<int, 3>& clip) {
    int lo[3] = {1 << 30, 1 << 30, 1 << 30}, hi[3] = {-1, -1, -1};
    for (int z = 0; z < m.dims[2]; ++z)
        for (int y = 0; y < m.dims[1]; ++y)
            for (int x = 0; x < m.dims[0]; ++x)
                if (m.at(x, y, z)) {
                    const int c[3] = {x, y, z};
                    for (int a = 0; a < 3; ++a) {
                        lo[a] = std::min(lo[a], c[a]);
                        hi[a] = std::max(hi[a], c[a]);
                    }
                }
    BoundingBox b;
    for (int a = 0; a < 3; ++a) {
        b.min[a] = std::max(0, lo[a] - margin);
        b.max[a] = std::min(clip[a], hi[a] + 1 + margin);
    }
    return b;
}

}  // namespace

TEST_CASE("truncate_normalize") {
    SECTION("clamps to the CT window then standardizes") {
        Volume v(2, 1, 1);
        v.data = {-200.f, 400.f};
        auto out = truncate_normalize(v, -100.f, 240.f);
        // clamp -> {-100, 240}, mean 70, population std 170
        CHECK(out.data[0] == Catch::Approx(-1.0));
        CHECK(out.data[1] == Catch::Approx(1.0));
    }
    SECTION("constant volume maps to all zeros") {
        Volume v(3, 3, 3, 7.f);
        auto out = truncate_normalize(v, -100.f, 240.f);
        for (auto x : out.data) CHECK(x == 0.f);
    }
    SECTION("output has zero mean and unit variance") {
        std::mt19937_64 rng(4);
        Volume v(8, 8, 8);
        std::uniform_real_distribution<float> u(-300.f, 500.f);
        for (auto& x : v.data) x = u(rng);
        auto out = truncate_normalize(v, -100.f, 240.f);
        double mean = 0.0, var = 0.0;
        for (auto x : out.data) mean += x;
        mean /= out.size();
        for (auto x : out.data) var += (x - mean) * (x - mean);
        var /= out.size();
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-5);
    }
    SECTION("lo >= hi rejected") {
        Volume v(1, 1, 1);
        CHECK_THROWS_AS(truncate_normalize(v, 10.f, 10.f), std::invalid_argument);
    }
}

TEST_CASE("augment") {
    std::mt19937_64 rng(17);
    Volume v(4, 4, 4);
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    for (auto& x : v.data) x = u(rng);
    Mask m = random_mask(rng, 4, 4, 4, 0.3);

    SECTION("identity is bit-identical") {
        auto [ov, om] = augment(v, m, AugmentOp::Identity);
        CHECK(ov.data == v.data);
        CHECK(om.data == m.data);
    }
    SECTION("rot90 about each axis applied 4 times is the identity") {
        for (AugmentOp op : {AugmentOp::RotX90, AugmentOp::RotY90, AugmentOp::RotZ90}) {
            Volume cv = v;
            Mask cm = m;
            for (int i = 0; i < 4; ++i) std::tie(cv, cm) = augment(cv, cm, op);
            CHECK(cv.data == v.data);
            CHECK(cm.data == m.data);
        }
    }
    SECTION("flip along W on a 2x1x1 volume swaps the two voxels") {
        Volume v2(2, 1, 1);
        v2.data = {1.f, 2.f};
        Mask m2(2, 1, 1);
        m2.data = {1, 0};
        auto [ov, om] = augment(v2, m2, AugmentOp::FlipX);
        CHECK(ov.data == std::vector<float>{2.f, 1.f});
        CHECK(om.data == std::vector<std::uint8_t>{0, 1});
    }
    SECTION("each op followed by its inverse is the identity, multiset preserved") {
        // non-cubic volume exercises the dim permutation of 90/270 turns
        Volume v3(3, 4, 5);
        for (std::size_t i = 0; i < v3.size(); ++i) v3.data[i] = static_cast<float>(i);
        Mask m3 = random_mask(rng, 3, 4, 5, 0.4);
        for (AugmentOp op : all_augment_ops()) {
            auto [av, am] = augment(v3, m3, op);
            std::vector<float> sorted_in = v3.data, sorted_out = av.data;
            std::sort(sorted_in.begin(), sorted_in.end());
            std::sort(sorted_out.begin(), sorted_out.end());
            CHECK(sorted_in == sorted_out);
            auto [bv, bm] = augment(av, am, inverse_augment_op(op));
            CHECK(bv.data == v3.data);
            CHECK(bm.data == m3.data);
        }
    }
    SECTION("dims mismatch rejected") {
        Mask bad(5, 4, 4);
        CHECK_THROWS_AS(augment(v, bad, AugmentOp::FlipX), std::invalid_argument);
    }
}

TEST_CASE("dsc") {
    SECTION("perfect prediction scores 1") {
        std::mt19937_64 rng(2);
        Mask a = random_mask(rng, 6, 6, 6, 0.4);
        CHECK(dsc(a, a) == 1.0);
    }
    SECTION("disjoint non-empty masks score 0") {
        Mask a(4, 1, 1), b(4, 1, 1);
        a.data = {1, 1, 0, 0};
        b.data = {0, 0, 1, 1};
        CHECK(dsc(a, b) == 0.0);
    }
    SECTION("|P|=4, |Y|=6, |P cap Y|=3 scores 0.6") {
        Mask p(10, 1, 1), y(10, 1, 1);
        p.data = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
        y.data = {1, 1, 1, 0, 1, 1, 1, 0, 0, 0};
        CHECK(dsc(p, y) == Catch::Approx(0.6));
    }
    SECTION("both empty scores 1 by convention") {
        Mask a(3, 3, 3), b(3, 3, 3);
        CHECK(dsc(a, b) == 1.0);
    }
    SECTION("symmetric and bounded on random pairs") {
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            Mask a = random_mask(rng, 5, 5, 5, 0.3);
            Mask b = random_mask(rng, 5, 5, 5, 0.3);
            const double ab = dsc(a, b);
            CHECK(ab == dsc(b, a));
            CHECK(ab >= 0.0);
            CHECK(ab <= 1.0);
        }
    }
}

TEST_CASE("bounding_box_of") {
    SECTION("single voxel, margin 0") {
        Mask m(16, 16, 16);
        m.at(5, 5, 5) = 1;
        auto b = bounding_box_of(m, 0, m.dims);
        CHECK(b.min == std::array<int, 3>{5, 5, 5});
        CHECK(b.max == std::array<int, 3>{6, 6, 6});
    }
    SECTION("single voxel, margin 2, dims 64^3") {
        Mask m(64, 64, 64);
        m.at(5, 5, 5) = 1;
        auto b = bounding_box_of(m, 2, m.dims);
        CHECK(b.min == std::array<int, 3>{3, 3, 3});
        CHECK(b.max == std::array<int, 3>{8, 8, 8});
    }
    SECTION("margin clipped at the volume faces") {
        Mask m(64, 64, 64);
        m.at(0, 0, 0) = 1;
        auto b = bounding_box_of(m, 3, m.dims);
        CHECK(b.min == std::array<int, 3>{0, 0, 0});
        CHECK(b.max == std::array<int, 3>{4, 4, 4});
    }
    SECTION("empty mask raises the no-foreground error") {
        Mask m(8, 8, 8);
        CHECK_THROWS_AS(bounding_box_of(m, 0, m.dims), NoForegroundError);
    }
    SECTION("matches the enumeration oracle on random masks") {
        std::mt19937_64 rng(5);
        std::uniform_int_distribution<int> margin(0, 5);
        for (int trial = 0; trial < 200; ++trial) {
            Mask m = random_mask(rng, 12, 10, 9, 0.05);
            if (m.count() == 0) m.at(3, 3, 3) = 1;
            const int mg = margin(rng);
            CHECK(bounding_box_of(m, mg, m.dims) == bbox_oracle(m, mg, m.dims));
        }
    }
}

TEST_CASE("crop") {
    Volume v(4, 4, 4);
    for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<float>(i);

    SECTION("full-volume box is an identity copy") {
        BoundingBox b{{0, 0, 0}, {4, 4, 4}};
        CHECK(crop(v, b).data == v.data);
    }
    SECTION("interior box verified voxel by voxel") {
        BoundingBox b{{1, 1, 1}, {3, 3, 3}};
        auto out = crop(v, b);
        REQUIRE(out.dims == std::array<int, 3>{2, 2, 2});
        for (int z = 0; z < 2; ++z)
            for (int y = 0; y < 2; ++y)
                for (int x = 0; x < 2; ++x)
                    CHECK(out.at(x, y, z) == v.at(1 + x, 1 + y, 1 + z));
    }
    SECTION("box out of range rejected") {
        BoundingBox b{{0, 0, 0}, {5, 4, 4}};
        CHECK_THROWS_AS(crop(v, b), std::invalid_argument);
    }
    SECTION("crop then bounding_box_of on all-ones content reproduces the box") {
        Mask m(8, 8, 8);
        BoundingBox b{{2, 1, 3}, {6, 4, 7}};
        for (int z = b.min[2]; z < b.max[2]; ++z)
            for (int y = b.min[1]; y < b.max[1]; ++y)
                for (int x = b.min[0]; x < b.max[0]; ++x) m.at(x, y, z) = 1;
        auto sub = crop(m, b);
        auto bb = bounding_box_of(sub, 0, sub.dims);
        CHECK(bb.min == std::array<int, 3>{0, 0, 0});
        CHECK(bb.max == b.extents());
    }
}

TEST_CASE("decrop") {
    SECTION("fine equal to the box content leaves coarse unchanged") {
        std::mt19937_64 rng(9);
        Mask coarse = random_mask(rng, 6, 6, 6, 0.5);
        BoundingBox b{{1, 2, 0}, {4, 5, 3}};
        Mask fine = crop(coarse, b);
        CHECK(decrop(fine, coarse, b).data == coarse.data);
    }
    SECTION("all-zero coarse with all-ones fine in a 2^3 box gives exactly 8 ones") {
        Mask coarse(6, 6, 6);
        BoundingBox b{{2, 2, 2}, {4, 4, 4}};
        Mask fine(2, 2, 2);
        std::fill(fine.data.begin(), fine.data.end(), 1);
        auto out = decrop(fine, coarse, b);
        CHECK(out.count() == 8);
        for (int z = 2; z < 4; ++z)
            for (int y = 2; y < 4; ++y)
                for (int x = 2; x < 4; ++x) CHECK(out.at(x, y, z) == 1);
    }
    SECTION("crop(decrop(f, c, b), b) == f on random inputs") {
        std::mt19937_64 rng(10);
        for (int trial = 0; trial < 30; ++trial) {
            Mask coarse = random_mask(rng, 8, 7, 6, 0.4);
            std::uniform_int_distribution<int> lo(0, 3);
            BoundingBox b;
            for (int a = 0; a < 3; ++a) {
                b.min[a] = lo(rng);
                std::uniform_int_distribution<int> hi(b.min[a] + 1, coarse.dims[a]);
                b.max[a] = hi(rng);
            }
            const auto e = b.extents();
            Mask fine = random_mask(rng, e[0], e[1], e[2], 0.5);
            auto round = crop(decrop(fine, coarse, b), b);
            CHECK(round.data == fine.data);
            // voxels outside the box keep their coarse values
            auto out = decrop(fine, coarse, b);
            for (int z = 0; z < 6; ++z)
                for (int y = 0; y < 7; ++y)
                    for (int x = 0; x < 8; ++x) {
                        const bool in_box = x >= b.min[0] && x < b.max[0] && y >= b.min[1] &&
                                            y < b.max[1] && z >= b.min[2] && z < b.max[2];
                        if (!in_box) CHECK(out.at(x, y, z) == coarse.at(x, y, z));
                    }
        }
    }
    SECTION("dim mismatch rejected") {
        Mask coarse(6, 6, 6), fine(3, 3, 3);
        BoundingBox b{{0, 0, 0}, {2, 2, 2}};
        CHECK_THROWS_AS(decrop(fine, coarse, b), std::invalid_argument);
    }
}

TEST_CASE("remove_small_components") {
    SECTION("two components 90 vs 10 voxels at fraction 0.2") {
        Mask m(20, 10, 5);
        // component A: 90 voxels
        for (int z = 0; z < 3; ++z)
            for (int y = 0; y < 6; ++y)
                for (int x = 0; x < 5; ++x) m.at(x, y, z) = 1;
        // component B: 10 voxels, far away
        for (int x = 0; x < 10; ++x) m.at(10 + x, 9, 4) = 1;
        REQUIRE(m.count() == 100);
        auto out = remove_small_components(m, 0.2);
        CHECK(out.count() == 90);
        CHECK(out.at(0, 0, 0) == 1);
        CHECK(out.at(10, 9, 4) == 0);
    }
    SECTION("strictly-smaller rule: component exactly at the threshold survives") {
        Mask m(20, 1, 1);
        for (int x = 0; x < 8; ++x) m.at(x, 0, 0) = 1;   // 8 voxels
        for (int x = 18; x < 20; ++x) m.at(x, 0, 0) = 1;  // 2 voxels = 0.2 * 10
        auto out = remove_small_components(m, 0.2);
        CHECK(out.count() == 10);
    }
    SECTION("26-connectivity joins diagonal voxels") {
        Mask m(4, 4, 4);
        m.at(0, 0, 0) = 1;
        m.at(1, 1, 1) = 1;  // diagonal neighbor -> one component of 2
        auto out = remove_small_components(m, 0.9);
        CHECK(out.count() == 2);
    }
    SECTION("empty mask passes through") {
        Mask m(4, 4, 4);
        CHECK(remove_small_components(m, 0.2).count() == 0);
    }
    SECTION("never adds voxels and never splits a surviving component") {
        std::mt19937_64 rng(12);
        for (int trial = 0; trial < 20; ++trial) {
            Mask m = random_mask(rng, 10, 10, 10, 0.1);
            auto out = remove_small_components(m, 0.3);
            for (std::size_t i = 0; i < m.size(); ++i)
                if (out.data[i]) CHECK(m.data[i] == 1);
            // surviving voxels are exactly a union of whole input components:
            // re-filtering with fraction 0 must reproduce out
            CHECK(remove_small_components(out, 0.0).data == out.data);
        }
    }
    SECTION("fraction outside [0,1] rejected") {
        Mask m(2, 2, 2);
        CHECK_THROWS_AS(remove_small_components(m, -0.1), std::invalid_argument);
        CHECK_THROWS_AS(remove_small_components(m, 1.5), std::invalid_argument);
    }
}
