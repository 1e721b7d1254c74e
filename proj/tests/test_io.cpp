#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "vseg/config.hpp"
#include "vseg/io.hpp"
#include "vseg/synth.hpp"

using namespace vseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("vseg_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("volume files round-trip bit-exactly") {
    TempDir tmp;
    std::mt19937_64 rng(1);

    SECTION("f32 volume") {
        Volume v(7, 5, 3);
        v.spacing = {0.5f, 0.75f, 2.f};
        for (auto& x : v.data) x = static_cast<float>(uniform_real(rng, -1000.0, 1000.0));
        v.data[3] = -0.f;  // signed zero must survive
        const auto p = tmp.path / "v.vol";
        save_volume(p, v);
        Volume w = load_volume(p);
        CHECK(w.dims == v.dims);
        CHECK(w.spacing == v.spacing);
        REQUIRE(std::memcmp(w.data.data(), v.data.data(), v.size() * sizeof(float)) == 0);

        // saving the loaded copy reproduces the file byte-for-byte
        const auto p2 = tmp.path / "v2.vol";
        save_volume(p2, w);
        CHECK(slurp(p) == slurp(p2));
    }
    SECTION("u8 mask") {
        Mask m(4, 6, 9);
        for (auto& x : m.data) x = static_cast<std::uint8_t>(uniform_int(rng, 0, 1));
        const auto p = tmp.path / "m.mask";
        save_mask(p, m);
        Mask n = load_mask(p);
        CHECK(n.dims == m.dims);
        CHECK(n.data == m.data);
    }
    SECTION("payload length equals W*H*D times dtype size") {
        Volume v(6, 5, 4);
        const auto p = tmp.path / "sz.vol";
        save_volume(p, v);
        std::ifstream in(p, std::ios::binary);
        std::string line;
        std::size_t header = 0;
        while (std::getline(in, line)) {
            header += line.size() + 1;
            if (line == "end") break;
        }
        CHECK(fs::file_size(p) - header == 6u * 5u * 4u * sizeof(float));
    }
}

TEST_CASE("volume file error handling") {
    TempDir tmp;
    SECTION("missing file") { CHECK_THROWS_AS(load_volume(tmp.path / "no.vol"), IoError); }
    SECTION("wrong magic") {
        const auto p = tmp.path / "bad.vol";
        std::ofstream(p) << "NOTVSEG\n";
        CHECK_THROWS_AS(load_volume(p), IoError);
    }
    SECTION("truncated payload") {
        Volume v(8, 8, 8);
        const auto p = tmp.path / "t.vol";
        save_volume(p, v);
        fs::resize_file(p, fs::file_size(p) - 13);
        CHECK_THROWS_AS(load_volume(p), IoError);
    }
    SECTION("dtype mismatch between loaders") {
        Volume v(2, 2, 2);
        const auto p = tmp.path / "f.vol";
        save_volume(p, v);
        CHECK_THROWS_AS(load_mask(p), IoError);
    }
    SECTION("no partial files on interrupted write (temp + rename)") {
        Volume v(2, 2, 2);
        const auto p = tmp.path / "atomic.vol";
        save_volume(p, v);
        CHECK(fs::exists(p));
        CHECK(!fs::exists(p.string() + ".tmp"));
    }
}

TEST_CASE("checkpoint round trip") {
    TempDir tmp;
    std::mt19937_64 rng(5);
    NetSpec spec;
    spec.base_channels = 2;
    spec.input_size = 16;
    auto g = NetworkGraph<float>::build(spec, rng);

    // give BN stats non-default values by running a train-mode forward
    Tensor<float> x(1, 1, 16, 16, 16);
    for (auto& v : x.data) v = static_cast<float>(uniform_real(rng, -1.0, 1.0));
    g.forward(x, true);

    const auto p = tmp.path / "model.ckpt";
    checkpoint_save(g, p);

    SECTION("loaded graph forwards bit-identically") {
        std::mt19937_64 rng2(999);
        auto h = NetworkGraph<float>::build(spec, rng2);
        checkpoint_load(h, p);
        auto ya = g.forward(x, false);
        auto yb = h.forward(x, false);
        REQUIRE(ya.logits_main.data == yb.logits_main.data);
    }
    SECTION("checkpoint_open rebuilds from the stored spec") {
        auto h = checkpoint_open<float>(p);
        CHECK(h.spec == spec);
        auto ya = g.forward(x, false);
        auto yb = h.forward(x, false);
        REQUIRE(ya.logits_main.data == yb.logits_main.data);
    }
    SECTION("variant mismatch is rejected") {
        NetSpec other = spec;
        other.variant = Variant::FResDSN;
        std::mt19937_64 rng2(1);
        auto h = NetworkGraph<float>::build(other, rng2);
        CHECK_THROWS_AS(checkpoint_load(h, p), ContractError);
    }
    SECTION("patch-size mismatch is rejected") {
        NetSpec other = spec;
        other.input_size = 32;
        std::mt19937_64 rng2(1);
        auto h = NetworkGraph<float>::build(other, rng2);
        CHECK_THROWS_AS(checkpoint_load(h, p), ContractError);
    }
    SECTION("truncated checkpoint is rejected") {
        fs::resize_file(p, fs::file_size(p) - 40);
        std::mt19937_64 rng2(1);
        auto h = NetworkGraph<float>::build(spec, rng2);
        CHECK_THROWS_AS(checkpoint_load(h, p), ContractError);
    }
    SECTION("file size is parameter count x 4 bytes plus BN stats and header") {
        std::size_t bn_channels = 0;
        for (auto* u : g.all_units())
            if (u->has_bn_relu)
                bn_channels +=
                    static_cast<std::size_t>(u->transposed ? u->w.value.c() : u->w.value.n());
        const std::size_t payload = (g.count_params() + 2 * bn_channels) * sizeof(float);
        CHECK(fs::file_size(p) >= payload);
        CHECK(fs::file_size(p) <= payload + 256);  // small text header
    }
}

TEST_CASE("synthetic dataset generator audits") {
    SynthConfig cfg;
    cfg.dims = {48, 48, 48};

    SECTION("deterministic under a fixed seed") {
        std::mt19937_64 a(77), b(77);
        auto ca = synth_cases(3, cfg, a);
        auto cb = synth_cases(3, cfg, b);
        for (int i = 0; i < 3; ++i) {
            REQUIRE(ca[i].vol.data == cb[i].vol.data);
            REQUIRE(ca[i].mask.data == cb[i].mask.data);
        }
    }
    SECTION("masks are non-empty with foreground fraction in [0.1%, 10%]") {
        std::mt19937_64 rng(101);
        for (int i = 0; i < 10; ++i) {
            auto c = synth_case(cfg, rng);
            const double f =
                static_cast<double>(c.mask.count()) / static_cast<double>(c.mask.size());
            CHECK(f >= 0.001);
            CHECK(f <= 0.10);
        }
    }
    SECTION("raw intensities span beyond the truncation window") {
        std::mt19937_64 rng(103);
        auto c = synth_case(cfg, rng);
        float lo = 1e9f, hi = -1e9f;
        for (auto v : c.vol.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        CHECK(lo < -100.f);
        CHECK(hi > 240.f);
    }
}

TEST_CASE("experiment config serialization") {
    TempDir tmp;
    ExperimentConfig c;
    c.net.variant = Variant::FResDSN;
    c.net.base_channels = 8;
    c.net.input_size = 32;
    c.c2f.n_coarse = 3;
    c.c2f.fusion = Fusion::Vote;
    c.optim.base_lr = 0.005;
    c.attack.epsilon = 5.1;
    c.iterations = 2000;
    c.seed = 42;
    c.data_dir = "data";

    const auto p = tmp.path / "cfg.json";
    save_config(p, c);
    ExperimentConfig d = load_config(p);
    CHECK(d.net == c.net);
    CHECK(d.c2f.n_coarse == 3);
    CHECK(d.c2f.fusion == Fusion::Vote);
    CHECK(d.optim.base_lr == 0.005);
    CHECK(d.attack.epsilon == 5.1);
    CHECK(d.iterations == 2000);
    CHECK(d.seed == 42);
    CHECK(d.data_dir == "data");

    SECTION("defaults carry the published settings") {
        ExperimentConfig def;
        CHECK(def.optim.base_lr == 0.01);
        CHECK(def.optim.momentum_coef == 0.9);
        CHECK(def.optim.weight_decay == 0.0005);
        CHECK(def.optim.power == 0.9);
        CHECK(def.batch == 16);
        CHECK(def.c2f.n_coarse == 6);
        CHECK(def.c2f.n_fine == 12);
        CHECK(def.net.xi1 == 0.2);
        CHECK(def.net.xi2 == 0.4);
        CHECK(def.attack.lambda_range == 340.0);
        CHECK(def.attack.epsilon == Catch::Approx(10.2));
        CHECK(def.attack.alpha == Catch::Approx(3.4));
        CHECK(def.attack.iters == 5);
        CHECK(def.truncate_lo == -100.f);
        CHECK(def.truncate_hi == 240.f);
    }
    SECTION("malformed config raises a config error") {
        const auto bad = tmp.path / "bad.json";
        std::ofstream(bad) << "{ not json";
        CHECK_THROWS_AS(load_config(bad), std::invalid_argument);
    }
}

TEST_CASE("manifest records hashes that detect changes") {
    TempDir tmp;
    Volume v(4, 4, 4);
    v.data[7] = 1.25f;
    const auto p = tmp.path / "a.vol";
    save_volume(p, v);

    Manifest m;
    m.command = "predict";
    manifest_add_output(m, p);
    const std::string h1 = m.outputs[p.string()];

    v.data[7] = 1.26f;
    save_volume(p, v);
    Manifest m2;
    manifest_add_output(m2, p);
    CHECK(m2.outputs[p.string()] != h1);

    const auto mp = tmp.path / "manifest.json";
    save_manifest(mp, m);
    std::ifstream in(mp);
    nlohmann::json j;
    in >> j;
    CHECK(j["command"] == "predict");
    CHECK(j["outputs"][p.string()] == h1);
}
