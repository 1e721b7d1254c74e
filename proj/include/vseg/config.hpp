#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "vseg/adversarial.hpp"
#include "vseg/io.hpp"
#include "vseg/net.hpp"
#include "vseg/optimizer.hpp"
#include "vseg/pipeline.hpp"

namespace vseg {

// One structured config drives every command; fields default to the
// published training/attack settings and can be overridden per run.
struct ExperimentConfig {
    NetSpec net;                   // variant, channels, patch edge, xi weights
    C2FConfig c2f;                 // overlaps, margin, fusion, threshold
    OptimState optim;              // lr schedule, momentum, weight decay
    AttackConfig attack;           // epsilon, alpha, iters, dynamic range
    int iterations = 80000;        // training iterations (optim.max_iter tracks this)
    int batch = 16;
    bool augment = true;
    int log_every = 100;
    float truncate_lo = -100.f;
    float truncate_hi = 240.f;
    std::uint64_t seed = 1;
    bool deterministic = true;
    std::string data_dir;          // dataset root (case_XXXX.{vol,mask})
    std::string out_dir = ".";
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["net"] = {{"variant", variant_name(c.net.variant)},
                {"base_channels", c.net.base_channels},
                {"input_size", c.net.input_size},
                {"num_classes", c.net.num_classes},
                {"xi1", c.net.xi1},
                {"xi2", c.net.xi2}};
    j["c2f"] = {{"n_coarse", c.c2f.n_coarse},
                {"n_fine", c.c2f.n_fine},
                {"margin", c.c2f.margin},
                {"fusion", c.c2f.fusion == Fusion::Average ? "average" : "vote"},
                {"min_component_fraction", c.c2f.min_component_fraction},
                {"prob_threshold", c.c2f.prob_threshold},
                {"mask_intensities", c.c2f.mask_intensities}};
    j["optim"] = {{"base_lr", c.optim.base_lr},
                  {"momentum", c.optim.momentum_coef},
                  {"weight_decay", c.optim.weight_decay},
                  {"power", c.optim.power},
                  {"max_iter", c.optim.max_iter}};
    j["attack"] = {{"lambda_range", c.attack.lambda_range},
                   {"epsilon", c.attack.epsilon},
                   {"alpha", c.attack.alpha},
                   {"iters", c.attack.iters},
                   {"skip_background_windows", c.attack.skip_background_windows}};
    j["iterations"] = c.iterations;
    j["batch"] = c.batch;
    j["augment"] = c.augment;
    j["log_every"] = c.log_every;
    j["truncate_lo"] = c.truncate_lo;
    j["truncate_hi"] = c.truncate_hi;
    j["seed"] = c.seed;
    j["deterministic"] = c.deterministic;
    j["data_dir"] = c.data_dir;
    j["out_dir"] = c.out_dir;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("net")) {
        const auto& n = j.at("net");
        if (n.contains("variant")) c.net.variant = variant_from_name(n.at("variant"));
        if (n.contains("base_channels")) c.net.base_channels = n.at("base_channels");
        if (n.contains("input_size")) c.net.input_size = n.at("input_size");
        if (n.contains("num_classes")) c.net.num_classes = n.at("num_classes");
        if (n.contains("xi1")) c.net.xi1 = n.at("xi1");
        if (n.contains("xi2")) c.net.xi2 = n.at("xi2");
    }
    if (j.contains("c2f")) {
        const auto& n = j.at("c2f");
        if (n.contains("n_coarse")) c.c2f.n_coarse = n.at("n_coarse");
        if (n.contains("n_fine")) c.c2f.n_fine = n.at("n_fine");
        if (n.contains("margin")) c.c2f.margin = n.at("margin");
        if (n.contains("fusion")) c.c2f.fusion = fusion_from_name(n.at("fusion"));
        if (n.contains("min_component_fraction"))
            c.c2f.min_component_fraction = n.at("min_component_fraction");
        if (n.contains("prob_threshold")) c.c2f.prob_threshold = n.at("prob_threshold");
        if (n.contains("mask_intensities")) c.c2f.mask_intensities = n.at("mask_intensities");
    }
    if (j.contains("optim")) {
        const auto& n = j.at("optim");
        if (n.contains("base_lr")) c.optim.base_lr = n.at("base_lr");
        if (n.contains("momentum")) c.optim.momentum_coef = n.at("momentum");
        if (n.contains("weight_decay")) c.optim.weight_decay = n.at("weight_decay");
        if (n.contains("power")) c.optim.power = n.at("power");
        if (n.contains("max_iter")) c.optim.max_iter = n.at("max_iter");
    }
    if (j.contains("attack")) {
        const auto& n = j.at("attack");
        if (n.contains("lambda_range")) c.attack.lambda_range = n.at("lambda_range");
        if (n.contains("epsilon")) c.attack.epsilon = n.at("epsilon");
        if (n.contains("alpha")) c.attack.alpha = n.at("alpha");
        if (n.contains("iters")) c.attack.iters = n.at("iters");
        if (n.contains("skip_background_windows"))
            c.attack.skip_background_windows = n.at("skip_background_windows");
    }
    if (j.contains("iterations")) c.iterations = j.at("iterations");
    if (j.contains("batch")) c.batch = j.at("batch");
    if (j.contains("augment")) c.augment = j.at("augment");
    if (j.contains("log_every")) c.log_every = j.at("log_every");
    if (j.contains("truncate_lo")) c.truncate_lo = j.at("truncate_lo");
    if (j.contains("truncate_hi")) c.truncate_hi = j.at("truncate_hi");
    if (j.contains("seed")) c.seed = j.at("seed");
    if (j.contains("deterministic")) c.deterministic = j.at("deterministic");
    if (j.contains("data_dir")) c.data_dir = j.at("data_dir");
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir");
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        return config_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("malformed config " + path.string() + ": " + e.what());
    }
}

inline void save_config(const std::filesystem::path& path, const ExperimentConfig& c) {
    detail::AtomicFile f(path);
    f.stream() << to_json(c).dump(2) << "\n";
    f.commit();
}

// ---------------------------------------------------------------------------
// Run manifest: the resolved config, full argument vector, and an FNV-1a hash
// of every input and output artifact. Re-running the recorded argv in
// deterministic mode must reproduce all output hashes.
// ---------------------------------------------------------------------------

struct Manifest {
    std::string command;
    std::vector<std::string> argv;
    nlohmann::json resolved_config;
    std::uint64_t seed = 0;
    nlohmann::json inputs = nlohmann::json::object();   // path -> hash (hex)
    nlohmann::json outputs = nlohmann::json::object();  // path -> hash (hex)
};

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline void manifest_add_input(Manifest& m, const std::filesystem::path& p) {
    m.inputs[p.string()] = hash_hex(fnv1a64_file(p));
}
inline void manifest_add_output(Manifest& m, const std::filesystem::path& p) {
    m.outputs[p.string()] = hash_hex(fnv1a64_file(p));
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["argv"] = m.argv;
    j["config"] = m.resolved_config;
    j["seed"] = m.seed;
    j["inputs"] = m.inputs;
    j["outputs"] = m.outputs;
    detail::AtomicFile f(path);
    f.stream() << j.dump(2) << "\n";
    f.commit();
}

}  // namespace vseg
