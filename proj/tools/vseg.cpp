// Command-line surface: synthetic data generation, training, inference,
// coarse-to-fine segmentation, adversarial attacks and robustness reports.
// Every run writes a manifest with the resolved config and artifact hashes;
// re-running the recorded argv in deterministic mode reproduces all outputs
// bit-identically.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vseg/adversarial.hpp"
#include "vseg/config.hpp"
#include "vseg/io.hpp"
#include "vseg/net.hpp"
#include "vseg/pipeline.hpp"
#include "vseg/synth.hpp"

namespace fs = std::filesystem;
using namespace vseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitContract = 4;
constexpr int kExitVerification = 5;

std::vector<std::string> g_argv;

Manifest make_manifest(const std::string& command, const ExperimentConfig& cfg) {
    Manifest m;
    m.command = command;
    m.argv = g_argv;
    m.resolved_config = to_json(cfg);
    m.seed = cfg.seed;
    return m;
}

fs::path manifest_path(const fs::path& out_dir, const std::string& command) {
    return out_dir / ("manifest-" + command + ".json");
}

// Dataset layout: <dir>/case_0000.vol + case_0000.mask, contiguous indices.
std::vector<std::pair<fs::path, fs::path>> list_cases(const fs::path& dir) {
    std::vector<std::pair<fs::path, fs::path>> cases;
    for (int i = 0;; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "case_%04d", i);
        fs::path vol = dir / (std::string(name) + ".vol");
        fs::path mask = dir / (std::string(name) + ".mask");
        if (!fs::exists(vol)) break;
        if (!fs::exists(mask)) throw IoError("missing mask for " + vol.string());
        cases.emplace_back(vol, mask);
    }
    if (cases.empty()) throw IoError("no cases found under " + dir.string());
    return cases;
}

Dataset load_normalized(const std::vector<std::pair<fs::path, fs::path>>& files,
                        const ExperimentConfig& cfg, Manifest& m) {
    Dataset data;
    for (const auto& [vp, mp] : files) {
        manifest_add_input(m, vp);
        manifest_add_input(m, mp);
        Sample s;
        s.vol = truncate_normalize(load_volume(vp), cfg.truncate_lo, cfg.truncate_hi);
        s.mask = load_mask(mp);
        data.push_back(std::move(s));
    }
    return data;
}

void print_log(const TrainLogEntry& e) {
    std::printf("iter %6d  lr %.6f  loss %.5f  main %.5f  aux1 %.5f  aux2 %.5f\n", e.iter, e.lr,
                e.total, e.main, e.aux1, e.aux2);
    std::fflush(stdout);
}

// --------------------------------------------------------------------------

int cmd_synth(const ExperimentConfig& cfg, int count, std::array<int, 3> dims) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    SynthConfig scfg;
    scfg.dims = dims;
    std::mt19937_64 rng(RngPool(cfg.seed).stream("synth"));
    Manifest m = make_manifest("synth", cfg);
    for (int i = 0; i < count; ++i) {
        auto c = synth_case(scfg, rng);
        char name[32];
        std::snprintf(name, sizeof name, "case_%04d", i);
        const fs::path vp = out / (std::string(name) + ".vol");
        const fs::path mp = out / (std::string(name) + ".mask");
        save_volume(vp, c.vol);
        save_mask(mp, c.mask);
        manifest_add_output(m, vp);
        manifest_add_output(m, mp);
    }
    save_manifest(manifest_path(out, "synth"), m);
    std::printf("wrote %d cases to %s\n", count, out.string().c_str());
    return kExitOk;
}

int cmd_train(ExperimentConfig cfg, const std::string& stage_name, const std::string& model_out,
              bool adversarial) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    Manifest m = make_manifest(adversarial ? "advtrain" : "train", cfg);
    const auto files = list_cases(cfg.data_dir);
    Dataset data = load_normalized(files, cfg, m);

    // epsilon has intensity-scale units; patches are per-volume normalized,
    // so scale by the mean truncated std over the dataset
    double mean_std = 0.0;
    for (const auto& [vp, mp] : files) {
        auto [mu, sd] = truncated_stats(load_volume(vp), cfg.truncate_lo, cfg.truncate_hi);
        mean_std += sd;
    }
    mean_std /= static_cast<double>(files.size());

    std::mt19937_64 init_rng(RngPool(cfg.seed).stream("init"));
    auto graph = NetworkGraph<float>::build(cfg.net, init_rng);

    TrainRecipe recipe;
    recipe.optim = cfg.optim;
    recipe.optim.max_iter = cfg.iterations;
    recipe.iterations = cfg.iterations;
    recipe.batch = cfg.batch;
    recipe.augment = cfg.augment;
    recipe.log_every = cfg.log_every;

    RngPool rngs(cfg.seed);
    const Stage stage = stage_from_name(stage_name);
    if (adversarial)
        adversarial_train(graph, data, stage, recipe, cfg.attack, mean_std, rngs, print_log);
    else
        train(graph, data, stage, recipe, rngs, print_log);

    const fs::path ckpt = out / model_out;
    checkpoint_save(graph, ckpt);
    manifest_add_output(m, ckpt);
    save_manifest(manifest_path(out, adversarial ? "advtrain" : "train"), m);
    std::printf("checkpoint: %s\n", ckpt.string().c_str());
    return kExitOk;
}

int cmd_predict(const ExperimentConfig& cfg, const std::string& model, const std::string& input,
                const std::string& out_prefix, int n) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    Manifest m = make_manifest("predict", cfg);
    manifest_add_input(m, model);
    manifest_add_input(m, input);

    auto graph = checkpoint_open<float>(model);
    Volume vol = truncate_normalize(load_volume(input), cfg.truncate_lo, cfg.truncate_hi);
    ProbMap pm = predict_volume(graph, vol, n, cfg.c2f.fusion);

    Volume prob(pm.dims[0], pm.dims[1], pm.dims[2]);
    prob.data = pm.data;
    const fs::path pp = out / (out_prefix + ".prob.vol");
    const fs::path mp = out / (out_prefix + ".pred.mask");
    save_volume(pp, prob);
    save_mask(mp, pm.threshold(cfg.c2f.prob_threshold));
    manifest_add_output(m, pp);
    manifest_add_output(m, mp);
    save_manifest(manifest_path(out, "predict"), m);
    std::printf("probabilities: %s\nmask: %s\n", pp.string().c_str(), mp.string().c_str());
    return kExitOk;
}

int cmd_c2f(const ExperimentConfig& cfg, const std::string& coarse_path,
            const std::string& fine_path, const std::string& input,
            const std::string& out_prefix) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    Manifest m = make_manifest("c2f", cfg);
    manifest_add_input(m, coarse_path);
    manifest_add_input(m, fine_path);
    manifest_add_input(m, input);

    auto coarse = checkpoint_open<float>(coarse_path);
    auto fine = checkpoint_open<float>(fine_path);
    if (coarse.spec.input_size != cfg.net.input_size || fine.spec.input_size != cfg.net.input_size)
        throw ContractError("checkpoint patch edge does not match the configured input_size");

    Volume vol = truncate_normalize(load_volume(input), cfg.truncate_lo, cfg.truncate_hi);
    auto r = coarse_to_fine(coarse, fine, vol, cfg.c2f);
    if (r.coarse_miss) std::printf("coarse miss: no foreground found by the coarse stage\n");

    const fs::path mp = out / (out_prefix + ".c2f.mask");
    save_mask(mp, r.mask);
    manifest_add_output(m, mp);
    save_manifest(manifest_path(out, "c2f"), m);
    std::printf("mask: %s\n", mp.string().c_str());
    return kExitOk;
}

int cmd_attack(const ExperimentConfig& cfg, const std::string& model, const std::string& input,
               const std::string& labels, const std::string& method,
               const std::string& out_name) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    Manifest m = make_manifest("attack", cfg);
    manifest_add_input(m, model);
    manifest_add_input(m, input);
    manifest_add_input(m, labels);

    auto graph = checkpoint_open<float>(model);
    Volume raw = load_volume(input);
    Mask lab = load_mask(labels);
    // attacks act in the truncated-intensity space with frozen clean stats
    Volume trunc = raw;
    for (auto& v : trunc.data) v = std::clamp(v, cfg.truncate_lo, cfg.truncate_hi);
    const auto [mean, sd] = truncated_stats(raw, cfg.truncate_lo, cfg.truncate_hi);

    const Volume padded = pad_to_patch(trunc, graph.spec.input_size);
    const Mask padded_mask = pad_to_patch(lab, graph.spec.input_size);
    const auto plan = plan_windows(padded.dims, graph.spec.input_size, cfg.c2f.n_coarse);

    Volume adv;
    if (method == "fgsm") {
        Volume g = volume_gradient(graph, padded, padded_mask, plan, mean, sd,
                                   cfg.attack.skip_background_windows);
        adv = fgsm(padded, g, cfg.attack);
    } else if (method == "ifgsm") {
        adv = ifgsm(graph, padded, padded_mask, plan, cfg.attack, mean, sd);
    } else {
        throw std::invalid_argument("unknown attack method: " + method);
    }
    if (adv.dims != trunc.dims) adv = crop(adv, BoundingBox{{0, 0, 0}, trunc.dims});
    adv.spacing = raw.spacing;

    const fs::path ap = out / out_name;
    save_volume(ap, adv);
    manifest_add_output(m, ap);
    save_manifest(manifest_path(out, "attack"), m);
    std::printf("adversarial volume: %s\n", ap.string().c_str());
    return kExitOk;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& pred_dir,
             const std::string& truth_dir) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    Manifest m = make_manifest("eval", cfg);

    std::vector<fs::path> preds;
    for (const auto& e : fs::directory_iterator(pred_dir))
        if (e.path().extension() == ".mask") preds.push_back(e.path());
    std::sort(preds.begin(), preds.end());
    if (preds.empty()) throw IoError("no .mask files under " + pred_dir);

    std::vector<double> scores;
    for (const auto& pp : preds) {
        const fs::path tp = fs::path(truth_dir) / pp.filename();
        if (!fs::exists(tp)) throw IoError("missing ground truth: " + tp.string());
        manifest_add_input(m, pp);
        manifest_add_input(m, tp);
        scores.push_back(dsc(load_mask(pp), load_mask(tp)));
    }
    double sum = 0;
    for (double s : scores) sum += s;
    const double mean = sum / scores.size();
    double sq = 0;
    for (double s : scores) sq += (s - mean) * (s - mean);
    const double sd = std::sqrt(sq / scores.size());
    const double mx = *std::max_element(scores.begin(), scores.end());
    const double mn = *std::min_element(scores.begin(), scores.end());

    std::printf("cases %zu\nMean DSC %.4f +/- %.4f\nMax DSC %.4f\nMin DSC %.4f\n", scores.size(),
                mean, sd, mx, mn);
    nlohmann::json j;
    j["cases"] = scores.size();
    j["per_case"] = scores;
    j["mean"] = mean;
    j["std"] = sd;
    j["max"] = mx;
    j["min"] = mn;
    const fs::path rp = out / "eval.json";
    {
        detail::AtomicFile f(rp);
        f.stream() << j.dump(2) << "\n";
        f.commit();
    }
    manifest_add_output(m, rp);
    save_manifest(manifest_path(out, "eval"), m);
    return kExitOk;
}

// --------------------------------------------------------------------------
// gradcheck: central finite differences against every layer's backward at
// 64-bit; exits nonzero if any relative error reaches 1e-4.
// --------------------------------------------------------------------------

struct GradReport {
    std::string layer;
    double max_rel = 0.0;
};

double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-10});
    return std::abs(a - b) / scale;
}

template <typename LossFn>
double check_tensor(Tensor<double>& buf, const Tensor<double>& analytic, LossFn&& loss) {
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const double orig = buf.data[i];
        buf.data[i] = orig + h;
        const double lp = loss();
        buf.data[i] = orig - h;
        const double lm = loss();
        buf.data[i] = orig;
        worst = std::max(worst, rel_err((lp - lm) / (2 * h), analytic.data[i]));
    }
    return worst;
}

Tensor<double> rand_tensor(int n, int c, int d, int h, int w, std::mt19937_64& rng) {
    Tensor<double> t(n, c, d, h, w);
    for (auto& v : t.data) v = uniform_real(rng, -1.0, 1.0);
    return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

int cmd_gradcheck() {
    std::mt19937_64 rng(20240817);
    std::vector<GradReport> reports;

    {  // conv3d, k=3 s=1 p=1
        auto x = rand_tensor(1, 2, 4, 4, 4, rng), w = rand_tensor(3, 2, 3, 3, 3, rng);
        auto b = rand_tensor(1, 3, 1, 1, 1, rng);
        auto cot = rand_tensor(1, 3, 4, 4, 4, rng);
        auto loss = [&] { return dot(conv3d_forward(x, w, b, 1, 1), cot); };
        Tensor<double> dw(3, 2, 3, 3, 3), db(1, 3, 1, 1, 1);
        conv3d_grad_weight(x, cot, dw, db, 1, 1);
        auto dx = conv3d_grad_input(cot, w, x.shape, 1, 1);
        double worst = std::max({check_tensor(x, dx, loss), check_tensor(w, dw, loss),
                                 check_tensor(b, db, loss)});
        reports.push_back({"conv3d", worst});
    }
    {  // deconv3d, k=4 s=2 p=1
        auto x = rand_tensor(1, 4, 2, 2, 2, rng), w = rand_tensor(4, 2, 4, 4, 4, rng);
        auto b = rand_tensor(1, 2, 1, 1, 1, rng);
        auto cot = rand_tensor(1, 2, 4, 4, 4, rng);
        auto loss = [&] { return dot(deconv3d_forward(x, w, b), cot); };
        Tensor<double> dw(4, 2, 4, 4, 4), db(1, 2, 1, 1, 1);
        deconv3d_grad_weight(x, cot, dw, db);
        auto dx = deconv3d_grad_input(cot, w);
        double worst = std::max({check_tensor(x, dx, loss), check_tensor(w, dw, loss),
                                 check_tensor(b, db, loss)});
        reports.push_back({"deconv3d", worst});
    }
    {  // maxpool3d
        auto x = rand_tensor(1, 2, 4, 4, 4, rng);
        auto cot = rand_tensor(1, 2, 2, 2, 2, rng);
        std::vector<std::int64_t> arg;
        auto loss = [&] {
            std::vector<std::int64_t> a2;
            return dot(maxpool3d_forward(x, a2), cot);
        };
        maxpool3d_forward(x, arg);
        auto dx = maxpool3d_backward(cot, arg, x.shape);
        reports.push_back({"maxpool3d", check_tensor(x, dx, loss)});
    }
    {  // batchnorm3d, train mode
        auto x = rand_tensor(2, 3, 2, 2, 2, rng);
        auto gamma = rand_tensor(1, 3, 1, 1, 1, rng), beta = rand_tensor(1, 3, 1, 1, 1, rng);
        auto cot = rand_tensor(2, 3, 2, 2, 2, rng);
        auto loss = [&] {
            BNState<double> st(3);
            BNCache<double> c;
            return dot(batchnorm3d_forward(x, gamma, beta, st, true, c), cot);
        };
        BNState<double> st(3);
        BNCache<double> cache;
        batchnorm3d_forward(x, gamma, beta, st, true, cache);
        Tensor<double> dgamma(1, 3, 1, 1, 1), dbeta(1, 3, 1, 1, 1);
        auto dx = batchnorm3d_backward(x, cot, gamma, cache, dgamma, dbeta);
        double worst = std::max({check_tensor(x, dx, loss), check_tensor(gamma, dgamma, loss),
                                 check_tensor(beta, dbeta, loss)});
        reports.push_back({"batchnorm3d", worst});
    }
    {  // relu
        auto x = rand_tensor(1, 2, 3, 3, 3, rng);
        auto cot = rand_tensor(1, 2, 3, 3, 3, rng);
        auto loss = [&] { return dot(relu_forward(x), cot); };
        auto dx = relu_backward(x, cot);
        reports.push_back({"relu", check_tensor(x, dx, loss)});
    }
    {  // add
        auto x = rand_tensor(1, 2, 3, 3, 3, rng), y = rand_tensor(1, 2, 3, 3, 3, rng);
        auto cot = rand_tensor(1, 2, 3, 3, 3, rng);
        auto loss = [&] { return dot(add(x, y), cot); };
        // d(add)/dx = d(add)/dy = cot
        double worst = std::max(check_tensor(x, cot, loss), check_tensor(y, cot, loss));
        reports.push_back({"add", worst});
    }
    {  // softmax cross-entropy
        auto logits = rand_tensor(1, 2, 3, 3, 3, rng);
        Tensor<std::uint8_t> labels(1, 1, 3, 3, 3);
        for (auto& v : labels.data) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 1));
        auto loss = [&] { return softmax_xent(logits, labels).loss; };
        auto r = softmax_xent(logits, labels);
        reports.push_back({"softmax_xent", check_tensor(logits, r.grad_logits, loss)});
    }

    bool ok = true;
    for (const auto& r : reports) {
        const bool pass = r.max_rel < 1e-4;
        ok = ok && pass;
        std::printf("%-14s max_rel %.3e  %s\n", r.layer.c_str(), r.max_rel,
                    pass ? "ok" : "FAIL");
    }
    return ok ? kExitOk : kExitVerification;
}

int cmd_report(const ExperimentConfig& cfg, const std::string& nat_path,
               const std::string& adv_path) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    Manifest m = make_manifest("report", cfg);
    manifest_add_input(m, nat_path);
    manifest_add_input(m, adv_path);

    auto nat = checkpoint_open<float>(nat_path);
    auto adv = checkpoint_open<float>(adv_path);

    std::vector<EvalCase> cases;
    for (const auto& [vp, mp] : list_cases(cfg.data_dir)) {
        manifest_add_input(m, vp);
        manifest_add_input(m, mp);
        EvalCase c;
        c.truncated = load_volume(vp);
        for (auto& v : c.truncated.data) v = std::clamp(v, cfg.truncate_lo, cfg.truncate_hi);
        c.mask = load_mask(mp);
        cases.push_back(std::move(c));
    }

    auto table = robustness_report(nat, adv, cases, cfg.attack, cfg.c2f.n_coarse,
                                   cfg.c2f.fusion);
    std::printf("model\tclean\tfgsm\tifgsm\tmax_drop\n");
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : table.rows) {
        std::printf("%s\t%.4f+/-%.4f\t%.4f+/-%.4f\t%.4f+/-%.4f\t%.4f\n", r.model.c_str(),
                    r.clean_mean, r.clean_std, r.fgsm_mean, r.fgsm_std, r.ifgsm_mean, r.ifgsm_std,
                    r.max_drop);
        rows.push_back({{"model", r.model},
                        {"clean_mean", r.clean_mean},
                        {"clean_std", r.clean_std},
                        {"fgsm_mean", r.fgsm_mean},
                        {"fgsm_std", r.fgsm_std},
                        {"ifgsm_mean", r.ifgsm_mean},
                        {"ifgsm_std", r.ifgsm_std},
                        {"max_drop", r.max_drop}});
    }
    const fs::path rp = out / "robustness.json";
    {
        detail::AtomicFile f(rp);
        f.stream() << rows.dump(2) << "\n";
        f.commit();
    }
    manifest_add_output(m, rp);
    save_manifest(manifest_path(out, "report"), m);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    for (int i = 0; i < argc; ++i) g_argv.emplace_back(argv[i]);

    CLI::App app{"volumetric coarse-to-fine segmentation engine"};
    app.require_subcommand(1);

    // The config file supplies defaults and explicit flags override them, so
    // it must be loaded before the CLI options (bound to cfg) are parsed.
    ExperimentConfig cfg;
    std::string config_path;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    if (!config_path.empty()) {
        try {
            cfg = load_config(config_path);
        } catch (const IoError& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return kExitIo;
        } catch (const std::invalid_argument& e) {
            std::fprintf(stderr, "config error: %s\n", e.what());
            return kExitConfig;
        }
    }
    std::string config_sink;
    app.add_option("--config", config_sink, "experiment config (json)");
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_sink, "experiment config (json)");
        sub->add_option("--seed", cfg.seed, "master seed");
        sub->add_option("--out-dir", cfg.out_dir, "output directory");
        sub->add_option("--data", cfg.data_dir, "dataset directory");
        sub->add_option("--iterations", cfg.iterations, "training iterations");
        sub->add_option("--batch", cfg.batch, "mini-batch size");
        sub->add_option("--log-every", cfg.log_every, "training log interval");
        sub->add_option("--base-lr", cfg.optim.base_lr, "base learning rate");
        sub->add_option("--channels", cfg.net.base_channels, "base channel count");
        sub->add_option("--patch", cfg.net.input_size, "patch edge");
        sub->add_option("--n-coarse", cfg.c2f.n_coarse, "coarse overlap parameter");
        sub->add_option("--n-fine", cfg.c2f.n_fine, "fine overlap parameter");
        sub->add_option("--margin", cfg.c2f.margin, "crop margin");
        sub->add_option("--epsilon", cfg.attack.epsilon, "attack epsilon (intensity units)");
        sub->add_option("--alpha", cfg.attack.alpha, "attack step size");
        sub->add_option("--attack-iters", cfg.attack.iters, "attack iterations");
        sub->add_flag("--no-augment{false}", cfg.augment, "disable augmentation");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    int synth_count = 10;
    std::vector<int> synth_dims{48, 48, 48};
    synth->add_option("--count", synth_count, "number of cases");
    synth->add_option("--dims", synth_dims, "volume dims (W H D)")->expected(3);
    add_common(synth);

    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string stage = "coarse", model_out = "model.ckpt";
    train_cmd->add_option("--stage", stage, "coarse|fine");
    train_cmd->add_option("--model-out", model_out, "checkpoint filename");
    add_common(train_cmd);

    auto* advtrain = app.add_subcommand("advtrain", "adversarial training");
    advtrain->add_option("--stage", stage, "coarse|fine");
    advtrain->add_option("--model-out", model_out, "checkpoint filename");
    add_common(advtrain);

    auto* predict = app.add_subcommand("predict", "sliding-window inference");
    std::string model, input, out_prefix = "out";
    int n_windows = 6;
    predict->add_option("--model", model, "checkpoint")->required();
    predict->add_option("--input", input, "volume file")->required();
    predict->add_option("--out-prefix", out_prefix, "output name prefix");
    predict->add_option("--n", n_windows, "overlap parameter");
    add_common(predict);

    auto* c2f = app.add_subcommand("c2f", "coarse-to-fine segmentation");
    std::string coarse_ckpt, fine_ckpt;
    c2f->add_option("--coarse", coarse_ckpt, "coarse checkpoint")->required();
    c2f->add_option("--fine", fine_ckpt, "fine checkpoint")->required();
    c2f->add_option("--input", input, "volume file")->required();
    c2f->add_option("--out-prefix", out_prefix, "output name prefix");
    add_common(c2f);

    auto* attack = app.add_subcommand("attack", "generate adversarial volumes");
    std::string labels, method = "ifgsm", attack_out = "adversarial.vol";
    attack->add_option("--model", model, "checkpoint")->required();
    attack->add_option("--input", input, "volume file")->required();
    attack->add_option("--labels", labels, "ground-truth mask")->required();
    attack->add_option("--method", method, "fgsm|ifgsm");
    attack->add_option("--out-name", attack_out, "output filename");
    add_common(attack);

    auto* eval_cmd = app.add_subcommand("eval", "DSC statistics over a case list");
    std::string pred_dir, truth_dir;
    eval_cmd->add_option("--pred", pred_dir, "directory of predicted masks")->required();
    eval_cmd->add_option("--truth", truth_dir, "directory of ground-truth masks")->required();
    add_common(eval_cmd);

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference layer audit");
    (void)gradcheck;

    auto* report = app.add_subcommand("report", "robustness comparison table");
    std::string nat_ckpt, adv_ckpt;
    report->add_option("--natural", nat_ckpt, "naturally trained checkpoint")->required();
    report->add_option("--adversarial", adv_ckpt, "adversarially trained checkpoint")->required();
    add_common(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (synth->parsed())
            return cmd_synth(cfg, synth_count, {synth_dims[0], synth_dims[1], synth_dims[2]});
        if (train_cmd->parsed()) return cmd_train(cfg, stage, model_out, false);
        if (advtrain->parsed()) return cmd_train(cfg, stage, model_out, true);
        if (predict->parsed()) {
            ExperimentConfig pc = cfg;
            return cmd_predict(pc, model, input, out_prefix, n_windows);
        }
        if (c2f->parsed()) return cmd_c2f(cfg, coarse_ckpt, fine_ckpt, input, out_prefix);
        if (attack->parsed()) return cmd_attack(cfg, model, input, labels, method, attack_out);
        if (eval_cmd->parsed()) return cmd_eval(cfg, pred_dir, truth_dir);
        if (gradcheck->parsed()) return cmd_gradcheck();
        if (report->parsed()) return cmd_report(cfg, nat_ckpt, adv_ckpt);
    } catch (const ContractError& e) {
        std::fprintf(stderr, "contract violation: %s\n", e.what());
        return kExitContract;
    } catch (const NoForegroundError& e) {
        std::fprintf(stderr, "contract violation: %s\n", e.what());
        return kExitContract;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "verification failure: %s\n", e.what());
        return kExitVerification;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitVerification;
    }
    return kExitOk;
}
