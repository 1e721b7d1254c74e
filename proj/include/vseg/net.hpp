#pragma once

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vseg/layers.hpp"
#include "vseg/tensor.hpp"

namespace vseg {

// Table-1 connection-pattern variants of the same encoder/decoder backbone.
enum class Variant { ResDSN, FResDSN, SResDSN, DSN };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::ResDSN: return "ResDSN";
        case Variant::FResDSN: return "FResDSN";
        case Variant::SResDSN: return "SResDSN";
        case Variant::DSN: return "DSN";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "ResDSN") return Variant::ResDSN;
    if (s == "FResDSN") return Variant::FResDSN;
    if (s == "SResDSN") return Variant::SResDSN;
    if (s == "DSN") return Variant::DSN;
    throw std::invalid_argument("unknown variant: " + s);
}

struct NetSpec {
    Variant variant = Variant::ResDSN;
    int base_channels = 32;
    int input_size = 64;   // cubic patch edge, divisible by 8
    int num_classes = 2;
    double xi1 = 0.2;  // aux branch from stage-2 features
    double xi2 = 0.4;  // aux branch from stage-3 features

    bool long_residual() const {
        return variant == Variant::ResDSN || variant == Variant::FResDSN;
    }
    bool short_residual() const {
        return variant == Variant::FResDSN || variant == Variant::SResDSN;
    }
    bool deep_supervision() const { return true; }  // all four variants

    bool operator==(const NetSpec&) const = default;
};

// ---------------------------------------------------------------------------
// A conv (or transposed conv) followed by BN and ReLU, the building block of
// every layer except the 1x1x1 class heads.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvUnit {
    Param<T> w, b, gamma, beta;
    BNState<T> bn;
    bool transposed = false;
    bool has_bn_relu = true;
    int stride = 1, pad = 1;
    std::string name;

    static ConvUnit conv(std::string name, int cin, int cout, int k, int pad,
                         bool bn_relu = true) {
        ConvUnit u;
        u.name = std::move(name);
        u.w = Param<T>(Tensor<T>(cout, cin, k, k, k));
        u.b = Param<T>(Tensor<T>(1, cout, 1, 1, 1));
        u.stride = 1;
        u.pad = pad;
        u.has_bn_relu = bn_relu;
        if (bn_relu) u.init_bn(cout);
        return u;
    }

    static ConvUnit deconv(std::string name, int cin, int cout) {
        ConvUnit u;
        u.name = std::move(name);
        u.transposed = true;
        u.w = Param<T>(Tensor<T>(cin, cout, kDeconvK, kDeconvK, kDeconvK));
        u.b = Param<T>(Tensor<T>(1, cout, 1, 1, 1));
        u.init_bn(cout);
        return u;
    }

    void init_bn(int cout) {
        Tensor<T> g(1, cout, 1, 1, 1);
        g.fill(T(1));
        gamma = Param<T>(std::move(g));
        beta = Param<T>(Tensor<T>(1, cout, 1, 1, 1));
        bn = BNState<T>(cout);
    }

    void init_weights(std::mt19937_64& rng) {
        const int k = w.value.d();
        const int fan_in = (transposed ? w.value.n() : w.value.c()) * k * k * k;
        const T s = static_cast<T>(std::sqrt(3.0 / fan_in));
        std::uniform_real_distribution<double> dist(-s, s);
        for (auto& v : w.value.data) v = static_cast<T>(dist(rng));
        b.value.fill(T(0));
    }

    std::size_t learnable_count() const {
        return w.size() + b.size() + (has_bn_relu ? gamma.size() + beta.size() : 0);
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
        if (has_bn_relu) {
            out.push_back(&gamma);
            out.push_back(&beta);
        }
    }

    struct Cache {
        Tensor<T> x;        // unit input
        Tensor<T> conv_out;
        Tensor<T> bn_out;
        BNCache<T> bn_cache;
        Tensor<T> out;
    };

    Tensor<T> forward(const Tensor<T>& x, bool train, Cache& c) {
        c.x = x;
        c.conv_out = transposed ? deconv3d_forward(x, w.value, b.value)
                                : conv3d_forward(x, w.value, b.value, stride, pad);
        if (!has_bn_relu) {
            c.out = c.conv_out;
            return c.out;
        }
        c.bn_out = batchnorm3d_forward(c.conv_out, gamma.value, beta.value, bn, train, c.bn_cache);
        c.out = relu_forward(c.bn_out);
        return c.out;
    }

    // Accumulates parameter gradients, returns gradient w.r.t. the input.
    Tensor<T> backward(const Cache& c, const Tensor<T>& d_out) {
        Tensor<T> d_conv;
        if (has_bn_relu) {
            Tensor<T> d_bn = relu_backward(c.bn_out, d_out);
            d_conv = batchnorm3d_backward(c.conv_out, d_bn, gamma.value, c.bn_cache, gamma.grad,
                                          beta.grad);
        } else {
            d_conv = d_out;
        }
        if (transposed) {
            deconv3d_grad_weight(c.x, d_conv, w.grad, b.grad);
            return deconv3d_grad_input(d_conv, w.value);
        }
        conv3d_grad_weight(c.x, d_conv, w.grad, b.grad, stride, pad);
        return conv3d_grad_input(d_conv, w.value, c.x.shape, stride, pad);
    }
};

// ---------------------------------------------------------------------------

template <typename T>
struct Activations;

template <typename T>
struct LossResult {
    double total = 0.0;
    double main = 0.0;
    double aux1 = 0.0;
    double aux2 = 0.0;
    Tensor<T> d_input;
};

struct GraphAudit {
    bool long_residual = false;
    bool short_residual = false;
    bool deep_supervision = false;
    int aux_heads = 0;
    int residual_links = 0;
};

// Encoder Conv1a..Conv4b, decoder with three 2x-upsampling steps, long/short
// residual element-wise sums per variant, a 1x1x1 main head and two
// deeply-supervised auxiliary heads.
template <typename T>
struct NetworkGraph {
    NetSpec spec;
    bool built = false;

    ConvUnit<T> enc1, enc2a, enc2b, enc3a, enc3b, enc4a, enc4b;
    ConvUnit<T> dec3_up, dec3a, dec3b, dec2_up, dec2a, dec2b, dec1_up, dec1a, dec1b;
    ConvUnit<T> head_main;
    ConvUnit<T> aux1_up, aux1_head;
    ConvUnit<T> aux2_up1, aux2_up2, aux2_head;

    static NetworkGraph build(const NetSpec& s, std::mt19937_64& rng) {
        if (s.input_size % 8 != 0)
            throw std::invalid_argument("NetSpec: input_size must be divisible by 8");
        if (s.base_channels < 1) throw std::invalid_argument("NetSpec: base_channels < 1");
        NetworkGraph g;
        g.spec = s;
        const int c = s.base_channels, nc = s.num_classes;
        using U = ConvUnit<T>;
        g.enc1 = U::conv("Conv1a", 1, c, 3, 1);
        g.enc2a = U::conv("Conv2a", c, 2 * c, 3, 1);
        g.enc2b = U::conv("Conv2b", 2 * c, 2 * c, 3, 1);
        g.enc3a = U::conv("Conv3a", 2 * c, 4 * c, 3, 1);
        g.enc3b = U::conv("Conv3b", 4 * c, 4 * c, 3, 1);
        g.enc4a = U::conv("Conv4a", 4 * c, 8 * c, 3, 1);
        g.enc4b = U::conv("Conv4b", 8 * c, 8 * c, 3, 1);
        g.dec3_up = U::deconv("DeConv3a", 8 * c, 4 * c);
        g.dec3a = U::conv("Conv3c", 4 * c, 4 * c, 3, 1);
        g.dec3b = U::conv("Conv3d", 4 * c, 4 * c, 3, 1);
        g.dec2_up = U::deconv("DeConv2a", 4 * c, 2 * c);
        g.dec2a = U::conv("Conv2c", 2 * c, 2 * c, 3, 1);
        g.dec2b = U::conv("Conv2d", 2 * c, 2 * c, 3, 1);
        g.dec1_up = U::deconv("DeConv1a", 2 * c, c);
        g.dec1a = U::conv("Conv1b", c, c, 3, 1);
        g.dec1b = U::conv("Conv1c", c, c, 3, 1);
        g.head_main = U::conv("HeadMain", c, nc, 1, 0, /*bn_relu=*/false);
        g.aux1_up = U::deconv("Aux1DeConv", 2 * c, c);
        g.aux1_head = U::conv("Aux1Head", c, nc, 1, 0, false);
        g.aux2_up1 = U::deconv("Aux2DeConv1", 4 * c, 2 * c);
        g.aux2_up2 = U::deconv("Aux2DeConv2", 2 * c, c);
        g.aux2_head = U::conv("Aux2Head", c, nc, 1, 0, false);
        for (ConvUnit<T>* u : g.all_units()) u->init_weights(rng);
        g.built = true;
        return g;
    }

    std::vector<ConvUnit<T>*> all_units() {
        return {&enc1,   &enc2a,   &enc2b,   &enc3a,    &enc3b,    &enc4a,     &enc4b,
                &dec3_up, &dec3a,  &dec3b,   &dec2_up,  &dec2a,    &dec2b,     &dec1_up,
                &dec1a,  &dec1b,   &head_main, &aux1_up, &aux1_head, &aux2_up1, &aux2_up2,
                &aux2_head};
    }
    std::vector<const ConvUnit<T>*> all_units() const {
        auto* self = const_cast<NetworkGraph*>(this);
        std::vector<const ConvUnit<T>*> out;
        for (auto* u : self->all_units()) out.push_back(u);
        return out;
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        for (ConvUnit<T>* u : all_units()) u->collect(out);
        return out;
    }

    void zero_grad() {
        for (Param<T>* p : params()) p->zero_grad();
    }

    std::size_t count_params() const {
        std::size_t n = 0;
        for (const ConvUnit<T>* u : all_units()) n += u->learnable_count();
        return n;
    }

    GraphAudit audit() const {
        GraphAudit a;
        a.long_residual = spec.long_residual();
        a.short_residual = spec.short_residual();
        a.deep_supervision = spec.deep_supervision();
        a.aux_heads = a.deep_supervision ? 2 : 0;
        a.residual_links =
            (a.long_residual ? 3 : 0) + (a.short_residual ? 6 : 0);  // 3 enc + 3 dec blocks
        return a;
    }

    std::string summary() const {
        std::ostringstream os;
        os << variant_name(spec.variant) << " c=" << spec.base_channels
           << " input=" << spec.input_size << "^3 params=" << count_params() << "\n";
        for (const ConvUnit<T>* u : all_units())
            os << "  " << u->name << (u->transposed ? " [deconv 4^3 /2]" : "")
               << " w=" << u->w.value.shape[0] << "x" << u->w.value.shape[1] << "x"
               << u->w.value.shape[2] << "^3\n";
        os << "  long_res=" << (spec.long_residual() ? "sum" : "no")
           << " short_res=" << (spec.short_residual() ? "sum" : "no") << " deep_super=yes\n";
        return os.str();
    }

    Activations<T> forward(const Tensor<T>& x, bool train, bool with_aux = true);
    LossResult<T> loss_backward(Activations<T>& acts, const Tensor<std::uint8_t>& labels);
};

template <typename T>
struct Activations {
    bool train = false;
    bool with_aux = false;

    typename ConvUnit<T>::Cache e1, e2a, e2b, e3a, e3b, e4a, e4b;
    typename ConvUnit<T>::Cache u3, d3a, d3b, u2, d2a, d2b, u1, d1a, d1b;
    typename ConvUnit<T>::Cache main_head;
    typename ConvUnit<T>::Cache a1_up, a1_head, a2_up1, a2_up2, a2_head;

    // stage outputs after optional short-residual sums
    Tensor<T> s1, s2, s3, s4;
    Tensor<T> r3, r2, r1;  // decoder activations after optional long-residual sums
    Tensor<T> p1, p2, p3;
    std::vector<std::int64_t> arg1, arg2, arg3;

    Tensor<T> logits_main, logits_aux1, logits_aux2;
};

template <typename T>
Activations<T> NetworkGraph<T>::forward(const Tensor<T>& x, bool train, bool with_aux) {
    if (x.c() != 1) throw std::invalid_argument("forward: expected single-channel input");
    if (x.d() % 8 || x.h() % 8 || x.w() % 8)
        throw std::invalid_argument("forward: spatial dims must be divisible by 8");
    Activations<T> a;
    a.train = train;
    a.with_aux = with_aux;
    const bool sres = spec.short_residual();
    const bool lres = spec.long_residual();

    a.s1 = enc1.forward(x, train, a.e1);
    a.p1 = maxpool3d_forward(a.s1, a.arg1);

    Tensor<T> t = enc2a.forward(a.p1, train, a.e2a);
    t = enc2b.forward(t, train, a.e2b);
    a.s2 = sres ? add(t, a.e2a.out) : t;
    a.p2 = maxpool3d_forward(a.s2, a.arg2);

    t = enc3a.forward(a.p2, train, a.e3a);
    t = enc3b.forward(t, train, a.e3b);
    a.s3 = sres ? add(t, a.e3a.out) : t;
    a.p3 = maxpool3d_forward(a.s3, a.arg3);

    t = enc4a.forward(a.p3, train, a.e4a);
    t = enc4b.forward(t, train, a.e4b);
    a.s4 = sres ? add(t, a.e4a.out) : t;

    t = dec3_up.forward(a.s4, train, a.u3);
    a.r3 = lres ? add(t, a.s3) : t;
    t = dec3a.forward(a.r3, train, a.d3a);
    t = dec3b.forward(t, train, a.d3b);
    Tensor<T> d3 = sres ? add(t, a.r3) : t;

    t = dec2_up.forward(d3, train, a.u2);
    a.r2 = lres ? add(t, a.s2) : t;
    t = dec2a.forward(a.r2, train, a.d2a);
    t = dec2b.forward(t, train, a.d2b);
    Tensor<T> d2 = sres ? add(t, a.r2) : t;

    t = dec1_up.forward(d2, train, a.u1);
    a.r1 = lres ? add(t, a.s1) : t;
    t = dec1a.forward(a.r1, train, a.d1a);
    t = dec1b.forward(t, train, a.d1b);
    Tensor<T> d1 = sres ? add(t, a.r1) : t;

    a.logits_main = head_main.forward(d1, train, a.main_head);

    if (with_aux) {
        t = aux1_up.forward(a.s2, train, a.a1_up);
        a.logits_aux1 = aux1_head.forward(t, train, a.a1_head);
        t = aux2_up1.forward(a.s3, train, a.a2_up1);
        t = aux2_up2.forward(t, train, a.a2_up2);
        a.logits_aux2 = aux2_head.forward(t, train, a.a2_head);
    }
    return a;
}

template <typename T>
LossResult<T> NetworkGraph<T>::loss_backward(Activations<T>& a, const Tensor<std::uint8_t>& labels) {
    const bool sres = spec.short_residual();
    const bool lres = spec.long_residual();
    LossResult<T> r;

    auto main_x = softmax_xent(a.logits_main, labels);
    r.main = main_x.loss;
    r.total = r.main;

    Tensor<T> acc_s2, acc_s3;  // gradient accumulators for reused stage outputs
    if (a.with_aux) {
        auto aux1_x = softmax_xent(a.logits_aux1, labels);
        auto aux2_x = softmax_xent(a.logits_aux2, labels);
        r.aux1 = aux1_x.loss;
        r.aux2 = aux2_x.loss;
        r.total += spec.xi1 * r.aux1 + spec.xi2 * r.aux2;

        for (auto& g : aux1_x.grad_logits.data) g *= static_cast<T>(spec.xi1);
        for (auto& g : aux2_x.grad_logits.data) g *= static_cast<T>(spec.xi2);

        Tensor<T> d = aux1_head.backward(a.a1_head, aux1_x.grad_logits);
        acc_s2 = aux1_up.backward(a.a1_up, d);

        d = aux2_head.backward(a.a2_head, aux2_x.grad_logits);
        d = aux2_up2.backward(a.a2_up2, d);
        acc_s3 = aux2_up1.backward(a.a2_up1, d);
    }

    auto acc_into = [](Tensor<T>& acc, const Tensor<T>& g) {
        if (acc.size() == 0) {
            acc = g;
            return;
        }
        for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += g.data[i];
    };

    // decoder stage 1
    Tensor<T> d_d1 = head_main.backward(a.main_head, main_x.grad_logits);
    Tensor<T> d_r1;
    if (sres) d_r1 = d_d1;  // short residual bypass
    Tensor<T> d = dec1b.backward(a.d1b, d_d1);
    d = dec1a.backward(a.d1a, d);
    acc_into(d_r1, d);
    Tensor<T> acc_s1;
    if (lres) acc_s1 = d_r1;
    Tensor<T> d_d2 = dec1_up.backward(a.u1, d_r1);

    // decoder stage 2
    Tensor<T> d_r2;
    if (sres) d_r2 = d_d2;
    d = dec2b.backward(a.d2b, d_d2);
    d = dec2a.backward(a.d2a, d);
    acc_into(d_r2, d);
    if (lres) acc_into(acc_s2, d_r2);
    Tensor<T> d_d3 = dec2_up.backward(a.u2, d_r2);

    // decoder stage 3
    Tensor<T> d_r3;
    if (sres) d_r3 = d_d3;
    d = dec3b.backward(a.d3b, d_d3);
    d = dec3a.backward(a.d3a, d);
    acc_into(d_r3, d);
    if (lres) acc_into(acc_s3, d_r3);
    Tensor<T> d_s4 = dec3_up.backward(a.u3, d_r3);

    // encoder stage 4
    Tensor<T> d_e4a_acc;
    if (sres) d_e4a_acc = d_s4;
    d = enc4b.backward(a.e4b, d_s4);
    acc_into(d_e4a_acc, d);
    Tensor<T> d_p3 = enc4a.backward(a.e4a, d_e4a_acc);
    Tensor<T> d_s3 = maxpool3d_backward(d_p3, a.arg3, a.s3.shape);
    acc_into(acc_s3, d_s3);

    // encoder stage 3
    Tensor<T> d_e3a_acc;
    if (sres) d_e3a_acc = acc_s3;
    d = enc3b.backward(a.e3b, acc_s3);
    acc_into(d_e3a_acc, d);
    Tensor<T> d_p2 = enc3a.backward(a.e3a, d_e3a_acc);
    Tensor<T> d_s2 = maxpool3d_backward(d_p2, a.arg2, a.s2.shape);
    acc_into(acc_s2, d_s2);

    // encoder stage 2
    Tensor<T> d_e2a_acc;
    if (sres) d_e2a_acc = acc_s2;
    d = enc2b.backward(a.e2b, acc_s2);
    acc_into(d_e2a_acc, d);
    Tensor<T> d_p1 = enc2a.backward(a.e2a, d_e2a_acc);
    Tensor<T> d_s1 = maxpool3d_backward(d_p1, a.arg1, a.s1.shape);
    acc_into(acc_s1, d_s1);

    r.d_input = enc1.backward(a.e1, acc_s1);
    return r;
}

}  // namespace vseg
