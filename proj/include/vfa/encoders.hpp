#pragma once

#include "vfa/rng.hpp"
#include "vfa/types.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vfa {

struct EncoderDims {
    std::size_t input = 0;     // d_in
    std::size_t hidden = 256;  // H
    std::size_t embed = 128;   // D
    std::size_t classes = 0;   // M (columns of the shared classifier)

    bool operator==(const EncoderDims&) const = default;
};

/// max(x, 0); derivative taken as 0 at the kink.
struct Relu {
    static double apply(double x) noexcept { return x > 0.0 ? x : 0.0; }
    static double slope(double pre) noexcept { return pre > 0.0 ? 1.0 : 0.0; }
};

/// Pass-through activation, used to check the affine composition in tests.
struct Linear {
    static double apply(double x) noexcept { return x; }
    static double slope(double) noexcept { return 1.0; }
};

/// Two affine layers: d_in -> H -> D.
struct Encoder {
    Matrix w1;  // H x d_in
    Vector b1;  // H
    Matrix w2;  // D x H
    Vector b2;  // D
};

struct EncoderParams {
    Encoder face;
    Encoder voice;
    Matrix classifier;  // D x M, column k is omega_k

    EncoderDims dims() const {
        return {static_cast<std::size_t>(face.w1.cols()), static_cast<std::size_t>(face.w1.rows()),
                static_cast<std::size_t>(face.w2.rows()), static_cast<std::size_t>(classifier.cols())};
    }

    Encoder& encoder(Modality m) { return m == Modality::Face ? face : voice; }
    const Encoder& encoder(Modality m) const { return m == Modality::Face ? face : voice; }
};

struct ForwardCache {
    Matrix input;       // N x d_in
    Matrix hidden_pre;  // N x H
    Matrix hidden;      // N x H
};

struct EncoderGrads {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
};

/// Same layout as EncoderParams; also used for optimizer momentum buffers.
struct ParamGrads {
    EncoderGrads face;
    EncoderGrads voice;
    Matrix classifier;

    EncoderGrads& encoder(Modality m) { return m == Modality::Face ? face : voice; }
};

inline EncoderGrads zeros_like(const Encoder& e) {
    return {Matrix::Zero(e.w1.rows(), e.w1.cols()), Vector::Zero(e.b1.size()),
            Matrix::Zero(e.w2.rows(), e.w2.cols()), Vector::Zero(e.b2.size())};
}

inline ParamGrads zeros_like(const EncoderParams& p) {
    return {zeros_like(p.face), zeros_like(p.voice),
            Matrix::Zero(p.classifier.rows(), p.classifier.cols())};
}

/// A flat view of one parameter block, in checkpoint order.
struct BlockView {
    const char* name;
    double* data;
    std::size_t size;
    bool decayed;  // weight decay applies (weights and classifier, not biases)
};

template <typename Params>
auto blocks_of(Params& p) {
    auto enc = [](auto& e, const char* w1, const char* b1, const char* w2, const char* b2) {
        return std::array<BlockView, 4>{
            BlockView{w1, e.w1.data(), static_cast<std::size_t>(e.w1.size()), true},
            BlockView{b1, e.b1.data(), static_cast<std::size_t>(e.b1.size()), false},
            BlockView{w2, e.w2.data(), static_cast<std::size_t>(e.w2.size()), true},
            BlockView{b2, e.b2.data(), static_cast<std::size_t>(e.b2.size()), false}};
    };
    const auto f = enc(p.face, "face.w1", "face.b1", "face.w2", "face.b2");
    const auto v = enc(p.voice, "voice.w1", "voice.b1", "voice.w2", "voice.b2");
    return std::array<BlockView, 9>{
        f[0], f[1], f[2], f[3], v[0], v[1], v[2], v[3],
        BlockView{"classifier", p.classifier.data(), static_cast<std::size_t>(p.classifier.size()), true}};
}

namespace detail {
inline void fill_uniform(Matrix& m, double bound, Rng& rng) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
}

inline Encoder init_encoder(const EncoderDims& d, Rng& rng) {
    const auto in = static_cast<Eigen::Index>(d.input);
    const auto h = static_cast<Eigen::Index>(d.hidden);
    const auto out = static_cast<Eigen::Index>(d.embed);
    Encoder e{Matrix(h, in), Vector::Zero(h), Matrix(out, h), Vector::Zero(out)};
    fill_uniform(e.w1, 1.0 / std::sqrt(static_cast<double>(d.input)), rng);
    fill_uniform(e.w2, 1.0 / std::sqrt(static_cast<double>(d.hidden)), rng);
    return e;
}
}  // namespace detail

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero. Draw order:
/// face w1, face w2, voice w1, voice w2, classifier (each row-major).
inline EncoderParams init_params(const EncoderDims& d, Rng& rng) {
    if (d.input == 0 || d.hidden == 0 || d.embed == 0 || d.classes == 0)
        throw std::invalid_argument("init_params: all dims must be >= 1");
    EncoderParams p;
    p.face = detail::init_encoder(d, rng);
    p.voice = detail::init_encoder(d, rng);
    p.classifier.resize(static_cast<Eigen::Index>(d.embed), static_cast<Eigen::Index>(d.classes));
    detail::fill_uniform(p.classifier, 1.0 / std::sqrt(static_cast<double>(d.embed)), rng);
    return p;
}

template <typename Act = Relu>
std::pair<Matrix, ForwardCache> forward(const Encoder& enc, const Matrix& input) {
    if (input.cols() != enc.w1.cols())
        throw std::invalid_argument("forward: input has " + std::to_string(input.cols()) +
                                    " columns, encoder expects " + std::to_string(enc.w1.cols()));
    if (!input.allFinite()) throw std::invalid_argument("forward: non-finite input");
    ForwardCache cache;
    cache.input = input;
    cache.hidden_pre.noalias() = input * enc.w1.transpose();
    cache.hidden_pre.rowwise() += enc.b1.transpose();
    cache.hidden = cache.hidden_pre.unaryExpr([](double x) { return Act::apply(x); });
    Matrix out;
    out.noalias() = cache.hidden * enc.w2.transpose();
    out.rowwise() += enc.b2.transpose();
    return {std::move(out), std::move(cache)};
}

template <typename Act = Relu>
std::pair<Matrix, ForwardCache> forward(const EncoderParams& params, const Matrix& input,
                                        Modality modality) {
    return forward<Act>(params.encoder(modality), input);
}

/// Gradients of sum(grad_out .* forward(input)) with respect to the encoder weights.
template <typename Act = Relu>
EncoderGrads backward(const Encoder& enc, const ForwardCache& cache, const Matrix& grad_out) {
    if (grad_out.rows() != cache.hidden.rows() || grad_out.cols() != enc.w2.rows())
        throw std::invalid_argument("backward: grad shape " + std::to_string(grad_out.rows()) + "x" +
                                    std::to_string(grad_out.cols()) + " does not match forward output");
    EncoderGrads g;
    g.w2.noalias() = grad_out.transpose() * cache.hidden;
    g.b2 = grad_out.colwise().sum().transpose();
    Matrix grad_hidden;
    grad_hidden.noalias() = grad_out * enc.w2;
    const Matrix slope = cache.hidden_pre.unaryExpr([](double x) { return Act::slope(x); });
    grad_hidden.array() *= slope.array();
    g.w1.noalias() = grad_hidden.transpose() * cache.input;
    g.b1 = grad_hidden.colwise().sum().transpose();
    return g;
}

template <typename Act = Relu>
EncoderGrads backward(const EncoderParams& params, Modality modality, const ForwardCache& cache,
                      const Matrix& grad_out) {
    return backward<Act>(params.encoder(modality), cache, grad_out);
}

/// Step learning rate: base * factor^(number of decay points <= t).
inline double scheduled_lr(double base, const std::vector<std::size_t>& decay_iters, std::size_t t,
                           double factor = 0.1) {
    double lr = base;
    for (auto d : decay_iters)
        if (t >= d) lr *= factor;
    return lr;
}

struct OptimizerState {
    double lr = 1e-2;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    ParamGrads buffers;

    static OptimizerState for_params(const EncoderParams& p, double lr, double momentum,
                                     double weight_decay) {
        return {lr, momentum, weight_decay, zeros_like(p)};
    }
};

/// SGD with momentum:
///   buffer <- momentum * buffer + grad + weight_decay * param   (decay on weights only)
///   param  <- param - lr * buffer
inline void sgd_step(EncoderParams& params, ParamGrads& grads, OptimizerState& opt) {
    auto p = blocks_of(params);
    auto g = blocks_of(grads);
    auto b = blocks_of(opt.buffers);
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k].size != g[k].size || p[k].size != b[k].size)
            throw std::invalid_argument(std::string("sgd_step: shape mismatch in ") + p[k].name);
        const double wd = p[k].decayed ? opt.weight_decay : 0.0;
        for (std::size_t i = 0; i < p[k].size; ++i) {
            double& buf = b[k].data[i];
            buf = opt.momentum * buf + g[k].data[i] + wd * p[k].data[i];
            p[k].data[i] -= opt.lr * buf;
        }
    }
}

inline bool all_finite(const Encoder& e) {
    return e.w1.allFinite() && e.b1.allFinite() && e.w2.allFinite() && e.b2.allFinite();
}

inline bool all_finite(const EncoderParams& p) {
    return all_finite(p.face) && all_finite(p.voice) && p.classifier.allFinite();
}

/// Embeds every listed sample of one modality, in chunks of `chunk` rows.
inline Matrix embed_samples(const EncoderParams& params, const std::vector<Sample>& samples,
                            const std::vector<std::size_t>& positions, Modality modality,
                            std::size_t input_dim, std::size_t chunk = 256) {
    const auto d = static_cast<Eigen::Index>(params.dims().embed);
    Matrix out(static_cast<Eigen::Index>(positions.size()), d);
    for (std::size_t start = 0; start < positions.size(); start += chunk) {
        const std::size_t end = std::min(positions.size(), start + chunk);
        std::vector<std::size_t> part(positions.begin() + static_cast<std::ptrdiff_t>(start),
                                      positions.begin() + static_cast<std::ptrdiff_t>(end));
        auto [emb, cache] = forward(params, gather_features(samples, part, input_dim), modality);
        out.middleRows(static_cast<Eigen::Index>(start), emb.rows()) = emb;
    }
    return out;
}

}  // namespace vfa
