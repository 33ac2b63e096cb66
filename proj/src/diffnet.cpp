#include "dynhd/diffnet.hpp"

#include <cmath>

#include "dynhd/error.hpp"

namespace dynhd::nn {

namespace {

void apply_activation(Activation act, Matrix& m) {
    switch (act) {
        case Activation::linear: break;
        case Activation::relu: m = m.cwiseMax(0.0); break;
        case Activation::tanh: m = m.array().tanh().matrix(); break;
    }
}

// dL/dpre from dL/dout given the post-activation output.
Matrix activation_backward(Activation act, const Matrix& out, const Matrix& grad) {
    switch (act) {
        case Activation::linear: return grad;
        case Activation::relu: return (out.array() > 0.0).select(grad, 0.0);
        case Activation::tanh: return (grad.array() * (1.0 - out.array().square())).matrix();
    }
    return grad;
}

std::string_view activation_name(Activation a) {
    switch (a) {
        case Activation::linear: return "linear";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    return "linear";
}

Activation activation_from_name(std::string_view s) {
    if (s == "linear") return Activation::linear;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw Error("unknown activation '" + std::string(s) + "'");
}

}  // namespace

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.bias.size() != l.weights.rows()) throw DimensionError("dense layer bias/weight mismatch");
        if (i > 0 && l.in_dim() != layers_[i - 1].out_dim()) {
            throw DimensionError("dense layer chain mismatch at layer " + std::to_string(i));
        }
    }
}

Mlp Mlp::create(std::span<const int> dims, Activation hidden, Activation output, Rng& rng,
                bool zero_output_layer) {
    if (dims.size() < 2) throw DimensionError("an MLP needs at least input and output dims");
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const bool last = i + 2 == dims.size();
        DenseLayer l;
        l.weights = Matrix::Zero(dims[i + 1], dims[i]);
        l.bias = Vector::Zero(dims[i + 1]);
        l.activation = last ? output : hidden;
        if (!(last && zero_output_layer)) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(dims[i]));
            for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
                for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
                    l.weights(r, c) = (2.0 * uniform01(rng) - 1.0) * bound;
                }
            }
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = (2.0 * uniform01(rng) - 1.0) * bound;
        }
        layers.push_back(std::move(l));
    }
    return Mlp(std::move(layers));
}

Matrix Mlp::forward(const Matrix& x, MlpCache* cache) const {
    if (x.cols() != in_dim()) {
        throw DimensionError("mlp input has " + std::to_string(x.cols()) + " columns, expected " +
                             std::to_string(in_dim()));
    }
    if (cache) {
        cache->inputs.clear();
        cache->outputs.clear();
    }
    Matrix h = x;
    for (const auto& l : layers_) {
        Matrix out = h * l.weights.transpose();
        out.rowwise() += l.bias.transpose();
        apply_activation(l.activation, out);
        if (cache) {
            cache->inputs.push_back(std::move(h));
            cache->outputs.push_back(out);
        }
        h = std::move(out);
    }
    return h;
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& grad_out, std::vector<LayerGrads>& grads) const {
    if (cache.inputs.size() != layers_.size()) throw Error("backward called before forward");
    if (grads.size() != layers_.size()) grads = zero_grads();
    Matrix g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const auto& l = layers_[i];
        const Matrix pre = activation_backward(l.activation, cache.outputs[i], g);
        grads[i].weights.noalias() += pre.transpose() * cache.inputs[i];
        grads[i].bias.noalias() += pre.colwise().sum().transpose();
        g = pre * l.weights;
    }
    return g;
}

Vector Mlp::forward_mlp(const Vector& x) {
    MlpCache cache;
    Matrix out = forward(x.transpose(), &cache);
    last_ = std::move(cache);
    return out.row(0).transpose();
}

std::vector<LayerGrads> Mlp::backward(const Vector& grad_out, Vector* grad_input) {
    if (!last_) throw Error("backward called before forward");
    if (grad_out.size() != out_dim()) throw DimensionError("loss gradient has wrong dimension");
    auto grads = zero_grads();
    Matrix gin = backward(*last_, grad_out.transpose(), grads);
    if (grad_input) *grad_input = gin.row(0).transpose();
    return grads;
}

std::vector<LayerGrads> Mlp::zero_grads() const {
    std::vector<LayerGrads> g;
    g.reserve(layers_.size());
    for (const auto& l : layers_) {
        g.push_back({Matrix::Zero(l.weights.rows(), l.weights.cols()), Vector::Zero(l.bias.size())});
    }
    return g;
}

void Mlp::bind(std::vector<LayerGrads>& grads, std::vector<ParamBlock>& out) {
    if (grads.size() != layers_.size()) grads = zero_grads();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        out.push_back({layers_[i].weights.data(), grads[i].weights.data(),
                       static_cast<std::size_t>(layers_[i].weights.size())});
        out.push_back({layers_[i].bias.data(), grads[i].bias.data(),
                       static_cast<std::size_t>(layers_[i].bias.size())});
    }
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
}

nlohmann::json Mlp::to_json() const {
    auto layers = nlohmann::json::array();
    for (const auto& l : layers_) {
        std::vector<double> w(static_cast<std::size_t>(l.weights.size()));
        // Row-major on disk.
        for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
                w[static_cast<std::size_t>(r * l.weights.cols() + c)] = l.weights(r, c);
            }
        }
        layers.push_back({{"in", l.in_dim()},
                          {"out", l.out_dim()},
                          {"activation", std::string(activation_name(l.activation))},
                          {"weights", std::move(w)},
                          {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return layers;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
    std::vector<DenseLayer> layers;
    for (const auto& jl : j) {
        const int in = jl.at("in").get<int>();
        const int out = jl.at("out").get<int>();
        const auto w = jl.at("weights").get<std::vector<double>>();
        const auto b = jl.at("bias").get<std::vector<double>>();
        if (w.size() != static_cast<std::size_t>(in) * static_cast<std::size_t>(out) ||
            b.size() != static_cast<std::size_t>(out)) {
            throw DimensionError("checkpoint layer arrays do not match declared shape");
        }
        DenseLayer l;
        l.weights.resize(out, in);
        for (int r = 0; r < out; ++r) {
            for (int c = 0; c < in; ++c) l.weights(r, c) = w[static_cast<std::size_t>(r * in + c)];
        }
        l.bias = Eigen::Map<const Vector>(b.data(), out);
        l.activation = activation_from_name(jl.at("activation").get<std::string>());
        layers.push_back(std::move(l));
    }
    return Mlp(std::move(layers));
}

void zero(std::vector<LayerGrads>& grads) {
    for (auto& g : grads) {
        g.weights.setZero();
        g.bias.setZero();
    }
}

double smooth_l1_elem(double d) {
    const double a = std::abs(d);
    return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_elem_grad(double d) {
    if (d >= 1.0) return 1.0;
    if (d <= -1.0) return -1.0;
    return d;
}

LossGrad smooth_l1(const Vector& prediction, const Vector& target) {
    if (prediction.size() != target.size()) throw DimensionError("smooth_l1: size mismatch");
    LossGrad out;
    out.grad = Vector::Zero(prediction.size());
    if (prediction.size() == 0) return out;
    const double n = static_cast<double>(prediction.size());
    for (Eigen::Index i = 0; i < prediction.size(); ++i) {
        const double d = prediction(i) - target(i);
        out.value += smooth_l1_elem(d);
        out.grad(i) = smooth_l1_elem_grad(d) / n;
    }
    out.value /= n;
    return out;
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

ScalarLossGrad binary_ce(double logit, int label) {
    const double y = label != 0 ? 1.0 : 0.0;
    ScalarLossGrad out;
    if (std::isinf(logit)) {
        const bool agree = (logit > 0) == (label != 0);
        out.value = agree ? 0.0 : std::numeric_limits<double>::infinity();
        out.grad = (logit > 0 ? 1.0 : 0.0) - y;
        return out;
    }
    out.value = std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
    out.grad = sigmoid(logit) - y;
    return out;
}

bool AdamW::step(std::span<const ParamBlock> params) {
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p.size; ++i) {
            if (!std::isfinite(p.grads[i])) {
                ++skipped_;
                return false;
            }
        }
    }
    if (m_.size() != params.size()) {
        m_.assign(params.size(), {});
        v_.assign(params.size(), {});
        for (std::size_t k = 0; k < params.size(); ++k) {
            m_[k].assign(params[k].size, 0.0);
            v_[k].assign(params[k].size, 0.0);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& p = params[k];
        if (m_[k].size() != p.size) throw DimensionError("optimizer state does not match parameters");
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.size; ++i) {
            const double g = p.grads[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.values[i] -= cfg_.lr * cfg_.weight_decay * p.values[i];
            p.values[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
    return true;
}

}  // namespace dynhd::nn
