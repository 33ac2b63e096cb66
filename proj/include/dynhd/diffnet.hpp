#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace dynhd::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

enum class Activation { linear, relu, tanh };

/// y = act(W x + b). Batched inputs are row-major: one sample per row.
struct DenseLayer {
    Matrix weights;  // out x in
    Vector bias;     // out
    Activation activation = Activation::linear;

    int in_dim() const { return static_cast<int>(weights.cols()); }
    int out_dim() const { return static_cast<int>(weights.rows()); }
};

struct LayerGrads {
    Matrix weights;
    Vector bias;
};

/// Activations recorded by a forward pass, consumed by backward.
struct MlpCache {
    std::vector<Matrix> inputs;   // input to each layer
    std::vector<Matrix> outputs;  // post-activation output of each layer
};

/// A contiguous run of parameters paired with its gradient buffer.
struct ParamBlock {
    double* values = nullptr;
    double* grads = nullptr;
    std::size_t size = 0;
};

class Mlp {
public:
    Mlp() = default;
    explicit Mlp(std::vector<DenseLayer> layers);

    /// dims = {in, h1, ..., out}. Hidden layers use `hidden`, the last layer `output`.
    /// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    static Mlp create(std::span<const int> dims, Activation hidden, Activation output, Rng& rng,
                      bool zero_output_layer = false);

    Matrix forward(const Matrix& x, MlpCache* cache = nullptr) const;

    /// Accumulates parameter gradients into `grads` and returns dL/dx.
    Matrix backward(const MlpCache& cache, const Matrix& grad_out, std::vector<LayerGrads>& grads) const;

    /// Single-vector convenience API that keeps its own cache.
    Vector forward_mlp(const Vector& x);
    /// Gradients for the last forward_mlp call. Throws if there was none.
    std::vector<LayerGrads> backward(const Vector& grad_out, Vector* grad_input = nullptr);

    std::vector<LayerGrads> zero_grads() const;
    void bind(std::vector<LayerGrads>& grads, std::vector<ParamBlock>& out);

    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    int in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
    int out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }
    std::size_t parameter_count() const;

    nlohmann::json to_json() const;
    static Mlp from_json(const nlohmann::json& j);

private:
    std::vector<DenseLayer> layers_;
    std::optional<MlpCache> last_;
};

void zero(std::vector<LayerGrads>& grads);

struct LossGrad {
    double value = 0.0;
    Vector grad;
};

struct ScalarLossGrad {
    double value = 0.0;
    double grad = 0.0;
};

/// Element-wise Huber with unit threshold, mean-reduced; gradient w.r.t. prediction.
LossGrad smooth_l1(const Vector& prediction, const Vector& target);
double smooth_l1_elem(double d);
double smooth_l1_elem_grad(double d);

double sigmoid(double x);

/// Binary cross-entropy on a logit, in log-sum-exp form. grad = sigmoid(logit) - label.
ScalarLossGrad binary_ce(double logit, int label);

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive-moment optimizer with decoupled weight decay.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    /// Applies one update. Returns false and leaves everything untouched when
    /// any gradient is non-finite.
    bool step(std::span<const ParamBlock> params);

    std::int64_t steps() const { return t_; }
    std::int64_t skipped() const { return skipped_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::int64_t t_ = 0;
    std::int64_t skipped_ = 0;
};

}  // namespace dynhd::nn
