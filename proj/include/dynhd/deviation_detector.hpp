#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "dynhd/diffnet.hpp"
#include "dynhd/evidence.hpp"

namespace dynhd {

inline constexpr int kFeatureDim = 3 * kEvidenceDim;

/// x_t = [a_t ; a_hat_t ; a_{t-1} - a_t] for one step.
struct CompositeFeature {
    EvidenceVector observed;
    EvidenceVector reference;
    std::array<double, kEvidenceDim> velocity{};
};

/// One feature per step in storage order (t = T first). The velocity of the
/// final step t = 0 is zero. Throws DimensionError on length mismatch.
std::vector<CompositeFeature> composite_features(const EvidenceTrajectory& observed,
                                                 const EvidenceTrajectory& reference);

/// Features as a (T+1) x 9 matrix, row j <-> step T - j.
nn::Matrix feature_matrix(std::span<const CompositeFeature> features);

/// s_path = sum_t omega_t * sum_d |a_td - a_hat_td|.
double path_score(std::span<const CompositeFeature> features, std::span<const double> omega);

/// s_reb = sum_{t>=1} omega_t * sum_d max(0, a_{t-1,d} - a_td)^2.
double rebound_score(const EvidenceTrajectory& observed, std::span<const double> omega);

struct DetectorArch {
    int hidden = 64;
    int attention_dim = 32;
    int head_hidden = 32;
};

struct DetectorHyper {
    double lambda1 = 0.2;
    double lambda2 = 0.2;
    double beta = 0.1;
    double quantile_level = 0.9;
};

/// EMA estimates of the factual score boundary. Treated as constants by the loss.
struct Margins {
    double path = 0.0;
    double rebound = 0.0;

    bool operator==(const Margins&) const = default;
};

/// u_t = w . tanh(U z_t + b_u)
struct AttentionScorer {
    nn::Matrix U;  // attention_dim x hidden
    nn::Vector b_u;
    nn::Vector w;
};

/// Softmax over steps.
nn::Vector attention_weights(const nn::Vector& scores);

struct DetectorOutput {
    double logit = 0.0;
    nn::Vector scores;  // u_t
    nn::Vector omega;   // attention weights, storage order
    nn::Matrix hidden;  // z_t rows
};

class DeviationDetector {
public:
    struct Grads {
        std::vector<nn::LayerGrads> projector;
        std::vector<nn::LayerGrads> head;
        nn::Matrix U;
        nn::Vector b_u;
        nn::Vector w;
    };

    static DeviationDetector create(const DetectorArch& arch, const DetectorHyper& hyper, std::uint64_t seed);

    DetectorOutput attend_and_classify(const nn::Matrix& features) const;
    DetectorOutput attend_and_classify(std::span<const CompositeFeature> features) const;

    Grads zero_grads() const;
    void bind(Grads& grads, std::vector<nn::ParamBlock>& out);

    nlohmann::json to_json() const;
    static DeviationDetector from_json(const nlohmann::json& j);

    nn::Mlp projector;  // f_phi: 9 -> hidden
    AttentionScorer scorer;
    nn::Mlp head;  // hidden -> 1 logit
    Margins margins;
    DetectorHyper hyper;
};

/// Type-7 (linear interpolation) empirical quantile. Requires a non-empty input.
double empirical_quantile(std::vector<double> values, double level);

/// EMA update of both margins from the factual subset of a batch.
/// Returns false (margins untouched) when the batch has no factual sample.
bool update_margins(Margins& margins, double beta, double quantile_level, std::span<const double> path_scores,
                    std::span<const double> rebound_scores, std::span<const int> labels);

/// (1 - y) * s + y * max(0, m - s)
double hinge_loss(double score, double margin, int label);

struct HingePair {
    double path = 0.0;
    double rebound = 0.0;
};

HingePair hinge_regularizers(const Margins& margins, double s_path, double s_reb, int label);

struct LossTerms {
    double cls = 0.0;
    double path = 0.0;
    double reb = 0.0;
    double total = 0.0;
};

/// L = BCE(logit, y) + lambda1 * L_path + lambda2 * L_reb for one sample.
LossTerms total_loss(double lambda1, double lambda2, const Margins& margins, double logit, int label, double s_path,
                     double s_reb);

/// A trajectory prepared for the detector: features plus the per-step
/// quantities the two scores are linear in.
struct DetectorInput {
    nn::Matrix features;  // (T+1) x 9
    nn::Vector gaps;      // sum_d |a - a_hat| per step
    nn::Vector rises;     // sum_d max(0, a_{t-1} - a_t)^2, zero at t = 0
    int label = -1;       // 0, 1, or -1 when unlabeled
};

DetectorInput prepare_input(const EvidenceTrajectory& observed, const EvidenceTrajectory& reference, Label label);

/// Cached forward pass over a mini-batch.
struct BatchForward {
    std::vector<const DetectorInput*> samples;
    std::vector<Eigen::Index> offsets;  // first row of each sample
    nn::MlpCache projector_cache;
    nn::Matrix z;
    nn::Matrix attn;  // tanh(U z + b_u)
    nn::Vector omega;
    nn::MlpCache head_cache;
    nn::Matrix pooled;
    nn::Vector logits;
    std::vector<double> s_path;
    std::vector<double> s_reb;
    std::vector<int> labels;
};

BatchForward forward_batch(const DeviationDetector& det, std::span<const DetectorInput* const> batch);

/// Batch-mean loss under the detector's current margins. When `grads` is
/// given, accumulates the exact gradient of that mean w.r.t. every parameter.
LossTerms backward_batch(const DeviationDetector& det, const BatchForward& fwd, double lambda1, double lambda2,
                         DeviationDetector::Grads* grads);

struct SampleScore {
    double logit = 0.0;
    double probability = 0.0;
    double s_path = 0.0;
    double s_reb = 0.0;
    nn::Vector omega;
};

SampleScore score_input(const DeviationDetector& det, const DetectorInput& input);

}  // namespace dynhd
