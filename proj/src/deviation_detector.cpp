#include "dynhd/deviation_detector.hpp"

#include <algorithm>
#include <cmath>

#include "dynhd/error.hpp"

namespace dynhd {

namespace {

void check_weights(std::span<const double> omega, std::size_t steps) {
    if (omega.size() != steps) {
        throw DimensionError("attention weights have length " + std::to_string(omega.size()) + ", expected " +
                             std::to_string(steps));
    }
}

// Softmax over rows [begin, begin + n) of u, written into omega.
void segment_softmax(const nn::Vector& u, Eigen::Index begin, Eigen::Index n, nn::Vector& omega) {
    const double peak = u.segment(begin, n).maxCoeff();
    double z = 0.0;
    for (Eigen::Index i = begin; i < begin + n; ++i) {
        omega(i) = std::exp(u(i) - peak);
        z += omega(i);
    }
    omega.segment(begin, n) /= z;
}

}  // namespace

nn::Vector attention_weights(const nn::Vector& scores) {
    if (scores.size() == 0) throw DimensionError("attention over zero steps");
    nn::Vector omega(scores.size());
    segment_softmax(scores, 0, scores.size(), omega);
    return omega;
}

namespace {

nn::Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, nn::Rng& rng) {
    nn::Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = (2.0 * nn::uniform01(rng) - 1.0) * bound;
    }
    return m;
}

nlohmann::json matrix_json(const nn::Matrix& m) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", std::move(flat)}};
}

nn::Matrix matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto flat = j.at("values").get<std::vector<double>>();
    if (flat.size() != static_cast<std::size_t>(rows * cols)) throw DimensionError("checkpoint matrix shape mismatch");
    nn::Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
    }
    return m;
}

}  // namespace

std::vector<CompositeFeature> composite_features(const EvidenceTrajectory& observed,
                                                 const EvidenceTrajectory& reference) {
    if (observed.size() != reference.size()) {
        throw DimensionError("observed and reference trajectories differ in length (" +
                             std::to_string(observed.size()) + " vs " + std::to_string(reference.size()) + ")");
    }
    std::vector<CompositeFeature> out(observed.size());
    for (std::size_t j = 0; j < observed.size(); ++j) {
        out[j].observed = observed.vectors[j];
        out[j].reference = reference.vectors[j];
        if (j + 1 < observed.size()) {
            for (int d = 0; d < kEvidenceDim; ++d) {
                out[j].velocity[static_cast<std::size_t>(d)] = observed.vectors[j + 1][d] - observed.vectors[j][d];
            }
        }
    }
    return out;
}

nn::Matrix feature_matrix(std::span<const CompositeFeature> features) {
    nn::Matrix x(static_cast<Eigen::Index>(features.size()), kFeatureDim);
    for (std::size_t j = 0; j < features.size(); ++j) {
        const auto r = static_cast<Eigen::Index>(j);
        for (int d = 0; d < kEvidenceDim; ++d) {
            x(r, d) = features[j].observed[d];
            x(r, kEvidenceDim + d) = features[j].reference[d];
            x(r, 2 * kEvidenceDim + d) = features[j].velocity[static_cast<std::size_t>(d)];
        }
    }
    return x;
}

double path_score(std::span<const CompositeFeature> features, std::span<const double> omega) {
    check_weights(omega, features.size());
    double s = 0.0;
    for (std::size_t j = 0; j < features.size(); ++j) {
        double gap = 0.0;
        for (int d = 0; d < kEvidenceDim; ++d) gap += std::abs(features[j].observed[d] - features[j].reference[d]);
        s += omega[j] * gap;
    }
    return s;
}

double rebound_score(const EvidenceTrajectory& observed, std::span<const double> omega) {
    check_weights(omega, observed.size());
    double s = 0.0;
    // Row j is step t = T - j; its successor in time is row j + 1.
    for (std::size_t j = 0; j + 1 < observed.size(); ++j) {
        double rise = 0.0;
        for (int d = 0; d < kEvidenceDim; ++d) {
            const double r = std::max(0.0, observed.vectors[j + 1][d] - observed.vectors[j][d]);
            rise += r * r;
        }
        s += omega[j] * rise;
    }
    return s;
}

DeviationDetector DeviationDetector::create(const DetectorArch& arch, const DetectorHyper& hyper, std::uint64_t seed) {
    if (hyper.lambda1 < 0 || hyper.lambda2 < 0) throw Error("detector: lambda1 and lambda2 must be >= 0");
    if (!(hyper.beta > 0 && hyper.beta <= 1)) throw Error("detector: beta must lie in (0, 1]");
    if (!(hyper.quantile_level > 0 && hyper.quantile_level < 1)) throw Error("detector: quantile_level must lie in (0, 1)");
    nn::Rng rng(seed);
    DeviationDetector det;
    det.hyper = hyper;
    const std::array<int, 3> proj_dims{kFeatureDim, arch.hidden, arch.hidden};
    det.projector = nn::Mlp::create(proj_dims, nn::Activation::relu, nn::Activation::relu, rng);
    const double bu = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
    det.scorer.U = uniform_matrix(arch.attention_dim, arch.hidden, bu, rng);
    det.scorer.b_u = uniform_matrix(arch.attention_dim, 1, bu, rng);
    det.scorer.w = uniform_matrix(arch.attention_dim, 1, 1.0 / std::sqrt(static_cast<double>(arch.attention_dim)), rng);
    const std::array<int, 3> head_dims{arch.hidden, arch.head_hidden, 1};
    det.head = nn::Mlp::create(head_dims, nn::Activation::relu, nn::Activation::linear, rng);
    return det;
}

DetectorOutput DeviationDetector::attend_and_classify(const nn::Matrix& features) const {
    if (features.rows() < 1) throw DimensionError("attend_and_classify needs at least one step");
    if (features.cols() != kFeatureDim) throw DimensionError("composite features must have 9 columns");
    DetectorOutput out;
    out.hidden = projector.forward(features);
    nn::Matrix pre = out.hidden * scorer.U.transpose();
    pre.rowwise() += scorer.b_u.transpose();
    out.scores = pre.array().tanh().matrix() * scorer.w;
    out.omega = attention_weights(out.scores);
    const nn::Matrix pooled = out.omega.transpose() * out.hidden;
    out.logit = head.forward(pooled)(0, 0);
    return out;
}

DetectorOutput DeviationDetector::attend_and_classify(std::span<const CompositeFeature> features) const {
    return attend_and_classify(feature_matrix(features));
}

DeviationDetector::Grads DeviationDetector::zero_grads() const {
    return {projector.zero_grads(), head.zero_grads(), nn::Matrix::Zero(scorer.U.rows(), scorer.U.cols()),
            nn::Vector::Zero(scorer.b_u.size()), nn::Vector::Zero(scorer.w.size())};
}

void DeviationDetector::bind(Grads& grads, std::vector<nn::ParamBlock>& out) {
    projector.bind(grads.projector, out);
    out.push_back({scorer.U.data(), grads.U.data(), static_cast<std::size_t>(scorer.U.size())});
    out.push_back({scorer.b_u.data(), grads.b_u.data(), static_cast<std::size_t>(scorer.b_u.size())});
    out.push_back({scorer.w.data(), grads.w.data(), static_cast<std::size_t>(scorer.w.size())});
    head.bind(grads.head, out);
}

nlohmann::json DeviationDetector::to_json() const {
    return {{"projector", projector.to_json()},
            {"scorer", {{"U", matrix_json(scorer.U)}, {"b_u", matrix_json(scorer.b_u)}, {"w", matrix_json(scorer.w)}}},
            {"head", head.to_json()},
            {"margins", {{"path", margins.path}, {"rebound", margins.rebound}}},
            {"hyper",
             {{"lambda1", hyper.lambda1},
              {"lambda2", hyper.lambda2},
              {"beta", hyper.beta},
              {"quantile_level", hyper.quantile_level}}}};
}

DeviationDetector DeviationDetector::from_json(const nlohmann::json& j) {
    DeviationDetector det;
    det.projector = nn::Mlp::from_json(j.at("projector"));
    const auto& s = j.at("scorer");
    det.scorer.U = matrix_from_json(s.at("U"));
    det.scorer.b_u = matrix_from_json(s.at("b_u"));
    det.scorer.w = matrix_from_json(s.at("w"));
    det.head = nn::Mlp::from_json(j.at("head"));
    det.margins.path = j.at("margins").at("path").get<double>();
    det.margins.rebound = j.at("margins").at("rebound").get<double>();
    const auto& h = j.at("hyper");
    det.hyper = {h.at("lambda1").get<double>(), h.at("lambda2").get<double>(), h.at("beta").get<double>(),
                 h.at("quantile_level").get<double>()};
    if (det.projector.in_dim() != kFeatureDim || det.scorer.U.cols() != det.projector.out_dim() ||
        det.head.in_dim() != det.projector.out_dim() || det.head.out_dim() != 1 ||
        det.scorer.b_u.size() != det.scorer.U.rows() || det.scorer.w.size() != det.scorer.U.rows()) {
        throw DimensionError("detector checkpoint shape mismatch");
    }
    return det;
}

double empirical_quantile(std::vector<double> values, double level) {
    if (values.empty()) throw Error("empirical_quantile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = level * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

bool update_margins(Margins& margins, double beta, double quantile_level, std::span<const double> path_scores,
                    std::span<const double> rebound_scores, std::span<const int> labels) {
    if (path_scores.size() != labels.size() || rebound_scores.size() != labels.size()) {
        throw DimensionError("update_margins: scores and labels differ in length");
    }
    std::vector<double> fp;
    std::vector<double> fr;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0) continue;
        fp.push_back(path_scores[i]);
        fr.push_back(rebound_scores[i]);
    }
    if (fp.empty()) return false;
    margins.path = (1.0 - beta) * margins.path + beta * empirical_quantile(std::move(fp), quantile_level);
    margins.rebound = (1.0 - beta) * margins.rebound + beta * empirical_quantile(std::move(fr), quantile_level);
    return true;
}

double hinge_loss(double score, double margin, int label) {
    const double y = label != 0 ? 1.0 : 0.0;
    return (1.0 - y) * score + y * std::max(0.0, margin - score);
}

HingePair hinge_regularizers(const Margins& margins, double s_path, double s_reb, int label) {
    return {hinge_loss(s_path, margins.path, label), hinge_loss(s_reb, margins.rebound, label)};
}

LossTerms total_loss(double lambda1, double lambda2, const Margins& margins, double logit, int label, double s_path,
                     double s_reb) {
    LossTerms t;
    t.cls = nn::binary_ce(logit, label).value;
    const auto h = hinge_regularizers(margins, s_path, s_reb, label);
    t.path = h.path;
    t.reb = h.rebound;
    t.total = t.cls + lambda1 * t.path + lambda2 * t.reb;
    return t;
}

DetectorInput prepare_input(const EvidenceTrajectory& observed, const EvidenceTrajectory& reference, Label label) {
    const auto features = composite_features(observed, reference);
    DetectorInput in;
    in.features = feature_matrix(features);
    const auto n = static_cast<Eigen::Index>(features.size());
    in.gaps = nn::Vector::Zero(n);
    in.rises = nn::Vector::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto& f = features[static_cast<std::size_t>(j)];
        for (int d = 0; d < kEvidenceDim; ++d) {
            in.gaps(j) += std::abs(f.observed[d] - f.reference[d]);
            const double r = std::max(0.0, f.velocity[static_cast<std::size_t>(d)]);
            in.rises(j) += r * r;
        }
    }
    in.label = label == Label::unlabeled ? -1 : static_cast<int>(label);
    return in;
}

BatchForward forward_batch(const DeviationDetector& det, std::span<const DetectorInput* const> batch) {
    BatchForward f;
    f.samples.assign(batch.begin(), batch.end());
    Eigen::Index rows = 0;
    for (const auto* s : batch) {
        if (s->features.cols() != kFeatureDim || s->features.rows() < 1) {
            throw DimensionError("detector input must be a non-empty (T+1) x 9 matrix");
        }
        f.offsets.push_back(rows);
        rows += s->features.rows();
    }
    nn::Matrix x(rows, kFeatureDim);
    for (std::size_t b = 0; b < batch.size(); ++b) x.middleRows(f.offsets[b], batch[b]->features.rows()) = batch[b]->features;

    f.z = det.projector.forward(x, &f.projector_cache);
    nn::Matrix pre = f.z * det.scorer.U.transpose();
    pre.rowwise() += det.scorer.b_u.transpose();
    f.attn = pre.array().tanh().matrix();
    const nn::Vector u = f.attn * det.scorer.w;
    f.omega.resize(rows);

    const auto nb = static_cast<Eigen::Index>(batch.size());
    f.pooled = nn::Matrix::Zero(nb, f.z.cols());
    f.s_path.resize(batch.size());
    f.s_reb.resize(batch.size());
    f.labels.resize(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Eigen::Index off = f.offsets[b];
        const Eigen::Index n = batch[b]->features.rows();
        segment_softmax(u, off, n, f.omega);
        const auto w = f.omega.segment(off, n);
        f.pooled.row(static_cast<Eigen::Index>(b)) = w.transpose() * f.z.middleRows(off, n);
        f.s_path[b] = w.dot(batch[b]->gaps);
        f.s_reb[b] = w.dot(batch[b]->rises);
        f.labels[b] = batch[b]->label;
    }
    f.logits = det.head.forward(f.pooled, &f.head_cache).col(0);
    return f;
}

LossTerms backward_batch(const DeviationDetector& det, const BatchForward& f, double lambda1, double lambda2,
                         DeviationDetector::Grads* grads) {
    const std::size_t nb = f.samples.size();
    LossTerms mean;
    if (nb == 0) return mean;
    const double inv_b = 1.0 / static_cast<double>(nb);

    nn::Matrix d_logit(static_cast<Eigen::Index>(nb), 1);
    std::vector<double> d_path(nb);
    std::vector<double> d_reb(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        const int y = f.labels[b];
        if (y < 0) throw TrainingError("detector loss needs labeled samples");
        const auto bce = nn::binary_ce(f.logits(static_cast<Eigen::Index>(b)), y);
        const auto h = hinge_regularizers(det.margins, f.s_path[b], f.s_reb[b], y);
        mean.cls += bce.value * inv_b;
        mean.path += h.path * inv_b;
        mean.reb += h.rebound * inv_b;
        d_logit(static_cast<Eigen::Index>(b), 0) = bce.grad * inv_b;
        // d hinge / d s: factual branch is s itself, hallucinated branch is active below the margin.
        const auto slope = [y](double s, double m) { return y == 0 ? 1.0 : (m - s > 0.0 ? -1.0 : 0.0); };
        d_path[b] = lambda1 * slope(f.s_path[b], det.margins.path) * inv_b;
        d_reb[b] = lambda2 * slope(f.s_reb[b], det.margins.rebound) * inv_b;
    }
    mean.total = mean.cls + lambda1 * mean.path + lambda2 * mean.reb;
    if (grads == nullptr) return mean;

    const nn::Matrix d_pooled = det.head.backward(f.head_cache, d_logit, grads->head);

    nn::Matrix d_z = nn::Matrix::Zero(f.z.rows(), f.z.cols());
    nn::Vector d_u = nn::Vector::Zero(f.z.rows());
    for (std::size_t b = 0; b < nb; ++b) {
        const auto* s = f.samples[b];
        const Eigen::Index off = f.offsets[b];
        const Eigen::Index n = s->features.rows();
        const auto w = f.omega.segment(off, n);
        const auto dp = d_pooled.row(static_cast<Eigen::Index>(b));
        // dL/d omega_t from the pooled state and both scores.
        const nn::Vector d_omega = f.z.middleRows(off, n) * dp.transpose() + d_path[b] * s->gaps + d_reb[b] * s->rises;
        const double centre = w.dot(d_omega);
        d_u.segment(off, n) = w.cwiseProduct(d_omega.array().matrix() - nn::Vector::Constant(n, centre));
        d_z.middleRows(off, n).noalias() += w * dp;
    }

    const nn::Matrix d_attn = d_u * det.scorer.w.transpose();
    grads->w.noalias() += f.attn.transpose() * d_u;
    const nn::Matrix d_pre = (d_attn.array() * (1.0 - f.attn.array().square())).matrix();
    grads->U.noalias() += d_pre.transpose() * f.z;
    grads->b_u.noalias() += d_pre.colwise().sum().transpose();
    d_z.noalias() += d_pre * det.scorer.U;

    det.projector.backward(f.projector_cache, d_z, grads->projector);
    return mean;
}

SampleScore score_input(const DeviationDetector& det, const DetectorInput& input) {
    const auto out = det.attend_and_classify(input.features);
    SampleScore s;
    s.logit = out.logit;
    s.probability = nn::sigmoid(out.logit);
    s.s_path = out.omega.dot(input.gaps);
    s.s_reb = out.omega.dot(input.rises);
    s.omega = out.omega;
    return s;
}

}  // namespace dynhd
