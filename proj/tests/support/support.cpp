#include "support.hpp"

#include <cmath>
#include <filesystem>

namespace dynhd::testing {

EvidenceTrajectory random_evidence(int T, nn::Rng& rng, double scale) {
    EvidenceTrajectory e;
    e.T = T;
    e.vectors.resize(static_cast<std::size_t>(T + 1));
    e.kept_counts.assign(static_cast<std::size_t>(T + 1), 1);
    for (auto& v : e.vectors) {
        for (int d = 0; d < kEvidenceDim; ++d) v[d] = scale * nn::uniform01(rng);
    }
    return e;
}

RawTrajectory constant_trajectory(const std::string& id, int T, std::vector<double> entropies, int d_q,
                                  Label label) {
    RawTrajectory r;
    r.id = id;
    r.question = "q " + id;
    r.response = "r " + id;
    r.query_embedding.assign(static_cast<std::size_t>(d_q), 0.5);
    r.label = label;
    for (int t = T; t >= 0; --t) {
        StepRecord s;
        s.step = t;
        for (std::size_t i = 0; i < entropies.size(); ++i) {
            s.tokens.push_back({static_cast<int>(i + 1), "w" + std::to_string(i), TokenClass::semantic, entropies[i]});
        }
        r.steps.push_back(std::move(s));
    }
    return r;
}

namespace {

template <class LossFn>
GradCheck compare(std::vector<nn::ParamBlock>& blocks, LossFn loss, double h) {
    GradCheck out;
    double diff2 = 0.0;
    double a2 = 0.0;
    double n2 = 0.0;
    for (auto& b : blocks) {
        for (std::size_t i = 0; i < b.size; ++i) {
            const double saved = b.values[i];
            auto central = [&](double step) {
                b.values[i] = saved + step;
                const double up = loss();
                b.values[i] = saved - step;
                const double down = loss();
                b.values[i] = saved;
                return (up - down) / (2.0 * step);
            };
            const double numeric = central(h);
            const double analytic = b.grads[i];
            // A ReLU or hinge switching inside [-h, h] makes the wide difference disagree
            // with a much narrower one; such coordinates are non-differentiable there.
            if (std::abs(numeric - central(h / 100.0)) > 1e-6 * (1.0 + std::abs(numeric))) {
                ++out.kinks;
                continue;
            }
            diff2 += (analytic - numeric) * (analytic - numeric);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            out.max_abs_error = std::max(out.max_abs_error, std::abs(analytic - numeric));
            ++out.checked;
        }
    }
    out.rel_error = std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), 1e-300);
    return out;
}

}  // namespace

GradCheck check_detector_gradient(DeviationDetector det, const std::vector<DetectorInput>& batch, double lambda1,
                                  double lambda2, double h) {
    std::vector<const DetectorInput*> ptrs;
    for (const auto& b : batch) ptrs.push_back(&b);
    auto grads = det.zero_grads();
    backward_batch(det, forward_batch(det, ptrs), lambda1, lambda2, &grads);
    std::vector<nn::ParamBlock> blocks;
    det.bind(grads, blocks);
    return compare(
        blocks, [&] { return backward_batch(det, forward_batch(det, ptrs), lambda1, lambda2, nullptr).total; }, h);
}

GradCheck check_generator_gradient(ReferenceGenerator gen, const std::vector<EvidenceSample>& samples, double h) {
    std::vector<const EvidenceSample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    auto grads = gen.net().zero_grads();
    reference_loss(gen, ptrs, &grads);
    std::vector<nn::ParamBlock> blocks;
    gen.net().bind(grads, blocks);
    return compare(blocks, [&] { return reference_loss(gen, ptrs, nullptr); }, h);
}

DetectorInstance random_detector_instance(std::uint64_t seed, int T, int batch) {
    nn::Rng rng(seed);
    DetectorInstance inst;
    inst.detector = DeviationDetector::create({.hidden = 6, .attention_dim = 4, .head_hidden = 5},
                                              {.lambda1 = 0.3, .lambda2 = 0.25}, seed + 1);
    double path_sum = 0.0;
    double reb_sum = 0.0;
    for (int i = 0; i < batch; ++i) {
        const auto obs = random_evidence(T, rng);
        const auto ref = random_evidence(T, rng);
        inst.batch.push_back(prepare_input(obs, ref, i % 2 == 0 ? Label::factual : Label::hallucinated));
        path_sum += inst.batch.back().gaps.mean();
        reb_sum += inst.batch.back().rises.mean();
    }
    // Margins near typical scores so both hinge branches are exercised.
    inst.detector.margins = {1.5 * path_sum / batch, 1.5 * reb_sum / batch};
    return inst;
}

std::string temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "dynhd-tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

}  // namespace dynhd::testing
