#include "dynhd/evidence.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <queue>

#include "dynhd/error.hpp"

namespace dynhd {

namespace {

// Neumaier-compensated running sum; vocabularies run to 1e5+ terms.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;
    void add(double x) {
        const double t = sum + x;
        carry += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
    }
    double value() const { return sum + carry; }
};

}  // namespace

double shannon_entropy(std::span<const double> probs) {
    CompensatedSum h;
    for (double p : probs) {
        if (p > 0.0) h.add(-p * std::log(p));
    }
    return h.value();
}

double entropy_from_logits(std::span<const double> logits) {
    if (logits.empty()) return 0.0;
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    CompensatedSum z;
    CompensatedSum weighted;
    for (double x : logits) {
        const double e = std::exp(x - max_logit);
        z.add(e);
        weighted.add(e * (x - max_logit));
    }
    // H = log Z - E[x - max]
    return std::log(z.value()) - weighted.value() / z.value();
}

EvidenceVector step_evidence(std::span<const double> entropies, int k) {
    if (k < 1) throw Error("step_evidence: k must be >= 1");
    if (entropies.empty()) return {};

    double sum = 0.0;
    double peak = entropies.front();
    std::priority_queue<double, std::vector<double>, std::greater<>> heap;
    const auto cap = static_cast<std::size_t>(k);
    for (double s : entropies) {
        sum += s;
        peak = std::max(peak, s);
        if (heap.size() < cap) {
            heap.push(s);
        } else if (s > heap.top()) {
            heap.pop();
            heap.push(s);
        }
    }

    // Sum the selected values largest-first so the result does not depend on heap layout.
    std::vector<double> top;
    top.reserve(heap.size());
    while (!heap.empty()) {
        top.push_back(heap.top());
        heap.pop();
    }
    double top_sum = 0.0;
    for (auto it = top.rbegin(); it != top.rend(); ++it) top_sum += *it;

    EvidenceVector v;
    v.mean_entropy = sum / static_cast<double>(entropies.size());
    v.max_entropy = peak;
    v.topk_mean_entropy = top_sum / static_cast<double>(top.size());
    return v;
}

EvidenceTrajectory build_trajectory(const RawTrajectory& raw, const IgnoreSpec& spec, int k) {
    EvidenceTrajectory out;
    out.T = raw.num_steps();
    out.vectors.reserve(raw.steps.size());
    out.kept_counts.reserve(raw.steps.size());
    std::vector<double> kept;
    for (const auto& step : raw.steps) {
        kept.clear();
        for (const auto& tok : step.tokens) {
            if (classify_token(tok, spec).kept) kept.push_back(tok.entropy);
        }
        out.vectors.push_back(step_evidence(kept, k));
        out.kept_counts.push_back(static_cast<int>(kept.size()));
    }
    return out;
}

std::vector<EvidenceTrajectory> build_trajectories(const std::vector<RawTrajectory>& raws,
                                                   const IgnoreSpec& spec, int k) {
    std::vector<EvidenceTrajectory> out;
    out.reserve(raws.size());
    for (const auto& r : raws) out.push_back(build_trajectory(r, spec, k));
    return out;
}

void write_evidence_csv(std::ostream& out, const std::vector<RawTrajectory>& raws,
                        const std::vector<EvidenceTrajectory>& evidence) {
    out << "id,t,mean,max,topk,kept_count\n";
    out << std::setprecision(17);
    for (std::size_t n = 0; n < evidence.size(); ++n) {
        const auto& ev = evidence[n];
        for (std::size_t j = 0; j < ev.size(); ++j) {
            const auto& v = ev.vectors[j];
            out << raws[n].id << ',' << ev.T - static_cast<int>(j) << ',' << v.mean_entropy << ','
                << v.max_entropy << ',' << v.topk_mean_entropy << ',' << ev.kept_counts[j] << '\n';
        }
    }
}

}  // namespace dynhd
