#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <vector>

#include "dynhd/token_filter.hpp"
#include "dynhd/trajectory.hpp"

namespace dynhd {

inline constexpr int kEvidenceDim = 3;
inline constexpr int kDefaultTopK = 5;

/// Shannon entropy in nats of a probability vector. Zero entries contribute 0.
double shannon_entropy(std::span<const double> probs);

/// Entropy of softmax(logits), computed without forming the probabilities.
double entropy_from_logits(std::span<const double> logits);

/// Per-step summary of the filtered entropy field: mean, peak and top-k mean.
struct EvidenceVector {
    double mean_entropy = 0.0;
    double max_entropy = 0.0;
    double topk_mean_entropy = 0.0;

    double operator[](int d) const {
        return d == 0 ? mean_entropy : (d == 1 ? max_entropy : topk_mean_entropy);
    }
    double& operator[](int d) {
        return d == 0 ? mean_entropy : (d == 1 ? max_entropy : topk_mean_entropy);
    }

    bool operator==(const EvidenceVector&) const = default;
};

/// Evidence for every step of one trajectory. `vectors[j]` belongs to step
/// t = T - j, so the front is the fully-masked start and the back is t = 0.
struct EvidenceTrajectory {
    int T = 0;
    std::vector<EvidenceVector> vectors;
    std::vector<int> kept_counts;

    std::size_t size() const { return vectors.size(); }
    const EvidenceVector& at_step(int t) const { return vectors.at(static_cast<std::size_t>(T - t)); }
    EvidenceVector& at_step(int t) { return vectors.at(static_cast<std::size_t>(T - t)); }
};

/// Mean, max and mean of the k largest entries (all entries when fewer than k).
/// Empty input yields the zero vector. Top-k selection uses a size-k min-heap.
EvidenceVector step_evidence(std::span<const double> entropies, int k = kDefaultTopK);

EvidenceTrajectory build_trajectory(const RawTrajectory& raw, const IgnoreSpec& spec, int k = kDefaultTopK);

std::vector<EvidenceTrajectory> build_trajectories(const std::vector<RawTrajectory>& raws,
                                                   const IgnoreSpec& spec, int k = kDefaultTopK);

/// CSV with columns id,t,mean,max,topk,kept_count, one row per step.
void write_evidence_csv(std::ostream& out, const std::vector<RawTrajectory>& raws,
                        const std::vector<EvidenceTrajectory>& evidence);

}  // namespace dynhd

namespace dynhd {

/// An evidence trajectory together with what a learner needs alongside it.
struct EvidenceSample {
    std::string id;
    std::vector<double> query;
    EvidenceTrajectory evidence;
    Label label = Label::unlabeled;
};

}  // namespace dynhd
