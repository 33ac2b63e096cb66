#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynhd/deviation_detector.hpp"
#include "dynhd/reference_generator.hpp"
#include "dynhd/trajectory.hpp"

namespace dynhd::testing {

/// Random evidence trajectory with non-negative components.
EvidenceTrajectory random_evidence(int T, nn::Rng& rng, double scale = 2.0);

/// Trajectory whose steps each carry the given semantic entropies (same for every step).
RawTrajectory constant_trajectory(const std::string& id, int T, std::vector<double> entropies, int d_q,
                                  Label label = Label::factual);

struct GradCheck {
    double rel_error = 0.0;  // ||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, tiny)
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    std::size_t kinks = 0;  // coordinates skipped because a kink lies within h
};

/// Central differences with step h over every parameter of the detector,
/// comparing against backward_batch on the same batch and margins.
GradCheck check_detector_gradient(DeviationDetector det, const std::vector<DetectorInput>& batch, double lambda1,
                                  double lambda2, double h = 1e-5);

/// Same for the stage-1 reference loss.
GradCheck check_generator_gradient(ReferenceGenerator gen, const std::vector<EvidenceSample>& samples,
                                   double h = 1e-5);

/// Small random detector instance: labels alternate, margins sit inside the score range.
struct DetectorInstance {
    DeviationDetector detector;
    std::vector<DetectorInput> batch;
};
DetectorInstance random_detector_instance(std::uint64_t seed, int T = 4, int batch = 4);

std::string temp_path(const std::string& name);

}  // namespace dynhd::testing
