#pragma once

#include <span>

namespace dynhd {

/// Area under the ROC curve via the Mann-Whitney statistic with mid-ranks for
/// ties. Label 1 is the positive class; higher score means more likely positive.
/// Throws Error unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

}  // namespace dynhd
