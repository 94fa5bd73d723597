#pragma once

#include <optional>
#include <span>

namespace maria {

/// Rank-based ROC AUC; tied scores share their average rank, so a tie
/// between a positive and a negative counts 1/2. nullopt when only one class
/// is present.
std::optional<double> auc(std::span<const double> scores, std::span<const double> labels);

/// Mean prediction over mean label (predicted CTR over observed CTR).
/// nullopt when there are no positives.
std::optional<double> pcoc(std::span<const double> scores, std::span<const double> labels);

}  // namespace maria
