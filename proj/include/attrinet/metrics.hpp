#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "attrinet/data.hpp"

namespace attrinet {

/// Probability that a random positive outranks a random negative (ties ½).
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct YoudenResult {
  double threshold = 0;
  double j = 0;  ///< sensitivity + specificity − 1 at `threshold`
};

/// Candidate thresholds are the midpoints between consecutive unique scores
/// plus ±∞; a score ≥ t predicts positive. Ties go to the smallest threshold.
YoudenResult youden_threshold(const std::vector<double>& scores, const std::vector<int>& labels);

/// J(t) for an explicit threshold.
double youden_index(const std::vector<double>& scores, const std::vector<int>& labels, double threshold);

/// Produces the attribution map of one image for a fixed class.
using Explainer = std::function<Mat<float>(const Image&)>;

struct SensitivityGrid {
  int class_index = 0;
  std::array<std::size_t, 4> samples{};  ///< indices into the evaluated dataset
  int positive_slot = 0;
};

struct SensitivityResult {
  double score = 0;
  std::vector<SensitivityGrid> grids;
  std::vector<double> per_grid;
};

inline constexpr int kDefaultSensitivityGrids = 200;

/// Mean over n_grids 2×2 grids (one class-positive tile, three negatives) of
/// Σ|map| on the positive tile over Σ|map| on all four; all-zero grids score ¼.
SensitivityResult class_sensitivity_detail(const Explainer& explainer, const Dataset& test_set, int c, int n_grids,
                                           Rng& rng);
double class_sensitivity(const Explainer& explainer, const Dataset& test_set, int c,
                         int n_grids = kDefaultSensitivityGrids, Rng* rng = nullptr);

/// Σ|map| inside the mask over Σ|map| overall; a zero map scores the mask's
/// area fraction.
double localization_score(const Mat<float>& map, const Mask& mask);

}  // namespace attrinet
