#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "attrinet/metrics.hpp"
#include "attrinet/training.hpp"

namespace attrinet {

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<double> auc;
  std::vector<double> threshold;
  std::vector<double> sensitivity;
  std::vector<double> localization;  ///< empty when the dataset carries no masks
  double macro_auc = 0;
  double macro_sensitivity = 0;
  std::optional<double> macro_localization;
  int n_grids = kDefaultSensitivityGrids;
  std::uint64_t seed = 0;
};

/// Attribution function of a trained model for class c.
Explainer model_explainer(const Model<float>& model, int c);

/// Mean localization_score over the class-positive samples that carry a mask.
double mean_localization(const Explainer& explainer, const Dataset& ds, int c);

EvalReport evaluate(const Model<float>& model, const std::vector<double>& thresholds, const Dataset& test_set,
                    int n_grids = kDefaultSensitivityGrids, std::uint64_t seed = 0);

void write_report_csv(const EvalReport& r, const std::filesystem::path& path);
void write_report_json(const EvalReport& r, const std::filesystem::path& path);

struct AblationRow {
  std::string losses;  ///< e.g. "cls+adv+reg"
  LossWeights weights;
  double macro_auc = 0;
  double macro_sensitivity = 0;
  EvalReport report;
};

/// The four loss sets, in order: cls; cls+adv; cls+adv+reg; all.
std::vector<std::pair<std::string, LossWeights>> ablation_loss_sets(const LossWeights& base);

using AblationProgress = std::function<void(const std::string& losses, const VisitMetrics&)>;

/// Trains each loss set from the same seed and evaluates it on `test_set`.
std::vector<AblationRow> run_ablation(const TrainingConfig& base, const Dataset& train_set, const Dataset& val_set,
                                      const Dataset& test_set, int n_grids = kDefaultSensitivityGrids,
                                      std::uint64_t eval_seed = 0, const AblationProgress& progress = {});

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace attrinet
