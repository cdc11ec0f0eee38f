#include "attrinet/eval.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>

#include <json.hpp>

namespace fs = std::filesystem;

namespace attrinet {

Explainer model_explainer(const Model<float>& model, int c) {
  auto task = std::make_shared<TaskStyles<float>>(prepare_task<float>(model.generator, c));
  const Generator<float>* g = &model.generator;
  return [task, g](const Image& x) { return generator_forward(*g, *task, x); };
}

double mean_localization(const Explainer& explainer, const Dataset& ds, int c) {
  double total = 0;
  int n = 0;
  for (const ImageSample& s : ds.samples) {
    if (!s.label(c) || static_cast<int>(s.masks.size()) <= c || s.masks[c].size() == 0 || !s.masks[c].any()) continue;
    total += localization_score(explainer(s.image), s.masks[c]);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mean_localization: no masked positives for class " + std::to_string(c));
  return total / n;
}

namespace {
double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

bool has_masks(const Dataset& ds, int c) {
  for (const ImageSample& s : ds.samples) {
    if (s.label(c) && static_cast<int>(s.masks.size()) > c && s.masks[c].size() > 0 && s.masks[c].any()) return true;
  }
  return false;
}
}  // namespace

EvalReport evaluate(const Model<float>& model, const std::vector<double>& thresholds, const Dataset& test_set,
                    int n_grids, std::uint64_t seed) {
  const int C = model.head.num_classes();
  if (test_set.num_classes() != C) throw std::invalid_argument("evaluate: dataset/model class count mismatch");
  EvalReport r;
  r.class_names = test_set.class_names;
  r.n_grids = n_grids;
  r.seed = seed;
  r.threshold = thresholds;
  r.threshold.resize(C, 0.5);

  const Mat<double> probs = predict_dataset(model, test_set);
  Rng rng(seed);
  bool masks = true;
  for (int c = 0; c < C; ++c) masks = masks && has_masks(test_set, c);
  for (int c = 0; c < C; ++c) {
    std::vector<double> scores(probs.rows());
    std::vector<int> labels(probs.rows());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      scores[i] = probs(i, c);
      labels[i] = test_set.samples[i].label(c);
    }
    r.auc.push_back(roc_auc(scores, labels));
    const Explainer ex = model_explainer(model, c);
    r.sensitivity.push_back(class_sensitivity(ex, test_set, c, n_grids, &rng));
    if (masks) r.localization.push_back(mean_localization(ex, test_set, c));
  }
  r.macro_auc = mean(r.auc);
  r.macro_sensitivity = mean(r.sensitivity);
  if (masks) r.macro_localization = mean(r.localization);
  return r;
}

void write_report_csv(const EvalReport& r, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const bool loc = !r.localization.empty();
  out << "class,auc,threshold,sensitivity" << (loc ? ",localization" : "") << '\n' << std::setprecision(6);
  for (std::size_t c = 0; c < r.auc.size(); ++c) {
    out << r.class_names[c] << ',' << r.auc[c] << ',' << r.threshold[c] << ',' << r.sensitivity[c];
    if (loc) out << ',' << r.localization[c];
    out << '\n';
  }
  out << "macro," << r.macro_auc << ",," << r.macro_sensitivity;
  if (loc) out << ',' << *r.macro_localization;
  out << '\n';
}

void write_report_json(const EvalReport& r, const fs::path& path) {
  nlohmann::json j;
  j["n_grids"] = r.n_grids;
  j["seed"] = r.seed;
  j["macro_auc"] = r.macro_auc;
  j["macro_sensitivity"] = r.macro_sensitivity;
  if (r.macro_localization) j["macro_localization"] = *r.macro_localization;
  for (std::size_t c = 0; c < r.auc.size(); ++c) {
    nlohmann::json k{{"class", r.class_names[c]}, {"auc", r.auc[c]}, {"threshold", r.threshold[c]},
                     {"sensitivity", r.sensitivity[c]}};
    if (!r.localization.empty()) k["localization"] = r.localization[c];
    j["classes"].push_back(k);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::pair<std::string, LossWeights>> ablation_loss_sets(const LossWeights& base) {
  auto with = [&](bool adv, bool reg, bool ctr) {
    LossWeights w = base;
    w.use_cls = true;
    w.use_adv = adv;
    w.use_reg = reg;
    w.use_ctr = ctr;
    return w;
  };
  return {{"cls", with(false, false, false)},
          {"cls+adv", with(true, false, false)},
          {"cls+adv+reg", with(true, true, false)},
          {"cls+adv+reg+ctr", with(true, true, true)}};
}

std::vector<AblationRow> run_ablation(const TrainingConfig& base, const Dataset& train_set, const Dataset& val_set,
                                      const Dataset& test_set, int n_grids, std::uint64_t eval_seed,
                                      const AblationProgress& progress) {
  std::vector<AblationRow> rows;
  for (const auto& [name, weights] : ablation_loss_sets(base.loss)) {
    TrainingConfig cfg = base;
    cfg.loss = weights;
    MetricsCallback cb;
    if (progress) cb = [&, n = name](const VisitMetrics& m) { progress(n, m); };
    const Checkpoint ck = train(cfg, train_set, val_set, cb);
    AblationRow row;
    row.losses = name;
    row.weights = weights;
    row.report = evaluate(ck.model, ck.thresholds, test_set, n_grids, eval_seed);
    row.macro_auc = row.report.macro_auc;
    row.macro_sensitivity = row.report.macro_sensitivity;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "losses,macro_auc,macro_sensitivity\n" << std::setprecision(6);
  for (const auto& r : rows) out << r.losses << ',' << r.macro_auc << ',' << r.macro_sensitivity << '\n';
}

}  // namespace attrinet
