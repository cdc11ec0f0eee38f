#include "attrinet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>

namespace attrinet {
namespace {

void check_binary(const std::vector<double>& scores, const std::vector<int>& labels, const char* who) {
  if (scores.size() != labels.size()) throw std::invalid_argument(std::string(who) + ": scores and labels differ in length");
  bool pos = false, neg = false;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument(std::string(who) + ": labels must be 0 or 1");
    (l ? pos : neg) = true;
  }
  if (!pos || !neg) throw std::invalid_argument(std::string(who) + ": labels must contain both classes");
}

}  // namespace

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_binary(scores, labels, "roc_auc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double concordant = 0;  // integer/half-integer counts: exact in double
  double negatives_below = 0, positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double p = 0, n = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? p : n) += 1;
      ++j;
    }
    concordant += p * negatives_below + 0.5 * p * n;
    negatives_below += n;
    positives += p;
    i = j;
  }
  return concordant / (positives * negatives_below);
}

double youden_index(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
  double tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i]) (predicted ? tp : fn) += 1;
    else (predicted ? fp : tn) += 1;
  }
  return tp / (tp + fn) + tn / (tn + fp) - 1.0;
}

YoudenResult youden_threshold(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_binary(scores, labels, "youden_threshold");
  std::vector<double> unique = scores;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

  std::vector<double> candidates{-std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i + 1 < unique.size(); ++i) candidates.push_back(0.5 * (unique[i] + unique[i + 1]));
  candidates.push_back(std::numeric_limits<double>::infinity());

  // Sweep ascending: counts of samples strictly below each candidate.
  std::vector<std::pair<double, int>> sorted;
  for (std::size_t i = 0; i < scores.size(); ++i) sorted.emplace_back(scores[i], labels[i]);
  std::sort(sorted.begin(), sorted.end());
  double npos = 0, nneg = 0;
  for (int l : labels) (l ? npos : nneg) += 1;

  YoudenResult best{candidates.front(), -std::numeric_limits<double>::infinity()};
  std::size_t k = 0;
  double pos_below = 0, neg_below = 0;
  for (double t : candidates) {
    while (k < sorted.size() && sorted[k].first < t) {
      (sorted[k].second ? pos_below : neg_below) += 1;
      ++k;
    }
    const double j = (npos - pos_below) / npos + neg_below / nneg - 1.0;
    if (j > best.j) best = {t, j};
  }
  return best;
}

SensitivityResult class_sensitivity_detail(const Explainer& explainer, const Dataset& test_set, int c, int n_grids,
                                           Rng& rng) {
  if (c < 0 || c >= test_set.num_classes()) throw std::out_of_range("class_sensitivity: class index out of range");
  if (n_grids < 1) throw std::invalid_argument("class_sensitivity: need at least one grid");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < test_set.size(); ++i) (test_set.samples[i].label(c) ? pos : neg).push_back(i);
  if (pos.empty() || neg.size() < 3) {
    throw std::invalid_argument("class_sensitivity: class " + std::to_string(c) + " needs >=1 positive and >=3 negatives (have " +
                                std::to_string(pos.size()) + "/" + std::to_string(neg.size()) + ")");
  }
  std::map<std::size_t, double> mass;  // Σ|map| per sample, computed lazily
  auto attribution = [&](std::size_t i) {
    auto it = mass.find(i);
    if (it == mass.end()) {
      it = mass.emplace(i, static_cast<double>(explainer(test_set.samples[i].image).cwiseAbs().template cast<double>().sum()))
               .first;
    }
    return it->second;
  };

  // Each grid draws from its own substream so grids are independent of
  // evaluation order.
  const std::uint64_t base = rng();
  SensitivityResult out;
  double total = 0;
  for (int g = 0; g < n_grids; ++g) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(g)};
    Rng grid_rng(seq);
    SensitivityGrid grid;
    grid.class_index = c;
    grid.positive_slot = std::uniform_int_distribution<int>(0, 3)(grid_rng);
    std::vector<std::size_t> picks = neg;
    for (int k = 0; k < 3; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, picks.size() - 1);
      std::swap(picks[k], picks[pick(grid_rng)]);
    }
    const std::size_t positive = pos[std::uniform_int_distribution<std::size_t>(0, pos.size() - 1)(grid_rng)];
    for (int slot = 0, k = 0; slot < 4; ++slot) grid.samples[slot] = slot == grid.positive_slot ? positive : picks[k++];

    double sum = 0;
    for (std::size_t s : grid.samples) sum += attribution(s);
    const double score = sum > 0 ? attribution(positive) / sum : 0.25;
    out.per_grid.push_back(score);
    out.grids.push_back(grid);
    total += score;
  }
  out.score = total / n_grids;
  return out;
}

double class_sensitivity(const Explainer& explainer, const Dataset& test_set, int c, int n_grids, Rng* rng) {
  Rng local(0);
  return class_sensitivity_detail(explainer, test_set, c, n_grids, rng ? *rng : local).score;
}

double localization_score(const Mat<float>& map, const Mask& mask) {
  if (map.rows() != mask.rows() || map.cols() != mask.cols()) {
    throw std::invalid_argument("localization_score: map and mask shapes differ");
  }
  double inside = 0, total = 0, area = 0;
  for (Eigen::Index i = 0; i < map.size(); ++i) {
    const double a = std::abs(static_cast<double>(map.data()[i]));
    total += a;
    if (mask.data()[i]) {
      inside += a;
      area += 1;
    }
  }
  if (area == 0) throw std::invalid_argument("localization_score: empty mask");
  return total > 0 ? inside / total : area / static_cast<double>(map.size());
}

}  // namespace attrinet
