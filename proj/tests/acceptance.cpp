// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: acceptance <desk-config> [--skip-training]

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <functional>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include "attrinet/config.hpp"
#include "attrinet/critic.hpp"
#include "attrinet/eval.hpp"
#include "attrinet/head.hpp"
#include "attrinet/losses.hpp"
#include "attrinet/metrics.hpp"
#include "attrinet/runtime.hpp"
#include "attrinet/taskgen.hpp"
#include "attrinet/training.hpp"
#include "support.hpp"

using namespace attrinet;
using namespace attrinet::testing;
namespace fs = std::filesystem;

namespace {

struct Verdicts {
  int failed = 0;
  void report(int id, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] %d. %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    failed += !ok;
  }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double minutes_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
}

// ---------------------------------------------------------------------------
// 4. gradients on 8×8 inputs, float64

double worst_gradient_error(std::ostringstream& log) {
  Rng rng(101);
  double worst = 0;
  auto note = [&](const char* what, double e) {
    log << what << '=' << fmt("%.2e", e) << ' ';
    worst = std::max(worst, e);
  };

  // Generator parameters through every generator loss term for one visit.
  Generator<double> g = init_generator<double>(GeneratorShape{2, 2, 1}, rng);
  Critic<double> d = init_critic<double>(CriticShape{2, 2, 2}, rng);
  ClassifierHead<double> head = ClassifierHead<double>::zeros(2, 8, 8, 4);
  for (auto& w : head.weights) w = random_mat(2, 2, rng);
  ClassCenters<double> centers = ClassCenters<double>::zeros(2, 8, 8);
  for (auto* p : centers.params()) *p = random_mat(8, 8, rng, 0.1);
  std::vector<Mat<double>> pos{random_image(8, 8, rng), random_image(8, 8, rng)};
  std::vector<Mat<double>> neg{random_image(8, 8, rng), random_image(8, 8, rng)};
  const int c = 1;

  auto maps_of = [&](const std::vector<Mat<double>>& xs) {
    std::vector<Mat<double>> out;
    for (const auto& x : xs) out.push_back(generate_attribution(x, c, g));
    return out;
  };

  // adversarial: −mean critic score of the positive counterfactuals
  auto adv = [&] {
    std::vector<double> s;
    for (const auto& x : pos) s.push_back(critic_score(Mat<double>(counterfactual(x, generate_attribution(x, c, g))), c, d));
    return adversarial_loss(s);
  };
  auto reg = [&] { return regularization_loss(maps_of(neg), maps_of(pos), 2.0, 1.0, L1Reduction::PixelMean); };
  auto bce = [&] {
    std::vector<Mat<double>> all = maps_of(pos);
    for (const auto& m : maps_of(neg)) all.push_back(m);
    Mat<double> probs(4, 1), labels(4, 1);
    for (int i = 0; i < 4; ++i) {
      probs(i, 0) = predict_class(all[i], c, head);
      labels(i, 0) = i < 2;
    }
    return classification_loss(probs, labels);
  };
  auto ctr = [&] {
    std::vector<Mat<double>> all = maps_of(pos);
    for (const auto& m : maps_of(neg)) all.push_back(m);
    return center_loss(all, {true, true, false, false}, centers, c);
  };

  // Analytic: per-map dL/dM, then one backward per input.
  auto generator_gradient = [&](const std::function<std::vector<Mat<double>>(const std::vector<Mat<double>>&)>& dmaps_for) {
    std::vector<Mat<double>> inputs = pos;
    inputs.insert(inputs.end(), neg.begin(), neg.end());
    const TaskStyles<double> task = prepare_task<double>(g, c);
    std::vector<GeneratorTape<double>> tapes(inputs.size());
    std::vector<Mat<double>> maps;
    for (std::size_t i = 0; i < inputs.size(); ++i) maps.push_back(generator_forward(g, task, inputs[i], &tapes[i]));
    const std::vector<Mat<double>> dm = dmaps_for(maps);
    Generator<double> grad = Generator<double>::zeros(g.shape);
    auto ds = zero_style_grads(task);
    for (std::size_t i = 0; i < inputs.size(); ++i) generator_backward(g, task, tapes[i], dm[i], grad, ds);
    task_backward(g, task, ds, grad);
    return grad;
  };
  auto check = [&](const char* what, const std::function<double()>& f,
                   const std::function<std::vector<Mat<double>>(const std::vector<Mat<double>>&)>& dmaps_for) {
    Generator<double> grad = generator_gradient(dmaps_for);
    note(what, check_params(f, g.params(), grad.params(), 3));
  };

  check("adversarial", adv, [&](const std::vector<Mat<double>>& maps) {
    const TaskStyles<double> task = prepare_task<double>(d, c);
    std::vector<Mat<double>> out;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      if (i >= pos.size()) {
        out.push_back(Mat<double>::Zero(8, 8));
        continue;
      }
      const Mat<double> cf = counterfactual(pos[i], maps[i]);
      auto [score, gx] = critic_input_gradient(d, task, cf);
      out.push_back(adversarial_loss_grad(pos.size()) * gx);
    }
    return out;
  });
  check("regularization", reg, [&](const std::vector<Mat<double>>& maps) {
    std::vector<Mat<double>> p(maps.begin(), maps.begin() + 2), n(maps.begin() + 2, maps.end()), dn, dp;
    regularization_loss(n, p, 2.0, 1.0, L1Reduction::PixelMean, &dn, &dp);
    dp.insert(dp.end(), dn.begin(), dn.end());
    return dp;
  });
  check("bce", bce, [&](const std::vector<Mat<double>>& maps) {
    std::vector<Mat<double>> out;
    ClassifierHead<double> scratch = ClassifierHead<double>::zeros(2, 8, 8, 4);
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const double p = predict_class(maps[i], c, head);
      out.push_back(head_logit_backward(maps[i], c, head, bce_logit_grad(p, i < 2 ? 1.0 : 0.0, maps.size()), scratch));
    }
    return out;
  });
  check("center", ctr, [&](const std::vector<Mat<double>>& maps) {
    std::vector<Mat<double>> out;
    center_loss(maps, {true, true, false, false}, centers, c, &out);
    return out;
  });

  // gradient penalty and full critic objective, critic parameters
  const std::vector<Mat<double>> pts{random_image(8, 8, rng), random_image(8, 8, rng)};
  Critic<double> gp_grad = Critic<double>::zeros(d.shape);
  gradient_penalty_at(d, pts, c, &gp_grad);
  note("gradient_penalty", check_params([&] { return gradient_penalty_at(d, pts, c); }, d.params(), gp_grad.params(), 3));
  Critic<double> cl_grad = Critic<double>::zeros(d.shape);
  Rng r0(5);
  critic_loss(neg, pos, c, d, 10.0, r0, &cl_grad);
  note("critic_loss", check_params(
                          [&] {
                            Rng r(5);
                            return critic_loss(neg, pos, c, d, 10.0, r).loss;
                          },
                          d.params(), cl_grad.params(), 3));

  // logit of the linear head with respect to the map and its weights
  Mat<double> m = random_mat(8, 8, rng);
  ClassifierHead<double> hg = ClassifierHead<double>::zeros(2, 8, 8, 4);
  Mat<double> dm = head_logit_backward(m, c, head, 1.0, hg);
  note("logit_map", check_params([&] { return head_logit(m, c, head); }, {&m}, {&dm}, 64));
  note("logit_weights", check_params([&] { return head_logit(m, c, head); }, {&head.weights[c]}, {&hg.weights[c]}, 4));
  return worst;
}

// ---------------------------------------------------------------------------
// 5. metric oracles

bool metric_oracles(std::ostringstream& log) {
  Rng rng(202);
  bool auc_ok = true, youden_ok = true;
  std::uniform_int_distribution<int> level(0, 12), size(4, 60);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      y[i] = level(rng) < 5;
      s[i] = (level(rng) + 4 * y[i]) / 16.0;
    }
    y[0] = 0;
    y[1] = 1;
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (y[i] && !y[j]) {
          den += 1;
          num += s[i] > s[j] ? 1 : s[i] == s[j] ? 0.5 : 0;
        }
    auc_ok &= roc_auc(s, y) == num / den;
    double best = youden_index(s, y, std::numeric_limits<double>::infinity());
    for (double t : s) best = std::max(best, youden_index(s, y, t));
    youden_ok &= youden_threshold(s, y).j == best;
  }
  Dataset ds;
  ds.class_names = {"a"};
  for (int i = 0; i < 80; ++i) {
    ImageSample smp;
    smp.id = std::to_string(i);
    smp.image = Image::Constant(4, 4, i / 100.0f);
    smp.labels = {static_cast<std::uint8_t>(i % 4 == 0)};
    ds.samples.push_back(smp);
  }
  Rng grid_rng(7);
  const double chance = class_sensitivity([](const Image&) -> Mat<float> { return Mat<float>::Ones(4, 4); }, ds, 0,
                                          kDefaultSensitivityGrids, &grid_rng);
  log << "auc_brute_force=" << (auc_ok ? "exact" : "MISMATCH") << " youden_scan=" << (youden_ok ? "exact" : "MISMATCH")
      << " constant_map_sensitivity=" << fmt("%.4f", chance);
  return auc_ok && youden_ok && std::abs(chance - 0.25) <= 0.02;
}

// ---------------------------------------------------------------------------
// 6. structural invariants

bool structural(std::ostringstream& log) {
  Rng rng(303);
  bool range_ok = true;
  Generator<float> g;
  for (int i = 0; i < 1000; ++i) {
    // fresh random parameters every 50 inputs
    if (i % 50 == 0) g = init_generator<float>(GeneratorShape{3, 4, 1}, rng);
    const Mat<float> x = random_image(16, 16, rng, 1.0).cast<float>();
    const Mat<float> cf = x + generate_attribution(x, i % 3, g);
    range_ok &= cf.cwiseAbs().maxCoeff() < 1.0f;
  }
  ClassifierHead<float> head = ClassifierHead<float>::zeros(3, 16, 16, 4);
  for (auto& w : head.weights) w = random_mat(4, 4, rng).cast<float>();
  const bool zero_ok = predict_class(Mat<float>(Mat<float>::Zero(16, 16)), 2, head) == 0.5f;

  TrainingConfig tc;
  tc.num_classes = 2;
  tc.height = tc.width = 16;
  tc.gamma = 4;
  tc.gen_width = 2;
  tc.res_blocks = 1;
  tc.critic_width = 2;
  tc.critic_layers = 2;
  tc.total_class_visits = 8;
  tc.seed = 9;
  const DatasetSplit d = split_dataset(generate_synthetic_dataset(SyntheticSpec::standard(60, 16, 16, 2, 0.4, 4)),
                                       {0.6, 0.2, 0.2}, 2);
  const Checkpoint a = train(tc, d.train, d.val), b = train(tc, d.train, d.val);
  const fs::path pa = fs::temp_directory_path() / ("attrinet_acc_a_" + std::to_string(::getpid()));
  const fs::path pb = fs::temp_directory_path() / ("attrinet_acc_b_" + std::to_string(::getpid()));
  save_checkpoint(a, pa);
  save_checkpoint(b, pb);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const bool determinism_ok = slurp(pa) == slurp(pb);
  Checkpoint back = load_checkpoint(pa);
  save_checkpoint(back, pb);
  bool roundtrip_ok = slurp(pa) == slurp(pb) && back.thresholds == a.thresholds;
  for (const auto& s : d.test.samples) {
    roundtrip_ok &= predict_all(s.image, back.model.generator, back.model.head) ==
                    predict_all(s.image, a.model.generator, a.model.head);
  }
  fs::remove(pa);
  fs::remove(pb);
  log << "range=" << range_ok << " zero_map_half=" << zero_ok << " checkpoint_roundtrip=" << roundtrip_ok
      << " two_run_determinism=" << determinism_ok;
  return range_ok && zero_ok && roundtrip_ok && determinism_ok;
}

// ---------------------------------------------------------------------------
// 7. loss arithmetic

bool arithmetic(std::ostringstream& log) {
  const double total = total_generator_loss({1, 1, 1, 1}, LossWeights{});
  Mat<double> n(2, 2), p(2, 2);
  n << 0.5, -0.5, 0.25, 0;  // a = 1.25
  p << 0, 0, -2, 1;         // b = 3
  const double reg = regularization_loss<double>({n, n}, {p}, 2.0, 1.0);
  log << "total=" << fmt("%.17g", total) << " reg=" << fmt("%.17g", reg) << " (2a+b=5.5)";
  return total == 201.01 && reg == 5.5;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  if (argc < 2) {
    std::cerr << "usage: acceptance <desk-config> [--skip-training]\n";
    return 2;
  }
  const bool skip_training = argc > 2 && std::string(argv[2]) == "--skip-training";
  Verdicts v;

  if (!skip_training) {
    ConfigReader r(read_config(argv[1]));
    const TrainingConfig tc = TrainingConfig::from_config(r);
    SyntheticSpec spec = SyntheticSpec::standard(r.get_int("synth_samples", 2000), tc.height, tc.width,
                                                 tc.num_classes, r.get_double("synth_prevalence", 0.3),
                                                 r.get_u64("synth_seed", tc.seed));
    spec.background = r.get_double("synth_background", spec.background);
    spec.contrast = r.get_double("synth_contrast", spec.contrast);
    spec.noise_std = r.get_double("synth_noise", spec.noise_std);
    const int n_grids = r.get_int("n_grids", kDefaultSensitivityGrids);
    const std::uint64_t eval_seed = r.get_u64("eval_seed", 0);
    const std::uint64_t split_seed = r.get_u64("split_seed", tc.seed);
    for (const char* k : {"log_every", "explain_count", "sensitivity_panels"}) r.accept(k);
    r.reject_unknown();

    const DatasetSplit d = split_dataset(generate_synthetic_dataset(spec), {0.8, 0.1, 0.1}, split_seed);
    std::printf("synthetic data: %zu train / %zu val / %zu test, %dx%d, C=%d, %ld visits per run\n", d.train.size(),
                d.val.size(), d.test.size(), tc.height, tc.width, tc.num_classes, tc.total_class_visits);
    std::fflush(stdout);

    const auto t0 = std::chrono::steady_clock::now();
    // The full-loss run is trained and evaluated last, so its wall time runs
    // from its first visit to the end of the ablation.
    std::optional<std::chrono::steady_clock::time_point> main_start;
    std::vector<double> totals;
    const auto rows = run_ablation(tc, d.train, d.val, d.test, n_grids, eval_seed,
                                   [&](const std::string& losses, const VisitMetrics& m) {
                                     if (losses != "cls+adv+reg+ctr") return;
                                     if (!main_start) main_start = std::chrono::steady_clock::now();
                                     totals.push_back(m.total);
                                   });
    const double run_minutes = main_start ? minutes_since(*main_start) : 0.0;
    std::printf("ablation finished in %.1f min\n", minutes_since(t0));
    for (const auto& row : rows) {
      std::printf("  %-16s auc %.4f  sens %.4f  loc %.4f\n", row.losses.c_str(), row.macro_auc, row.macro_sensitivity,
                  row.report.macro_localization.value_or(NAN));
    }
    const AblationRow& all = rows[3];
    const EvalReport& rep = all.report;

    bool auc_ok = true;
    std::ostringstream per;
    for (std::size_t k = 0; k < rep.auc.size(); ++k) {
      auc_ok &= rep.auc[k] >= 0.95;
      per << (k ? "," : "") << fmt("%.4f", rep.auc[k]);
    }
    const bool e2e = auc_ok && rep.macro_sensitivity >= 0.45 && run_minutes <= 90;
    v.report(1, "synthetic end-to-end", e2e,
             "per-class AUC [" + per.str() + "] (>=0.95), macro sensitivity " + fmt("%.4f", rep.macro_sensitivity) +
                 " (>=0.45), runtime " + fmt("%.1f", run_minutes) + " min (<=90)");

    bool loc_ok = true;
    std::ostringstream locs;
    for (std::size_t k = 0; k < rep.localization.size(); ++k) {
      loc_ok &= rep.localization[k] >= 0.5;
      locs << (k ? "," : "") << fmt("%.4f", rep.localization[k]);
    }
    v.report(2, "localization", loc_ok && !rep.localization.empty(), "per-class [" + locs.str() + "] (>=0.5)");

    double lo = 1, hi = 0;
    for (const auto& row : rows) {
      lo = std::min(lo, row.macro_auc);
      hi = std::max(hi, row.macro_auc);
    }
    const double s_ca = rows[1].macro_sensitivity, s_car = rows[2].macro_sensitivity, s_all = rows[3].macro_sensitivity;
    v.report(3, "ablation direction", s_all > s_ca && s_car > s_ca && hi - lo <= 0.05,
             "sens all " + fmt("%.4f", s_all) + " / cls+adv+reg " + fmt("%.4f", s_car) + " vs cls+adv " +
                 fmt("%.4f", s_ca) + "; AUC spread " + fmt("%.4f", hi - lo) + " (<=0.05)");

    // smoke: moving-average total loss falls over the full-loss run
    const std::size_t w = std::max<std::size_t>(1, totals.size() / 10);
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < w; ++i) {
      head += totals[i] / w;
      tail += totals[totals.size() - 1 - i] / w;
    }
    std::printf("[%s] smoke: moving-average total loss %.3f -> %.3f\n", tail < head ? "PASS" : "FAIL", head, tail);
    v.failed += !(tail < head);
  } else {
    std::printf("[SKIP] 1-3: training criteria skipped on request\n");
  }

  std::ostringstream g4, m5, s6, a7;
  const double worst = worst_gradient_error(g4);
  v.report(4, "gradient suite", worst < 1e-3, g4.str() + "(max " + fmt("%.2e", worst) + " < 1e-3)");
  const bool oracles_ok = metric_oracles(m5), structure_ok = structural(s6), arithmetic_ok = arithmetic(a7);
  v.report(5, "metric oracles", oracles_ok, m5.str());
  v.report(6, "structural invariants", structure_ok, s6.str());
  v.report(7, "loss arithmetic", arithmetic_ok, a7.str());

  std::printf("%s\n", v.failed ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED");
  return v.failed ? 1 : 0;
}
