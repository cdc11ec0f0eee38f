// attrinet command-line driver.
#include <CLI11.hpp>

#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "attrinet/config.hpp"
#include "attrinet/data.hpp"
#include "attrinet/eval.hpp"
#include "attrinet/imageio.hpp"
#include "attrinet/runtime.hpp"
#include "attrinet/training.hpp"

namespace fs = std::filesystem;
using namespace attrinet;

namespace {

struct Args {
  std::string config;
  std::string ckpt;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
};

// Config keys plus the --seed override, with every effective value recorded
// for the resolved snapshot.
struct Context {
  ConfigReader reader{ConfigMap{}};
  ConfigMap resolved;
  fs::path out;
  std::vector<fs::path> written;

  std::string get(const std::string& key, const std::string& fallback) {
    return resolved[key] = reader.get(key, fallback);
  }
  double get_double(const std::string& key, double fallback) {
    const double v = reader.get_double(key, fallback);
    std::ostringstream s;
    s << std::setprecision(17) << v;
    resolved[key] = s.str();
    return v;
  }
  long get_long(const std::string& key, long fallback) {
    const long v = reader.get_long(key, fallback);
    resolved[key] = std::to_string(v);
    return v;
  }
  void wrote(const fs::path& p) { written.push_back(p); }
};

Context open_context(const Args& a) {
  Context ctx;
  ConfigMap cfg = a.config.empty() ? ConfigMap{} : read_config(a.config);
  if (a.seed) cfg["seed"] = std::to_string(*a.seed);
  if (!a.ckpt.empty()) cfg["ckpt"] = fs::absolute(a.ckpt).string();
  ctx.reader = ConfigReader(std::move(cfg));
  ctx.out = a.out;
  fs::create_directories(ctx.out);
  return ctx;
}

TrainingConfig read_training(Context& ctx) {
  TrainingConfig tc = TrainingConfig::from_config(ctx.reader);
  for (const auto& [k, v] : tc.to_config()) ctx.resolved[k] = v;
  return tc;
}

// Commands that start from a checkpoint accept training keys but record the
// checkpoint's own values.
void adopt_training(Context& ctx, const Checkpoint& ck) {
  TrainingConfig::from_config(ctx.reader);
  for (const auto& [k, v] : ck.config.to_config()) ctx.resolved[k] = v;
}

// Keys read by some command. One config file can drive every command, so a
// command tolerates the others' keys and only rejects names nobody reads.
constexpr const char* kCommandKeys[] = {
    "ckpt", "cxr_csv", "cxr_image_dir", "cxr_layout", "cxr_root", "cxr_uncertainty", "data_dir", "eval_seed",
    "explain_count", "log_every", "n_grids", "sensitivity_panels", "split_seed", "synth_background", "synth_contrast",
    "synth_noise", "synth_prevalence", "synth_samples", "synth_seed"};

// Rejects unknown keys and writes the resolved snapshot; call once all keys
// have been read.
void finish_config(Context& ctx) {
  for (const char* k : kCommandKeys) ctx.reader.accept(k);
  ctx.reader.reject_unknown();
  const fs::path p = ctx.out / "config.resolved.txt";
  std::ofstream out(p);
  out << format_config(ctx.resolved);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  ctx.wrote(p);
}

Dataset load_data(Context& ctx, int height, int width) {
  const std::string dir = ctx.get("data_dir", "");
  const std::string cxr_root = ctx.get("cxr_root", "");
  Dataset ds;
  if (!dir.empty()) {
    ds = load_dataset_dir(dir);
  } else if (!cxr_root.empty()) {
    CxrSource src;
    src.root = cxr_root;
    src.layout = parse_layout(ctx.get("cxr_layout", "chexpert"));
    src.class_names = ctx.reader.get_list("cxr_classes", {});
    std::string joined;
    for (const auto& c : src.class_names) joined += (joined.empty() ? "" : ",") + c;
    ctx.resolved["cxr_classes"] = joined;
    src.uncertainty = parse_uncertainty_policy(ctx.get("cxr_uncertainty", "zeros"));
    src.csv = ctx.get("cxr_csv", "");
    src.image_dir = ctx.get("cxr_image_dir", "");
    src.height = height;
    src.width = width;
    ds = load_cxr_dataset(src);
    if (ds.skipped_images) std::cerr << "skipped " << ds.skipped_images << " unreadable images\n";
  } else {
    throw ConfigError("config: set data_dir (synthetic directory) or cxr_root");
  }
  if (ds.empty()) throw std::runtime_error("dataset is empty");
  if (ds.height() != height || ds.width() != width) {
    throw ConfigError("dataset images are " + std::to_string(ds.height()) + "x" + std::to_string(ds.width()) +
                      " but the model expects " + std::to_string(height) + "x" + std::to_string(width));
  }
  return ds;
}

DatasetSplit load_split(Context& ctx, int height, int width, std::uint64_t default_seed) {
  const Dataset ds = load_data(ctx, height, width);
  const auto ratios = ctx.reader.get_list("split_ratios", {"0.8", "0.1", "0.1"});
  if (ratios.size() != 3) throw ConfigError("config: split_ratios needs three values (train,test,val)");
  std::array<double, 3> r{};
  for (int i = 0; i < 3; ++i) r[i] = std::stod(ratios[i]);
  ctx.resolved["split_ratios"] = ratios[0] + "," + ratios[1] + "," + ratios[2];
  const auto seed = static_cast<std::uint64_t>(ctx.get_long("split_seed", static_cast<long>(default_seed)));
  return split_dataset(ds, r, seed);
}

Checkpoint load_ckpt(Context& ctx) {
  const std::string path = ctx.get("ckpt", "");
  if (path.empty()) throw ConfigError("a checkpoint is required (--ckpt)");
  return load_checkpoint(path);
}

std::string safe_name(std::string s) {
  for (char& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  }
  return s;
}

// ---------------------------------------------------------------------------

void cmd_synth(Context& ctx) {
  const TrainingConfig tc = read_training(ctx);
  const auto synth_seed = static_cast<std::uint64_t>(ctx.get_long("synth_seed", static_cast<long>(tc.seed)));
  SyntheticSpec spec = SyntheticSpec::standard(static_cast<int>(ctx.get_long("synth_samples", 2000)), tc.height,
                                               tc.width, tc.num_classes, ctx.get_double("synth_prevalence", 0.3),
                                               synth_seed);
  spec.noise_std = ctx.get_double("synth_noise", spec.noise_std);
  spec.contrast = ctx.get_double("synth_contrast", spec.contrast);
  spec.background = ctx.get_double("synth_background", spec.background);
  finish_config(ctx);
  const Dataset ds = generate_synthetic_dataset(spec);
  save_dataset_dir(ds, ctx.out);
  ctx.wrote(ctx.out / "labels.csv");
  ctx.wrote(ctx.out / "images");
  ctx.wrote(ctx.out / "masks");
}

void cmd_train(Context& ctx) {
  const TrainingConfig tc = read_training(ctx);
  tc.validate();
  const DatasetSplit split = load_split(ctx, tc.height, tc.width, tc.seed);
  const long log_every = ctx.get_long("log_every", 100);
  finish_config(ctx);

  const fs::path metrics_path = ctx.out / "metrics.csv";
  std::ofstream metrics(metrics_path);
  write_metrics_header(metrics);
  const fs::path ckpt_path = ctx.out / "checkpoint.bin";
  try {
    const Checkpoint ck = train(tc, split.train, split.val, [&](const VisitMetrics& m) {
      write_metrics_row(metrics, m);
      if (log_every > 0 && (m.step + 1) % log_every == 0) {
        std::cerr << "visit " << m.step + 1 << "/" << tc.total_class_visits << " total " << m.total << " cls "
                  << m.losses.cls << " critic " << m.critic_loss << "\n";
      }
    });
    save_checkpoint(ck, ckpt_path);
  } catch (const TrainingDiverged& e) {
    metrics.flush();
    ctx.wrote(metrics_path);
    const fs::path last = ctx.out / "checkpoint.last_good.bin";
    save_checkpoint(e.last_good(), last);
    std::cerr << e.what() << "\nlast good checkpoint: " << last.string() << "\n";
    throw;
  }
  metrics.flush();
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
  ctx.wrote(metrics_path);
  ctx.wrote(ckpt_path);
}

void cmd_eval(Context& ctx) {
  const Checkpoint ck = load_ckpt(ctx);
  adopt_training(ctx, ck);
  const DatasetSplit split = load_split(ctx, ck.config.height, ck.config.width, ck.config.seed);
  const int n_grids = static_cast<int>(ctx.get_long("n_grids", kDefaultSensitivityGrids));
  const auto eval_seed = static_cast<std::uint64_t>(ctx.get_long("eval_seed", 0));
  finish_config(ctx);
  const EvalReport r = evaluate(ck.model, ck.thresholds, split.test, n_grids, eval_seed);
  write_report_csv(r, ctx.out / "report.csv");
  write_report_json(r, ctx.out / "report.json");
  ctx.wrote(ctx.out / "report.csv");
  ctx.wrote(ctx.out / "report.json");
}

void cmd_explain(Context& ctx) {
  const Checkpoint ck = load_ckpt(ctx);
  adopt_training(ctx, ck);
  const DatasetSplit split = load_split(ctx, ck.config.height, ck.config.width, ck.config.seed);
  const long count = ctx.get_long("explain_count", 8);
  finish_config(ctx);

  const fs::path dir = ctx.out / "explain";
  fs::create_directories(dir);
  const Model<float>& m = ck.model;
  const int C = m.head.num_classes();
  std::vector<TaskStyles<float>> tasks;
  for (int c = 0; c < C; ++c) tasks.push_back(prepare_task<float>(m.generator, c));
  nlohmann::json probs = nlohmann::json::array();
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(0L, count)), split.test.size());
  for (std::size_t i = 0; i < n; ++i) {
    const ImageSample& s = split.test.samples[i];
    nlohmann::json entry{{"id", s.id}};
    for (int c = 0; c < C; ++c) {
      const Image map = generator_forward(m.generator, tasks[c], s.image);
      const double p = predict_class(map, c, m.head);
      const double t = ck.thresholds.at(c);
      const fs::path panel = dir / (safe_name(s.id) + "_" + safe_name(ck.class_names.at(c)) + ".png");
      write_explanation_panel(panel, s.image, map, counterfactual(s.image, map), probability_caption(p, t));
      ctx.wrote(panel);
      entry["classes"].push_back({{"class", ck.class_names[c]},
                                  {"probability", p},
                                  {"threshold", t},
                                  {"predicted", p >= t},
                                  {"label", s.label(c)}});
    }
    probs.push_back(entry);
  }
  const fs::path json_path = ctx.out / "probabilities.json";
  std::ofstream out(json_path);
  out << probs.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + json_path.string());
  ctx.wrote(json_path);
}

void cmd_sensitivity(Context& ctx) {
  const Checkpoint ck = load_ckpt(ctx);
  adopt_training(ctx, ck);
  const DatasetSplit split = load_split(ctx, ck.config.height, ck.config.width, ck.config.seed);
  const int n_grids = static_cast<int>(ctx.get_long("n_grids", kDefaultSensitivityGrids));
  const Rng::result_type eval_seed = static_cast<Rng::result_type>(ctx.get_long("eval_seed", 0));
  const long panels = ctx.get_long("sensitivity_panels", 4);
  finish_config(ctx);

  const fs::path grid_dir = ctx.out / "grids";
  fs::create_directories(grid_dir);
  const fs::path csv_path = ctx.out / "sensitivity.csv";
  std::ofstream csv(csv_path);
  csv << "class,sensitivity\n" << std::setprecision(6);
  Rng rng(eval_seed);
  double macro = 0;
  const int C = ck.model.head.num_classes();
  for (int c = 0; c < C; ++c) {
    const Explainer ex = model_explainer(ck.model, c);
    const SensitivityResult r = class_sensitivity_detail(ex, split.test, c, n_grids, rng);
    csv << ck.class_names[c] << ',' << r.score << '\n';
    macro += r.score / C;
    for (long g = 0; g < std::min<long>(panels, static_cast<long>(r.grids.size())); ++g) {
      std::array<Image, 4> tiles;
      std::array<Mat<float>, 4> maps;
      for (int k = 0; k < 4; ++k) {
        tiles[k] = split.test.samples[r.grids[g].samples[k]].image;
        maps[k] = ex(tiles[k]);
      }
      const fs::path p = grid_dir / (safe_name(ck.class_names[c]) + "_grid" + std::to_string(g) + ".png");
      write_grid_panel(p, tiles, maps, r.grids[g].positive_slot);
      ctx.wrote(p);
    }
  }
  csv << "macro," << macro << '\n';
  csv.flush();
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  ctx.wrote(csv_path);
}

void cmd_ablate(Context& ctx) {
  const TrainingConfig tc = read_training(ctx);
  tc.validate();
  const DatasetSplit split = load_split(ctx, tc.height, tc.width, tc.seed);
  const int n_grids = static_cast<int>(ctx.get_long("n_grids", kDefaultSensitivityGrids));
  const auto eval_seed = static_cast<std::uint64_t>(ctx.get_long("eval_seed", 0));
  const long log_every = ctx.get_long("log_every", 100);
  finish_config(ctx);
  const auto rows = run_ablation(tc, split.train, split.val, split.test, n_grids, eval_seed,
                                 [&](const std::string& name, const VisitMetrics& m) {
                                   if (log_every > 0 && (m.step + 1) % log_every == 0) {
                                     std::cerr << name << " visit " << m.step + 1 << " total " << m.total << "\n";
                                   }
                                 });
  const fs::path csv = ctx.out / "ablation.csv";
  write_ablation_csv(rows, csv);
  ctx.wrote(csv);
  for (const auto& r : rows) {
    const fs::path p = ctx.out / ("report_" + safe_name(r.losses) + ".json");
    write_report_json(r.report, p);
    ctx.wrote(p);
  }
}

void cmd_export_global(Context& ctx) {
  const Checkpoint ck = load_ckpt(ctx);
  adopt_training(ctx, ck);
  finish_config(ctx);
  const fs::path dir = ctx.out / "global";
  fs::create_directories(dir);
  const Model<float>& m = ck.model;
  for (int c = 0; c < m.head.num_classes(); ++c) {
    const std::string name = safe_name(ck.class_names.at(c));
    const fs::path pos = dir / (name + "_center_positive.png");
    const fs::path neg = dir / (name + "_center_negative.png");
    const fs::path w = dir / (name + "_weights.png");
    write_signed_map(pos, m.centers.positive[c]);
    write_signed_map(neg, m.centers.negative[c]);
    const Mat<float>& weights = m.head.weights[c];
    write_signed_map(w, weights, std::max<int>(1, 256 / static_cast<int>(std::max(weights.rows(), weights.cols()))));
    ctx.wrote(pos);
    ctx.wrote(neg);
    ctx.wrote(w);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribution-map multi-label classifier: data, training, evaluation and explanations."};
  app.require_subcommand(1);
  Args args;
  using Handler = void (*)(Context&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands{
      {"synth", "Generate a synthetic shape dataset", cmd_synth},
      {"train", "Train a model", cmd_train},
      {"eval", "AUC, thresholds, class sensitivity and localization on the test fold", cmd_eval},
      {"explain", "Attribution panels and probabilities for test images", cmd_explain},
      {"sensitivity", "Class sensitivity scores and grid panels", cmd_sensitivity},
      {"ablate", "Train and evaluate the four loss configurations", cmd_ablate},
      {"export-global", "Class centers and head weights as images", cmd_export_global}};
  Handler chosen = nullptr;
  for (const auto& [name, help, handler] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", args.config, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--ckpt", args.ckpt, "checkpoint file")->check(CLI::ExistingFile);
    sub->add_option("--out", args.out, "output directory")->capture_default_str();
    sub->add_option("--seed", args.seed, "overrides the config seed");
    sub->callback([&chosen, h = handler] { chosen = h; });
  }
  CLI11_PARSE(app, argc, argv);

  tune_allocator();
  try {
    Context ctx = open_context(args);
    chosen(ctx);
    for (const auto& p : ctx.written) std::cout << p.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
