#include "attrinet/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "attrinet/metrics.hpp"

namespace fs = std::filesystem;

namespace attrinet {

// ---------------------------------------------------------------------------
// Config

void TrainingConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("training config: " + m); };
  for (auto [name, v] : {std::pair{"lambda_cls", loss.lambda_cls}, {"lambda_adv", loss.lambda_adv},
                         {"lambda_reg", loss.lambda_reg}, {"lambda_ctr", loss.lambda_ctr}, {"lambda_gp", lambda_gp},
                         {"alpha_0", alpha_0}, {"alpha_1", alpha_1}, {"alpha_ctr", alpha_ctr}}) {
    if (!(v >= 0) || !std::isfinite(v)) fail(std::string(name) + " must be a finite value >= 0");
  }
  if (!(learning_rate > 0)) fail("learning_rate must be > 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam betas must lie in [0,1)");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (n_critic < 1) fail("n_critic must be >= 1");
  if (total_class_visits < 0) fail("total_class_visits must be >= 0");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (height <= 0 || width <= 0 || height % 4 || width % 4) fail("height and width must be positive multiples of 4");
  if (gamma < 1 || height % gamma || width % gamma) fail("height and width must be divisible by gamma");
  if (gen_width < 1 || critic_width < 1 || res_blocks < 0 || critic_layers < 1) fail("bad network widths");
  const int f = 1 << critic_layers;
  if (height % f || width % f) fail("height and width must be divisible by 2^critic_layers");
}

TrainingConfig TrainingConfig::from_config(ConfigReader& r) {
  TrainingConfig c;
  c.loss.lambda_cls = r.get_double("lambda_cls", c.loss.lambda_cls);
  c.loss.lambda_adv = r.get_double("lambda_adv", c.loss.lambda_adv);
  c.loss.lambda_reg = r.get_double("lambda_reg", c.loss.lambda_reg);
  c.loss.lambda_ctr = r.get_double("lambda_ctr", c.loss.lambda_ctr);
  c.loss.use_cls = r.get_bool("use_cls", c.loss.use_cls);
  c.loss.use_adv = r.get_bool("use_adv", c.loss.use_adv);
  c.loss.use_reg = r.get_bool("use_reg", c.loss.use_reg);
  c.loss.use_ctr = r.get_bool("use_ctr", c.loss.use_ctr);
  c.alpha_0 = r.get_double("alpha_0", c.alpha_0);
  c.alpha_1 = r.get_double("alpha_1", c.alpha_1);
  const std::string red = r.get("reg_reduction", "sum");
  if (red == "sum") {
    c.reg_reduction = L1Reduction::Sum;
  } else if (red == "pixel_mean") {
    c.reg_reduction = L1Reduction::PixelMean;
  } else {
    throw ConfigError("config: reg_reduction must be sum or pixel_mean, got '" + red + "'");
  }
  c.learning_rate = r.get_double("learning_rate", c.learning_rate);
  c.adam_beta1 = r.get_double("adam_beta1", c.adam_beta1);
  c.adam_beta2 = r.get_double("adam_beta2", c.adam_beta2);
  c.batch_size = r.get_int("batch_size", c.batch_size);
  c.alpha_ctr = r.get_double("alpha_ctr", c.alpha_ctr);
  c.lambda_gp = r.get_double("lambda_gp", c.lambda_gp);
  c.n_critic = r.get_int("n_critic", c.n_critic);
  c.total_class_visits = r.get_long("total_class_visits", c.total_class_visits);
  c.cls_all_classes = r.get_bool("cls_all_classes", c.cls_all_classes);
  c.seed = r.get_u64("seed", c.seed);
  c.num_classes = r.get_int("num_classes", c.num_classes);
  c.height = r.get_int("height", c.height);
  c.width = r.get_int("width", c.width);
  c.gamma = r.get_int("gamma", c.gamma);
  c.gen_width = r.get_int("gen_width", c.gen_width);
  c.res_blocks = r.get_int("res_blocks", c.res_blocks);
  c.critic_width = r.get_int("critic_width", c.critic_width);
  c.critic_layers = r.get_int("critic_layers", c.critic_layers);
  return c;
}

namespace {
std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}
}  // namespace

ConfigMap TrainingConfig::to_config() const {
  return {{"lambda_cls", num(loss.lambda_cls)},
          {"lambda_adv", num(loss.lambda_adv)},
          {"lambda_reg", num(loss.lambda_reg)},
          {"lambda_ctr", num(loss.lambda_ctr)},
          {"use_cls", loss.use_cls ? "true" : "false"},
          {"use_adv", loss.use_adv ? "true" : "false"},
          {"use_reg", loss.use_reg ? "true" : "false"},
          {"use_ctr", loss.use_ctr ? "true" : "false"},
          {"alpha_0", num(alpha_0)},
          {"alpha_1", num(alpha_1)},
          {"reg_reduction", reg_reduction == L1Reduction::Sum ? "sum" : "pixel_mean"},
          {"learning_rate", num(learning_rate)},
          {"adam_beta1", num(adam_beta1)},
          {"adam_beta2", num(adam_beta2)},
          {"batch_size", std::to_string(batch_size)},
          {"alpha_ctr", num(alpha_ctr)},
          {"lambda_gp", num(lambda_gp)},
          {"n_critic", std::to_string(n_critic)},
          {"total_class_visits", std::to_string(total_class_visits)},
          {"cls_all_classes", cls_all_classes ? "true" : "false"},
          {"seed", std::to_string(seed)},
          {"num_classes", std::to_string(num_classes)},
          {"height", std::to_string(height)},
          {"width", std::to_string(width)},
          {"gamma", std::to_string(gamma)},
          {"gen_width", std::to_string(gen_width)},
          {"res_blocks", std::to_string(res_blocks)},
          {"critic_width", std::to_string(critic_width)},
          {"critic_layers", std::to_string(critic_layers)}};
}

double total_generator_loss(const LossComponents& components, const TrainingConfig& config) {
  return total_generator_loss(components, config.loss);
}

// ---------------------------------------------------------------------------
// Model

Model<float> zero_model(const TrainingConfig& config) {
  return {Generator<float>::zeros(config.generator_shape()), Critic<float>::zeros(config.critic_shape()),
          ClassifierHead<float>::zeros(config.num_classes, config.height, config.width, config.gamma),
          ClassCenters<float>::zeros(config.num_classes, config.height, config.width)};
}

Model<float> init_model(const TrainingConfig& config, Rng& rng) {
  Model<float> m = zero_model(config);
  m.generator = init_generator<float>(config.generator_shape(), rng);
  m.critic = init_critic<float>(config.critic_shape(), rng);
  return m;
}

TrainingState init_training_state(const TrainingConfig& config) {
  config.validate();
  TrainingState st;
  st.rng.seed(config.seed);
  st.model = init_model(config, st.rng);
  st.generator_opt = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2);
  st.critic_opt = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2);
  return st;
}

namespace {

std::string rng_state(const Rng& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

Checkpoint snapshot(const TrainingState& st, const TrainingConfig& config, const Dataset& ds) {
  Checkpoint c;
  c.config = config;
  c.class_names = ds.class_names;
  c.model = st.model;
  c.step = st.step;
  c.rng_state = rng_state(st.rng);
  return c;
}

std::vector<Mat<float>*> generator_and_head(Model<float>& m) {
  auto p = m.generator.params();
  for (auto* h : m.head.params()) p.push_back(h);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// One class visit

VisitMetrics train_class_visit(int c, const Dataset& train_set, TrainingState& st, const TrainingConfig& cfg) {
  const int B = cfg.batch_size;
  const int C = cfg.num_classes;
  if (train_set.num_classes() != C) throw std::invalid_argument("train_class_visit: dataset class count mismatch");
  const auto pos = sample_class_batch(train_set, c, Polarity::Positive, B, st.rng);
  const auto neg = sample_class_batch(train_set, c, Polarity::Negative, B, st.rng);
  Model<float>& m = st.model;

  VisitMetrics out;
  out.step = st.step;
  out.class_index = c;

  std::vector<Image> pos_x, neg_x;
  for (const auto* s : pos) pos_x.push_back(s->image);
  for (const auto* s : neg) neg_x.push_back(s->image);

  // Critic: real class-negative images against counterfactuals of positives.
  if (cfg.loss.use_adv) {
    for (int k = 0; k < cfg.n_critic; ++k) {
      const TaskStyles<float> task = prepare_task<float>(m.generator, c);
      std::vector<Image> fakes;
      for (const Image& x : pos_x) fakes.push_back(counterfactual(x, generator_forward(m.generator, task, x)));
      Critic<float> grad = Critic<float>::zeros(m.critic.shape);
      const CriticLossTerms terms = critic_loss(neg_x, fakes, c, m.critic, cfg.lambda_gp, st.rng, &grad);
      st.critic_opt.step(m.critic.params(), grad.params());
      out.critic_loss = terms.loss;
      out.gradient_penalty = terms.penalty;
    }
  }

  // Generator + head.
  std::vector<const ImageSample*> batch(pos.begin(), pos.end());
  batch.insert(batch.end(), neg.begin(), neg.end());
  const std::size_t N = batch.size();
  std::vector<bool> positive(N, false);
  std::fill(positive.begin(), positive.begin() + B, true);

  Generator<float> ggrad = Generator<float>::zeros(m.generator.shape);
  ClassifierHead<float> hgrad = ClassifierHead<float>::zeros(C, cfg.height, cfg.width, cfg.gamma);

  std::vector<int> cls_classes;
  if (cfg.cls_all_classes) {
    for (int k = 0; k < C; ++k) cls_classes.push_back(k);
  } else {
    cls_classes.push_back(c);
  }
  std::vector<TaskStyles<float>> tasks(C);
  std::vector<std::vector<Vec<float>>> dstyles(C);
  for (int k : cls_classes) {
    tasks[k] = prepare_task<float>(m.generator, k);
    dstyles[k] = zero_style_grads(tasks[k]);
  }
  const TaskStyles<float>& task = tasks[c];

  std::vector<GeneratorTape<float>> tapes(N);
  std::vector<Image> maps(N);
  std::vector<Mat<float>> dmaps(N);
  for (std::size_t i = 0; i < N; ++i) {
    maps[i] = generator_forward(m.generator, task, batch[i]->image, &tapes[i]);
    dmaps[i] = Mat<float>::Zero(maps[i].rows(), maps[i].cols());
  }

  // Classification: every requested class on all 2B images.
  Mat<double> probs(N, cls_classes.size()), labels(N, cls_classes.size());
  const double w_cls = cfg.loss.use_cls ? cfg.loss.lambda_cls : 0.0;
  for (std::size_t col = 0; col < cls_classes.size(); ++col) {
    const int k = cls_classes[col];
    for (std::size_t i = 0; i < N; ++i) {
      GeneratorTape<float> tape;
      const Image map_k = k == c ? maps[i] : generator_forward(m.generator, tasks[k], batch[i]->image, &tape);
      const double p = static_cast<double>(predict_class(map_k, k, m.head));
      probs(i, col) = p;
      labels(i, col) = batch[i]->label(k);
      if (w_cls == 0.0) continue;
      const float dz = static_cast<float>(w_cls * bce_logit_grad(p, labels(i, col), N));
      const Mat<float> dmap = head_logit_backward(map_k, k, m.head, dz, hgrad);
      if (k == c) {
        dmaps[i] += dmap;
      } else {
        generator_backward(m.generator, tasks[k], tape, dmap, ggrad, dstyles[k]);
      }
    }
  }
  out.losses.cls = classification_loss(probs, labels);

  // Adversarial: counterfactuals of the positive batch through the critic.
  if (cfg.loss.use_adv) {
    const TaskStyles<float> ctask = prepare_task<float>(m.critic, c);
    Critic<float> scratch = Critic<float>::zeros(m.critic.shape);
    auto scratch_styles = zero_style_grads(ctask);
    std::vector<double> scores;
    const float dscore = static_cast<float>(cfg.loss.lambda_adv * adversarial_loss_grad(B));
    for (int i = 0; i < B; ++i) {
      CriticTape<float> tape;
      scores.push_back(critic_forward(m.critic, ctask, counterfactual(pos_x[i], maps[i]), &tape));
      dmaps[i] += critic_backward(m.critic, ctask, tape, dscore, scratch, scratch_styles);
    }
    out.losses.adv = adversarial_loss(scores);
  }

  // Sparsity, weighted by polarity.
  {
    const std::vector<Image> pos_maps(maps.begin(), maps.begin() + B), neg_maps(maps.begin() + B, maps.end());
    std::vector<Mat<float>> dneg, dpos;
    out.losses.reg = regularization_loss(neg_maps, pos_maps, cfg.alpha_0, cfg.alpha_1, cfg.reg_reduction, &dneg, &dpos);
    if (cfg.loss.use_reg) {
      const float w = static_cast<float>(cfg.loss.lambda_reg);
      for (int i = 0; i < B; ++i) dmaps[i] += w * dpos[i];
      for (std::size_t i = B; i < N; ++i) dmaps[i] += w * dneg[i - B];
    }
  }

  // Center loss against the current centers.
  {
    std::vector<Mat<float>> dctr;
    out.losses.ctr = center_loss(maps, positive, m.centers, c, &dctr);
    if (cfg.loss.use_ctr) {
      const float w = static_cast<float>(cfg.loss.lambda_ctr);
      for (std::size_t i = 0; i < N; ++i) dmaps[i] += w * dctr[i];
    }
  }

  out.total = total_generator_loss(out.losses, cfg);
  if (!std::isfinite(out.total)) {
    throw TrainingDiverged("training diverged at step " + std::to_string(st.step) + " (class " + std::to_string(c) +
                               "): non-finite total loss",
                           snapshot(st, cfg, train_set));
  }

  for (std::size_t i = 0; i < N; ++i) generator_backward(m.generator, task, tapes[i], dmaps[i], ggrad, dstyles[c]);
  for (int k : cls_classes) task_backward(m.generator, tasks[k], dstyles[k], ggrad);
  if (std::find(cls_classes.begin(), cls_classes.end(), c) == cls_classes.end()) {
    task_backward(m.generator, task, dstyles[c], ggrad);
  }

  std::vector<Mat<float>*> grads = ggrad.params();
  for (auto* h : hgrad.params()) grads.push_back(h);
  st.generator_opt.step(generator_and_head(m), grads);

  m.centers = update_centers(maps, positive, std::move(m.centers), c, cfg.alpha_ctr);
  ++st.step;
  return out;
}

// ---------------------------------------------------------------------------

Mat<double> predict_dataset(const Model<float>& model, const Dataset& ds) {
  const int C = model.head.num_classes();
  Mat<double> probs(ds.size(), C);
  for (int c = 0; c < C; ++c) {
    const TaskStyles<float> task = prepare_task<float>(model.generator, c);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      probs(i, c) = predict_class(generator_forward(model.generator, task, ds.samples[i].image), c, model.head);
    }
  }
  return probs;
}

std::vector<double> youden_thresholds(const Mat<double>& probs, const Dataset& ds) {
  std::vector<double> out;
  for (int c = 0; c < static_cast<int>(probs.cols()); ++c) {
    std::vector<double> scores(probs.rows());
    std::vector<int> labels(probs.rows());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      scores[i] = probs(i, c);
      labels[i] = ds.samples[i].label(c);
    }
    const std::size_t npos = std::count(labels.begin(), labels.end(), 1);
    if (npos == 0 || npos == labels.size()) {
      std::cerr << "warning: validation fold lacks one polarity for class " << c << "; threshold set to 0.5\n";
      out.push_back(0.5);
      continue;
    }
    out.push_back(youden_threshold(scores, labels).threshold);
  }
  return out;
}

Checkpoint train(const TrainingConfig& config, const Dataset& train_set, const Dataset& val_set,
                 const MetricsCallback& on_visit) {
  TrainingState st = init_training_state(config);
  if (train_set.num_classes() != config.num_classes) {
    throw std::invalid_argument("train: dataset has " + std::to_string(train_set.num_classes()) +
                                " classes, config expects " + std::to_string(config.num_classes));
  }
  if (train_set.height() != config.height || train_set.width() != config.width) {
    throw std::invalid_argument("train: dataset images are " + std::to_string(train_set.height()) + "x" +
                                std::to_string(train_set.width()) + ", config expects " +
                                std::to_string(config.height) + "x" + std::to_string(config.width));
  }
  for (int c = 0; c < config.num_classes; ++c) {
    if (train_set.count(c, true) == 0 || train_set.count(c, false) == 0) {
      throw std::invalid_argument("train: class " + train_set.class_names[c] + " lacks positive or negative samples");
    }
  }
  for (long v = 0; v < config.total_class_visits; ++v) {
    const VisitMetrics m = train_class_visit(static_cast<int>(v % config.num_classes), train_set, st, config);
    if (on_visit) on_visit(m);
  }
  Checkpoint ckpt = snapshot(st, config, train_set);
  if (!val_set.empty()) ckpt.thresholds = youden_thresholds(predict_dataset(st.model, val_set), val_set);
  else ckpt.thresholds.assign(config.num_classes, 0.5);
  return ckpt;
}

void write_metrics_header(std::ostream& out) {
  out << "step,class,cls,adv,reg,ctr,total,critic_loss,gradient_penalty\n";
}

void write_metrics_row(std::ostream& out, const VisitMetrics& m) {
  out << m.step << ',' << m.class_index << ',' << std::setprecision(9) << m.losses.cls << ',' << m.losses.adv << ','
      << m.losses.reg << ',' << m.losses.ctr << ',' << m.total << ',' << m.critic_loss << ',' << m.gradient_penalty
      << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, schema id, payload, FNV-1a checksum.

namespace {

constexpr char kMagic[8] = {'A', 'T', 'T', 'R', 'I', 'N', 'E', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <typename V>
  void pod(const V& v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  template <typename Net>
  void params(Net& net) {
    const auto ps = net.params();
    pod<std::uint64_t>(ps.size());
    for (const auto* p : ps) {
      pod<std::int64_t>(p->rows());
      pod<std::int64_t>(p->cols());
      bytes(p->data(), sizeof(float) * p->size());
    }
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const char* p, std::size_t n) : p_(p), n_(n) {}
  void bytes(void* dst, std::size_t n) {
    if (pos_ + n > n_) throw CheckpointError("checkpoint truncated");
    std::memcpy(dst, p_ + pos_, n);
    pos_ += n;
  }
  template <typename V>
  V pod() {
    V v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > n_ - pos_) throw CheckpointError("checkpoint truncated");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  template <typename Net>
  void params(Net& net, const char* what) {
    auto ps = net.params();
    if (pod<std::uint64_t>() != ps.size()) throw CheckpointError(std::string("checkpoint: ") + what + " layout mismatch");
    for (auto* p : ps) {
      const auto r = pod<std::int64_t>(), c = pod<std::int64_t>();
      if (r != p->rows() || c != p->cols()) throw CheckpointError(std::string("checkpoint: ") + what + " shape mismatch");
      bytes(p->data(), sizeof(float) * p->size());
    }
  }
  bool done() const { return pos_ == n_; }

 private:
  const char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(const char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  Writer w;
  w.str(format_config(ckpt.config.to_config()));
  w.pod<std::uint64_t>(ckpt.class_names.size());
  for (const auto& n : ckpt.class_names) w.str(n);
  w.pod<std::uint64_t>(ckpt.thresholds.size());
  for (double t : ckpt.thresholds) w.pod(t);
  w.pod<std::int64_t>(ckpt.step);
  w.str(ckpt.rng_state);
  Model<float> m = ckpt.model;
  w.pod<std::int32_t>(m.head.gamma);
  w.params(m.generator);
  w.params(m.critic);
  w.params(m.head);
  w.params(m.centers);

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t schema = kCheckpointSchema;
  out.write(reinterpret_cast<const char*>(&schema), sizeof schema);
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  const std::uint64_t sum = fnv1a(w.data().data(), w.data().size());
  out.write(reinterpret_cast<const char*>(&sum), sizeof sum);
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t header = sizeof kMagic + sizeof(std::uint32_t);
  if (blob.size() < header + sizeof(std::uint64_t) || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("not an attrinet checkpoint: " + path.string());
  }
  std::uint32_t schema = 0;
  std::memcpy(&schema, blob.data() + sizeof kMagic, sizeof schema);
  if (schema != kCheckpointSchema) {
    throw CheckpointError("checkpoint schema " + std::to_string(schema) + " unsupported (expected " +
                          std::to_string(kCheckpointSchema) + ")");
  }
  const std::size_t payload = blob.size() - header - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, blob.data() + header + payload, sizeof stored);
  if (fnv1a(blob.data() + header, payload) != stored) throw CheckpointError("checkpoint corrupt (checksum mismatch)");

  Reader r(blob.data() + header, payload);
  Checkpoint ck;
  ConfigReader cr(parse_config(r.str()));
  ck.config = TrainingConfig::from_config(cr);
  cr.reject_unknown();
  const auto nc = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nc; ++i) ck.class_names.push_back(r.str());
  const auto nt = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nt; ++i) ck.thresholds.push_back(r.pod<double>());
  ck.step = r.pod<std::int64_t>();
  ck.rng_state = r.str();
  if (r.pod<std::int32_t>() != ck.config.gamma) throw CheckpointError("checkpoint: pooling factor mismatch");
  ck.model = zero_model(ck.config);
  r.params(ck.model.generator, "generator");
  r.params(ck.model.critic, "critic");
  r.params(ck.model.head, "head");
  r.params(ck.model.centers, "centers");
  if (!r.done()) throw CheckpointError("checkpoint has trailing data");
  return ck;
}

}  // namespace attrinet
