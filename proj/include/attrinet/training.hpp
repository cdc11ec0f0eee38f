#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "attrinet/config.hpp"
#include "attrinet/critic.hpp"
#include "attrinet/data.hpp"
#include "attrinet/head.hpp"
#include "attrinet/losses.hpp"
#include "attrinet/optim.hpp"
#include "attrinet/taskgen.hpp"

namespace attrinet {

struct TrainingConfig {
  LossWeights loss;  ///< λ_cls=100, λ_adv=1, λ_reg=100, λ_ctr=0.01 and ablation flags
  double alpha_0 = 2.0;
  double alpha_1 = 1.0;
  L1Reduction reg_reduction = L1Reduction::Sum;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int batch_size = kDefaultBatchSize;
  double alpha_ctr = 0.5;
  double lambda_gp = kDefaultGradientPenaltyWeight;
  int n_critic = 1;
  long total_class_visits = 2500;
  /// Full C-class BCE on every class visit; false restricts L_cls to the visited class.
  bool cls_all_classes = true;
  std::uint64_t seed = 0;

  int num_classes = 5;
  int height = 128;
  int width = 128;
  int gamma = kDefaultPoolFactor;
  int gen_width = 64;
  int res_blocks = 6;
  int critic_width = 64;
  int critic_layers = 6;

  GeneratorShape generator_shape() const { return {num_classes, gen_width, res_blocks}; }
  CriticShape critic_shape() const { return {num_classes, critic_width, critic_layers}; }

  /// Throws ConfigError on any out-of-range field.
  void validate() const;

  /// Consumes the training keys from `r` (others are left for the caller).
  static TrainingConfig from_config(ConfigReader& r);
  ConfigMap to_config() const;
};

double total_generator_loss(const LossComponents& components, const TrainingConfig& config);

template <typename T>
struct Model {
  Generator<T> generator;
  Critic<T> critic;
  ClassifierHead<T> head;
  ClassCenters<T> centers;
};

Model<float> init_model(const TrainingConfig& config, Rng& rng);
Model<float> zero_model(const TrainingConfig& config);

struct Checkpoint {
  TrainingConfig config;
  std::vector<std::string> class_names;
  Model<float> model;
  std::vector<double> thresholds;  ///< per-class Youden thresholds (validation fold)
  long step = 0;
  std::string rng_state;
};

inline constexpr std::uint32_t kCheckpointSchema = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct VisitMetrics {
  long step = 0;
  int class_index = 0;
  LossComponents losses;
  double total = 0;
  double critic_loss = 0;
  double gradient_penalty = 0;
};

struct TrainingState {
  Model<float> model;
  Adam generator_opt;  ///< generator and head
  Adam critic_opt;
  Rng rng;
  long step = 0;
};

TrainingState init_training_state(const TrainingConfig& config);

/// Raised on a non-finite total loss; carries the last good state, before the
/// offending update.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return last_good_; }

 private:
  Checkpoint last_good_;
};

/// One positive and one negative batch for class c: critic update(s), one
/// generator+head update on the weighted objective, then the center update.
VisitMetrics train_class_visit(int c, const Dataset& train_set, TrainingState& state, const TrainingConfig& config);

using MetricsCallback = std::function<void(const VisitMetrics&)>;

/// Cycles classes 0..C−1 for total_class_visits visits, then stores per-class
/// Youden thresholds computed on `val_set`.
Checkpoint train(const TrainingConfig& config, const Dataset& train_set, const Dataset& val_set,
                 const MetricsCallback& on_visit = {});

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const VisitMetrics& m);

/// Per-class probabilities for every sample (rows) of a dataset.
Mat<double> predict_dataset(const Model<float>& model, const Dataset& ds);
std::vector<double> youden_thresholds(const Mat<double>& probs, const Dataset& ds);

}  // namespace attrinet
