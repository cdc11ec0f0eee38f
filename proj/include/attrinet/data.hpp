#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "attrinet/layers.hpp"
#include "attrinet/tensor.hpp"

namespace attrinet {

struct ImageSample {
  std::string id;
  std::string patient_id;  ///< empty when unknown; splits keep a patient in one fold
  Image image;             ///< values in [-1, 1]
  std::vector<std::uint8_t> labels;
  std::vector<Mask> masks;  ///< per-class evidence masks (synthetic data only)

  bool label(int c) const { return labels.at(c) != 0; }
};

struct Dataset {
  std::vector<ImageSample> samples;
  std::vector<std::string> class_names;
  std::size_t skipped_images = 0;  ///< unreadable images dropped while loading

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  int height() const { return samples.empty() ? 0 : static_cast<int>(samples.front().image.rows()); }
  int width() const { return samples.empty() ? 0 : static_cast<int>(samples.front().image.cols()); }
  std::size_t count(int c, bool positive) const;

  /// Throws std::invalid_argument if any sample breaks the dataset invariants.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Synthetic data

enum class ShapeKind { Square, Disk, Cross, Ring, Triangle, Diamond, HBar, VBar, Frame };

struct Region {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  bool overlaps(const Region& o) const {
    return top < o.top + o.height && o.top < top + height && left < o.left + o.width && o.left < left + width;
  }
};

struct ClassShape {
  ShapeKind kind = ShapeKind::Square;
  Region region;
};

struct SyntheticSpec {
  int n_samples = 2000;
  int height = 128;
  int width = 128;
  std::vector<double> prevalence;  ///< one Bernoulli rate per class
  std::vector<ClassShape> shapes;  ///< one canonical region per class
  double background = -0.25;
  double contrast = 0.6;  ///< foreground minus background
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  int num_classes() const { return static_cast<int>(shapes.size()); }

  /// Up to nine classes placed on a 3×3 layout of disjoint cells.
  static SyntheticSpec standard(int n_samples, int height, int width, int num_classes, double prevalence,
                                std::uint64_t seed);
};

Dataset generate_synthetic_dataset(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Chest X-ray label CSVs

enum class CxrLayout { CheXpert, ChestXray8, VinDrCxr };
enum class UncertaintyPolicy { Zeros, Ones, Drop };

CxrLayout parse_layout(const std::string& name);
UncertaintyPolicy parse_uncertainty_policy(const std::string& name);

struct CxrSource {
  std::filesystem::path root;
  CxrLayout layout = CxrLayout::CheXpert;
  std::vector<std::string> class_names;
  UncertaintyPolicy uncertainty = UncertaintyPolicy::Zeros;
  int height = 320;
  int width = 320;
  std::filesystem::path csv;        ///< defaults per layout when empty
  std::filesystem::path image_dir;  ///< defaults per layout when empty
};

/// Thrown when a label CSV lacks a required column.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Dataset load_cxr_dataset(const CxrSource& src);

/// Splits a CSV line, honouring double-quoted fields.
std::vector<std::string> split_csv_line(const std::string& line);

// ---------------------------------------------------------------------------
// Splitting and sampling

struct DatasetSplit {
  Dataset train;
  Dataset test;
  Dataset val;
};

/// Patient-grouped, seeded partition into (train, test, val) folds.
DatasetSplit split_dataset(const Dataset& ds, std::array<double, 3> ratios, std::uint64_t seed);

enum class Polarity { Negative = 0, Positive = 1 };

inline constexpr int kDefaultBatchSize = 4;

/// Samples with labels[c] == polarity; without replacement when the pool is
/// large enough, otherwise with replacement.
std::vector<const ImageSample*> sample_class_batch(const Dataset& ds, int c, Polarity polarity,
                                                   int batch_size, Rng& rng);

// ---------------------------------------------------------------------------
// Persistence: images/<id>.png (16-bit), labels.csv, masks/<id>_c<k>.png

void save_dataset_dir(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset_dir(const std::filesystem::path& dir);

}  // namespace attrinet
