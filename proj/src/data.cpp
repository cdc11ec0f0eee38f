#include "attrinet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "attrinet/imageio.hpp"

namespace fs = std::filesystem;

namespace attrinet {

std::size_t Dataset::count(int c, bool positive) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [&](const ImageSample& s) { return s.label(c) == positive; }));
}

void Dataset::validate() const {
  const int c = num_classes();
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) throw std::invalid_argument("dataset: duplicate sample id " + s.id);
    if (static_cast<int>(s.labels.size()) != c) throw std::invalid_argument("dataset: label length mismatch in " + s.id);
    if (s.image.rows() != height() || s.image.cols() != width()) {
      throw std::invalid_argument("dataset: image shape mismatch in " + s.id);
    }
    if (s.image.size() && (s.image.maxCoeff() > 1.0f || s.image.minCoeff() < -1.0f)) {
      throw std::invalid_argument("dataset: pixel outside [-1,1] in " + s.id);
    }
    for (auto l : s.labels) {
      if (l > 1) throw std::invalid_argument("dataset: non-binary label in " + s.id);
    }
    if (!s.masks.empty()) {
      if (static_cast<int>(s.masks.size()) != c) throw std::invalid_argument("dataset: mask count mismatch in " + s.id);
      for (int k = 0; k < c; ++k) {
        const bool nonempty = s.masks[k].size() && s.masks[k].cast<int>().sum() > 0;
        if (nonempty != s.label(k)) throw std::invalid_argument("dataset: mask/label disagreement in " + s.id);
      }
    }
  }
}

// ---------------------------------------------------------------------------

SyntheticSpec SyntheticSpec::standard(int n_samples, int height, int width, int num_classes, double prevalence,
                                      std::uint64_t seed) {
  static constexpr std::array<std::pair<int, int>, 9> kCells{
      {{0, 0}, {0, 2}, {2, 0}, {2, 2}, {1, 1}, {0, 1}, {1, 0}, {1, 2}, {2, 1}}};
  static constexpr std::array<ShapeKind, 9> kKinds{ShapeKind::Square, ShapeKind::Disk,  ShapeKind::Cross,
                                                   ShapeKind::Ring,   ShapeKind::Triangle, ShapeKind::Diamond,
                                                   ShapeKind::HBar,   ShapeKind::VBar,  ShapeKind::Frame};
  if (num_classes < 1 || num_classes > 9) throw std::invalid_argument("SyntheticSpec: supports 1..9 classes");
  SyntheticSpec s;
  s.n_samples = n_samples;
  s.height = height;
  s.width = width;
  s.seed = seed;
  s.prevalence.assign(num_classes, prevalence);
  const int ch = height / 3, cw = width / 3;
  const int mh = std::max(1, ch / 12), mw = std::max(1, cw / 12);
  for (int c = 0; c < num_classes; ++c) {
    const auto [r, q] = kCells[c];
    s.shapes.push_back({kKinds[c], {r * ch + mh, q * cw + mw, ch - 2 * mh, cw - 2 * mw}});
  }
  return s;
}

namespace {

bool inside_shape(ShapeKind kind, double u, double v) {
  // (u, v) in [-1, 1]^2 relative to the shape's bounding box.
  const double r = std::sqrt(u * u + v * v);
  switch (kind) {
    case ShapeKind::Square: return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
    case ShapeKind::Disk: return r <= 0.95;
    case ShapeKind::Cross: return std::abs(u) <= 0.3 || std::abs(v) <= 0.3;
    case ShapeKind::Ring: return r <= 1.0 && r >= 0.5;
    case ShapeKind::Triangle: return v >= -0.9 && std::abs(u) <= (v + 0.9) / 1.9;
    case ShapeKind::Diamond: return std::abs(u) + std::abs(v) <= 1.0;
    case ShapeKind::HBar: return std::abs(v) <= 0.4;
    case ShapeKind::VBar: return std::abs(u) <= 0.4;
    case ShapeKind::Frame: return std::max(std::abs(u), std::abs(v)) >= 0.55;
  }
  return false;
}

Mask render_shape(const ClassShape& shape, int height, int width, Rng& rng) {
  const Region& reg = shape.region;
  std::uniform_real_distribution<double> frac(0.7, 0.9);
  const int side = std::max(3, static_cast<int>(std::lround(std::min(reg.height, reg.width) * frac(rng))));
  std::uniform_int_distribution<int> dy(0, std::max(0, reg.height - side));
  std::uniform_int_distribution<int> dx(0, std::max(0, reg.width - side));
  const int top = reg.top + dy(rng), left = reg.left + dx(rng);
  Mask m = Mask::Zero(height, width);
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      const double v = 2.0 * (i + 0.5) / side - 1.0;
      const double u = 2.0 * (j + 0.5) / side - 1.0;
      if (inside_shape(shape.kind, u, v)) m(top + i, left + j) = 1;
    }
  }
  return m;
}

}  // namespace

Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  const int C = spec.num_classes();
  if (C == 0) throw std::invalid_argument("synthetic: at least one class required");
  if (static_cast<int>(spec.prevalence.size()) != C) throw std::invalid_argument("synthetic: prevalence size mismatch");
  if (spec.n_samples <= 0 || spec.height <= 0 || spec.width <= 0) throw std::invalid_argument("synthetic: bad geometry");
  for (double p : spec.prevalence) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("synthetic: prevalence must lie in (0, 1)");
  }
  for (int a = 0; a < C; ++a) {
    const Region& r = spec.shapes[a].region;
    if (r.top < 0 || r.left < 0 || r.height <= 0 || r.width <= 0 || r.top + r.height > spec.height ||
        r.left + r.width > spec.width) {
      throw std::invalid_argument("synthetic: region of class " + std::to_string(a) + " outside the image");
    }
    for (int b = a + 1; b < C; ++b) {
      if (r.overlaps(spec.shapes[b].region)) {
        throw std::invalid_argument("synthetic: regions of classes " + std::to_string(a) + " and " +
                                    std::to_string(b) + " overlap");
      }
    }
  }

  Rng rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  Dataset ds;
  for (int c = 0; c < C; ++c) ds.class_names.push_back("class" + std::to_string(c));
  ds.samples.reserve(spec.n_samples);
  for (int n = 0; n < spec.n_samples; ++n) {
    ImageSample s;
    char id[32];
    std::snprintf(id, sizeof id, "syn%06d", n);
    s.id = id;
    s.labels.resize(C);
    for (int c = 0; c < C; ++c) s.labels[c] = std::bernoulli_distribution(spec.prevalence[c])(rng) ? 1 : 0;
    Mat<double> img(spec.height, spec.width);
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = spec.background + noise(rng);
    for (int c = 0; c < C; ++c) {
      if (!s.labels[c]) {
        s.masks.push_back(Mask::Zero(spec.height, spec.width));
        continue;
      }
      Mask m = render_shape(spec.shapes[c], spec.height, spec.width, rng);
      for (Eigen::Index i = 0; i < img.size(); ++i) {
        if (m.data()[i]) img.data()[i] += spec.contrast;
      }
      s.masks.push_back(std::move(m));
    }
    s.image = img.cwiseMax(-1.0).cwiseMin(1.0).cast<float>();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------

CxrLayout parse_layout(const std::string& name) {
  if (name == "chexpert") return CxrLayout::CheXpert;
  if (name == "chestxray8") return CxrLayout::ChestXray8;
  if (name == "vindrcxr") return CxrLayout::VinDrCxr;
  throw std::invalid_argument("unknown dataset layout '" + name + "' (chexpert|chestxray8|vindrcxr)");
}

UncertaintyPolicy parse_uncertainty_policy(const std::string& name) {
  if (name == "zeros") return UncertaintyPolicy::Zeros;
  if (name == "ones") return UncertaintyPolicy::Ones;
  if (name == "drop") return UncertaintyPolicy::Drop;
  throw std::invalid_argument("unknown uncertainty policy '" + name + "' (zeros|ones|drop)");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  }
  int require(const std::string& name, const fs::path& file) const {
    const int c = column(name);
    if (c < 0) throw SchemaError("label CSV " + file.string() + " has no column '" + name + "'");
    return c;
  }
};

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open label CSV " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("label CSV " + path.string() + " is empty");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto row = split_csv_line(line);
    row.resize(t.header.size());
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Returns 1, 0 or -1 (uncertain); blank cells count as 0.
int parse_label_cell(const std::string& cell) {
  if (cell.empty()) return 0;
  const double v = std::stod(cell);
  if (v < 0) return -1;
  return v > 0 ? 1 : 0;
}

std::string chexpert_patient(const std::string& path) {
  static const std::regex re("patient[0-9]+");
  std::smatch m;
  return std::regex_search(path, m, re) ? m.str() : std::string{};
}

struct PendingRow {
  std::string id;
  std::string patient;
  fs::path image;
  std::vector<int> labels;  // -1 uncertain
};

}  // namespace

Dataset load_cxr_dataset(const CxrSource& src) {
  if (src.class_names.empty()) throw std::invalid_argument("load_cxr_dataset: no classes requested");
  fs::path csv = src.csv;
  fs::path image_dir = src.image_dir;
  switch (src.layout) {
    case CxrLayout::CheXpert:
      if (csv.empty()) csv = "train.csv";
      break;
    case CxrLayout::ChestXray8:
      if (csv.empty()) csv = "Data_Entry_2017.csv";
      if (image_dir.empty()) image_dir = "images";
      break;
    case CxrLayout::VinDrCxr:
      if (csv.empty()) csv = "image_labels_train.csv";
      if (image_dir.empty()) image_dir = "train";
      break;
  }
  if (csv.is_relative()) csv = src.root / csv;
  if (image_dir.is_relative()) image_dir = src.root / image_dir;
  const CsvTable table = read_csv(csv);
  const std::size_t C = src.class_names.size();

  std::vector<PendingRow> rows;
  if (src.layout == CxrLayout::CheXpert) {
    const int path_col = table.require("Path", csv);
    std::vector<int> cols;
    for (const auto& name : src.class_names) cols.push_back(table.require(name, csv));
    for (const auto& r : table.rows) {
      PendingRow p;
      p.id = r[path_col];
      p.patient = chexpert_patient(p.id);
      // Paths in the official CSV are relative to the dataset's parent directory.
      p.image = src.root / p.id;
      if (!fs::exists(p.image) && fs::exists(src.root.parent_path() / p.id)) p.image = src.root.parent_path() / p.id;
      for (int c : cols) p.labels.push_back(parse_label_cell(r[c]));
      rows.push_back(std::move(p));
    }
  } else if (src.layout == CxrLayout::ChestXray8) {
    const int id_col = table.require("Image Index", csv);
    const int find_col = table.require("Finding Labels", csv);
    const int patient_col = table.column("Patient ID");
    for (const auto& r : table.rows) {
      PendingRow p;
      p.id = r[id_col];
      p.patient = patient_col >= 0 ? r[patient_col] : std::string{};
      p.image = image_dir / p.id;
      std::set<std::string> findings;
      std::stringstream ss(r[find_col]);
      for (std::string f; std::getline(ss, f, '|');) findings.insert(f);
      for (const auto& name : src.class_names) p.labels.push_back(findings.count(name) ? 1 : 0);
      rows.push_back(std::move(p));
    }
  } else {
    const int id_col = table.require("image_id", csv);
    std::vector<int> cols;
    for (const auto& name : src.class_names) cols.push_back(table.require(name, csv));
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& r : table.rows) {
      const std::string& id = r[id_col];
      std::vector<int> labels;
      for (int c : cols) labels.push_back(parse_label_cell(r[c]));
      // One row per reader: a finding counts if any reader marked it.
      if (auto it = index.find(id); it != index.end()) {
        auto& dst = rows[it->second].labels;
        for (std::size_t k = 0; k < C; ++k) dst[k] = std::max(dst[k], labels[k]);
        continue;
      }
      index.emplace(id, rows.size());
      PendingRow p;
      p.id = id;
      p.patient = id;
      p.image = image_dir / (id + ".png");
      p.labels = std::move(labels);
      rows.push_back(std::move(p));
    }
  }

  Dataset ds;
  ds.class_names = src.class_names;
  std::set<std::string> seen;
  for (auto& p : rows) {
    if (!seen.insert(p.id).second) continue;
    ImageSample s;
    bool drop = false;
    for (int l : p.labels) {
      if (l >= 0) {
        s.labels.push_back(static_cast<std::uint8_t>(l));
      } else if (src.uncertainty == UncertaintyPolicy::Drop) {
        drop = true;
        break;
      } else {
        s.labels.push_back(src.uncertainty == UncertaintyPolicy::Ones ? 1 : 0);
      }
    }
    if (drop) continue;
    auto img = read_grayscale(p.image, src.height, src.width);
    if (!img) {
      ++ds.skipped_images;
      continue;
    }
    s.id = p.id;
    s.patient_id = p.patient;
    s.image = std::move(*img);
    ds.samples.push_back(std::move(s));
  }
  if (ds.skipped_images > 0) {
    std::cerr << "warning: skipped " << ds.skipped_images << " unreadable image(s) under " << src.root << "\n";
  }
  return ds;
}

// ---------------------------------------------------------------------------

DatasetSplit split_dataset(const Dataset& ds, std::array<double, 3> ratios, std::uint64_t seed) {
  if (ds.empty()) throw std::invalid_argument("split_dataset: empty dataset");
  for (double r : ratios) {
    if (r < 0) throw std::invalid_argument("split_dataset: negative ratio");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split_dataset: ratios must sum to 1");
  }
  // Group by patient; samples without a patient id form their own group.
  std::vector<std::vector<std::size_t>> groups;
  std::map<std::string, std::size_t> by_patient;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string& p = ds.samples[i].patient_id;
    if (p.empty()) {
      groups.push_back({i});
    } else if (auto it = by_patient.find(p); it != by_patient.end()) {
      groups[it->second].push_back(i);
    } else {
      by_patient.emplace(p, groups.size());
      groups.push_back({i});
    }
  }
  Rng rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);

  const double n = static_cast<double>(ds.size());
  std::array<std::size_t, 3> target{static_cast<std::size_t>(std::lround(ratios[0] * n)),
                                    static_cast<std::size_t>(std::lround(ratios[1] * n)), 0};
  target[1] = std::min(target[1], ds.size() - std::min(ds.size(), target[0]));
  target[2] = ds.size() - target[0] - target[1];
  std::array<std::size_t, 3> filled{0, 0, 0};
  std::array<std::vector<std::size_t>, 3> folds;
  for (const auto& g : groups) {
    int fold = -1;
    for (int f = 0; f < 3; ++f) {
      if (filled[f] + g.size() <= target[f]) {
        fold = f;
        break;
      }
    }
    if (fold < 0) {
      // No fold has room for the whole group: pick the largest deficit.
      long best = -1;
      for (int f = 0; f < 3; ++f) {
        const long deficit = static_cast<long>(target[f]) - static_cast<long>(filled[f]);
        if (fold < 0 || deficit > best) {
          best = deficit;
          fold = f;
        }
      }
    }
    filled[fold] += g.size();
    folds[fold].insert(folds[fold].end(), g.begin(), g.end());
  }
  DatasetSplit out;
  std::array<Dataset*, 3> dst{&out.train, &out.test, &out.val};
  for (int f = 0; f < 3; ++f) {
    std::sort(folds[f].begin(), folds[f].end());
    dst[f]->class_names = ds.class_names;
    for (std::size_t i : folds[f]) dst[f]->samples.push_back(ds.samples[i]);
  }
  return out;
}

std::vector<const ImageSample*> sample_class_batch(const Dataset& ds, int c, Polarity polarity, int batch_size,
                                                   Rng& rng) {
  if (c < 0 || c >= ds.num_classes()) throw std::out_of_range("sample_class_batch: class index out of range");
  if (batch_size < 1) throw std::invalid_argument("sample_class_batch: batch size must be positive");
  const bool want = polarity == Polarity::Positive;
  std::vector<const ImageSample*> pool;
  for (const auto& s : ds.samples) {
    if (s.label(c) == want) pool.push_back(&s);
  }
  if (pool.empty()) {
    throw std::runtime_error("sample_class_batch: no " + std::string(want ? "positive" : "negative") +
                             " samples for class " + std::to_string(c) + " (" + ds.class_names.at(c) + ")");
  }
  std::vector<const ImageSample*> batch;
  batch.reserve(batch_size);
  if (static_cast<int>(pool.size()) >= batch_size) {
    for (int i = 0; i < batch_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      batch.push_back(pool[i]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int i = 0; i < batch_size; ++i) batch.push_back(pool[pick(rng)]);
  }
  return batch;
}

// ---------------------------------------------------------------------------

void save_dataset_dir(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "images");
  std::ofstream csv(dir / "labels.csv");
  if (!csv) throw std::runtime_error("cannot write " + (dir / "labels.csv").string());
  csv << "id,patient_id,path";
  for (const auto& n : ds.class_names) csv << ',' << n;
  csv << '\n';
  for (const auto& s : ds.samples) {
    const std::string rel = "images/" + s.id + ".png";
    write_image16(dir / rel, s.image);
    csv << s.id << ',' << s.patient_id << ',' << rel;
    for (auto l : s.labels) csv << ',' << static_cast<int>(l);
    csv << '\n';
    for (std::size_t c = 0; c < s.masks.size(); ++c) {
      if (s.labels[c]) write_mask(dir / "masks" / (s.id + "_c" + std::to_string(c) + ".png"), s.masks[c]);
    }
  }
}

Dataset load_dataset_dir(const fs::path& dir) {
  const fs::path csv = dir / "labels.csv";
  const CsvTable t = read_csv(csv);
  const int id_col = t.require("id", csv), path_col = t.require("path", csv);
  const int patient_col = t.column("patient_id");
  Dataset ds;
  for (std::size_t k = 0; k < t.header.size(); ++k) {
    if (t.header[k] != "id" && t.header[k] != "path" && t.header[k] != "patient_id") ds.class_names.push_back(t.header[k]);
  }
  for (const auto& r : t.rows) {
    ImageSample s;
    s.id = r[id_col];
    if (patient_col >= 0) s.patient_id = r[patient_col];
    auto img = read_grayscale(dir / r[path_col]);
    if (!img) {
      ++ds.skipped_images;
      continue;
    }
    s.image = std::move(*img);
    bool any_mask = false;
    for (int c = 0; c < ds.num_classes(); ++c) {
      s.labels.push_back(static_cast<std::uint8_t>(parse_label_cell(r[t.require(ds.class_names[c], csv)]) > 0));
      const fs::path mp = dir / "masks" / (s.id + "_c" + std::to_string(c) + ".png");
      auto m = s.labels.back() ? read_mask(mp) : std::nullopt;
      any_mask = any_mask || m.has_value();
      s.masks.push_back(m ? std::move(*m) : Mask::Zero(s.image.rows(), s.image.cols()));
    }
    if (!any_mask && fs::exists(dir / "masks") == false) s.masks.clear();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace attrinet
