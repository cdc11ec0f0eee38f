#include <doctest.h>

#include <cmath>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "attrinet/data.hpp"
#include "attrinet/imageio.hpp"

using namespace attrinet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("attrinet_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

void write_dummy_png(const fs::path& p, float value = 0.2f) {
  fs::create_directories(p.parent_path());
  write_image8(p, Image::Constant(12, 10, value));
}

std::set<std::string> ids_of(const Dataset& d) {
  std::set<std::string> out;
  for (const auto& s : d.samples) out.insert(s.id);
  return out;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic") {
  const SyntheticSpec spec = SyntheticSpec::standard(60, 48, 48, 5, 0.3, 7);
  const Dataset a = generate_synthetic_dataset(spec);
  const Dataset b = generate_synthetic_dataset(spec);
  REQUIRE(a.size() == 60);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(a.samples[i].labels == b.samples[i].labels);
  }
  CHECK_NOTHROW(a.validate());
  CHECK(a.samples[0].image.maxCoeff() <= 1.0f);
  CHECK(a.samples[0].image.minCoeff() >= -1.0f);
}

TEST_CASE("synthetic masks follow labels and stay in their regions") {
  SyntheticSpec spec = SyntheticSpec::standard(200, 48, 48, 5, 0.3, 3);
  spec.noise_std = 0;
  const Dataset ds = generate_synthetic_dataset(spec);
  bool saw_empty = false;
  for (const auto& s : ds.samples) {
    for (int c = 0; c < 5; ++c) {
      const Region& r = spec.shapes[c].region;
      const Mask& m = s.masks[c];
      CHECK((m.cast<int>().sum() > 0) == s.label(c));
      CHECK(m.cast<int>().sum() == m.block(r.top, r.left, r.height, r.width).cast<int>().sum());
    }
    if (std::count(s.labels.begin(), s.labels.end(), 1) == 0) {
      saw_empty = true;
      CHECK((s.image.array() == static_cast<float>(spec.background)).all());
    }
  }
  CHECK(saw_empty);
  for (int a = 0; a < 5; ++a)
    for (int b = a + 1; b < 5; ++b) CHECK_FALSE(spec.shapes[a].region.overlaps(spec.shapes[b].region));
}

TEST_CASE("synthetic labels: prevalence and independence over 10000 samples") {
  const Dataset ds = generate_synthetic_dataset(SyntheticSpec::standard(10000, 12, 12, 5, 0.3, 11));
  std::vector<std::vector<double>> y(5);
  for (const auto& s : ds.samples)
    for (int c = 0; c < 5; ++c) y[c].push_back(s.labels[c]);
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  for (int c = 0; c < 5; ++c) CHECK(std::abs(mean(y[c]) - 0.3) < 0.02);
  for (int a = 0; a < 5; ++a)
    for (int b = a + 1; b < 5; ++b) {
      const double ma = mean(y[a]), mb = mean(y[b]);
      double cov = 0, va = 0, vb = 0;
      for (std::size_t i = 0; i < y[a].size(); ++i) {
        cov += (y[a][i] - ma) * (y[b][i] - mb);
        va += (y[a][i] - ma) * (y[a][i] - ma);
        vb += (y[b][i] - mb) * (y[b][i] - mb);
      }
      CHECK(std::abs(cov / std::sqrt(va * vb)) < 0.05);
    }
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec spec = SyntheticSpec::standard(10, 48, 48, 2, 0.3, 1);
  spec.shapes[1].region = spec.shapes[0].region;
  CHECK_THROWS_AS(generate_synthetic_dataset(spec), std::invalid_argument);
  spec = SyntheticSpec::standard(10, 48, 48, 2, 0.3, 1);
  spec.prevalence[0] = 1.0;
  CHECK_THROWS_AS(generate_synthetic_dataset(spec), std::invalid_argument);
  CHECK_THROWS_AS(SyntheticSpec::standard(10, 48, 48, 10, 0.3, 1), std::invalid_argument);
}

TEST_CASE("split sizes, partition and determinism") {
  const Dataset ds = generate_synthetic_dataset(SyntheticSpec::standard(100, 12, 12, 2, 0.3, 1));
  const DatasetSplit s = split_dataset(ds, {0.8, 0.1, 0.1}, 5);
  CHECK(s.train.size() == 80);
  CHECK(s.test.size() == 10);
  CHECK(s.val.size() == 10);
  std::set<std::string> all = ids_of(s.train);
  for (const auto& id : ids_of(s.test)) CHECK(all.insert(id).second);
  for (const auto& id : ids_of(s.val)) CHECK(all.insert(id).second);
  CHECK(all == ids_of(ds));
  const DatasetSplit t = split_dataset(ds, {0.8, 0.1, 0.1}, 5);
  CHECK(ids_of(t.train) == ids_of(s.train));
  CHECK(ids_of(t.val) == ids_of(s.val));
  CHECK(ids_of(split_dataset(ds, {0.8, 0.1, 0.1}, 6).test) != ids_of(s.test));
  CHECK_THROWS_AS(split_dataset(Dataset{}, {0.8, 0.1, 0.1}, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_dataset(ds, {0.8, 0.1, 0.2}, 1), std::invalid_argument);
}

TEST_CASE("split keeps each patient in one fold") {
  Dataset ds = generate_synthetic_dataset(SyntheticSpec::standard(90, 12, 12, 2, 0.3, 2));
  for (std::size_t i = 0; i < ds.size(); ++i) ds.samples[i].patient_id = "p" + std::to_string(i / 3);
  const DatasetSplit s = split_dataset(ds, {0.8, 0.1, 0.1}, 9);
  std::map<std::string, int> fold_of;
  int f = 0;
  for (const Dataset* d : {&s.train, &s.test, &s.val}) {
    for (const auto& smp : d->samples) {
      auto [it, fresh] = fold_of.emplace(smp.patient_id, f);
      CHECK(it->second == f);
    }
    ++f;
  }
  CHECK(s.train.size() + s.test.size() + s.val.size() == 90);
}

TEST_CASE("class batches respect polarity and fall back to replacement") {
  Dataset ds = generate_synthetic_dataset(SyntheticSpec::standard(40, 12, 12, 2, 0.3, 4));
  Rng rng(1);
  CHECK(kDefaultBatchSize == 4);
  for (int rep = 0; rep < 10; ++rep) {
    for (const ImageSample* s : sample_class_batch(ds, 1, Polarity::Positive, kDefaultBatchSize, rng)) CHECK(s->label(1));
    const auto neg = sample_class_batch(ds, 0, Polarity::Negative, kDefaultBatchSize, rng);
    CHECK(std::set<const ImageSample*>(neg.begin(), neg.end()).size() == 4);
    for (const ImageSample* s : neg) CHECK_FALSE(s->label(0));
  }
  Dataset small;
  small.class_names = {"a"};
  for (int i = 0; i < 5; ++i) {
    ImageSample s;
    s.id = std::to_string(i);
    s.image = Image::Zero(4, 4);
    s.labels = {static_cast<std::uint8_t>(i < 2)};
    small.samples.push_back(s);
  }
  const auto batch = sample_class_batch(small, 0, Polarity::Positive, 4, rng);
  CHECK(batch.size() == 4);
  for (const ImageSample* s : batch) CHECK((s->id == "0" || s->id == "1"));
  for (auto& s : small.samples) s.labels = {0};
  try {
    sample_class_batch(small, 0, Polarity::Positive, 4, rng);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("positive") != std::string::npos);
    CHECK(std::string(e.what()).find("class 0") != std::string::npos);
  }
}

TEST_CASE("dataset directory round trip") {
  TempDir tmp("dsdir");
  const Dataset ds = generate_synthetic_dataset(SyntheticSpec::standard(12, 24, 24, 3, 0.4, 8));
  save_dataset_dir(ds, tmp.path);
  const Dataset back = load_dataset_dir(tmp.path);
  REQUIRE(back.size() == ds.size());
  CHECK(back.class_names == ds.class_names);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.samples[i].id == ds.samples[i].id);
    CHECK(back.samples[i].labels == ds.samples[i].labels);
    CHECK((back.samples[i].image - ds.samples[i].image).cwiseAbs().maxCoeff() < 2.0f / 65535 + 1e-6f);
    REQUIRE(back.samples[i].masks.size() == 3);
    for (int c = 0; c < 3; ++c) CHECK(back.samples[i].masks[c] == ds.samples[i].masks[c]);
  }
}

TEST_CASE("chexpert layout: classes, uncertainty policies, missing columns") {
  TempDir tmp("chexpert");
  const fs::path root = tmp.path / "CheXpert-v1.0-small";
  write_text(root / "train.csv",
             "Path,Sex,Atelectasis,Cardiomegaly,Consolidation,Edema,Pleural Effusion\n"
             "CheXpert-v1.0-small/train/patient00001/study1/view1_frontal.jpg,F,1.0,,0.0,-1.0,1.0\n"
             "CheXpert-v1.0-small/train/patient00002/study1/view1_frontal.jpg,M,0.0,1.0,,0.0,\n"
             "CheXpert-v1.0-small/train/patient00003/study1/view1_frontal.jpg,M,0.0,1.0,,0.0,\n");
  write_dummy_png(tmp.path / "CheXpert-v1.0-small/train/patient00001/study1/view1_frontal.jpg");
  write_dummy_png(tmp.path / "CheXpert-v1.0-small/train/patient00002/study1/view1_frontal.jpg", -0.4f);
  // patient00003's image is missing: skipped and counted

  CxrSource src;
  src.root = root;
  src.class_names = {"Atelectasis", "Cardiomegaly", "Consolidation", "Edema", "Pleural Effusion"};
  src.height = src.width = 16;
  const Dataset ds = load_cxr_dataset(src);
  CHECK(ds.num_classes() == 5);
  REQUIRE(ds.size() == 2);
  CHECK(ds.skipped_images == 1);
  CHECK(ds.samples[0].labels == std::vector<std::uint8_t>{1, 0, 0, 0, 1});
  CHECK(ds.samples[0].patient_id == "patient00001");
  CHECK(ds.samples[0].image.rows() == 16);
  CHECK(ds.samples[0].image.maxCoeff() <= 1.0f);
  CHECK(ds.samples[0].image.minCoeff() >= -1.0f);

  src.uncertainty = UncertaintyPolicy::Ones;
  CHECK(load_cxr_dataset(src).samples[0].labels[3] == 1);
  src.uncertainty = UncertaintyPolicy::Drop;
  CHECK(load_cxr_dataset(src).size() == 1);

  src.class_names = {"Atelectasis", "Pneumothorax"};
  CHECK_THROWS_AS(load_cxr_dataset(src), SchemaError);
}

TEST_CASE("vindr layout keeps requested class order and merges readers") {
  TempDir tmp("vindr");
  write_text(tmp.path / "image_labels_train.csv",
             "image_id,rad_id,Aortic enlargement,Cardiomegaly,Pulmonary fibrosis,Pleural thickening,Lung Opacity\n"
             "img1,R1,1,0,0,0,0\n"
             "img1,R2,0,0,1,0,0\n"
             "img2,R1,0,1,0,1,0\n");
  write_dummy_png(tmp.path / "train/img1.png");
  write_dummy_png(tmp.path / "train/img2.png");
  CxrSource src;
  src.root = tmp.path;
  src.layout = CxrLayout::VinDrCxr;
  src.class_names = {"Pleural thickening", "Aortic enlargement", "Pulmonary fibrosis"};
  src.height = src.width = 8;
  const Dataset ds = load_cxr_dataset(src);
  REQUIRE(ds.size() == 2);
  CHECK(ds.class_names == src.class_names);
  CHECK(ds.samples[0].labels == std::vector<std::uint8_t>{0, 1, 1});
  CHECK(ds.samples[1].labels == std::vector<std::uint8_t>{1, 0, 0});
}

TEST_CASE("chestxray8 layout parses finding lists") {
  TempDir tmp("cxr8");
  write_text(tmp.path / "Data_Entry_2017.csv",
             "Image Index,Finding Labels,Follow-up #,Patient ID\n"
             "a.png,Effusion|Atelectasis,0,7\n"
             "b.png,No Finding,0,8\n");
  write_dummy_png(tmp.path / "images/a.png");
  write_dummy_png(tmp.path / "images/b.png");
  CxrSource src;
  src.root = tmp.path;
  src.layout = parse_layout("chestxray8");
  src.class_names = {"Atelectasis", "Cardiomegaly", "Effusion"};
  src.height = src.width = 8;
  const Dataset ds = load_cxr_dataset(src);
  REQUIRE(ds.size() == 2);
  CHECK(ds.samples[0].labels == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(ds.samples[1].labels == std::vector<std::uint8_t>{0, 0, 0});
  CHECK(ds.samples[0].patient_id == "7");
  CHECK_THROWS_AS(parse_layout("mimic"), std::invalid_argument);
  CHECK_THROWS_AS(parse_uncertainty_policy("maybe"), std::invalid_argument);
}

TEST_CASE("csv splitting honours quotes") {
  CHECK(split_csv_line("a,\"b,c\",d") == std::vector<std::string>{"a", "b,c", "d"});
  CHECK(split_csv_line("\"x\"\"y\",") == std::vector<std::string>{"x\"y", ""});
}

TEST_CASE("dataset validation rejects broken invariants") {
  Dataset ds = generate_synthetic_dataset(SyntheticSpec::standard(4, 12, 12, 2, 0.5, 1));
  ds.samples[1].id = ds.samples[0].id;
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds = generate_synthetic_dataset(SyntheticSpec::standard(4, 12, 12, 2, 0.5, 1));
  ds.samples[0].image(0, 0) = 1.5f;
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
}
