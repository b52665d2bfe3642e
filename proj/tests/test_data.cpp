#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hopa/cli.hpp"
#include "hopa/config.hpp"
#include "hopa/data.hpp"
#include "hopa/serialize.hpp"

using namespace hopa;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.canvas = 24;
  s.train_count = 6;
  s.val_count = 3;
  return s;
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr, std::string* err = nullptr) {
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return code;
}

}  // namespace

TEST_CASE("PPM and PGM round trip losslessly") {
  TempDir dir("hopa_pnm_test");
  Tensor img = Tensor::zeros({1, 3, 5, 7});
  int v = 0;
  for (double& x : img.data()) x = (v++ * 37 % 256) / 255.0;
  write_ppm(dir.path / "a.ppm", img);
  Tensor back = read_ppm(dir.path / "a.ppm");
  REQUIRE(back.shape() == img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(back.data()[i] == img.data()[i]);

  LabelMap lab(1, 5, 7);
  for (std::size_t i = 0; i < lab.values.size(); ++i) lab.values[i] = i % 5 == 0 ? kIgnoreLabel : static_cast<int>(i % 3);
  write_pgm(dir.path / "a.pgm", lab);
  CHECK(read_pgm(dir.path / "a.pgm") == lab);
}

TEST_CASE("malformed images raise errors with byte offsets") {
  TempDir dir("hopa_pnm_bad");
  Tensor img = Tensor::full({1, 3, 4, 4}, 0.5);
  write_ppm(dir.path / "ok.ppm", img);
  const std::string bytes = slurp(dir.path / "ok.ppm");
  {
    std::ofstream f(dir.path / "short.ppm", std::ios::binary);
    f << bytes.substr(0, bytes.size() - 5);
  }
  CHECK_THROWS_WITH_AS(read_ppm(dir.path / "short.ppm"), doctest::Contains("offset"), FormatError);
  {
    std::ofstream f(dir.path / "magic.ppm", std::ios::binary);
    f << "P3" << bytes.substr(2);
  }
  CHECK_THROWS_WITH_AS(read_ppm(dir.path / "magic.ppm"), doctest::Contains("offset 0"), FormatError);
  {
    std::ofstream f(dir.path / "header.pgm", std::ios::binary);
    f << "P5\n4 x\n255\n";
  }
  CHECK_THROWS_WITH_AS(read_pgm(dir.path / "header.pgm"), doctest::Contains("offset"), FormatError);
}

TEST_CASE("label validation") {
  LabelMap lab(1, 2, 2, 1);
  CHECK_NOTHROW(validate_labels(lab, 2, "x"));
  lab.values[3] = kIgnoreLabel;
  CHECK_NOTHROW(validate_labels(lab, 2, "x"));
  lab.values[2] = 2;
  CHECK_THROWS_AS(validate_labels(lab, 2, "x"), ValidationError);
}

TEST_CASE("dataset directories") {
  TempDir dir("hopa_ds_test");
  const SyntheticDataset ds = gen_synthetic(small_spec(), 3);
  save_dataset(dir.path / "train", ds.train);
  const auto loaded = load_dataset(dir.path / "train", 4);
  REQUIRE(loaded.size() == ds.train.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].label == ds.train[i].label);
    for (std::size_t j = 0; j < loaded[i].image.numel(); ++j) CHECK(loaded[i].image.data()[j] == ds.train[i].image.data()[j]);
  }
  CHECK_THROWS_AS(load_dataset(dir.path / "train", 3), ValidationError);

  fs::remove(dir.path / "train" / "000002_label.pgm");
  CHECK_THROWS_WITH(read_index(dir.path / "train"), doctest::Contains("000002_label.pgm"));
  CHECK_THROWS(read_index(dir.path / "nowhere"));
}

TEST_CASE("generation is deterministic per seed") {
  TempDir dir("hopa_det_test");
  const SyntheticSpec spec = small_spec();
  save_dataset(dir.path / "a", gen_synthetic(spec, 11).train);
  save_dataset(dir.path / "b", gen_synthetic(spec, 11).train);
  save_dataset(dir.path / "c", gen_synthetic(spec, 12).train);
  for (const auto& entry : fs::directory_iterator(dir.path / "a")) {
    const auto name = entry.path().filename();
    CHECK(slurp(entry.path()) == slurp(dir.path / "b" / name));
  }
  CHECK(slurp(dir.path / "a" / "000000.ppm") != slurp(dir.path / "c" / "000000.ppm"));
}

TEST_CASE("every class appears and labels stay in range") {
  SyntheticSpec spec;
  spec.train_count = 40;
  spec.val_count = 0;
  const SyntheticDataset ds = gen_synthetic(spec, 5);
  std::vector<long> counts(4, 0);
  for (const auto& s : ds.train) {
    CHECK(s.image.shape() == Shape{1, 3, 64, 64});
    for (int v : s.label.values) {
      REQUIRE((v >= 0 && v < 4));
      ++counts[v];
    }
    for (double v : s.image.data()) CHECK((v >= 0.0 && v <= 1.0));
  }
  for (long c : counts) CHECK(c > 0);
}

TEST_CASE("first-order pairs differ in mean colour") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.pairs = {{1, 2, 1}};
  for (int c = 0; c < 3; ++c) CHECK(class_base_color(spec, 2)[c] - class_base_color(spec, 1)[c] >= 0.2);
}

// Per-class pixel moments over a generated split: channel means and
// variances, cross-channel covariances and the joint third central moment.
struct ClassMoments {
  std::array<double, 3> mean{}, var{}, cov{};  // cov: (0,1), (0,2), (1,2)
  double third = 0.0;
  long pixels = 0;
};

ClassMoments moments_of(const std::vector<SegSample>& samples, int cls) {
  ClassMoments m;
  std::vector<std::array<double, 3>> px;
  for (const auto& s : samples)
    for (int y = 0; y < s.label.h; ++y)
      for (int x = 0; x < s.label.w; ++x)
        if (s.label.at(0, y, x) == cls)
          px.push_back({s.image.at(0, 0, y, x), s.image.at(0, 1, y, x), s.image.at(0, 2, y, x)});
  m.pixels = static_cast<long>(px.size());
  for (const auto& p : px)
    for (int c = 0; c < 3; ++c) m.mean[c] += p[c] / m.pixels;
  for (const auto& p : px) {
    const double d0 = p[0] - m.mean[0], d1 = p[1] - m.mean[1], d2 = p[2] - m.mean[2];
    m.var[0] += d0 * d0 / m.pixels;
    m.var[1] += d1 * d1 / m.pixels;
    m.var[2] += d2 * d2 / m.pixels;
    m.cov[0] += d0 * d1 / m.pixels;
    m.cov[1] += d0 * d2 / m.pixels;
    m.cov[2] += d1 * d2 / m.pixels;
    m.third += d0 * d1 * d2 / m.pixels;
  }
  return m;
}

TEST_CASE("order-3 pairs match lower moments and differ in the third") {
  SyntheticSpec spec;
  spec.train_count = 512;
  spec.val_count = 0;
  const SyntheticDataset ds = gen_synthetic(spec, 3);
  const ClassMoments a = moments_of(ds.train, 1);
  const ClassMoments b = moments_of(ds.train, 2);
  REQUIRE(a.pixels > 10000);
  REQUIRE(b.pixels > 10000);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(a.mean[c] - b.mean[c]) < 1e-2);
    CHECK(std::abs(a.var[c] - b.var[c]) < 1e-2);
    CHECK(std::abs(a.cov[c] - b.cov[c]) < 1e-2);
  }
  CHECK(std::abs(a.third - b.third) >= 0.05);
}

TEST_CASE("order-2 pairs match means and differ in covariance") {
  SyntheticSpec spec;
  spec.pairs = {{1, 2, 2}};
  spec.train_count = 512;
  spec.val_count = 0;
  const SyntheticDataset ds = gen_synthetic(spec, 3);
  const ClassMoments a = moments_of(ds.train, 1);
  const ClassMoments b = moments_of(ds.train, 2);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(a.mean[c] - b.mean[c]) < 1e-2);
    CHECK(std::abs(a.var[c] - b.var[c]) < 1e-2);
  }
  CHECK(std::abs(a.cov[0] - b.cov[0]) >= 0.05);
}

TEST_CASE("spec validation") {
  SyntheticSpec spec;
  spec.num_classes = 12;
  spec.pairs = {};
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("unreachable"), ValidationError);
  spec = SyntheticSpec{};
  spec.pairs = {{1, 4, 3}};
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec.pairs = {{1, 2, 5}};
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec.pairs = {{1, 2, 3}, {2, 3, 2}};
  CHECK_THROWS_AS(spec.validate(), ValidationError);
}

TEST_CASE("key-value config parsing") {
  const auto kv = parse_key_values("# comment\ntop = 1\n[train]\nbase_lr = 0.5 # trailing\n\n[hr]\norder=2\n");
  CHECK(kv.at("top") == "1");
  CHECK(kv.at("train.base_lr") == "0.5");
  CHECK(kv.at("hr.order") == "2");
  CHECK_THROWS_AS(parse_key_values("[train\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("novalue\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);

  const ExperimentConfig cfg = parse_experiment_config(
      "train.base_lr = 0.05\n[paired_aspp]\ncombination = 2\nrates = 3, 6, 12, 18\n"
      "[infer]\nscales = 1.0\nflip = false\n[backbone]\npreset = toy\nblocks = 1,1,1,1\n");
  CHECK(cfg.train.base_lr == 0.05);
  CHECK(cfg.model.pa.combination == Combination::kTwo);
  CHECK(cfg.model.pa.rates == std::array<int, 4>{3, 6, 12, 18});
  CHECK(cfg.infer.scales == std::vector<double>{1.0});
  CHECK_FALSE(cfg.infer.flip);
  CHECK(cfg.model.backbone.blocks == std::array<int, 4>{1, 1, 1, 1});

  auto field_of = [](const std::string& text) {
    try {
      parse_experiment_config(text);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("none");
  };
  CHECK(field_of("train.learning_rate = 0.1\n") == "train.learning_rate");
  CHECK(field_of("[train]\nbatch_size = eight\n") == "train.batch_size");
  CHECK(field_of("paired_aspp.combination = 3\n") == "paired_aspp.combination");
  CHECK(field_of("train.warmup_iter = 5000\n") == "train.warmup_iter");
  CHECK(field_of("backbone.preset = huge\n") == "backbone.preset");
  CHECK(field_of("infer.flip = maybe\n") == "infer.flip");

  const SyntheticSpec spec = parse_synthetic_spec(
      "[synthetic]\nnum_classes = 5\npairs = 1:2:3, 3:4:1\nshapes = disc, bar\ncanvas = 32\n");
  CHECK(spec.num_classes == 5);
  REQUIRE(spec.pairs.size() == 2);
  CHECK(spec.pairs[1].order == 1);
  CHECK(spec.shapes.size() == 2);
  CHECK_THROWS_AS(parse_synthetic_spec("synthetic.pairs = 1-2-3\n"), ConfigError);
  CHECK_THROWS_AS(parse_synthetic_spec("synthetic.num_classes = 40\n"), ConfigError);
}

TEST_CASE("command line exit codes") {
  std::string out, err;
  CHECK(cli({}, &out, &err) == kExitUsage);
  CHECK(cli({"train", "--bogus"}, &out, &err) == kExitUsage);
  CHECK(err.find("Usage") != std::string::npos);
  CHECK(cli({"analyze", "scales", "--backbone", "tiny"}, &out, &err) == kExitInvalid);
  CHECK(err.find("backbone") != std::string::npos);
  CHECK(cli({"--help"}, &out) == kExitOk);

  TempDir dir("hopa_cli_codes");
  {
    std::ofstream f(dir.path / "bad.cfg");
    f << "[train]\nmomentum = 0.9\nnesterov = true\n";
  }
  {
    std::ofstream f(dir.path / "spec.cfg");
    f << "synthetic.canvas = 16\nsynthetic.train_count = 2\nsynthetic.val_count = 1\n";
  }
  CHECK(cli({"gen", "--spec", (dir.path / "spec.cfg").string(), "--seed", "1", "--out", (dir.path / "data").string()}) == kExitOk);
  CHECK(cli({"train", "--config", (dir.path / "bad.cfg").string(), "--data", (dir.path / "data").string(), "--out",
             (dir.path / "run").string()},
            &out, &err) == kExitInvalid);
  CHECK(err.find("train.nesterov") != std::string::npos);
}

TEST_CASE("gen, train, eval and report end to end") {
  TempDir dir("hopa_cli_e2e");
  {
    std::ofstream f(dir.path / "spec.cfg");
    f << "[synthetic]\ncanvas = 16\ntrain_count = 4\nval_count = 2\n";
  }
  {
    std::ofstream f(dir.path / "train.cfg");
    f << "[backbone]\nblocks = 1, 1, 1, 1\n[hr]\nrank = 2\nout_per_degree = 2\n"
         "[paired_aspp]\nbranch_channels = 4\nfuse_channels = 4\n"
         "[train]\nbatch_size = 2\ncrop = 16, 16\nmax_iter = 3\nwarmup_iter = 1\n"
         "[infer]\nscales = 1.0, 1.5\n";
  }
  const std::string data = (dir.path / "data").string();
  const std::string run = (dir.path / "run").string();
  REQUIRE(cli({"gen", "--spec", (dir.path / "spec.cfg").string(), "--seed", "7", "--out", data}) == kExitOk);
  CHECK(fs::exists(dir.path / "data" / "train" / "index.txt"));
  REQUIRE(cli({"train", "--config", (dir.path / "train.cfg").string(), "--data", data, "--out", run}) == kExitOk);
  CHECK(fs::exists(dir.path / "run" / "checkpoint" / "checkpoint.bin"));
  CHECK(fs::exists(dir.path / "run" / "checkpoint" / "manifest.txt"));
  CHECK(fs::exists(dir.path / "run" / "iou.csv"));
  std::ifstream metrics(dir.path / "run" / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    CHECK(line.find("\"iter\"") != std::string::npos);
    CHECK(line.find("\"lr\"") != std::string::npos);
    CHECK(line.find("\"loss\"") != std::string::npos);
    ++lines;
  }
  CHECK(lines == 3);

  std::string out;
  REQUIRE(cli({"eval", "--config", (dir.path / "train.cfg").string(), "--checkpoint", run + "/checkpoint",
               "--data", data, "--multiscale", "--csv", (dir.path / "eval.csv").string()},
              &out) == kExitOk);
  CHECK(out.find("mIoU") != std::string::npos);
  CHECK(cli({"report", run, (dir.path / "eval.csv").string(), "--out", (dir.path / "rep").string()}, &out) == kExitOk);
  CHECK(out.find("mean") != std::string::npos);
  CHECK(fs::exists(dir.path / "rep" / "report.csv"));
}

TEST_CASE("ablation tables have one row per setting") {
  TempDir dir("hopa_cli_ablate");
  {
    std::ofstream f(dir.path / "spec.cfg");
    f << "[synthetic]\ncanvas = 16\ntrain_count = 2\nval_count = 1\n";
  }
  {
    std::ofstream f(dir.path / "train.cfg");
    f << "[backbone]\nblocks = 1, 1, 1, 1\n[hr]\nrank = 2\nout_per_degree = 2\n"
         "[paired_aspp]\nbranch_channels = 4\nfuse_channels = 4\n"
         "[train]\nbatch_size = 2\ncrop = 16, 16\nmax_iter = 2\nwarmup_iter = 1\n";
  }
  const std::string data = (dir.path / "data").string();
  REQUIRE(cli({"gen", "--spec", (dir.path / "spec.cfg").string(), "--seed", "1", "--out", data}) == kExitOk);
  std::string out;
  REQUIRE(cli({"ablate", "orders", "--config", (dir.path / "train.cfg").string(), "--data", data, "--seeds", "1,2"},
              &out) == kExitOk);
  std::istringstream rows(out);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(rows, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].find("mIoU") != std::string::npos);
  CHECK(lines[1].rfind("R=1", 0) == 0);
  CHECK(lines[2].rfind("R=2", 0) == 0);
  CHECK(lines[3].rfind("R=3", 0) == 0);
  REQUIRE(cli({"ablate", "pairing", "--config", (dir.path / "train.cfg").string(), "--data", data, "--seeds", "1"},
              &out) == kExitOk);
  CHECK(out.find("combination-1") != std::string::npos);
  CHECK(out.find("combination-2") != std::string::npos);
}
