#include "hopa/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "hopa/config.hpp"
#include "hopa/data.hpp"
#include "hopa/experiment.hpp"
#include "hopa/serialize.hpp"

namespace fs = std::filesystem;

namespace hopa {
namespace {

struct Options {
  std::string spec_path;
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint_dir;
  std::string split = "val";
  std::string backbone = "toy";
  std::string csv_path;
  std::vector<std::string> inputs;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<int> orders{1, 2, 3};
  std::uint64_t seed = 0;
  bool multiscale = false;
};

ExperimentConfig load_experiment(const Options& o, const CLI::App& cmd) {
  ExperimentConfig cfg = parse_experiment_config(read_text_file(o.config_path));
  const CLI::Option* seed = cmd.get_option_no_throw("--seed");
  if (seed != nullptr && seed->count() > 0) cfg.train.seed = o.seed;
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

int cmd_gen(const Options& o, std::ostream& out) {
  const SyntheticSpec spec = parse_synthetic_spec(read_text_file(o.spec_path));
  const SyntheticDataset ds = gen_synthetic(spec, o.seed);
  save_dataset(fs::path(o.out_dir) / "train", ds.train);
  save_dataset(fs::path(o.out_dir) / "val", ds.val);
  out << "wrote " << ds.train.size() << " train and " << ds.val.size() << " val samples to "
      << o.out_dir << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, const CLI::App& cmd, std::ostream& out) {
  const ExperimentConfig cfg = load_experiment(o, cmd);
  const int k = cfg.model.num_classes;
  const auto train = load_dataset(fs::path(o.data_dir) / "train", k);
  const auto val = load_dataset(fs::path(o.data_dir) / "val", k);
  const RunOutputs res = run_experiment(cfg, train, val, fs::path(o.out_dir));
  write_iou_table(out, res.val);
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = parse_experiment_config(read_text_file(o.config_path));
  SegmentationModel model(cfg.model, cfg.train.seed);
  ParamList params = model.parameters();
  load_checkpoint(o.checkpoint_dir, params);
  const auto data = load_dataset(fs::path(o.data_dir) / o.split, cfg.model.num_classes);
  const ConfusionMatrix cm =
      evaluate(model, data, o.multiscale ? std::optional<InferConfig>(cfg.infer) : std::nullopt);
  const MiouResult res = miou(cm);
  write_iou_table(out, res);
  if (!o.csv_path.empty()) {
    std::ostringstream csv;
    write_iou_csv(csv, res);
    write_file(o.csv_path, csv.str());
  }
  return kExitOk;
}

int cmd_ablate(const Options& o, const CLI::App& cmd, bool orders, std::ostream& out) {
  const ExperimentConfig cfg = load_experiment(o, cmd);
  const int k = cfg.model.num_classes;
  const auto train = load_dataset(fs::path(o.data_dir) / "train", k);
  const auto val = load_dataset(fs::path(o.data_dir) / "val", k);
  const std::string key = orders ? "order" : "pairing";
  const auto rows = orders ? ablate_orders(cfg, o.orders, o.seeds, train, val)
                           : ablate_pairing(cfg, o.seeds, train, val);
  write_ablation_table(out, key, rows);
  if (!o.csv_path.empty()) {
    std::ostringstream csv;
    write_ablation_csv(csv, key, rows);
    write_file(o.csv_path, csv.str());
  }
  return kExitOk;
}

const char* source_name(BranchSource s) {
  switch (s) {
    case BranchSource::kPair1: return "V14";
    case BranchSource::kPair2: return "V24";
    case BranchSource::kPair3: return "V34";
    case BranchSource::kStage4: return "Y4";
    case BranchSource::kStage4Pool: return "GAP(Y4)";
  }
  return "?";
}

int cmd_analyze_scales(const Options& o, std::ostream& out) {
  BackboneConfig bb;
  try {
    bb = BackboneConfig::preset(o.backbone);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("backbone", e.what());
  }
  const StageMetadata meta = stage_metadata(bb);
  std::ostringstream csv;
  csv << "combination,source,rate,min_rf,max_rf\n";
  out << "stage  stride  receptive_field  channels\n";
  for (int i = 0; i < 4; ++i) {
    out << std::setw(5) << i + 1 << std::setw(8) << meta[i].stride << std::setw(17)
        << meta[i].receptive_field << std::setw(10) << meta[i].channels << "\n";
  }
  for (Combination c : {Combination::kOne, Combination::kTwo}) {
    PairedAsppConfig pa;
    pa.combination = c;
    const ScaleCoverage cov = scale_coverage(pa, meta);
    const int id = static_cast<int>(c);
    out << "\ncombination-" << id << "\n";
    out << "source  rate  min_rf  max_rf\n";
    for (const ScaleInterval& b : cov.branches) {
      out << std::left << std::setw(6) << source_name(b.source) << std::right << std::setw(6)
          << b.rate << std::setw(8) << b.min_rf << std::setw(8) << b.max_rf << "\n";
      csv << id << ',' << source_name(b.source) << ',' << b.rate << ',' << b.min_rf << ','
          << b.max_rf << "\n";
    }
    out << "union [" << cov.union_min << ", " << cov.union_max << "] span " << cov.union_span()
        << ", overlapping pairs " << cov.overlap_count << "\n";
  }
  if (!o.csv_path.empty()) write_file(o.csv_path, csv.str());
  return kExitOk;
}

/// Reads a two-column "key,value" CSV written by eval/train (header skipped).
std::vector<std::pair<std::string, std::string>> read_pairs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(path.string() + ": malformed row '" + line + "'");
    rows.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return rows;
}

int cmd_report(const Options& o, std::ostream& out) {
  std::vector<std::string> columns;
  std::vector<std::map<std::string, std::string>> table;
  for (const std::string& input : o.inputs) {
    fs::path path = input;
    if (fs::is_directory(path)) path /= "iou.csv";
    std::map<std::string, std::string> row;
    for (auto& [key, value] : read_pairs(path)) {
      if (std::find(columns.begin(), columns.end(), key) == columns.end()) columns.push_back(key);
      row[key] = value;
    }
    table.push_back(std::move(row));
  }
  std::ostringstream csv;
  csv << "run";
  out << std::left << std::setw(32) << "run";
  for (const auto& c : columns) {
    csv << ',' << c;
    out << std::setw(12) << c;
  }
  csv << "\n";
  out << "\n";
  for (std::size_t r = 0; r < table.size(); ++r) {
    csv << o.inputs[r];
    out << std::setw(32) << o.inputs[r];
    for (const auto& c : columns) {
      auto it = table[r].find(c);
      const std::string v = it == table[r].end() ? "" : it->second;
      csv << ',' << v;
      out << std::setw(12) << (v.empty() ? "n/a" : v.substr(0, 10));
    }
    csv << "\n";
    out << "\n";
  }
  out << std::right;
  if (!o.out_dir.empty()) {
    write_file(fs::path(o.out_dir) / "report.csv", csv.str());
    std::ostringstream txt;
    txt << "merged " << table.size() << " runs\n";
    write_file(fs::path(o.out_dir) / "report.txt", txt.str());
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"High-order Paired-ASPP segmentation toolkit", "hopa_cli"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Synthesize a dataset");
  gen->add_option("--spec", o.spec_path, "Synthetic spec file")->required()->check(CLI::ExistingFile);
  gen->add_option("--seed", o.seed, "Root seed")->required();
  gen->add_option("--out", o.out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model, write checkpoint and metrics");
  train->add_option("--config", o.config_path)->required()->check(CLI::ExistingFile);
  train->add_option("--data", o.data_dir)->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", o.out_dir)->required();
  train->add_option("--seed", o.seed, "Overrides train.seed");

  auto* eval = app.add_subcommand("eval", "Per-class IoU of a checkpoint on a split");
  eval->add_option("--config", o.config_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", o.checkpoint_dir)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--data", o.data_dir)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", o.split);
  eval->add_flag("--multiscale", o.multiscale, "Use the infer.* scales and flip");
  eval->add_option("--csv", o.csv_path);

  auto* ablate = app.add_subcommand("ablate", "Ablation studies");
  ablate->require_subcommand(1);
  auto add_ablation = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path)->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", o.data_dir)->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--seeds", o.seeds, "Seeds averaged per row")->delimiter(',');
    cmd->add_option("--csv", o.csv_path);
  };
  auto* ab_orders = ablate->add_subcommand("orders", "Compare HR orders");
  add_ablation(ab_orders);
  ab_orders->add_option("--orders", o.orders)->delimiter(',');
  auto* ab_pairing = ablate->add_subcommand("pairing", "Compare combination-1 and combination-2");
  add_ablation(ab_pairing);

  auto* analyze = app.add_subcommand("analyze", "Static analyses");
  analyze->require_subcommand(1);
  auto* scales = analyze->add_subcommand("scales", "Receptive-field coverage of the ASPP branches");
  scales->add_option("--backbone", o.backbone, "toy | deep");
  scales->add_option("--csv", o.csv_path);

  auto* report = app.add_subcommand("report", "Merge IoU CSV files into one table");
  report->add_option("inputs", o.inputs, "Run directories or iou.csv files")->required();
  report->add_option("--out", o.out_dir, "Directory for report.csv and report.txt");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(o, out);
    if (*train) return cmd_train(o, *train, out);
    if (*eval) return cmd_eval(o, out);
    if (*ab_orders) return cmd_ablate(o, *ab_orders, true, out);
    if (*ab_pairing) return cmd_ablate(o, *ab_pairing, false, out);
    if (*scales) return cmd_analyze_scales(o, out);
    if (*report) return cmd_report(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitUsage;
}

}  // namespace hopa
