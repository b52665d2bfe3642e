#include "hopa/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace hopa {

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: no images");
  const Shape s0 = images.front().shape();
  std::vector<double> values;
  values.reserve(s0.numel() * images.size());
  int n = 0;
  for (const Tensor& t : images) {
    const Shape s = t.shape();
    if (s.c != s0.c || s.h != s0.h || s.w != s0.w) {
      throw std::invalid_argument("stack_images: shape mismatch " + to_string(s0) + " vs " +
                                  to_string(s));
    }
    values.insert(values.end(), t.data().begin(), t.data().end());
    n += s.n;
  }
  return Tensor({n, s0.c, s0.h, s0.w}, std::move(values));
}

LabelMap stack_labels(const std::vector<LabelMap>& labels) {
  if (labels.empty()) throw std::invalid_argument("stack_labels: no labels");
  LabelMap out;
  out.h = labels.front().h;
  out.w = labels.front().w;
  for (const LabelMap& l : labels) {
    if (l.h != out.h || l.w != out.w) throw std::invalid_argument("stack_labels: size mismatch");
    out.values.insert(out.values.end(), l.values.begin(), l.values.end());
    out.n += l.n;
  }
  return out;
}

TrainResult train_model(SegmentationModel& model, const std::vector<SegSample>& data,
                        const TrainConfig& cfg,
                        const std::function<void(const IterationRecord&)>& on_iter) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_model: empty training set");

  Sgd opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  int epoch = -1;
  Rng shuffle_rng;

  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    std::vector<Tensor> images;
    std::vector<LabelMap> labels;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        ++epoch;
        std::seed_seq seq{cfg.seed, std::uint64_t{0x5eed}, static_cast<std::uint64_t>(epoch)};
        shuffle_rng.seed(seq);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(idx), static_cast<std::uint64_t>(epoch)};
      Rng rng(seq);
      auto [img, lab] = augment(data[idx].image, data[idx].label, cfg, rng);
      images.push_back(normalize_image(img));
      labels.push_back(std::move(lab));
    }
    const Tensor batch = stack_images(images);
    const LabelMap target = stack_labels(labels);

    const double lr = poly_lr(iter, cfg);
    opt.zero_grad();
    double loss_value = std::nan("");
    try {
      Tensor loss = cross_entropy_loss(model.forward(batch, true), target);
      loss_value = loss.item();
      backward(loss);
      opt.step(lr);
    } catch (const DegenerateBatchError&) {
      // A batch cropped entirely to padding carries no signal; skip it.
    }
    IterationRecord rec{iter, lr, loss_value};
    result.history.push_back(rec);
    if (on_iter) on_iter(rec);
  }
  std::ostringstream rng_state;
  rng_state << shuffle_rng;
  result.rng_state = rng_state.str();
  return result;
}

ConfusionMatrix evaluate(SegmentationModel& model, const std::vector<SegSample>& data,
                         const std::optional<InferConfig>& infer) {
  ConfusionMatrix cm(model.config().num_classes);
  for (const SegSample& s : data) {
    const Tensor scores = infer ? infer_multiscale(s.image, model, *infer)
                                : model.forward(normalize_image(s.image), false);
    cm.add(s.label, argmax_labels(scores));
  }
  return cm;
}

std::string metrics_jsonl_line(const IterationRecord& rec) {
  nlohmann::json j;
  j["iter"] = rec.iter;
  j["lr"] = rec.lr;
  if (std::isfinite(rec.loss)) {
    j["loss"] = rec.loss;
  } else {
    j["loss"] = nullptr;
  }
  return j.dump();
}

void write_iou_table(std::ostream& out, const MiouResult& result) {
  out << "class  IoU\n";
  for (std::size_t k = 0; k < result.per_class.size(); ++k) {
    out << std::setw(5) << k << "  ";
    if (std::isnan(result.per_class[k])) {
      out << "n/a\n";
    } else {
      out << std::fixed << std::setprecision(4) << result.per_class[k] << '\n';
    }
  }
  out << "mIoU   " << std::fixed << std::setprecision(4) << result.mean << '\n';
  out.unsetf(std::ios::floatfield);
}

void write_iou_csv(std::ostream& out, const MiouResult& result) {
  out << "class,iou\n";
  out << std::setprecision(10);
  for (std::size_t k = 0; k < result.per_class.size(); ++k) {
    out << k << ',';
    if (!std::isnan(result.per_class[k])) out << result.per_class[k];
    out << '\n';
  }
  out << "mean," << result.mean << '\n';
}

RunOutputs run_experiment(const ExperimentConfig& cfg, const std::vector<SegSample>& train,
                          const std::vector<SegSample>& val,
                          const std::optional<std::filesystem::path>& out_dir) {
  SegmentationModel model(cfg.model, cfg.train.seed);
  std::ofstream metrics;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    metrics.open(*out_dir / "metrics.jsonl");
    if (!metrics) throw std::runtime_error("cannot write " + (*out_dir / "metrics.jsonl").string());
  }
  RunOutputs outputs;
  outputs.train = train_model(model, train, cfg.train, [&](const IterationRecord& rec) {
    if (metrics.is_open()) metrics << metrics_jsonl_line(rec) << '\n';
  });
  outputs.val = miou(evaluate(model, val));
  if (out_dir) {
    save_checkpoint(*out_dir / "checkpoint", model.parameters(), cfg.train.max_iter,
                    outputs.train.rng_state);
    std::ofstream table(*out_dir / "iou.txt");
    write_iou_table(table, outputs.val);
    std::ofstream csv(*out_dir / "iou.csv");
    write_iou_csv(csv, outputs.val);
  }
  return outputs;
}

namespace {

AblationRow run_seeds(const std::string& label, ExperimentConfig cfg,
                      const std::vector<std::uint64_t>& seeds,
                      const std::vector<SegSample>& train, const std::vector<SegSample>& val) {
  AblationRow row{label, {}, 0.0};
  for (std::uint64_t seed : seeds) {
    cfg.train.seed = seed;
    row.per_seed.push_back(run_experiment(cfg, train, val, std::nullopt).val.mean);
  }
  row.mean = std::accumulate(row.per_seed.begin(), row.per_seed.end(), 0.0) /
             static_cast<double>(row.per_seed.size());
  return row;
}

}  // namespace

std::vector<AblationRow> ablate_orders(const ExperimentConfig& base, const std::vector<int>& orders,
                                       const std::vector<std::uint64_t>& seeds,
                                       const std::vector<SegSample>& train,
                                       const std::vector<SegSample>& val) {
  if (seeds.empty()) throw std::invalid_argument("ablate_orders: no seeds");
  std::vector<AblationRow> rows;
  for (int r : orders) {
    ExperimentConfig cfg = base;
    cfg.model.hr.order = r;
    rows.push_back(run_seeds("R=" + std::to_string(r), cfg, seeds, train, val));
  }
  return rows;
}

std::vector<AblationRow> ablate_pairing(const ExperimentConfig& base,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::vector<SegSample>& train,
                                        const std::vector<SegSample>& val) {
  if (seeds.empty()) throw std::invalid_argument("ablate_pairing: no seeds");
  std::vector<AblationRow> rows;
  for (Combination c : {Combination::kOne, Combination::kTwo}) {
    ExperimentConfig cfg = base;
    cfg.model.pa.combination = c;
    rows.push_back(run_seeds("combination-" + std::to_string(static_cast<int>(c)), cfg, seeds,
                             train, val));
  }
  return rows;
}

void write_ablation_table(std::ostream& out, const std::string& key,
                          const std::vector<AblationRow>& rows) {
  out << std::left << std::setw(16) << key;
  if (!rows.empty()) {
    for (std::size_t s = 0; s < rows.front().per_seed.size(); ++s) {
      out << std::setw(10) << ("seed" + std::to_string(s));
    }
  }
  out << "mIoU\n";
  out << std::fixed << std::setprecision(4);
  for (const AblationRow& row : rows) {
    out << std::setw(16) << row.label;
    for (double v : row.per_seed) out << std::setw(10) << v;
    out << row.mean << '\n';
  }
  out.unsetf(std::ios::floatfield);
  out << std::right;
}

void write_ablation_csv(std::ostream& out, const std::string& key,
                        const std::vector<AblationRow>& rows) {
  out << key << ",seed,miou\n" << std::setprecision(10);
  for (const AblationRow& row : rows) {
    for (std::size_t s = 0; s < row.per_seed.size(); ++s) {
      out << row.label << ',' << s << ',' << row.per_seed[s] << '\n';
    }
    out << row.label << ",mean," << row.mean << '\n';
  }
}

}  // namespace hopa
