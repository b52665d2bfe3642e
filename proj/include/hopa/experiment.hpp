#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hopa/config.hpp"
#include "hopa/data.hpp"
#include "hopa/training.hpp"

namespace hopa {

struct IterationRecord {
  int iter = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<IterationRecord> history;
  std::string rng_state;
};

/// Stacks samples along the batch axis.
Tensor stack_images(const std::vector<Tensor>& images);
LabelMap stack_labels(const std::vector<LabelMap>& labels);

/// Minibatch SGD over `data`. Each epoch visits a fresh permutation; every
/// sample's augmentation stream is seeded from (seed, sample index, epoch),
/// so the trajectory depends only on cfg.seed. `on_iter` sees every record.
TrainResult train_model(SegmentationModel& model, const std::vector<SegSample>& data,
                        const TrainConfig& cfg,
                        const std::function<void(const IterationRecord&)>& on_iter = {});

/// Confusion matrix of eval-mode predictions. Without `infer`, a single
/// forward pass at the native resolution is used.
ConfusionMatrix evaluate(SegmentationModel& model, const std::vector<SegSample>& data,
                         const std::optional<InferConfig>& infer = std::nullopt);

/// {"iter":..,"lr":..,"loss":..} per line.
std::string metrics_jsonl_line(const IterationRecord& rec);

void write_iou_table(std::ostream& out, const MiouResult& result);
void write_iou_csv(std::ostream& out, const MiouResult& result);

/// Everything `train` writes: checkpoint/, metrics.jsonl, iou.txt, iou.csv.
struct RunOutputs {
  TrainResult train;
  MiouResult val;
};

RunOutputs run_experiment(const ExperimentConfig& cfg, const std::vector<SegSample>& train,
                          const std::vector<SegSample>& val,
                          const std::optional<std::filesystem::path>& out_dir);

struct AblationRow {
  std::string label;            // e.g. "R=2" or "combination-1"
  std::vector<double> per_seed;  // val mIoU per seed
  double mean = 0.0;
};

/// Trains one model per (order, seed) with otherwise identical settings.
std::vector<AblationRow> ablate_orders(const ExperimentConfig& base, const std::vector<int>& orders,
                                       const std::vector<std::uint64_t>& seeds,
                                       const std::vector<SegSample>& train,
                                       const std::vector<SegSample>& val);

/// Same protocol over the two Paired-ASPP rate wirings.
std::vector<AblationRow> ablate_pairing(const ExperimentConfig& base,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::vector<SegSample>& train,
                                        const std::vector<SegSample>& val);

void write_ablation_table(std::ostream& out, const std::string& key,
                          const std::vector<AblationRow>& rows);
void write_ablation_csv(std::ostream& out, const std::string& key,
                        const std::vector<AblationRow>& rows);

}  // namespace hopa
