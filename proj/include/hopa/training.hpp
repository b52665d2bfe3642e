#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hopa/label_map.hpp"
#include "hopa/model.hpp"

namespace hopa {

/// Raised when a batch has no pixel that contributes to the loss or metric.
class DegenerateBatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 8;
  std::array<int, 2> crop{64, 64};
  int max_iter = 1000;
  int warmup_iter = 50;
  double poly_power = 0.9;
  std::array<double, 2> scale_range{0.5, 2.0};
  double flip_prob = 0.5;
  double brightness_jitter = 0.1;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct InferConfig {
  std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
  bool flip = true;

  void validate() const;
};

/// Mean over non-ignored pixels of -log softmax(logits)[label].
Tensor cross_entropy_loss(const Tensor& logits, const LabelMap& labels,
                          int ignore_label = kIgnoreLabel);

/// Linear warmup from base_lr/100 to base_lr, then polynomial decay to 0.
double poly_lr(int iter, const TrainConfig& cfg);

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
void sgd_step(std::span<double> param, std::span<const double> grad,
              std::span<double> velocity, double lr, double momentum, double weight_decay);

/// Momentum SGD over the trainable entries of a ParamList. Weight decay only
/// touches kDecayed entries.
class Sgd {
 public:
  Sgd(ParamList params, double momentum, double weight_decay);

  void step(double lr);
  void zero_grad();

 private:
  ParamList params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

/// Random scale, horizontal flip and brightness; the image is bilinear, the
/// label nearest-neighbour. Output is cropped/padded to cfg.crop (image pads
/// with 0, label with kIgnoreLabel). Inputs have batch size 1.
std::pair<Tensor, LabelMap> augment(const Tensor& img, const LabelMap& label,
                                    const TrainConfig& cfg, Rng& rng);

LabelMap flip_labels(const LabelMap& label);
LabelMap resize_labels_nearest(const LabelMap& label, int out_h, int out_w);

/// Averaged softmax over scales (and mirrored copies), at input resolution.
/// `img` holds raw [0,1] intensities; each rescaled copy is normalized here.
Tensor infer_multiscale(const Tensor& img, SegmentationModel& model, const InferConfig& cfg);

/// Per-pixel argmax over channels.
LabelMap argmax_labels(const Tensor& scores);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes, int ignore_label = kIgnoreLabel);

  /// Rows index ground truth, columns prediction. Ground-truth ignore pixels
  /// are skipped; other labels must lie in [0, K).
  void add(const LabelMap& truth, const LabelMap& pred);

  int num_classes() const { return k_; }
  int ignore_label() const { return ignore_; }
  std::uint64_t count(int truth, int pred) const;
  std::uint64_t total() const;

 private:
  int k_;
  int ignore_;
  std::vector<std::uint64_t> counts_;
};

struct MiouResult {
  std::vector<double> per_class;  // NaN where the class never appears
  double mean = 0.0;
};

/// IoU_k = tp / (row_k + col_k - tp); classes with a zero denominator are left
/// out of the mean. Throws DegenerateBatchError on an empty matrix.
MiouResult miou(const ConfusionMatrix& cm);

/// Fixed input normalization applied to [0,1] images before the network.
Tensor normalize_image(const Tensor& img);

void save_checkpoint(const std::filesystem::path& dir, const ParamList& params, int iteration,
                     const std::string& rng_state);
/// Loads values into `params` (matched by name and shape); returns the
/// stored iteration.
int load_checkpoint(const std::filesystem::path& dir, ParamList& params);

}  // namespace hopa
