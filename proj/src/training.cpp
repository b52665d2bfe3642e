#include "hopa/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "hopa/serialize.hpp"

namespace hopa {

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument(field + ": " + why);
  };
  if (!(base_lr > 0.0)) fail("train.base_lr", "must be positive");
  if (momentum < 0.0 || momentum >= 1.0) fail("train.momentum", "must lie in [0, 1)");
  if (weight_decay < 0.0) fail("train.weight_decay", "must be nonnegative");
  if (batch_size < 1) fail("train.batch_size", "must be >= 1");
  if (crop[0] < 8 || crop[1] < 8 || crop[0] % 8 != 0 || crop[1] % 8 != 0) {
    fail("train.crop", "must be positive multiples of 8");
  }
  if (max_iter < 1) fail("train.max_iter", "must be >= 1");
  if (warmup_iter < 0 || warmup_iter >= max_iter) fail("train.warmup_iter", "must lie in [0, max_iter)");
  if (!(poly_power > 0.0)) fail("train.poly_power", "must be positive");
  if (!(scale_range[0] > 0.0) || scale_range[0] > scale_range[1]) {
    fail("train.scale_range", "need 0 < lo <= hi");
  }
  if (flip_prob < 0.0 || flip_prob > 1.0) fail("train.flip_prob", "must lie in [0, 1]");
  if (brightness_jitter < 0.0) fail("train.brightness_jitter", "must be nonnegative");
}

void InferConfig::validate() const {
  if (scales.empty()) throw std::invalid_argument("infer.scales: must be nonempty");
  for (double s : scales) {
    if (!(s > 0.0)) throw std::invalid_argument("infer.scales: every scale must be positive");
  }
}

Tensor cross_entropy_loss(const Tensor& logits, const LabelMap& labels, int ignore_label) {
  const Shape& s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
    throw std::invalid_argument("cross_entropy_loss: labels (" + std::to_string(labels.n) +
                                "," + std::to_string(labels.h) + "," +
                                std::to_string(labels.w) + ") vs logits " + to_string(s));
  }
  const std::size_t plane = s.plane();
  const auto x = logits.data();
  // Softmax probabilities of valid pixels, kept for the backward pass.
  std::vector<double> prob(x.size(), 0.0);
  double total = 0.0;
  std::size_t valid = 0;
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const int label = labels.values[n * plane + i];
      if (label == ignore_label) continue;
      if (label < 0 || label >= s.c) {
        throw std::invalid_argument("cross_entropy_loss: label " + std::to_string(label) +
                                    " outside [0, " + std::to_string(s.c) + ")");
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < s.c; ++c) mx = std::max(mx, x[base + c * plane + i]);
      double z = 0.0;
      for (int c = 0; c < s.c; ++c) z += std::exp(x[base + c * plane + i] - mx);
      total += mx + std::log(z) - x[base + label * plane + i];
      for (int c = 0; c < s.c; ++c) {
        prob[base + c * plane + i] = std::exp(x[base + c * plane + i] - mx) / z;
      }
      prob[base + label * plane + i] -= 1.0;
      ++valid;
    }
  }
  if (valid == 0) {
    throw DegenerateBatchError("cross_entropy_loss: every pixel carries the ignore label");
  }
  const double inv = 1.0 / static_cast<double>(valid);
  auto li = logits.impl();
  return make_op_result({1, 1, 1, 1}, {total * inv}, {logits},
                        [li, dlogits = std::move(prob), inv](const detail::TensorImpl& o) {
                          auto& g = li->grad_buffer();
                          const double scale = o.grad[0] * inv;
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * dlogits[i];
                        });
}

double poly_lr(int iter, const TrainConfig& cfg) {
  if (iter < 0 || iter > cfg.max_iter) {
    throw std::invalid_argument("poly_lr: iteration " + std::to_string(iter) +
                                " outside [0, max_iter]");
  }
  if (iter < cfg.warmup_iter) {
    const double start = cfg.base_lr / 100.0;
    return start + (cfg.base_lr - start) * static_cast<double>(iter) / cfg.warmup_iter;
  }
  const double progress = static_cast<double>(iter - cfg.warmup_iter) /
                          static_cast<double>(cfg.max_iter - cfg.warmup_iter);
  return cfg.base_lr * std::pow(1.0 - progress, cfg.poly_power);
}

void sgd_step(std::span<double> param, std::span<const double> grad,
              std::span<double> velocity, double lr, double momentum, double weight_decay) {
  if (param.size() != velocity.size() || (!grad.empty() && grad.size() != param.size())) {
    throw std::invalid_argument("sgd_step: parameter/gradient/velocity sizes differ (" +
                                std::to_string(param.size()) + "/" +
                                std::to_string(grad.size()) + "/" +
                                std::to_string(velocity.size()) + ")");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    velocity[i] = momentum * velocity[i] + g + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

Sgd::Sgd(ParamList params, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (auto& p : params) {
    if (p.kind == ParamKind::kBuffer) continue;
    velocity_.emplace_back(p.tensor.numel(), 0.0);
    params_.push_back(std::move(p));
  }
}

void Sgd::step(double lr) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& t = params_[k].tensor;
    const double wd = params_[k].kind == ParamKind::kDecayed ? weight_decay_ : 0.0;
    sgd_step(t.data(), t.grad(), velocity_[k], lr, momentum_, wd);
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

LabelMap flip_labels(const LabelMap& label) {
  LabelMap out(label.n, label.h, label.w);
  for (int b = 0; b < label.n; ++b) {
    for (int y = 0; y < label.h; ++y) {
      for (int x = 0; x < label.w; ++x) out.at(b, y, x) = label.at(b, y, label.w - 1 - x);
    }
  }
  return out;
}

LabelMap resize_labels_nearest(const LabelMap& label, int out_h, int out_w) {
  LabelMap out(label.n, out_h, out_w);
  for (int b = 0; b < label.n; ++b) {
    for (int y = 0; y < out_h; ++y) {
      const int sy = std::min(label.h - 1, static_cast<int>((y + 0.5) * label.h / out_h));
      for (int x = 0; x < out_w; ++x) {
        const int sx = std::min(label.w - 1, static_cast<int>((x + 0.5) * label.w / out_w));
        out.at(b, y, x) = label.at(b, sy, sx);
      }
    }
  }
  return out;
}

std::pair<Tensor, LabelMap> augment(const Tensor& img, const LabelMap& label,
                                    const TrainConfig& cfg, Rng& rng) {
  const Shape& s = img.shape();
  if (s.n != 1 || label.n != 1 || label.h != s.h || label.w != s.w) {
    throw std::invalid_argument("augment: expects one image and its matching label map");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double factor =
      cfg.scale_range[0] + (cfg.scale_range[1] - cfg.scale_range[0]) * unit(rng);
  const bool flip = unit(rng) < cfg.flip_prob;
  const double shift = cfg.brightness_jitter * (2.0 * unit(rng) - 1.0);

  const int sh = std::max(1, static_cast<int>(std::lround(s.h * factor)));
  const int sw = std::max(1, static_cast<int>(std::lround(s.w * factor)));
  Tensor image = bilinear_resize(img, sh, sw).detach();
  LabelMap lab = resize_labels_nearest(label, sh, sw);
  if (flip) {
    image = flip_horizontal(image).detach();
    lab = flip_labels(lab);
  }
  if (shift != 0.0) {
    for (double& v : image.data()) v = std::clamp(v + shift, 0.0, 1.0);
  }

  const int ch = cfg.crop[0];
  const int cw = cfg.crop[1];
  const int oy = sh > ch ? static_cast<int>(unit(rng) * (sh - ch + 1)) : 0;
  const int ox = sw > cw ? static_cast<int>(unit(rng) * (sw - cw + 1)) : 0;
  Tensor out_img = Tensor::zeros({1, s.c, ch, cw});
  LabelMap out_lab(1, ch, cw, kIgnoreLabel);
  for (int y = 0; y < ch && y + oy < sh; ++y) {
    for (int x = 0; x < cw && x + ox < sw; ++x) {
      for (int c = 0; c < s.c; ++c) out_img.at(0, c, y, x) = image.at(0, c, y + oy, x + ox);
      out_lab.at(0, y, x) = lab.at(0, y + oy, x + ox);
    }
  }
  return {out_img, out_lab};
}

Tensor normalize_image(const Tensor& img) {
  Tensor out = img.detach();
  for (double& v : out.data()) v = (v - 0.5) / 0.25;
  return out;
}

Tensor infer_multiscale(const Tensor& img, SegmentationModel& model, const InferConfig& cfg) {
  cfg.validate();
  const Shape& s = img.shape();
  Tensor acc = Tensor::zeros({s.n, model.config().num_classes, s.h, s.w});
  int passes = 0;
  auto accumulate = [&](const Tensor& probs) {
    auto a = acc.data();
    const auto p = probs.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += p[i];
    ++passes;
  };
  for (double factor : cfg.scales) {
    const int sh = std::max(8, static_cast<int>(std::lround(s.h * factor / 8.0)) * 8);
    const int sw = std::max(8, static_cast<int>(std::lround(s.w * factor / 8.0)) * 8);
    const Tensor scaled = normalize_image(bilinear_resize(img, sh, sw));
    const Tensor probs = softmax_channels(model.forward(scaled, false));
    accumulate(bilinear_resize(probs, s.h, s.w));
    if (cfg.flip) {
      const Tensor mirrored = softmax_channels(model.forward(flip_horizontal(scaled), false));
      accumulate(bilinear_resize(flip_horizontal(mirrored), s.h, s.w));
    }
  }
  for (double& v : acc.data()) v /= passes;
  return acc.detach();
}

LabelMap argmax_labels(const Tensor& scores) {
  const Shape& s = scores.shape();
  LabelMap out(s.n, s.h, s.w);
  const std::size_t plane = s.plane();
  const auto d = scores.data();
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      int best = 0;
      for (int c = 1; c < s.c; ++c) {
        if (d[base + c * plane + i] > d[base + best * plane + i]) best = c;
      }
      out.values[n * plane + i] = best;
    }
  }
  return out;
}

ConfusionMatrix::ConfusionMatrix(int num_classes, int ignore_label)
    : k_(num_classes), ignore_(ignore_label),
      counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

void ConfusionMatrix::add(const LabelMap& truth, const LabelMap& pred) {
  if (truth.values.size() != pred.values.size() || truth.h != pred.h || truth.w != pred.w) {
    throw std::invalid_argument("ConfusionMatrix::add: prediction and ground truth differ in shape");
  }
  for (std::size_t i = 0; i < truth.values.size(); ++i) {
    const int t = truth.values[i];
    if (t == ignore_) continue;
    const int p = pred.values[i];
    if (t < 0 || t >= k_ || p < 0 || p >= k_) {
      throw std::invalid_argument("ConfusionMatrix::add: label outside [0, " +
                                  std::to_string(k_) + ")");
    }
    ++counts_[static_cast<std::size_t>(t) * k_ + p];
  }
}

std::uint64_t ConfusionMatrix::count(int truth, int pred) const {
  return counts_.at(static_cast<std::size_t>(truth) * k_ + pred);
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

MiouResult miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DegenerateBatchError("miou: confusion matrix is empty");
  const int k = cm.num_classes();
  MiouResult res;
  res.per_class.assign(k, std::numeric_limits<double>::quiet_NaN());
  // Extended-precision accumulation so the mean rounds once, e.g. the mean of
  // 1/2 and 2/3 comes out as the double nearest 7/12.
  long double acc = 0.0L;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.count(c, j);
      col += cm.count(j, c);
    }
    const std::uint64_t tp = cm.count(c, c);
    const std::uint64_t denom = row + col - tp;
    if (denom == 0) continue;
    res.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
    acc += static_cast<long double>(tp) / static_cast<long double>(denom);
    ++present;
  }
  res.mean = static_cast<double>(acc / present);
  return res;
}

void save_checkpoint(const std::filesystem::path& dir, const ParamList& params, int iteration,
                     const std::string& rng_state) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "checkpoint.bin", std::ios::binary);
  std::ofstream manifest(dir / "manifest.txt");
  if (!bin || !manifest) throw std::runtime_error("cannot write checkpoint in " + dir.string());
  manifest << "iteration " << iteration << "\n";
  manifest << "rng " << rng_state << "\n";
  for (const auto& p : params) {
    const Shape& s = p.tensor.shape();
    manifest << "tensor " << p.name << " " << s.n << " " << s.c << " " << s.h << " " << s.w
             << "\n";
    write_tensor(bin, p.tensor);
  }
}

int load_checkpoint(const std::filesystem::path& dir, ParamList& params) {
  std::ifstream manifest(dir / "manifest.txt");
  std::ifstream bin(dir / "checkpoint.bin", std::ios::binary);
  if (!manifest || !bin) throw std::runtime_error("no checkpoint in " + dir.string());
  std::map<std::string, Tensor*> by_name;
  for (auto& p : params) by_name[p.name] = &p.tensor;
  int iteration = 0;
  std::string line;
  while (std::getline(manifest, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "iteration") {
      ls >> iteration;
    } else if (kind == "tensor") {
      std::string name;
      ls >> name;
      Tensor stored = read_tensor(bin);
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError("checkpoint: unknown tensor " + name);
      if (!(it->second->shape() == stored.shape())) {
        throw FormatError("checkpoint: tensor " + name + " has shape " +
                          to_string(stored.shape()) + ", model expects " +
                          to_string(it->second->shape()));
      }
      std::copy(stored.data().begin(), stored.data().end(), it->second->data().begin());
    }
  }
  return iteration;
}

}  // namespace hopa
