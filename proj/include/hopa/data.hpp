#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "hopa/label_map.hpp"
#include "hopa/serialize.hpp"
#include "hopa/tensor.hpp"

namespace hopa {

/// Label outside the declared class range, or a malformed dataset spec.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// image: (1, 3, h, w) in [0, 1], 8-bit representable; label: (1, h, w).
struct SegSample {
  Tensor image;
  LabelMap label;
};

// Binary P6 (RGB) and P5 (gray) with maxval 255. Reads throw FormatError
// carrying the byte offset of the problem.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMap& label);
LabelMap read_pgm(const std::filesystem::path& path);

/// Values must be in [0, K) or kIgnoreLabel.
void validate_labels(const LabelMap& label, int num_classes, const std::string& where);

struct IndexEntry {
  std::filesystem::path image;
  std::filesystem::path label;
};

/// `index.txt` lines are "image_path label_path", relative to the index's
/// directory. Missing files are reported by path.
std::vector<IndexEntry> read_index(const std::filesystem::path& split_dir);
void save_sample(const std::filesystem::path& split_dir, const std::string& stem,
                 const SegSample& sample);
SegSample read_sample(const IndexEntry& entry, int num_classes);
/// All samples of a split directory, in index order.
std::vector<SegSample> load_dataset(const std::filesystem::path& split_dir, int num_classes);
void save_dataset(const std::filesystem::path& split_dir, const std::vector<SegSample>& samples);

enum class ShapeKind { kRectangle, kDisc, kBar };

/// Classes a and b share every statistic below order `order` and differ at
/// that order: 1 = mean colour, 2 = cross-channel covariance, 3 = joint
/// third moment.
struct TexturePair {
  int a = 0;
  int b = 1;
  int order = 3;
};

struct SyntheticSpec {
  int num_classes = 4;
  int canvas = 64;
  std::vector<TexturePair> pairs{{1, 2, 3}};
  std::vector<ShapeKind> shapes{ShapeKind::kRectangle, ShapeKind::kDisc, ShapeKind::kBar};
  double noise = 0.03;
  double amplitude = 0.32;  // per-channel texture swing for order 2/3 pairs
  int texture_cell = 4;     // texture signs are shared by cell x cell pixel blocks
  int min_shapes = 2;
  int max_shapes = 5;
  int train_count = 512;
  int val_count = 128;

  /// Throws ValidationError if some class cannot be generated distinctly.
  void validate() const;
};

struct SyntheticDataset {
  std::vector<SegSample> train;
  std::vector<SegSample> val;
};

/// Class 0 fills the canvas; random shapes of the other classes are drawn on
/// top. Deterministic in (spec, seed).
SyntheticDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Mean colour of a class before texture and noise.
std::vector<double> class_base_color(const SyntheticSpec& spec, int cls);

}  // namespace hopa
