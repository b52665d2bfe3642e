#include "hopa/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "hopa/params.hpp"

namespace hopa {
namespace {

namespace fs = std::filesystem;

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Netpbm header: magic, width, height, maxval, single whitespace byte.
struct PnmHeader {
  int width = 0;
  int height = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_header(const std::vector<unsigned char>& bytes, const char* magic,
                       const fs::path& path) {
  auto fail = [&](std::size_t at, const std::string& what) -> FormatError {
    return FormatError(path.string() + ": " + what + " at byte offset " + std::to_string(at));
  };
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw fail(0, std::string("expected magic ") + magic);
  }
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* field) {
    skip_space();
    const std::size_t start = pos;
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos] - '0');
      if (value > 1 << 20) throw fail(start, std::string("oversized ") + field);
      ++pos;
    }
    if (pos == start) throw fail(start, std::string("missing ") + field);
    return static_cast<int>(value);
  };
  PnmHeader h;
  h.width = read_int("width");
  h.height = read_int("height");
  const std::size_t maxval_at = pos;
  const int maxval = read_int("maxval");
  if (maxval != 255) throw fail(maxval_at, "only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail(pos, "truncated header");
  h.data_offset = pos + 1;
  if (h.width < 1 || h.height < 1) throw fail(2, "empty image");
  return h;
}

void write_pnm(const fs::path& path, const char* magic, int w, int h,
               const std::vector<unsigned char>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << magic << "\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

enum class Texture { kFlat, kIndependent, kCorrelated, kParityPos, kParityNeg };

struct Appearance {
  std::array<double, 3> base{};
  Texture texture = Texture::kFlat;
};

constexpr std::array<std::array<double, 3>, 8> kFlatPalette{{
    {0.08, 0.08, 0.08},
    {0.92, 0.92, 0.92},
    {0.90, 0.15, 0.15},
    {0.15, 0.90, 0.15},
    {0.15, 0.15, 0.90},
    {0.90, 0.90, 0.15},
    {0.15, 0.90, 0.90},
    {0.90, 0.15, 0.90},
}};

constexpr std::array<std::array<double, 3>, 4> kTexturedPalette{{
    {0.50, 0.50, 0.50},
    {0.45, 0.55, 0.50},
    {0.55, 0.45, 0.50},
    {0.50, 0.45, 0.55},
}};

// First-order pairs: class b sits 0.3 above class a in every channel.
constexpr std::array<std::array<double, 3>, 3> kFirstOrderPalette{{
    {0.30, 0.30, 0.30},
    {0.20, 0.45, 0.30},
    {0.30, 0.20, 0.45},
}};
constexpr double kFirstOrderShift = 0.3;

std::vector<Appearance> build_appearances(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<Appearance> app(spec.num_classes);
  std::vector<bool> assigned(spec.num_classes, false);
  std::size_t textured = 0, first_order = 0;
  for (const TexturePair& p : spec.pairs) {
    assigned[p.a] = assigned[p.b] = true;
    if (p.order == 1) {
      const auto base = kFirstOrderPalette[first_order++];
      app[p.a].base = base;
      for (int c = 0; c < 3; ++c) app[p.b].base[c] = base[c] + kFirstOrderShift;
    } else {
      const auto base = kTexturedPalette[textured++];
      app[p.a].base = app[p.b].base = base;
      app[p.a].texture = p.order == 2 ? Texture::kIndependent : Texture::kParityPos;
      app[p.b].texture = p.order == 2 ? Texture::kCorrelated : Texture::kParityNeg;
    }
  }
  std::size_t flat = 0;
  for (int k = 0; k < spec.num_classes; ++k) {
    if (!assigned[k]) app[k].base = kFlatPalette[flat++];
  }
  return app;
}

// Offsets of one pixel given three independent fair signs drawn for its cell.
std::array<double, 3> texture_offset(Texture t, double amp, const std::array<double, 3>& sign) {
  switch (t) {
    case Texture::kFlat: return {0.0, 0.0, 0.0};
    case Texture::kIndependent: return {amp * sign[0], amp * sign[1], amp * sign[2]};
    case Texture::kCorrelated: return {amp * sign[0], amp * sign[0], amp * sign[2]};
    case Texture::kParityPos: return {amp * sign[0], amp * sign[1], amp * sign[0] * sign[1]};
    case Texture::kParityNeg: return {amp * sign[0], amp * sign[1], -amp * sign[0] * sign[1]};
  }
  return {0.0, 0.0, 0.0};
}

void paint(LabelMap& label, const SyntheticSpec& spec, Rng& rng) {
  const int size = spec.canvas;
  std::uniform_int_distribution<int> count(spec.min_shapes, spec.max_shapes);
  std::uniform_int_distribution<int> cls(1, spec.num_classes - 1);
  std::uniform_int_distribution<std::size_t> kind(0, spec.shapes.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int shapes = count(rng);
  for (int i = 0; i < shapes; ++i) {
    const int k = cls(rng);
    const ShapeKind shape = spec.shapes[kind(rng)];
    const double cy = unit(rng) * size;
    const double cx = unit(rng) * size;
    switch (shape) {
      case ShapeKind::kRectangle: {
        const double hh = size * (0.08 + 0.17 * unit(rng));
        const double hw = size * (0.08 + 0.17 * unit(rng));
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x)
            if (std::abs(y + 0.5 - cy) <= hh && std::abs(x + 0.5 - cx) <= hw) label.at(0, y, x) = k;
        break;
      }
      case ShapeKind::kDisc: {
        const double r = size * (0.1 + 0.15 * unit(rng));
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
            if (dy * dy + dx * dx <= r * r) label.at(0, y, x) = k;
          }
        break;
      }
      case ShapeKind::kBar: {
        const bool horizontal = unit(rng) < 0.5;
        const double half_thick = 1.5 + size * 0.04 * unit(rng);
        const double half_len = size * (0.25 + 0.25 * unit(rng));
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const double along = horizontal ? x + 0.5 - cx : y + 0.5 - cy;
            const double across = horizontal ? y + 0.5 - cy : x + 0.5 - cx;
            if (std::abs(along) <= half_len && std::abs(across) <= half_thick) label.at(0, y, x) = k;
          }
        break;
      }
    }
  }
}

SegSample make_sample(const SyntheticSpec& spec, const std::vector<Appearance>& app, Rng& rng) {
  const int size = spec.canvas;
  SegSample s;
  s.label = LabelMap(1, size, size, 0);
  paint(s.label, spec, rng);
  s.image = Tensor::zeros({1, 3, size, size});
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  const int cells = (size + spec.texture_cell - 1) / spec.texture_cell;
  std::vector<std::array<double, 3>> signs(static_cast<std::size_t>(cells) * cells);
  for (auto& cell : signs)
    for (double& v : cell) v = coin(rng) ? 1.0 : -1.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Appearance& a = app[s.label.at(0, y, x)];
      const auto& cell = signs[static_cast<std::size_t>(y / spec.texture_cell) * cells + x / spec.texture_cell];
      const auto tex = texture_offset(a.texture, spec.amplitude, cell);
      for (int c = 0; c < 3; ++c) {
        const double v = a.base[c] + tex[c] + spec.noise * noise(rng);
        s.image.at(0, c, y, x) = to_byte(v) / 255.0;
      }
    }
  }
  return s;
}

}  // namespace

void write_ppm(const fs::path& path, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw std::invalid_argument("write_ppm: expected (1,3,h,w), got " + to_string(s));
  std::vector<unsigned char> px(static_cast<std::size_t>(3) * s.h * s.w);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) px[(static_cast<std::size_t>(y) * s.w + x) * 3 + c] = to_byte(image.at(0, c, y, x));
  write_pnm(path, "P6", s.w, s.h, px);
}

Tensor read_ppm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  const PnmHeader h = parse_header(bytes, "P6", path);
  const std::size_t need = static_cast<std::size_t>(3) * h.width * h.height;
  if (bytes.size() < h.data_offset + need) {
    throw FormatError(path.string() + ": truncated pixel data at byte offset " +
                      std::to_string(bytes.size()));
  }
  Tensor img = Tensor::zeros({1, 3, h.height, h.width});
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(0, c, y, x) = bytes[h.data_offset + (static_cast<std::size_t>(y) * h.width + x) * 3 + c] / 255.0;
  return img;
}

void write_pgm(const fs::path& path, const LabelMap& label) {
  if (label.n != 1) throw std::invalid_argument("write_pgm: expected a single label map");
  std::vector<unsigned char> px(label.values.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const int v = label.values[i];
    if (v < 0 || v > 255) throw std::invalid_argument("write_pgm: label value " + std::to_string(v) + " not 8-bit");
    px[i] = static_cast<unsigned char>(v);
  }
  write_pnm(path, "P5", label.w, label.h, px);
}

LabelMap read_pgm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  const PnmHeader h = parse_header(bytes, "P5", path);
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() < h.data_offset + need) {
    throw FormatError(path.string() + ": truncated pixel data at byte offset " +
                      std::to_string(bytes.size()));
  }
  LabelMap label(1, h.height, h.width);
  for (std::size_t i = 0; i < need; ++i) label.values[i] = bytes[h.data_offset + i];
  return label;
}

void validate_labels(const LabelMap& label, int num_classes, const std::string& where) {
  for (int v : label.values) {
    if (v != kIgnoreLabel && (v < 0 || v >= num_classes)) {
      throw ValidationError(where + ": label value " + std::to_string(v) + " outside [0, " +
                            std::to_string(num_classes) + ") and not " +
                            std::to_string(kIgnoreLabel));
    }
  }
}

std::vector<IndexEntry> read_index(const fs::path& split_dir) {
  const fs::path index = split_dir / "index.txt";
  std::ifstream in(index);
  if (!in) throw std::runtime_error("cannot open dataset index " + index.string());
  std::vector<IndexEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string img, lab, extra;
    if (!(ls >> img >> lab) || (ls >> extra)) {
      throw FormatError(index.string() + ":" + std::to_string(line_no) +
                        ": expected 'image_path label_path'");
    }
    IndexEntry e{split_dir / img, split_dir / lab};
    for (const fs::path& p : {e.image, e.label}) {
      if (!fs::exists(p)) {
        throw std::runtime_error(index.string() + ":" + std::to_string(line_no) +
                                 ": missing file " + p.string());
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_sample(const fs::path& split_dir, const std::string& stem, const SegSample& sample) {
  write_ppm(split_dir / (stem + ".ppm"), sample.image);
  write_pgm(split_dir / (stem + "_label.pgm"), sample.label);
}

SegSample read_sample(const IndexEntry& entry, int num_classes) {
  SegSample s{read_ppm(entry.image), read_pgm(entry.label)};
  if (s.label.h != s.image.shape().h || s.label.w != s.image.shape().w) {
    throw ValidationError(entry.label.string() + ": size differs from " + entry.image.string());
  }
  validate_labels(s.label, num_classes, entry.label.string());
  return s;
}

std::vector<SegSample> load_dataset(const fs::path& split_dir, int num_classes) {
  std::vector<SegSample> out;
  for (const auto& e : read_index(split_dir)) out.push_back(read_sample(e, num_classes));
  return out;
}

void save_dataset(const fs::path& split_dir, const std::vector<SegSample>& samples) {
  fs::create_directories(split_dir);
  std::ofstream index(split_dir / "index.txt");
  if (!index) throw std::runtime_error("cannot write index in " + split_dir.string());
  char stem[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(stem, sizeof stem, "%06zu", i);
    save_sample(split_dir, stem, samples[i]);
    index << stem << ".ppm " << stem << "_label.pgm\n";
  }
}

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("synthetic spec: " + what); };
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (num_classes > 255) fail("num_classes must be < 255");
  if (canvas < 8 || canvas % 8 != 0) fail("canvas must be a positive multiple of 8");
  if (texture_cell < 1) fail("texture_cell must be at least 1");
  if (shapes.empty()) fail("shape vocabulary is empty");
  if (noise < 0.0 || amplitude < 0.0) fail("noise and amplitude must be nonnegative");
  if (min_shapes < 0 || min_shapes > max_shapes) fail("need 0 <= min_shapes <= max_shapes");
  if (train_count < 0 || val_count < 0) fail("sample counts must be nonnegative");
  std::vector<int> seen(num_classes, 0);
  std::size_t textured = 0, first_order = 0;
  for (const TexturePair& p : pairs) {
    if (p.a < 0 || p.a >= num_classes || p.b < 0 || p.b >= num_classes || p.a == p.b) {
      fail("texture pair (" + std::to_string(p.a) + "," + std::to_string(p.b) +
           ") must name two distinct classes below num_classes");
    }
    if (p.order < 1 || p.order > 3) fail("texture pair order must be 1, 2 or 3");
    if (++seen[p.a] > 1 || ++seen[p.b] > 1) fail("a class appears in more than one texture pair");
    (p.order == 1 ? first_order : textured) += 1;
  }
  if (textured > kTexturedPalette.size()) fail("too many order-2/3 texture pairs");
  if (first_order > kFirstOrderPalette.size()) fail("too many order-1 texture pairs");
  std::size_t flat = 0;
  for (int k = 0; k < num_classes; ++k) {
    if (seen[k] == 0 && ++flat > kFlatPalette.size()) {
      fail("class " + std::to_string(k) +
           " is unreachable: it is in no texture pair and no distinct flat colour is left");
    }
  }
}

std::vector<double> class_base_color(const SyntheticSpec& spec, int cls) {
  const auto app = build_appearances(spec);
  const auto& b = app.at(cls).base;
  return {b[0], b[1], b[2]};
}

SyntheticDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  const auto app = build_appearances(spec);
  SyntheticDataset ds;
  auto fill = [&](std::vector<SegSample>& out, int count, std::uint64_t split) {
    for (int i = 0; i < count; ++i) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(i)};
      Rng rng(seq);
      out.push_back(make_sample(spec, app, rng));
    }
  };
  fill(ds.train, spec.train_count, 0);
  fill(ds.val, spec.val_count, 1);
  return ds;
}

}  // namespace hopa
