#include "hopa/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace hopa {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "cannot parse '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key, "expected true/false, got '" + text + "'");
}

template <typename T, std::size_t N>
std::array<T, N> parse_array(const std::string& key, const std::string& text) {
  const auto items = split_list(text);
  if (items.size() != N) {
    throw ConfigError(key, "expected " + std::to_string(N) + " comma-separated values");
  }
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_number<T>(key, items[i]);
  return out;
}

using Handler = std::function<void(const std::string& key, const std::string& value)>;

void apply_handlers(const std::map<std::string, std::string>& kv, const std::map<std::string, Handler>& handlers) {
  for (const auto& [key, value] : kv) {
    auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError(key, "unknown key");
    it->second(key, value);
  }
}

template <typename T>
Handler num(T& target) {
  return [&target](const std::string& k, const std::string& v) { target = parse_number<T>(k, v); };
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no), "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no), "empty key");
    if (!section.empty()) key = section + "." + key;
    if (out.count(key)) throw ConfigError(key, "duplicate key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  const auto kv = parse_key_values(text);
  ExperimentConfig cfg;
  // The preset is applied first so explicit backbone fields override it.
  if (auto it = kv.find("backbone.preset"); it != kv.end()) {
    try {
      cfg.model.backbone = BackboneConfig::preset(it->second);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("backbone.preset", e.what());
    }
  }
  ModelConfig& m = cfg.model;
  TrainConfig& t = cfg.train;
  std::map<std::string, Handler> h{
      {"backbone.preset", [](const std::string&, const std::string&) {}},
      {"backbone.blocks", [&](auto& k, auto& v) { m.backbone.blocks = parse_array<int, 4>(k, v); }},
      {"backbone.widths", [&](auto& k, auto& v) { m.backbone.widths = parse_array<int, 4>(k, v); }},
      {"backbone.stem_width", num(m.backbone.stem_width)},
      {"model.num_classes", num(m.num_classes)},
      {"hr.order", num(m.hr.order)},
      {"hr.rank", num(m.hr.rank)},
      {"hr.out_per_degree", num(m.hr.out_per_degree)},
      {"paired_aspp.combination",
       [&](auto& k, auto& v) {
         const int c = parse_number<int>(k, v);
         if (c != 1 && c != 2) throw ConfigError(k, "must be 1 or 2");
         m.pa.combination = c == 1 ? Combination::kOne : Combination::kTwo;
       }},
      {"paired_aspp.rates", [&](auto& k, auto& v) { m.pa.rates = parse_array<int, 4>(k, v); }},
      {"paired_aspp.branch_channels", num(m.pa.branch_channels)},
      {"paired_aspp.fuse_channels", num(m.pa.fuse_channels)},
      {"train.base_lr", num(t.base_lr)},
      {"train.momentum", num(t.momentum)},
      {"train.weight_decay", num(t.weight_decay)},
      {"train.batch_size", num(t.batch_size)},
      {"train.crop", [&](auto& k, auto& v) { t.crop = parse_array<int, 2>(k, v); }},
      {"train.max_iter", num(t.max_iter)},
      {"train.warmup_iter", num(t.warmup_iter)},
      {"train.poly_power", num(t.poly_power)},
      {"train.scale_range", [&](auto& k, auto& v) { t.scale_range = parse_array<double, 2>(k, v); }},
      {"train.flip_prob", num(t.flip_prob)},
      {"train.brightness_jitter", num(t.brightness_jitter)},
      {"train.seed", num(t.seed)},
      {"infer.scales",
       [&](auto& k, auto& v) {
         cfg.infer.scales.clear();
         for (const auto& s : split_list(v)) cfg.infer.scales.push_back(parse_number<double>(k, s));
       }},
      {"infer.flip", [&](auto& k, auto& v) { cfg.infer.flip = parse_bool(k, v); }},
  };
  apply_handlers(kv, h);

  auto check = [](const std::function<void()>& fn, const std::string& fallback_field) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      const std::string msg = e.what();
      const auto colon = msg.find(": ");
      if (colon == std::string::npos) throw ConfigError(fallback_field, msg);
      throw ConfigError(msg.substr(0, colon), msg.substr(colon + 2));
    }
  };
  check([&] { t.validate(); }, "train");
  check([&] { cfg.infer.validate(); }, "infer");
  if (m.num_classes < 2) throw ConfigError("model.num_classes", "must be >= 2");
  if (m.hr.order < 1) throw ConfigError("hr.order", "must be >= 1");
  if (m.hr.rank < 1) throw ConfigError("hr.rank", "must be >= 1");
  if (m.hr.out_per_degree < 1) throw ConfigError("hr.out_per_degree", "must be >= 1");
  for (int r : m.pa.rates) {
    if (r < 1) throw ConfigError("paired_aspp.rates", "rates must be >= 1");
  }
  if (m.pa.branch_channels < 1) throw ConfigError("paired_aspp.branch_channels", "must be >= 1");
  if (m.pa.fuse_channels < 1) throw ConfigError("paired_aspp.fuse_channels", "must be >= 1");
  for (int s = 0; s < 4; ++s) {
    if (m.backbone.blocks[s] < 1) throw ConfigError("backbone.blocks", "must be >= 1");
    if (m.backbone.widths[s] < 1) throw ConfigError("backbone.widths", "must be >= 1");
  }
  return cfg;
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  const auto kv = parse_key_values(text);
  SyntheticSpec s;
  std::map<std::string, Handler> h{
      {"synthetic.num_classes", num(s.num_classes)},
      {"synthetic.canvas", num(s.canvas)},
      {"synthetic.pairs",
       [&](auto& k, auto& v) {
         s.pairs.clear();
         for (const auto& item : split_list(v)) {
           std::stringstream ss(item);
           std::string a, b, o;
           if (!std::getline(ss, a, ':') || !std::getline(ss, b, ':') || !std::getline(ss, o)) {
             throw ConfigError(k, "expected entries 'class_a:class_b:order'");
           }
           s.pairs.push_back({parse_number<int>(k, trim(a)), parse_number<int>(k, trim(b)),
                              parse_number<int>(k, trim(o))});
         }
       }},
      {"synthetic.shapes",
       [&](auto& k, auto& v) {
         s.shapes.clear();
         for (const auto& item : split_list(v)) {
           if (item == "rectangle") s.shapes.push_back(ShapeKind::kRectangle);
           else if (item == "disc") s.shapes.push_back(ShapeKind::kDisc);
           else if (item == "bar") s.shapes.push_back(ShapeKind::kBar);
           else throw ConfigError(k, "unknown shape '" + item + "'");
         }
       }},
      {"synthetic.noise", num(s.noise)},
      {"synthetic.amplitude", num(s.amplitude)},
      {"synthetic.texture_cell", num(s.texture_cell)},
      {"synthetic.min_shapes", num(s.min_shapes)},
      {"synthetic.max_shapes", num(s.max_shapes)},
      {"synthetic.train_count", num(s.train_count)},
      {"synthetic.val_count", num(s.val_count)},
  };
  apply_handlers(kv, h);
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ConfigError("synthetic", e.what());
  }
  return s;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace hopa
