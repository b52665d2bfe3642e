#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "hopa/data.hpp"
#include "hopa/model.hpp"
#include "hopa/training.hpp"

namespace hopa {

/// Configuration problem tied to one field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// `key = value` lines; `[section]` prefixes following keys with
/// "section.". Keys may also be written dotted. '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  InferConfig infer;
};

/// Unknown keys are errors. Validation failures name the field.
ExperimentConfig parse_experiment_config(const std::string& text);
SyntheticSpec parse_synthetic_spec(const std::string& text);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace hopa
