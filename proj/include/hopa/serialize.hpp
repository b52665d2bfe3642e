#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "hopa/tensor.hpp"

namespace hopa {

/// Raised on malformed or truncated binary input.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layout: "HOT4", four u32 LE dims (n, c, h, w), then n*c*h*w f64 LE values
// in row-major order.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace hopa
