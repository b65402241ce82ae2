#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fedseg::npy {

// Minimal reader/writer for the NumPy .npy v1.0 container: little-endian,
// C order, dtypes '<f4', '<f8' and '|u1'.

struct Array {
  std::string dtype;  // "<f4", "<f8" or "|u1"
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> bytes;

  [[nodiscard]] std::size_t elements() const;
};

void write(const std::filesystem::path& path, const Array& array);
Array read(const std::filesystem::path& path);

Array from_floats(const float* data, std::vector<std::size_t> shape);
Array from_bytes(const std::uint8_t* data, std::vector<std::size_t> shape);

std::vector<float> to_floats(const Array& array);
std::vector<std::uint8_t> to_bytes(const Array& array);

}  // namespace fedseg::npy
