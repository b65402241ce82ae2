#include "fedseg/npy.hpp"

#include "fedseg/common.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

namespace fedseg::npy {
namespace {

static_assert(std::endian::native == std::endian::little, "npy io assumes a little-endian host");

constexpr char kMagic[] = "\x93NUMPY";

std::size_t itemsize(const std::string& dtype) {
  if (dtype == "<f4") return 4;
  if (dtype == "<f8") return 8;
  if (dtype == "|u1") return 1;
  throw FormatError("unsupported npy dtype '" + dtype + "'");
}

}  // namespace

std::size_t Array::elements() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void write(const std::filesystem::path& path, const Array& array) {
  if (array.bytes.size() != array.elements() * itemsize(array.dtype))
    throw FormatError("npy payload size disagrees with shape");
  std::ostringstream dict;
  dict << "{'descr': '" << array.dtype << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < array.shape.size(); ++i) {
    dict << array.shape[i];
    if (array.shape.size() == 1 || i + 1 < array.shape.size()) dict << ",";
    if (i + 1 < array.shape.size()) dict << " ";
  }
  dict << "), }";
  std::string header = dict.str();
  // Pad so magic(6) + version(2) + len(2) + header is a multiple of 64.
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(array.bytes.data()),
            static_cast<std::streamsize>(array.bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

Array read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kMagic, 6) != 0) throw FormatError(path.string() + ": not an npy file");
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  std::size_t header_len = 0;
  if (version[0] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else if (version[0] == 2 || version[0] == 3) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::size_t>(b[3]) << 24);
  } else {
    throw FormatError(path.string() + ": unsupported npy version");
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw FormatError(path.string() + ": truncated npy header");

  std::smatch m;
  Array array;
  if (!std::regex_search(header, m, std::regex("'descr'\\s*:\\s*'([^']+)'")))
    throw FormatError(path.string() + ": npy header lacks descr");
  array.dtype = m[1];
  if (std::regex_search(header, m, std::regex("'fortran_order'\\s*:\\s*True")))
    throw FormatError(path.string() + ": fortran-order npy arrays are not supported");
  if (!std::regex_search(header, m, std::regex("'shape'\\s*:\\s*\\(([^)]*)\\)")))
    throw FormatError(path.string() + ": npy header lacks shape");
  const std::string dims = m[1];
  const std::regex number("\\d+");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), number); it != std::sregex_iterator(); ++it)
    array.shape.push_back(std::stoull(it->str()));

  array.bytes.resize(array.elements() * itemsize(array.dtype));
  in.read(reinterpret_cast<char*>(array.bytes.data()), static_cast<std::streamsize>(array.bytes.size()));
  if (!in) throw FormatError(path.string() + ": truncated npy payload");
  return array;
}

Array from_floats(const float* data, std::vector<std::size_t> shape) {
  Array a{"<f4", std::move(shape), {}};
  a.bytes.resize(a.elements() * 4);
  std::memcpy(a.bytes.data(), data, a.bytes.size());
  return a;
}

Array from_bytes(const std::uint8_t* data, std::vector<std::size_t> shape) {
  Array a{"|u1", std::move(shape), {}};
  a.bytes.assign(data, data + a.elements());
  return a;
}

std::vector<float> to_floats(const Array& array) {
  std::vector<float> out(array.elements());
  if (array.dtype == "<f4") {
    std::memcpy(out.data(), array.bytes.data(), array.bytes.size());
  } else if (array.dtype == "<f8") {
    for (std::size_t i = 0; i < out.size(); ++i) {
      double d;
      std::memcpy(&d, array.bytes.data() + 8 * i, 8);
      out[i] = static_cast<float>(d);
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = array.bytes[i];
  }
  return out;
}

std::vector<std::uint8_t> to_bytes(const Array& array) {
  if (array.dtype != "|u1") throw FormatError("expected a uint8 npy array, got " + array.dtype);
  return array.bytes;
}

}  // namespace fedseg::npy
