#include "fedseg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <memory>

namespace fedseg::nifti {
namespace {

struct GzCloser {
  void operator()(gzFile_s* f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

enum Datatype : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUint16 = 512,
  kUint32 = 768,
  kInt64 = 1024,
  kUint64 = 1280,
};

template <typename T>
T field(const std::array<char, 348>& hdr, std::size_t offset, bool swap) {
  T v;
  std::memcpy(&v, hdr.data() + offset, sizeof(T));
  if (swap) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    v = std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void put(std::array<char, 348>& hdr, std::size_t offset, T v) {
  std::memcpy(hdr.data() + offset, &v, sizeof(T));
}

template <typename T>
void convert(const std::vector<char>& raw, std::vector<float>& out, bool swap) {
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), raw.data() + i * sizeof(T), sizeof(T));
    if (swap) std::reverse(bytes.begin(), bytes.end());
    out[i] = static_cast<float>(std::bit_cast<T>(bytes));
  }
}

}  // namespace

Image read(const std::filesystem::path& path) {
  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw IngestError("cannot open " + path.string());
  std::array<char, 348> hdr{};
  if (gzread(f.get(), hdr.data(), 348) != 348) throw IngestError(path.string() + ": truncated NIfTI header");

  bool swap = false;
  if (field<std::int32_t>(hdr, 0, false) != 348) {
    swap = true;
    if (field<std::int32_t>(hdr, 0, true) != 348) throw IngestError(path.string() + ": not a NIfTI-1 file");
  }
  if (std::memcmp(hdr.data() + 344, "n+1", 4) != 0)
    throw IngestError(path.string() + ": only single-file NIfTI-1 (magic n+1) is supported");

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = field<std::int16_t>(hdr, 40 + 2 * i, swap);
  if (dim[0] < 1 || dim[0] > 7) throw IngestError(path.string() + ": invalid dim[0]");
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] > 1) throw IngestError(path.string() + ": only scalar 3D volumes are supported");
  const int nx = dim[1], ny = dim[0] >= 2 ? dim[2] : 1, nz = dim[0] >= 3 ? dim[3] : 1;
  if (nx < 1 || ny < 1 || nz < 1) throw IngestError(path.string() + ": non-positive dimension");

  const auto datatype = field<std::int16_t>(hdr, 70, swap);
  const auto vox_offset = static_cast<long>(field<float>(hdr, 108, swap));
  float slope = field<float>(hdr, 112, swap);
  const float inter = field<float>(hdr, 116, swap);

  Image img;
  img.shape = Shape3{nz, ny, nx};
  for (int i = 0; i < 3; ++i) img.pixdim[i] = field<float>(hdr, 80 + 4 * (i + 1), swap);
  img.data.resize(img.shape.voxels());

  std::size_t item = 0;
  switch (datatype) {
    case kUint8: case kInt8: item = 1; break;
    case kInt16: case kUint16: item = 2; break;
    case kInt32: case kUint32: case kFloat32: item = 4; break;
    case kFloat64: case kInt64: case kUint64: item = 8; break;
    default: throw IngestError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  if (gzseek(f.get(), std::max(vox_offset, 352L), SEEK_SET) < 0)
    throw IngestError(path.string() + ": cannot seek to voxel data");
  std::vector<char> raw(img.data.size() * item);
  const auto got = gzread(f.get(), raw.data(), static_cast<unsigned>(raw.size()));
  if (got < 0 || static_cast<std::size_t>(got) != raw.size())
    throw IngestError(path.string() + ": truncated voxel data");

  switch (datatype) {
    case kUint8: convert<std::uint8_t>(raw, img.data, false); break;
    case kInt8: convert<std::int8_t>(raw, img.data, false); break;
    case kInt16: convert<std::int16_t>(raw, img.data, swap); break;
    case kUint16: convert<std::uint16_t>(raw, img.data, swap); break;
    case kInt32: convert<std::int32_t>(raw, img.data, swap); break;
    case kUint32: convert<std::uint32_t>(raw, img.data, swap); break;
    case kFloat32: convert<float>(raw, img.data, swap); break;
    case kFloat64: convert<double>(raw, img.data, swap); break;
    case kInt64: convert<std::int64_t>(raw, img.data, swap); break;
    case kUint64: convert<std::uint64_t>(raw, img.data, swap); break;
    default: break;
  }
  if (slope != 0.0f && (slope != 1.0f || inter != 0.0f))
    for (auto& v : img.data) v = v * slope + inter;
  return img;
}

void write(const std::filesystem::path& path, const Image& image) {
  std::array<char, 348> hdr{};
  put<std::int32_t>(hdr, 0, 348);
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(image.shape.width),
                                        static_cast<std::int16_t>(image.shape.height),
                                        static_cast<std::int16_t>(image.shape.depth), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(hdr, 40 + 2 * i, dim[i]);
  put<std::int16_t>(hdr, 70, kFloat32);
  put<std::int16_t>(hdr, 72, 32);
  put<float>(hdr, 76, 1.0f);
  for (int i = 0; i < 3; ++i) put<float>(hdr, 80 + 4 * (i + 1), image.pixdim[i]);
  put<float>(hdr, 108, 352.0f);
  put<float>(hdr, 112, 1.0f);
  std::memcpy(hdr.data() + 344, "n+1\0", 4);

  const bool gz = path.extension() == ".gz";
  GzHandle f(gzopen(path.string().c_str(), gz ? "wb6" : "wbT"));
  if (!f) throw IngestError("cannot open " + path.string() + " for writing");
  const char extension[4] = {0, 0, 0, 0};
  if (gzwrite(f.get(), hdr.data(), 348) != 348 || gzwrite(f.get(), extension, 4) != 4)
    throw IngestError("failed writing " + path.string());
  const auto bytes = static_cast<unsigned>(image.data.size() * sizeof(float));
  if (gzwrite(f.get(), image.data.data(), bytes) != static_cast<int>(bytes))
    throw IngestError("failed writing " + path.string());
}

}  // namespace fedseg::nifti
