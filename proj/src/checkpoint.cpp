#include "fedseg/model/checkpoint.hpp"

#include "fedseg/common.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fedseg {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes a little-endian host");

constexpr char kMagic[8] = {'F', 'E', 'D', 'S', 'E', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["fingerprint"] = ckpt.fingerprint;
  header["scalar"] = ckpt.scalar;
  header["meta"] = ckpt.meta;
  auto entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : ckpt.entries) {
    entries.push_back({{"name", e.name},
                       {"shape", e.shape},
                       {"trainable", e.trainable},
                       {"offset", offset},
                       {"count", e.values.size()}});
    offset += e.values.size();
  }
  header["entries"] = entries;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : ckpt.entries)
    out.write(reinterpret_cast<const char*>(e.values.data()),
              static_cast<std::streamsize>(e.values.size() * sizeof(double)));
  if (!out) throw FormatError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path.string() + ": not a checkpoint file");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != kVersion) throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(path.string() + ": truncated checkpoint header");

  const auto header = nlohmann::json::parse(text);
  Checkpoint c;
  c.fingerprint = header.at("fingerprint").get<std::string>();
  c.scalar = header.value("scalar", std::string("float64"));
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& e : header.at("entries")) {
    CheckpointEntry out;
    out.name = e.at("name").get<std::string>();
    out.shape = e.at("shape").get<std::vector<int>>();
    out.trainable = e.at("trainable").get<bool>();
    out.values.resize(e.at("count").get<std::size_t>());
    in.read(reinterpret_cast<char*>(out.values.data()),
            static_cast<std::streamsize>(out.values.size() * sizeof(double)));
    if (!in) throw FormatError(path.string() + ": truncated payload for '" + out.name + "'");
    c.entries.push_back(std::move(out));
  }
  return c;
}

}  // namespace fedseg
