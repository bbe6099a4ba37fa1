#include "proxysynth/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <vector>

#include <openssl/evp.h>
#include <zlib.h>

#include "proxysynth/errors.hpp"

namespace proxysynth {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'P', 'S', 'Y', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeader = 8 + 4 + 8;

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    case torch::kInt32: return "int32";
    case torch::kUInt8: return "uint8";
    default: throw IoError("archive: unsupported tensor dtype");
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  if (name == "int64") return torch::kInt64;
  if (name == "int32") return torch::kInt32;
  if (name == "uint8") return torch::kUInt8;
  throw CorruptArchiveError("archive: unknown dtype '" + name + "'");
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint '" + path + "' cannot be opened");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_archive(const Archive& archive, const std::string& path) {
  json entries = json::array();
  std::vector<torch::Tensor> contiguous;
  std::uint64_t offset = 0;
  for (auto& [name, tensor] : archive.tensors) {
    auto t = tensor.detach().cpu().contiguous();
    std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * t.element_size();
    entries.push_back({{"name", name}, {"dtype", dtype_name(t.scalar_type())}, {"shape", t.sizes().vec()},
                       {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
    contiguous.push_back(t);
  }
  json manifest = {{"format", "proxysynth-archive"}, {"version", kVersion}, {"meta", archive.meta}, {"tensors", entries}};
  std::string text = manifest.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kHeader + text.size() + offset + 4);
  out.insert(out.end(), kMagic, kMagic + 8);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (auto& t : contiguous) {
    auto* p = static_cast<const std::uint8_t*>(t.data_ptr());
    out.insert(out.end(), p, p + t.numel() * t.element_size());
  }
  put<std::uint32_t>(out, crc_of(out.data(), out.size()));

  auto tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint '" + path + "'");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

Archive load_archive(const std::string& path) {
  auto bytes = read_file(path);
  auto corrupt = [&](const std::string& why) { return CorruptArchiveError("checkpoint '" + path + "' is corrupt: " + why); };
  if (bytes.size() < kHeader + 4) throw corrupt("file too short");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw corrupt("bad magic");
  if (get<std::uint32_t>(bytes, 8) != kVersion) throw corrupt("unsupported version");
  const auto manifest_len = get<std::uint64_t>(bytes, 12);
  if (manifest_len > bytes.size() - kHeader - 4) throw corrupt("manifest length exceeds file size");
  const std::size_t body = bytes.size() - 4;
  if (crc_of(bytes.data(), body) != get<std::uint32_t>(bytes, body)) throw corrupt("checksum mismatch");

  json manifest;
  try {
    manifest = json::parse(bytes.begin() + kHeader, bytes.begin() + static_cast<std::ptrdiff_t>(kHeader + manifest_len));
  } catch (const json::exception& e) {
    throw corrupt(std::string("manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "proxysynth-archive") throw corrupt("unknown format tag");

  Archive archive;
  archive.meta = manifest.value("meta", json::object());
  const std::size_t blob = kHeader + manifest_len;
  const std::size_t blob_len = body - blob;
  try {
    for (auto& e : manifest.at("tensors")) {
      auto dtype = dtype_from(e.at("dtype").get<std::string>());
      auto shape = e.at("shape").get<std::vector<int64_t>>();
      auto offset = e.at("offset").get<std::uint64_t>();
      auto nbytes = e.at("nbytes").get<std::uint64_t>();
      int64_t numel = 1;
      for (auto s : shape) numel *= s;
      if (static_cast<std::uint64_t>(numel) * torch::elementSize(dtype) != nbytes || offset + nbytes > blob_len)
        throw corrupt("tensor '" + e.at("name").get<std::string>() + "' extent is inconsistent");
      auto t = torch::empty(shape, dtype);
      std::memcpy(t.data_ptr(), bytes.data() + blob + offset, nbytes);
      archive.tensors.emplace(e.at("name").get<std::string>(), t);
    }
  } catch (const json::exception& e) {
    throw corrupt(std::string("manifest: ") + e.what());
  }
  return archive;
}

std::string archive_digest(const std::string& path) {
  // Not the CRC: a CRC over data that ends in its own CRC is a constant.
  auto bytes = read_file(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 failed for " + path);
  char buf[17];
  for (int i = 0; i < 8; ++i) std::snprintf(buf + 2 * i, 3, "%02x", md[i]);
  return buf;
}

}  // namespace proxysynth
