#include "dtfit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dtfit/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace dtfit {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'T', '1'};
constexpr const char* kConfigName = "__config__";

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& is, const std::string& what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  DTFIT_CHECK(is.good(), IoError, "checkpoint: truncated while reading ", what);
  return v;
}

}  // namespace

const TensorBlob* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, blob] : tensors)
    if (n == name) return &blob;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  DTFIT_CHECK(os.good(), IoError, "checkpoint: cannot open ", path,
              " for writing");
  os.write(kMagic, 4);
  if (!ckpt.config_text.empty()) {
    write_u32(os, static_cast<uint32_t>(std::strlen(kConfigName)));
    os.write(kConfigName, std::strlen(kConfigName));
    write_u32(os, static_cast<uint32_t>(ckpt.config_text.size()));
    os.write(ckpt.config_text.data(),
             static_cast<std::streamsize>(ckpt.config_text.size()));
  }
  for (const auto& [name, blob] : ckpt.tensors) {
    DTFIT_CHECK(name != kConfigName, ContractError,
                "checkpoint: tensor may not use the reserved config name");
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(blob.shape.size()));
    int64_t count = 1;
    for (int64_t e : blob.shape) {
      write_u32(os, static_cast<uint32_t>(e));
      count *= e;
    }
    DTFIT_CHECK(count == static_cast<int64_t>(blob.data.size()), ContractError,
                "checkpoint: blob '", name, "' shape/data mismatch");
    os.write(reinterpret_cast<const char*>(blob.data.data()),
             static_cast<std::streamsize>(blob.data.size() * sizeof(float)));
  }
  DTFIT_CHECK(os.good(), IoError, "checkpoint: write failed for ", path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  DTFIT_CHECK(is.good(), IoError, "checkpoint: cannot open ", path);
  char magic[4];
  is.read(magic, 4);
  DTFIT_CHECK(is.good() && std::memcmp(magic, kMagic, 4) == 0, IoError,
              "checkpoint: unknown magic in ", path);
  Checkpoint ckpt;
  while (true) {
    uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), 4);
    if (is.eof()) break;
    DTFIT_CHECK(is.good(), IoError, "checkpoint: truncated name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    DTFIT_CHECK(is.good(), IoError, "checkpoint: truncated name");
    if (name == kConfigName) {
      uint32_t len = read_u32(is, "config length");
      ckpt.config_text.resize(len);
      is.read(ckpt.config_text.data(), len);
      DTFIT_CHECK(is.good(), IoError, "checkpoint: truncated config block");
      continue;
    }
    uint32_t rank = read_u32(is, "rank of '" + name + "'");
    DTFIT_CHECK(rank <= 8, IoError, "checkpoint: implausible rank ", rank,
                " for '", name, "'");
    TensorBlob blob;
    int64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint32_t e = read_u32(is, "extent of '" + name + "'");
      blob.shape.push_back(static_cast<int64_t>(e));
      count *= e;
    }
    blob.data.resize(count);
    is.read(reinterpret_cast<char*>(blob.data.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    DTFIT_CHECK(is.good(), IoError, "checkpoint: truncated data for '", name,
                "'");
    ckpt.tensors.emplace_back(std::move(name), std::move(blob));
  }
  return ckpt;
}

std::string encode_kv(const std::map<std::string, std::string>& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
  return os.str();
}

std::map<std::string, std::string> decode_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos || line.empty()) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace dtfit
