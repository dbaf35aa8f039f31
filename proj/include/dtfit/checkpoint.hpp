#pragma once

// Flat binary parameter checkpoints.
//
// Layout: magic "DFT1", then one entry per record:
//   u32 name length, name bytes,
//   for the reserved name "__config__": u32 byte count, raw text bytes
//   otherwise: u32 rank, u32 extent per axis, float32 little-endian scalars.
// The optional "__config__" entry carries a key=value text block and, when
// present, is always the first record.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dtfit {

struct TensorBlob {
  std::vector<int64_t> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string config_text;  // empty when absent
  std::vector<std::pair<std::string, TensorBlob>> tensors;  // write order

  const TensorBlob* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// key=value (one per line) helpers for the "__config__" block
std::string encode_kv(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> decode_kv(const std::string& text);

}  // namespace dtfit
