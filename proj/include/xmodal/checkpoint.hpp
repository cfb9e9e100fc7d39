#pragma once

#include <string>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

// Ordered named tensors. Optimizer moments, counters, and RNG seeds ride
// along as extra entries ("adam.m.<param>", "meta.epoch", ...).
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(const std::string& name, Tensor t);
  const Tensor& at(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
};

// Binary format: magic "XMCK", version u32 (1 = float64 payload, 2 =
// float32), count u32, then per tensor: name length u32, name bytes,
// rank u32, extents u64 each, little-endian payload. The write lands on a
// temp file first and renames into place.
void save_checkpoint(const std::string& path, const Checkpoint& ck,
                     bool fp32 = false);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace xmodal
