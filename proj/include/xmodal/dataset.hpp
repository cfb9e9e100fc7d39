#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

struct SyntheticSpec {
  std::size_t num_identities = 100;
  std::size_t attributes = 8;       // binary attribute slots per identity
  std::size_t synonyms = 3;         // interchangeable tokens per attribute
  double image_noise = 0.1;         // sigma of additive pixel noise
  double described_fraction = 0.5;  // fraction of the slots a text mentions
  std::size_t images_per_id = 2;
  std::size_t texts_per_image = 2;
  std::size_t height = 16;
  std::size_t width = 16;
};

struct ImageRecord {
  int identity = 0;
  Tensor pixels;  // [3,H,W]
  std::vector<std::vector<std::size_t>> texts;  // token index sequences
};

struct Dataset {
  std::size_t channels = 3, height = 0, width = 0;
  std::vector<ImageRecord> images;
  std::vector<std::string> vocab;  // index 0 is the out-of-vocabulary token

  // identity -> image indices, in first-appearance order per identity
  std::map<int, std::vector<std::size_t>> by_identity() const;
};

void validate(const SyntheticSpec& spec);

// In-memory generation; gen_data persists the same content to disk.
Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Writes manifest.jsonl, images.bin (little-endian float32 blobs), vocab.txt.
// Byte-identical output for identical (spec, seed).
void gen_data(const SyntheticSpec& spec, std::uint64_t seed,
              const std::string& dir);

Dataset load_dataset(const std::string& dir);

}  // namespace xmodal
