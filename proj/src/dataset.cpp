#include "xmodal/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "xmodal/error.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::map<int, std::vector<std::size_t>> Dataset::by_identity() const {
  std::map<int, std::vector<std::size_t>> m;
  for (std::size_t i = 0; i < images.size(); ++i)
    m[images[i].identity].push_back(i);
  return m;
}

void validate(const SyntheticSpec& spec) {
  if (spec.num_identities == 0) throw InputError("SyntheticSpec: no identities");
  if (spec.attributes == 0 || spec.attributes > 20)
    throw InputError("SyntheticSpec: attributes must be in [1,20]");
  if (spec.num_identities > (std::size_t{1} << spec.attributes) - 1)
    throw InputError(
        "SyntheticSpec: more identities than distinct nonempty attribute "
        "patterns (" +
        std::to_string(spec.num_identities) + " > 2^" +
        std::to_string(spec.attributes) + "-1)");
  if (spec.synonyms == 0) throw InputError("SyntheticSpec: synonyms must be >= 1");
  if (spec.image_noise < 0.0)
    throw InputError("SyntheticSpec: image_noise must be >= 0");
  if (spec.described_fraction <= 0.0 || spec.described_fraction > 1.0)
    throw InputError("SyntheticSpec: described_fraction must be in (0,1]");
  if (spec.described_fraction * static_cast<double>(spec.attributes) < 1.0)
    throw InputError("SyntheticSpec: described_fraction * attributes < 1");
  if (spec.images_per_id == 0 || spec.texts_per_image == 0)
    throw InputError("SyntheticSpec: images_per_id and texts_per_image must be >= 1");
  if (spec.height < 4 || spec.width < 8)
    throw InputError("SyntheticSpec: image extent too small for the attribute grid");
}

namespace {

// Attribute r occupies one cell of a 2x4 grid tiled over the image and
// lights one color channel.
void paint_attribute(Tensor& img, std::size_t attr, std::size_t h, std::size_t w) {
  std::size_t grid_rows = 2, grid_cols = 4;
  std::size_t cell = attr % (grid_rows * grid_cols);
  std::size_t r0 = (cell / grid_cols) * (h / grid_rows);
  std::size_t c0 = (cell % grid_cols) * (w / grid_cols);
  std::size_t r1 = std::min(h, r0 + h / grid_rows);
  std::size_t c1 = std::min(w, c0 + w / grid_cols);
  std::size_t channel = attr % 3;
  // Attributes beyond the first 8 reuse cells on another channel.
  if (attr >= grid_rows * grid_cols) channel = (attr / (grid_rows * grid_cols) + attr) % 3;
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) img.at(channel, r, c) += 1.0;
}

std::vector<std::uint32_t> sample_patterns(const SyntheticSpec& spec,
                                           std::mt19937_64& eng) {
  std::bernoulli_distribution present(0.4);
  std::set<std::uint32_t> seen;
  std::vector<std::uint32_t> patterns;
  patterns.reserve(spec.num_identities);
  while (patterns.size() < spec.num_identities) {
    std::uint32_t p = 0;
    for (std::size_t a = 0; a < spec.attributes; ++a)
      if (present(eng)) p |= (1u << a);
    if (p == 0 || seen.count(p)) continue;
    seen.insert(p);
    patterns.push_back(p);
  }
  return patterns;
}

std::vector<std::size_t> present_attributes(std::uint32_t pattern,
                                            std::size_t attributes) {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < attributes; ++a)
    if (pattern & (1u << a)) out.push_back(a);
  return out;
}

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  validate(spec);
  Dataset ds;
  ds.channels = 3;
  ds.height = spec.height;
  ds.width = spec.width;

  ds.vocab.push_back("<unk>");
  for (std::size_t a = 0; a < spec.attributes; ++a)
    for (std::size_t s = 0; s < spec.synonyms; ++s)
      ds.vocab.push_back("attr" + std::to_string(a) + "_syn" + std::to_string(s));

  auto pattern_eng = make_engine(seed, {kSeedData, 0});
  std::vector<std::uint32_t> patterns = sample_patterns(spec, pattern_eng);

  for (std::size_t id = 0; id < spec.num_identities; ++id) {
    std::vector<std::size_t> attrs =
        present_attributes(patterns[id], spec.attributes);
    std::size_t mentions = static_cast<std::size_t>(
        std::lround(spec.described_fraction * static_cast<double>(spec.attributes)));
    mentions = std::clamp<std::size_t>(mentions, 1, attrs.size());

    for (std::size_t im = 0; im < spec.images_per_id; ++im) {
      auto eng = make_engine(seed, {kSeedData, 1, id, im});
      ImageRecord rec;
      rec.identity = static_cast<int>(id);
      rec.pixels = Tensor::full({3, spec.height, spec.width}, 0.0);
      for (std::size_t a : attrs) paint_attribute(rec.pixels, a, spec.height, spec.width);
      if (spec.image_noise > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.image_noise);
        for (std::size_t i = 0; i < rec.pixels.numel(); ++i) rec.pixels[i] += noise(eng);
      }
      // Pixels round-trip through the float32 blob format; quantize now so
      // the in-memory dataset equals its on-disk reload exactly.
      for (std::size_t i = 0; i < rec.pixels.numel(); ++i)
        rec.pixels[i] = static_cast<double>(static_cast<float>(rec.pixels[i]));

      for (std::size_t t = 0; t < spec.texts_per_image; ++t) {
        std::vector<std::size_t> chosen = attrs;
        std::shuffle(chosen.begin(), chosen.end(), eng);
        chosen.resize(mentions);
        std::vector<std::size_t> tokens;
        tokens.reserve(mentions);
        std::uniform_int_distribution<std::size_t> syn(0, spec.synonyms - 1);
        for (std::size_t a : chosen) tokens.push_back(1 + a * spec.synonyms + syn(eng));
        rec.texts.push_back(std::move(tokens));
      }
      ds.images.push_back(std::move(rec));
    }
  }
  return ds;
}

void gen_data(const SyntheticSpec& spec, std::uint64_t seed,
              const std::string& dir) {
  Dataset ds = make_synthetic(spec, seed);
  std::error_code ec;
  fs::create_directories(dir, ec);

  std::ofstream blob(fs::path(dir) / "images.bin", std::ios::binary);
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
  std::ofstream vocab(fs::path(dir) / "vocab.txt");
  if (!blob || !manifest || !vocab)
    throw IoError("gen_data: cannot open output files under " + dir);

  for (const std::string& tok : ds.vocab) vocab << tok << "\n";

  std::uint64_t offset = 0;
  for (const ImageRecord& rec : ds.images) {
    std::vector<float> buf(rec.pixels.numel());
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<float>(rec.pixels[i]);
    std::uint64_t nbytes = buf.size() * sizeof(float);
    blob.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(nbytes));

    json line;
    line["id"] = rec.identity;
    line["offset"] = offset;
    line["length"] = nbytes;
    line["shape"] = {ds.channels, ds.height, ds.width};
    line["texts"] = rec.texts;
    manifest << line.dump() << "\n";
    offset += nbytes;
  }
  if (!blob.flush() || !manifest.flush() || !vocab.flush())
    throw IoError("gen_data: write failed under " + dir);
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
  std::ifstream blob(fs::path(dir) / "images.bin", std::ios::binary);
  std::ifstream vocab(fs::path(dir) / "vocab.txt");
  if (!manifest || !blob || !vocab)
    throw IoError("load_dataset: missing dataset files under " + dir);

  Dataset ds;
  std::string tok;
  while (std::getline(vocab, tok)) ds.vocab.push_back(tok);
  if (ds.vocab.size() < 2) throw IoError("load_dataset: vocabulary too small");

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("load_dataset: manifest line " + std::to_string(lineno) +
                    ": " + e.what());
    }
    ImageRecord rec;
    rec.identity = j.at("id").get<int>();
    auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3)
      throw IoError("load_dataset: manifest line " + std::to_string(lineno) +
                    ": image shape must have rank 3");
    ds.channels = shape[0];
    ds.height = shape[1];
    ds.width = shape[2];
    std::uint64_t offset = j.at("offset").get<std::uint64_t>();
    std::uint64_t nbytes = j.at("length").get<std::uint64_t>();
    std::size_t numel = shape[0] * shape[1] * shape[2];
    if (nbytes != numel * sizeof(float))
      throw IoError("load_dataset: manifest line " + std::to_string(lineno) +
                    ": blob length disagrees with shape");
    std::vector<float> buf(numel);
    blob.seekg(static_cast<std::streamoff>(offset));
    blob.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(nbytes));
    if (!blob)
      throw IoError("load_dataset: blob read failed at offset " +
                    std::to_string(offset));
    rec.pixels = Tensor::full(shape, 0.0);
    for (std::size_t i = 0; i < numel; ++i)
      rec.pixels[i] = static_cast<double>(buf[i]);
    rec.texts = j.at("texts").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& t : rec.texts) {
      if (t.empty())
        throw IoError("load_dataset: empty text at manifest line " +
                      std::to_string(lineno));
      for (std::size_t idx : t)
        if (idx >= ds.vocab.size())
          throw IoError("load_dataset: token index " + std::to_string(idx) +
                        " outside vocabulary at manifest line " +
                        std::to_string(lineno));
    }
    ds.images.push_back(std::move(rec));
  }
  if (ds.images.empty()) throw IoError("load_dataset: empty manifest under " + dir);
  return ds;
}

}  // namespace xmodal
