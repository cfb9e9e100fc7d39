#include "xmodal/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "xmodal/error.hpp"

namespace xmodal {

namespace {

constexpr char kMagic[4] = {'X', 'M', 'C', 'K'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint: truncated file '" + path + "'");
  return v;
}

}  // namespace

void Checkpoint::add(const std::string& name, Tensor t) {
  for (const auto& [n, _] : tensors)
    if (n == name) throw InputError("checkpoint: duplicate tensor '" + name + "'");
  tensors.emplace_back(name, std::move(t));
}

const Tensor& Checkpoint::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw IoError("checkpoint: missing tensor '" + name + "'");
  return *t;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck, bool fp32) {
  std::filesystem::path tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + tmp.string() + "'");
    out.write(kMagic, 4);
    write_pod<std::uint32_t>(out, fp32 ? 2u : 1u);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t e : t.shape()) write_pod<std::uint64_t>(out, e);
      if (fp32) {
        for (std::size_t k = 0; k < t.numel(); ++k)
          write_pod<float>(out, static_cast<float>(t[k]));
      } else {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
      }
    }
    if (!out.flush()) throw IoError("checkpoint: write failed for '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("checkpoint: rename to '" + path + "' failed: " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic in '" + path + "'");
  std::uint32_t version = read_pod<std::uint32_t>(in, path);
  if (version != 1 && version != 2)
    throw IoError("checkpoint: unsupported version " + std::to_string(version) +
                  " in '" + path + "'");
  std::uint32_t count = read_pod<std::uint32_t>(in, path);

  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("checkpoint: truncated file '" + path + "'");
    std::uint32_t rank = read_pod<std::uint32_t>(in, path);
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape[r] = static_cast<std::size_t>(read_pod<std::uint64_t>(in, path));
      numel *= shape[r];
    }
    Tensor t(shape);
    if (version == 1) {
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(numel * sizeof(double)));
      if (!in) throw IoError("checkpoint: truncated file '" + path + "'");
    } else {
      for (std::size_t k = 0; k < numel; ++k)
        t[k] = static_cast<double>(read_pod<float>(in, path));
    }
    ck.add(name, std::move(t));
  }
  return ck;
}

}  // namespace xmodal
