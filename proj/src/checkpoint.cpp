#include "cvos/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace cvos {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'V', 'O', 'S'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated checkpoint: " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_raw(os, kVersion);
  write_raw(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    write_raw(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& shape = tensor.shape();
    write_raw(os, static_cast<uint32_t>(shape.size()));
    for (int64_t e : shape) write_raw(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(tensor.data()),
             static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not a CVOS checkpoint: " + path);
  }
  uint32_t version = read_raw<uint32_t>(is, path);
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  uint32_t count = read_raw<uint32_t>(is, path);
  std::map<std::string, Tensor> out;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = read_raw<uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("truncated checkpoint: " + path);
    uint32_t rank = read_raw<uint32_t>(is, path);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(read_raw<uint64_t>(is, path));
    std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint: " + path);
    out.emplace(std::move(name), Tensor::from_data(std::move(shape), std::move(values)));
  }
  return out;
}

}  // namespace cvos
