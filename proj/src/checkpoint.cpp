#include "byov/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace byov {

namespace {

constexpr char kMagic[4] = {'B', 'Y', 'O', 'V'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

uint64_t read_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) {
    throw IoError("checkpoint '" + path + "': truncated at byte " + std::to_string(is.tellg()));
  }
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void TensorStore::put(std::string name, Tensor t) {
  for (auto& [n, existing] : items_) {
    if (n == name) {
      existing = std::move(t);
      return;
    }
  }
  items_.emplace_back(std::move(name), std::move(t));
}

bool TensorStore::contains(std::string_view name) const { return find(name) != nullptr; }

const Tensor* TensorStore::find(std::string_view name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& TensorStore::get(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) throw IoError("checkpoint: missing tensor '" + std::string(name) + "'");
  return *t;
}

double TensorStore::get_scalar(std::string_view name) const { return get(name).item(); }

void save_store(const TensorStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  for (const auto& [name, t] : store.items()) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, t.rank());
    for (size_t d : t.shape()) write_u64(os, d);
    for (size_t i = 0; i < t.size(); ++i) write_f64(os, t[i]);
  }
  if (!os) throw IoError("checkpoint: write failure on '" + path + "'");
}

TensorStore load_store(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("checkpoint '" + path + "': bad magic at byte 0");
  }
  unsigned char vb[4];
  is.read(reinterpret_cast<char*>(vb), 4);
  if (!is) throw IoError("checkpoint '" + path + "': truncated header");
  uint32_t version = 0;
  for (int i = 3; i >= 0; --i) version = (version << 8) | vb[i];
  if (version != kVersion) {
    throw IoError("checkpoint '" + path + "': unsupported version " + std::to_string(version));
  }

  TensorStore store;
  for (;;) {
    is.peek();
    if (is.eof()) break;
    const uint64_t name_len = read_u64(is, path);
    if (name_len > (1u << 20)) {
      throw IoError("checkpoint '" + path + "': implausible name length " +
                    std::to_string(name_len));
    }
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw IoError("checkpoint '" + path + "': truncated name at byte " +
                           std::to_string(is.tellg()));
    const uint64_t rank = read_u64(is, path);
    if (rank > 64) throw IoError("checkpoint '" + path + "': implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (uint64_t i = 0; i < rank; ++i) shape[i] = read_u64(is, path);
    Tensor t{Shape(shape)};
    for (size_t i = 0; i < t.size(); ++i) {
      const uint64_t bits = read_u64(is, path);
      double d;
      std::memcpy(&d, &bits, 8);
      t[i] = d;
    }
    store.put(std::move(name), std::move(t));
  }
  return store;
}

}  // namespace byov
