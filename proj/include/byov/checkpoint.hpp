#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "byov/tensor.hpp"

namespace byov {

// Ordered named-tensor container backing the checkpoint file format.
//
// File layout (all integers little-endian):
//   magic "BYOV" | version u32 | per tensor:
//     name_len u64 | name bytes (UTF-8) | rank u64 | dims u64[rank] |
//     payload f64[prod(dims)] (raw IEEE-754 bits)
// Tensors repeat until EOF. Round-trips are bit-exact.
class TensorStore {
 public:
  void put(std::string name, Tensor t);
  bool contains(std::string_view name) const;
  const Tensor* find(std::string_view name) const;
  const Tensor& get(std::string_view name) const;  // throws IoError when missing
  double get_scalar(std::string_view name) const;
  void put_scalar(std::string name, double v) { put(std::move(name), Tensor::scalar(v)); }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

void save_store(const TensorStore& store, const std::string& path);
TensorStore load_store(const std::string& path);

}  // namespace byov
