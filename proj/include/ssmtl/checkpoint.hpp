#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmtl/tensor.hpp"

namespace ssmtl {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Named tensors plus string attributes.
//
// File layout (little-endian):
//   "SSMTLCK1"
//   u32 attribute count, then per attribute: u32 len, key bytes, u32 len, value bytes
//   u32 tensor count, then per tensor: u32 len, name bytes, u32 rank,
//     rank x u64 extents, product(extents) x f64 row-major values
class ParameterStore {
 public:
  void put(const std::string& name, const Tensor& t);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.contains(name); }

  void set_attr(const std::string& key, std::string value);
  const std::string& attr(const std::string& key) const;
  bool has_attr(const std::string& key) const { return attrs_.contains(key); }

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  const std::map<std::string, std::string>& attrs() const { return attrs_; }

  void save(const std::filesystem::path& path) const;
  static ParameterStore load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> tensors_;
  std::map<std::string, std::string> attrs_;
};

// Exact value and shape equality of every tensor and attribute.
bool bitwise_equal(const ParameterStore& a, const ParameterStore& b);

}  // namespace ssmtl
