#pragma once

// "DMO1" checkpoint container: a flat list of named tensors and text blobs.
//
// Layout (little endian):
//   magic "DMO1" | u32 version | u64 record_count
//   record: u8 kind | u32 name_len | name | payload
//     kind 0 (tensor): u32 rank | u64 dims[rank] | f64 data[prod(dims)]
//     kind 1 (text):   u64 len | bytes

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmo/tensor.hpp"

namespace dmo {

class Archive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, Tensor t);
  void put_text(const std::string& name, std::string text);
  void put_scalar(const std::string& name, double v) { put(name, Tensor::scalar(v)); }
  void put_u64(const std::string& name, std::uint64_t v);
  void put_tensors(const std::string& prefix, const std::vector<Tensor>& ts);

  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  const std::string& get_text(const std::string& name) const;
  double get_scalar(const std::string& name) const { return get(name).item(); }
  std::uint64_t get_u64(const std::string& name) const;
  std::vector<Tensor> get_tensors(const std::string& prefix) const;

  void write(const std::string& path) const;
  static Archive read(const std::string& path);

  std::string serialize() const;
  static Archive deserialize(const std::string& bytes);

 private:
  std::map<std::string, Tensor> tensors_;
  std::map<std::string, std::string> texts_;
};

}  // namespace dmo
