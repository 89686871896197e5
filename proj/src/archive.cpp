#include "dmo/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dmo/errors.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace dmo {

namespace {

template <class T>
void put_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T raw() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string index_name(const std::string& prefix, std::size_t i) { return prefix + "." + std::to_string(i); }

}  // namespace

void Archive::put(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }

void Archive::put_text(const std::string& name, std::string text) { texts_[name] = std::move(text); }

void Archive::put_u64(const std::string& name, std::uint64_t v) {
  // stored as two 32-bit halves so values above 2^53 survive
  put(name, Tensor::vector({static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffULL)}));
}

void Archive::put_tensors(const std::string& prefix, const std::vector<Tensor>& ts) {
  put_u64(prefix + ".count", ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) put(index_name(prefix, i), ts[i]);
}

bool Archive::has(const std::string& name) const { return tensors_.count(name) || texts_.count(name); }

const Tensor& Archive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
  return it->second;
}

const std::string& Archive::get_text(const std::string& name) const {
  auto it = texts_.find(name);
  if (it == texts_.end()) throw IoError("checkpoint is missing text '" + name + "'");
  return it->second;
}

std::uint64_t Archive::get_u64(const std::string& name) const {
  const Tensor& t = get(name);
  if (t.size() != 2) throw IoError("checkpoint field '" + name + "' is not a u64");
  return (static_cast<std::uint64_t>(t[0]) << 32) | static_cast<std::uint64_t>(t[1]);
}

std::vector<Tensor> Archive::get_tensors(const std::string& prefix) const {
  const std::uint64_t n = get_u64(prefix + ".count");
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(get(index_name(prefix, i)));
  return out;
}

std::string Archive::serialize() const {
  std::string out = "DMO1";
  put_raw<std::uint32_t>(out, kVersion);
  put_raw<std::uint64_t>(out, tensors_.size() + texts_.size());
  for (const auto& [name, t] : tensors_) {
    put_raw<std::uint8_t>(out, 0);
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_raw<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.ptr()), t.size() * sizeof(double));
  }
  for (const auto& [name, text] : texts_) {
    put_raw<std::uint8_t>(out, 1);
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_raw<std::uint64_t>(out, text.size());
    out += text;
  }
  return out;
}

Archive Archive::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(4) != "DMO1") throw IoError("not a DMO1 checkpoint");
  const auto version = r.raw<std::uint32_t>();
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.raw<std::uint64_t>();
  Archive a;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto kind = r.raw<std::uint8_t>();
    const auto name = r.str(r.raw<std::uint32_t>());
    if (kind == 0) {
      const auto rank = r.raw<std::uint32_t>();
      Shape shape(rank);
      for (auto& d : shape) d = r.raw<std::uint64_t>();
      std::vector<double> data(shape_size(shape));
      const std::string blob = r.str(data.size() * sizeof(double));
      std::memcpy(data.data(), blob.data(), blob.size());
      a.tensors_[name] = Tensor(std::move(shape), std::move(data));
    } else if (kind == 1) {
      a.texts_[name] = r.str(r.raw<std::uint64_t>());
    } else {
      throw IoError("corrupt checkpoint record kind");
    }
  }
  if (!r.done()) throw IoError("trailing bytes in checkpoint");
  return a;
}

void Archive::write(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + tmp + "' for writing");
    const std::string bytes = serialize();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into '" + path + "'");
}

Archive Archive::read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace dmo
