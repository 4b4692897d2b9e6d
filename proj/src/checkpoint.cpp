#include "ssmtl/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace ssmtl {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'M', 'T', 'L', 'C', 'K', '1'};

template <class T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void write_string(std::ofstream& out, const std::string& s) {
  write_pod(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("checkpoint truncated while reading " + what);
  return v;
}

std::string read_string(std::ifstream& in, const std::string& what) {
  const auto n = read_pod<std::uint32_t>(in, what);
  if (n > (1u << 20)) throw CheckpointError("checkpoint corrupt: oversized " + what);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw CheckpointError("checkpoint truncated while reading " + what);
  return s;
}

}  // namespace

void ParameterStore::put(const std::string& name, const Tensor& t) {
  tensors_.insert_or_assign(name, t.detach());
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw CheckpointError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

void ParameterStore::set_attr(const std::string& key, std::string value) {
  attrs_.insert_or_assign(key, std::move(value));
}

const std::string& ParameterStore::attr(const std::string& key) const {
  auto it = attrs_.find(key);
  if (it == attrs_.end()) throw CheckpointError("checkpoint has no attribute '" + key + "'");
  return it->second;
}

void ParameterStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, static_cast<std::uint32_t>(attrs_.size()));
  for (const auto& [k, v] : attrs_) {
    write_string(out, k);
    write_string(out, v);
  }
  write_pod(out, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    write_string(out, name);
    write_pod(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) write_pod(out, static_cast<std::uint64_t>(d));
    const auto v = t.values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

ParameterStore ParameterStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  ParameterStore store;
  const auto n_attr = read_pod<std::uint32_t>(in, "attribute count");
  for (std::uint32_t i = 0; i < n_attr; ++i) {
    auto k = read_string(in, "attribute key");
    store.attrs_[k] = read_string(in, "attribute value");
  }
  const auto n_tensors = read_pod<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = read_string(in, "tensor name");
    const auto rank = read_pod<std::uint32_t>(in, "rank of " + name);
    if (rank > 8) throw CheckpointError("checkpoint corrupt: rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(in, "shape"));
    const std::size_t n = shape_numel(shape);
    if (n > (std::size_t{1} << 28)) throw CheckpointError("checkpoint corrupt: tensor too large");
    std::vector<double> values(n);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint truncated in tensor " + name);
    store.tensors_.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return store;
}

bool bitwise_equal(const ParameterStore& a, const ParameterStore& b) {
  if (a.attrs() != b.attrs() || a.tensors().size() != b.tensors().size()) return false;
  for (const auto& [name, t] : a.tensors()) {
    if (!b.contains(name)) return false;
    const auto& u = b.get(name);
    if (t.shape() != u.shape()) return false;
    const auto tv = t.values();
    const auto uv = u.values();
    if (std::memcmp(tv.data(), uv.data(), tv.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace ssmtl
