#include "pat/snapshot.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>

#include "pat/errors.hpp"

namespace pat::nn {

Tensor flatten_params(const ParamSet& params) {
  std::vector<double> out;
  out.reserve(params.total_size());
  for (const auto& e : params) out.insert(out.end(), e.value.values().begin(), e.value.values().end());
  return Tensor::vector(std::move(out));
}

ParamSet unflatten_params(const ParamLayout& layout, const Tensor& flat) {
  const std::size_t need = layout_size(layout);
  if (flat.size() != need) {
    throw DimensionError("unflatten: expected " + std::to_string(need) + " values, got " +
                         std::to_string(flat.size()));
  }
  ParamSet out;
  std::size_t off = 0;
  for (const auto& [name, shape] : layout) {
    const std::size_t n = shape_size(shape);
    std::vector<double> vals(flat.data() + off, flat.data() + off + n);
    out.add(name, Tensor(shape, std::move(vals)));
    off += n;
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'P', 'A', 'T', 'P'};

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw DecodeError(std::string("snapshot truncated while reading ") + what);
    }
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_params(const ParamSet& params) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kSnapshotVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) put<std::uint64_t>(out, d);
    for (double v : e.value.values()) put<double>(out, v);
  }
  return out;
}

ParamSet decode_params(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::string magic = r.bytes(4, "magic");
  if (magic != std::string(kMagic, 4)) throw DecodeError("not a parameter snapshot (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kSnapshotVersion) {
    throw VersionError("snapshot version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kSnapshotVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>("entry count");
  ParamSet out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name = r.bytes(len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw DecodeError("implausible rank " + std::to_string(rank) + " for '" + name + "'");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.get<std::uint64_t>("dims"));
    const std::size_t n = shape_size(shape);
    r.need(n * sizeof(double), "values");
    std::vector<double> vals(n);
    for (auto& v : vals) v = r.get<double>("values");
    if (out.contains(name)) throw DecodeError("duplicate entry '" + name + "'");
    out.add(name, Tensor(shape, std::move(vals)));
  }
  if (!r.done()) {
    throw DecodeError(std::to_string(r.remaining()) + " trailing bytes after last entry");
  }
  return out;
}

void save_params(const ParamSet& params, const std::filesystem::path& path) {
  const auto bytes = encode_params(params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write snapshot '" + path.string() + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing snapshot '" + path.string() + "'");
}

ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read snapshot '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

}  // namespace pat::nn
