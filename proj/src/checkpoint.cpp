#include "decs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace decs {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'E', 'C', 'S'};
// Guards against absurd allocations from corrupt headers.
constexpr std::uint64_t kMaxNameLength = 1 << 16;
constexpr std::uint64_t kMaxDims = 8;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  return v;
}

NamedArray matrix_array(std::string name, const Matrix& m) {
  return {std::move(name), {m.rows(), m.cols()}, m.values()};
}

NamedArray vector_array(std::string name, const std::vector<double>& v) {
  return {std::move(name), {v.size()}, v};
}

void append_network(std::vector<NamedArray>& out, const std::string& prefix, const Network& net) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    out.push_back(matrix_array(base + ".weight", net.layers[l].weights));
    out.push_back(vector_array(base + ".bias", net.layers[l].bias));
  }
}

Matrix to_matrix(const NamedArray& a) {
  if (a.dims.size() != 2) throw CheckpointError("array " + a.name + " is not two-dimensional");
  return Matrix(a.dims[0], a.dims[1], a.data);
}

Network read_network(const std::map<std::string, const NamedArray*>& by_name,
                     const std::string& prefix) {
  Network net;
  for (std::size_t l = 0;; ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    const auto w = by_name.find(base + ".weight");
    if (w == by_name.end()) break;
    const auto b = by_name.find(base + ".bias");
    if (b == by_name.end()) throw CheckpointError("missing array " + base + ".bias");
    if (b->second->dims.size() != 1) throw CheckpointError("array " + base + ".bias is not a vector");
    net.layers.push_back({to_matrix(*w->second), b->second->data, Activation::relu});
  }
  if (net.layers.empty()) throw CheckpointError("checkpoint has no " + prefix + " layers");
  net.layers.back().activation = Activation::identity;
  try {
    net.validate();
  } catch (const DimensionError& e) {
    throw CheckpointError(prefix + ": " + e.what());
  }
  return net;
}

}  // namespace

void write_arrays(std::ostream& os, const std::vector<NamedArray>& arrays) {
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, arrays.size());
  for (const auto& a : arrays) {
    std::uint64_t count = 1;
    for (const auto d : a.dims) count *= d;
    if (count != a.data.size()) throw CheckpointError("array " + a.name + ": dims do not match data");
    put<std::uint64_t>(os, a.name.size());
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint64_t>(os, a.dims.size());
    for (const auto d : a.dims) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(a.data.data()),
             static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("checkpoint write failed");
}

std::vector<NamedArray> read_arrays(std::istream& is) {
  char magic[4];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError("not a DECS checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint64_t>(is, "array count");
  std::vector<NamedArray> arrays;
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedArray a;
    const auto len = get<std::uint64_t>(is, "name length");
    if (len > kMaxNameLength) throw CheckpointError("array name length out of range");
    a.name.resize(len);
    if (!is.read(a.name.data(), static_cast<std::streamsize>(len))) {
      throw CheckpointError("checkpoint truncated while reading array name");
    }
    const auto ndim = get<std::uint64_t>(is, "ndim");
    if (ndim > kMaxDims) throw CheckpointError("array " + a.name + ": too many dimensions");
    std::uint64_t total = 1;
    for (std::uint64_t d = 0; d < ndim; ++d) {
      a.dims.push_back(get<std::uint64_t>(is, "dims"));
      total *= a.dims.back();
      if (total > kMaxElements) throw CheckpointError("array " + a.name + ": size out of range");
    }
    a.data.resize(total);
    if (!is.read(reinterpret_cast<char*>(a.data.data()),
                 static_cast<std::streamsize>(total * sizeof(double)))) {
      throw CheckpointError("checkpoint truncated in array " + a.name);
    }
    arrays.push_back(std::move(a));
  }
  return arrays;
}

std::vector<NamedArray> to_arrays(const Checkpoint& ckpt) {
  std::vector<NamedArray> out;
  append_network(out, "encoder", ckpt.encoder);
  append_network(out, "decoder", ckpt.decoder);
  if (ckpt.centroids) out.push_back(matrix_array("centroids", *ckpt.centroids));
  return out;
}

Checkpoint from_arrays(const std::vector<NamedArray>& arrays) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) {
    if (!by_name.emplace(a.name, &a).second) throw CheckpointError("duplicate array " + a.name);
  }
  Checkpoint ckpt;
  static_cast<Network&>(ckpt.encoder) = read_network(by_name, "encoder");
  static_cast<Network&>(ckpt.decoder) = read_network(by_name, "decoder");
  if (const auto c = by_name.find("centroids"); c != by_name.end()) ckpt.centroids = to_matrix(*c->second);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_arrays(os, to_arrays(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return from_arrays(read_arrays(is));
}

}  // namespace decs
