#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "decs/autoencoder.hpp"

// Binary checkpoint, little-endian throughout:
//   "DECS" | u32 version | u64 array count |
//   per array: u64 name length | name bytes | u64 ndim | u64 dims[ndim] | f64 data[prod(dims)]

namespace decs {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

void write_arrays(std::ostream& os, const std::vector<NamedArray>& arrays);
/// Throws CheckpointError on bad magic, unknown version or truncation.
std::vector<NamedArray> read_arrays(std::istream& is);

/// Encoder, decoder and optional centroids. Arrays are named
/// "encoder.<l>.weight", "encoder.<l>.bias", likewise for the decoder, and
/// "centroids". Hidden layers are relu, the last layer of each network identity.
struct Checkpoint {
  EncoderParams encoder;
  DecoderParams decoder;
  std::optional<Matrix> centroids;
};

std::vector<NamedArray> to_arrays(const Checkpoint& ckpt);
Checkpoint from_arrays(const std::vector<NamedArray>& arrays);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace decs
