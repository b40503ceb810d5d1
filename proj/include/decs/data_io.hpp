#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "decs/matrix.hpp"

namespace decs {

/// Malformed or unreadable input file.
class DataFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;

  std::size_t pixels() const noexcept { return height * width * channels; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

struct Dataset {
  Matrix features;  ///< n x D
  std::optional<ImageShape> image_shape;
  std::optional<std::vector<int>> truth;
  std::string name;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
  /// Throws DimensionError if the shape metadata or label count disagree with features.
  void validate() const;
};

/// Big-endian IDX: images with magic 0x00000803 (n, H, W), labels with
/// 0x00000801 (n). Pixels are scaled to byte / 255.
Dataset load_idx(const std::filesystem::path& images,
                 const std::optional<std::filesystem::path>& labels = std::nullopt);

/// Stacks datasets row-wise (e.g. a train and a test split). All parts must
/// agree on width, image shape and on whether labels are present.
Dataset concatenate(const std::vector<Dataset>& parts, std::string name = {});

/// Rows are samples; with `has_label_column` the last column holds integer
/// labels. Features are min-max scaled per column to [0, 1] unless
/// `normalize` is false; constant columns become 0.
Dataset load_csv(const std::filesystem::path& path, bool has_label_column, bool normalize = true);

/// Writes features (shortest round-trip decimal form) and, if present, labels
/// as the last column.
void write_csv(const std::filesystem::path& path, const Dataset& data);

/// Per-column min-max scaling to [0, 1]; constant columns become 0.
void min_max_normalize(Matrix& x);

struct BlobSpec {
  std::size_t k = 4;
  std::size_t per_cluster = 500;
  std::size_t dim = 16;
  double center_low = -5.0;
  double center_high = 5.0;
  double sigma = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// k isotropic Gaussian clusters, rows grouped by cluster, truth attached.
/// Values are left unscaled. `centers`, when given, receives the k x dim
/// generating centers.
Dataset gen_blobs(const BlobSpec& spec, Matrix* centers = nullptr);

}  // namespace decs
