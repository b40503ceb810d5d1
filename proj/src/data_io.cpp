#include "decs/data_io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <string_view>

namespace decs {

void Dataset::validate() const {
  if (image_shape && image_shape->pixels() != dim()) {
    throw DimensionError("dataset " + name + ": image shape has " +
                         std::to_string(image_shape->pixels()) + " pixels, features have " +
                         std::to_string(dim()) + " columns");
  }
  if (truth && truth->size() != size()) {
    throw DimensionError("dataset " + name + ": " + std::to_string(truth->size()) +
                         " labels for " + std::to_string(size()) + " samples");
  }
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataFormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t big_endian_u32(const std::vector<unsigned char>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void require_payload(const std::vector<unsigned char>& bytes, std::size_t header,
                     std::size_t payload, const std::filesystem::path& path) {
  if (bytes.size() < header + payload) {
    throw DataFormatError(path.string() + ": truncated, expected " +
                          std::to_string(header + payload) + " bytes, found " +
                          std::to_string(bytes.size()));
  }
  if (bytes.size() > header + payload) {
    throw DataFormatError(path.string() + ": " + std::to_string(bytes.size() - header - payload) +
                          " trailing bytes");
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string cell_error(const std::filesystem::path& path, std::size_t line, std::size_t col,
                       std::string_view cell, const char* expected) {
  return path.string() + ":" + std::to_string(line) + ": column " + std::to_string(col + 1) +
         ": '" + std::string(cell) + "' is not " + expected;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images,
                 const std::optional<std::filesystem::path>& labels) {
  const auto img = read_file(images);
  if (img.size() < 16) throw DataFormatError(images.string() + ": truncated IDX header");
  const std::uint32_t magic = big_endian_u32(img, 0);
  if (magic != 0x00000803) {
    throw DataFormatError(images.string() + ": bad image magic " + std::to_string(magic));
  }
  const std::size_t n = big_endian_u32(img, 4);
  const std::size_t h = big_endian_u32(img, 8);
  const std::size_t w = big_endian_u32(img, 12);
  require_payload(img, 16, n * h * w, images);

  Dataset data;
  data.name = images.filename().string();
  data.image_shape = ImageShape{h, w, 1};
  data.features = Matrix(n, h * w);
  for (std::size_t e = 0; e < n * h * w; ++e) data.features.flat()[e] = img[16 + e] / 255.0;

  if (labels) {
    const auto lab = read_file(*labels);
    if (lab.size() < 8) throw DataFormatError(labels->string() + ": truncated IDX header");
    const std::uint32_t lmagic = big_endian_u32(lab, 0);
    if (lmagic != 0x00000801) {
      throw DataFormatError(labels->string() + ": bad label magic " + std::to_string(lmagic));
    }
    const std::size_t ln = big_endian_u32(lab, 4);
    require_payload(lab, 8, ln, *labels);
    if (ln != n) {
      throw DataFormatError(labels->string() + ": " + std::to_string(ln) + " labels for " +
                            std::to_string(n) + " images");
    }
    data.truth = std::vector<int>(lab.begin() + 8, lab.end());
  }
  return data;
}

Dataset concatenate(const std::vector<Dataset>& parts, std::string name) {
  if (parts.empty()) throw std::invalid_argument("concatenate: no datasets");
  const auto& first = parts.front();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.dim() != first.dim() || p.image_shape != first.image_shape ||
        p.truth.has_value() != first.truth.has_value()) {
      throw DimensionError("concatenate: dataset " + p.name + " is incompatible with " + first.name);
    }
    rows += p.size();
  }
  Dataset out;
  out.name = name.empty() ? first.name : std::move(name);
  out.image_shape = first.image_shape;
  std::vector<double> values;
  values.reserve(rows * first.dim());
  if (first.truth) out.truth.emplace();
  for (const auto& p : parts) {
    values.insert(values.end(), p.features.values().begin(), p.features.values().end());
    if (p.truth) out.truth->insert(out.truth->end(), p.truth->begin(), p.truth->end());
  }
  out.features = Matrix(rows, first.dim(), std::move(values));
  return out;
}

void min_max_normalize(Matrix& x) {
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      lo = std::min(lo, x(i, c));
      hi = std::max(hi, x(i, c));
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < x.rows(); ++i) x(i, c) = range > 0.0 ? (x(i, c) - lo) / range : 0.0;
  }
}

Dataset load_csv(const std::filesystem::path& path, bool has_label_column, bool normalize) {
  std::ifstream is(path);
  if (!is) throw DataFormatError("cannot open " + path.string());
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t width = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = text.find(',', start);
      cells.push_back(trim(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (rows == 0) {
      width = cells.size();
      if (has_label_column && width < 2) {
        throw DataFormatError(path.string() + ": need at least one feature column besides the label");
      }
    } else if (cells.size() != width) {
      throw DataFormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(width) + " columns, found " + std::to_string(cells.size()));
    }
    const std::size_t features = has_label_column ? width - 1 : width;
    for (std::size_t c = 0; c < features; ++c) {
      const auto cell = cells[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v)) {
        throw DataFormatError(cell_error(path, line_no, c, cell, "a finite number"));
      }
      values.push_back(v);
    }
    if (has_label_column) {
      const auto cell = cells.back();
      int label = 0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
        throw DataFormatError(cell_error(path, line_no, width - 1, cell, "an integer label"));
      }
      labels.push_back(label);
    }
    ++rows;
  }
  if (rows == 0) throw DataFormatError(path.string() + ": no data rows");

  Dataset data;
  data.name = path.filename().string();
  const std::size_t features = has_label_column ? width - 1 : width;
  data.features = Matrix(rows, features, std::move(values));
  if (normalize) min_max_normalize(data.features);
  if (has_label_column) data.truth = std::move(labels);
  return data;
}

void write_csv(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataFormatError("cannot open " + path.string() + " for writing");
  std::array<char, 64> buf{};
  std::string line;
  for (std::size_t i = 0; i < data.size(); ++i) {
    line.clear();
    for (std::size_t c = 0; c < data.dim(); ++c) {
      if (c > 0) line += ',';
      const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), data.features(i, c));
      line.append(buf.data(), res.ptr);
    }
    if (data.truth) {
      line += ',';
      line += std::to_string((*data.truth)[i]);
    }
    line += '\n';
    os << line;
  }
  if (!os) throw DataFormatError("write to " + path.string() + " failed");
}

void BlobSpec::validate() const {
  if (k == 0 || per_cluster == 0 || dim == 0) throw std::invalid_argument("BlobSpec: counts must be positive");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("BlobSpec: sigma must be >= 0");
  if (!(center_low <= center_high)) throw std::invalid_argument("BlobSpec: empty center box");
}

Dataset gen_blobs(const BlobSpec& spec, Matrix* centers) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> box(spec.center_low, spec.center_high);
  Matrix mu(spec.k, spec.dim);
  for (auto& v : mu.flat()) v = box(rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset data;
  data.name = "blobs";
  data.features = Matrix(spec.k * spec.per_cluster, spec.dim);
  data.truth.emplace();
  data.truth->reserve(data.features.rows());
  for (std::size_t j = 0; j < spec.k; ++j) {
    for (std::size_t s = 0; s < spec.per_cluster; ++s) {
      auto row = data.features.row(j * spec.per_cluster + s);
      for (std::size_t c = 0; c < spec.dim; ++c) row[c] = mu(j, c) + spec.sigma * noise(rng);
      data.truth->push_back(static_cast<int>(j));
    }
  }
  if (centers) *centers = std::move(mu);
  return data;
}

}  // namespace decs
