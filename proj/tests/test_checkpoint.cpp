#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "decs/checkpoint.hpp"

using namespace decs;

namespace {

Checkpoint sample_checkpoint(bool with_centroids) {
  const std::size_t hidden[] = {5, 3};
  const auto ae = make_autoencoder(6, hidden, 2, 17);
  Checkpoint ckpt{ae.encoder, ae.decoder, std::nullopt};
  if (with_centroids) ckpt.centroids = Matrix(3, 2, std::vector<double>{1, 2, 3, 4, 5, -0.0});
  return ckpt;
}

std::string serialize(const std::vector<NamedArray>& arrays) {
  std::ostringstream os(std::ios::binary);
  write_arrays(os, arrays);
  return os.str();
}

}  // namespace

TEST_CASE("header layout is little-endian magic, version, count") {
  const std::string bytes = serialize({{"x", {2}, {1.5, -2.0}}});
  REQUIRE(bytes.size() == 4 + 4 + 8 + 8 + 1 + 8 + 8 + 16);
  CHECK(bytes.substr(0, 4) == "DECS");
  CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);
  CHECK(bytes[5] == 0);
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);  // one array
  CHECK(static_cast<unsigned char>(bytes[16]) == 1);  // name length
  CHECK(bytes[24] == 'x');
  double first = 0.0;
  std::memcpy(&first, bytes.data() + bytes.size() - 16, 8);
  CHECK(first == 1.5);
}

TEST_CASE("arrays round-trip") {
  const std::vector<NamedArray> arrays = {
      {"scalar", {}, {3.25}}, {"m", {2, 3}, {1, 2, 3, 4, 5, 6}}, {"empty", {0}, {}}};
  std::istringstream is(serialize(arrays), std::ios::binary);
  CHECK(read_arrays(is) == arrays);
}

TEST_CASE("model round-trips through a file with and without centroids") {
  const auto dir = std::filesystem::temp_directory_path();
  for (const bool centroids : {false, true}) {
    const auto ckpt = sample_checkpoint(centroids);
    const auto path = dir / ("decs_ckpt_test_" + std::to_string(centroids) + ".bin");
    save_checkpoint(path, ckpt);
    const auto back = load_checkpoint(path);
    std::filesystem::remove(path);
    CHECK(back.encoder == ckpt.encoder);
    CHECK(back.decoder == ckpt.decoder);
    CHECK(back.centroids == ckpt.centroids);
    CHECK(back.encoder.layers.back().activation == Activation::identity);
    CHECK(back.encoder.layers.front().activation == Activation::relu);
  }
}

TEST_CASE("serialization is byte-stable") {
  CHECK(serialize(to_arrays(sample_checkpoint(true))) == serialize(to_arrays(sample_checkpoint(true))));
}

TEST_CASE("unknown version, bad magic and truncation are rejected") {
  std::string bytes = serialize(to_arrays(sample_checkpoint(true)));
  {
    std::string v2 = bytes;
    v2[4] = 2;
    std::istringstream is(v2, std::ios::binary);
    CHECK_THROWS_WITH_AS(read_arrays(is), "unsupported checkpoint version 2", CheckpointError);
  }
  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream is(bad, std::ios::binary);
    CHECK_THROWS_AS(read_arrays(is), CheckpointError);
  }
  for (const std::size_t cut : {std::size_t{2}, std::size_t{10}, std::size_t{30}, bytes.size() - 1}) {
    std::istringstream is(bytes.substr(0, cut), std::ios::binary);
    CHECK_THROWS_AS(read_arrays(is), CheckpointError);
  }
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/ckpt.bin"), CheckpointError);
}

TEST_CASE("structural problems are reported") {
  auto arrays = to_arrays(sample_checkpoint(false));
  auto missing_bias = arrays;
  missing_bias.erase(missing_bias.begin() + 1);
  CHECK_THROWS_AS(from_arrays(missing_bias), CheckpointError);
  auto dup = arrays;
  dup.push_back(arrays.front());
  CHECK_THROWS_AS(from_arrays(dup), CheckpointError);
  auto broken = arrays;
  broken[2] = {"encoder.1.weight", {3, 4}, std::vector<double>(12, 0.0)};
  CHECK_THROWS_AS(from_arrays(broken), CheckpointError);
  CHECK_THROWS_AS(from_arrays({}), CheckpointError);
  std::ostringstream sink;
  CHECK_THROWS_AS(write_arrays(sink, {{"bad", {2, 2}, {1.0}}}), CheckpointError);
}
