#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "irbnn/data.hpp"
#include "irbnn/errors.hpp"

using namespace irbnn;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / "irbnn-data-tests" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

// One-sample dataset with hand-set pixels, for checking normalization.
Dataset tiny_mnist_like(std::uint8_t px0, std::uint8_t px1) {
  Dataset ds;
  ds.name = "mnist";
  ds.count = 1;
  ds.channels = 1;
  ds.height = 1;
  ds.width = 2;
  ds.classes = 10;
  ds.images = {px0, px1};
  ds.labels = {3};
  ds.norm_mean = {0.1307};
  ds.norm_std = {0.3081};
  return ds;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("synthetic dataset roundtrips through the idx loader") {
  const std::string dir = temp_dir("roundtrip");
  write_synth_dataset(dir, 48, 12, 5);

  Dataset train = load_mnist_split(dir, true);
  CHECK(train.count == 48);
  CHECK(train.channels == 1);
  CHECK(train.height == 28);
  CHECK(train.width == 28);
  CHECK(train.images.size() == 48u * 784);
  for (std::uint8_t l : train.labels) CHECK(l <= 9);

  Dataset test = load_mnist_split(dir, false);
  CHECK(test.count == 12);

  // The sniffing loader finds the same files and tags the synth marker.
  Dataset sniffed = load_auto(dir, true);
  CHECK(sniffed.name == "synth");
  CHECK(sniffed.count == 48);
  CHECK(sniffed.images == train.images);
}

TEST_CASE("synthesis is a pure function of the seed") {
  const std::string a = temp_dir("seed-a");
  const std::string b = temp_dir("seed-b");
  const std::string c = temp_dir("seed-c");
  write_synth_dataset(a, 32, 8, 7);
  write_synth_dataset(b, 32, 8, 7);
  write_synth_dataset(c, 32, 8, 8);
  CHECK(slurp(a + "/train-images-idx3-ubyte") == slurp(b + "/train-images-idx3-ubyte"));
  CHECK(slurp(a + "/t10k-images-idx3-ubyte") == slurp(b + "/t10k-images-idx3-ubyte"));
  CHECK(slurp(a + "/train-labels-idx1-ubyte") == slurp(b + "/train-labels-idx1-ubyte"));
  CHECK(slurp(a + "/train-images-idx3-ubyte") != slurp(c + "/train-images-idx3-ubyte"));
}

TEST_CASE("bad magic reports offset plus expected and found words") {
  const std::string dir = temp_dir("magic");
  write_synth_dataset(dir, 4, 2, 1);
  const std::string path = dir + "/train-images-idx3-ubyte";
  auto bytes = slurp(path);
  bytes[2] = 0x99;
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  try {
    load_mnist_split(dir, true);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("offset 0") != std::string::npos);
    CHECK(msg.find("expected 0x00000803") != std::string::npos);
    CHECK(msg.find("found 0x00009903") != std::string::npos);
  }
}

TEST_CASE("truncated image file is a format error") {
  const std::string dir = temp_dir("trunc");
  write_synth_dataset(dir, 4, 2, 1);
  const std::string path = dir + "/train-images-idx3-ubyte";
  auto bytes = slurp(path);
  bytes.resize(bytes.size() - 100);
  std::ofstream(path, std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(load_mnist_split(dir, true), FormatError);
  CHECK_THROWS_WITH_AS(load_auto(temp_dir("empty"), true),
                       doctest::Contains("no MNIST IDX or CIFAR-10"), FormatError);
}

TEST_CASE("count mismatch between images and labels is a format error") {
  const std::string dir = temp_dir("mismatch");
  write_synth_dataset(dir, 4, 2, 1);
  // Rewrite the label file claiming 3 labels.
  const std::string path = dir + "/train-labels-idx1-ubyte";
  auto bytes = slurp(path);
  bytes[7] = 3;
  bytes.resize(8 + 3);
  std::ofstream(path, std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_WITH_AS(load_mnist_split(dir, true),
                       doctest::Contains("image count 4 != label count 3"), FormatError);
}

TEST_CASE("batch normalization at the pixel extremes") {
  Dataset ds = tiny_mnist_like(255, 0);
  Tensor batch = make_batch(ds, {0});
  REQUIRE(batch.rank() == 4);
  CHECK(batch[0] == doctest::Approx(2.82148653034729).epsilon(1e-14));
  CHECK(batch[1] == doctest::Approx(-0.424212917883804).epsilon(1e-14));
}

TEST_CASE("batch assembly validates indices and labels") {
  Dataset ds = tiny_mnist_like(10, 20);
  CHECK_THROWS_AS(make_batch(ds, {}), DomainError);
  CHECK_THROWS_AS(make_batch(ds, {1}), DomainError);
  CHECK_THROWS_AS(make_batch(ds, {-1}), DomainError);
  CHECK(batch_labels(ds, {0}) == std::vector<int>{3});
  CHECK_THROWS_AS(batch_labels(ds, {5}), DomainError);
  ds.labels[0] = 11;
  CHECK_THROWS_AS(batch_labels(ds, {0}), DomainError);
}

TEST_CASE("augmentation needs an rng and is deterministic given one") {
  const std::string dir = temp_dir("augment");
  write_synth_dataset(dir, 8, 2, 3);
  Dataset ds = load_mnist_split(dir, true);
  const std::vector<std::int64_t> idx = {0, 1, 2, 3};

  CHECK_THROWS_AS(make_batch(ds, idx, true, nullptr), DomainError);

  Rng r1(99), r2(99), r3(100);
  Tensor a = make_batch(ds, idx, true, &r1);
  Tensor b = make_batch(ds, idx, true, &r2);
  Tensor c = make_batch(ds, idx, true, &r3);
  REQUIRE(a.size() == b.size());
  bool all_equal_ab = true, all_equal_ac = true;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    all_equal_ab = all_equal_ab && a[i] == b[i];
    all_equal_ac = all_equal_ac && a[i] == c[i];
  }
  CHECK(all_equal_ab);
  CHECK_FALSE(all_equal_ac);

  // Plain assembly is unaffected by the rng argument.
  Tensor p = make_batch(ds, idx);
  Tensor q = make_batch(ds, idx, false, &r1);
  bool plain_equal = true;
  for (std::int64_t i = 0; i < p.size(); ++i) plain_equal = plain_equal && p[i] == q[i];
  CHECK(plain_equal);
}

TEST_CASE("glyphs for distinct digits differ") {
  Rng rng(21);
  std::uint8_t g1[784], g7[784];
  render_glyph(1, rng, g1);
  Rng rng2(21);
  render_glyph(7, rng2, g7);
  int diff = 0;
  for (int i = 0; i < 784; ++i) diff += (g1[i] != g7[i]);
  CHECK(diff > 50);
  CHECK_THROWS_AS(render_glyph(10, rng, g1), DomainError);
}

TEST_CASE("cifar loader parses records and checks labels") {
  const std::string dir = temp_dir("cifar");
  // Two records: labels 3 and 9, constant pixel planes.
  std::vector<std::uint8_t> rec(2 * 3073, 0);
  rec[0] = 3;
  for (int i = 1; i <= 3072; ++i) rec[static_cast<std::size_t>(i)] = 128;
  rec[3073] = 9;
  std::ofstream(dir + "/test_batch.bin", std::ios::binary)
      .write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));

  Dataset ds = load_cifar10(dir, false);
  CHECK(ds.count == 2);
  CHECK(ds.channels == 3);
  CHECK(ds.labels[0] == 3);
  CHECK(ds.labels[1] == 9);
  CHECK(ds.images[0] == 128);

  // Truncated record.
  std::ofstream(dir + "/test_batch.bin", std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(rec.data()), 3072);
  CHECK_THROWS_WITH_AS(load_cifar10(dir, false), doctest::Contains("3073"), FormatError);

  // Label out of range.
  rec[0] = 10;
  std::ofstream(dir + "/test_batch.bin", std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(rec.data()), 3073);
  CHECK_THROWS_WITH_AS(load_cifar10(dir, false), doctest::Contains("label 10 out of range"),
                       FormatError);
}

}  // TEST_SUITE
