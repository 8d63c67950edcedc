#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <vector>

#include "noisebench/dataset.hpp"
#include "test_util.hpp"

using namespace noisebench;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("nbtest-" + std::to_string(::getpid()) + "-" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> idx_images_header(unsigned n, unsigned h, unsigned w) {
  auto be = [](unsigned v) {
    return std::vector<unsigned char>{static_cast<unsigned char>(v >> 24),
                                      static_cast<unsigned char>(v >> 16),
                                      static_cast<unsigned char>(v >> 8),
                                      static_cast<unsigned char>(v)};
  };
  std::vector<unsigned char> out = be(0x803);
  auto append = [&](std::vector<unsigned char> v) { out.insert(out.end(), v.begin(), v.end()); };
  append(be(n));
  append(be(h));
  append(be(w));
  return out;
}

std::vector<unsigned char> idx_labels_header(unsigned n, unsigned magic = 0x801) {
  std::vector<unsigned char> out{static_cast<unsigned char>(magic >> 24),
                                 static_cast<unsigned char>(magic >> 16),
                                 static_cast<unsigned char>(magic >> 8),
                                 static_cast<unsigned char>(magic)};
  out.push_back(static_cast<unsigned char>(n >> 24));
  out.push_back(static_cast<unsigned char>(n >> 16));
  out.push_back(static_cast<unsigned char>(n >> 8));
  out.push_back(static_cast<unsigned char>(n));
  return out;
}

}  // namespace

TEST_CASE("hand-built 2-image IDX pair maps bytes 0 and 255 to 0.0 and 1.0") {
  TempDir dir;
  auto img = idx_images_header(2, 2, 2);
  img.insert(img.end(), {0, 255, 128, 0, 255, 255, 0, 0});
  write_bytes(dir.file("img"), img);
  auto lab = idx_labels_header(2);
  lab.insert(lab.end(), {3, 9});
  write_bytes(dir.file("lab"), lab);

  Dataset ds = load_idx(dir.file("img"), dir.file("lab"));
  CHECK(ds.size() == 2);
  CHECK(ds.images.shape() == Shape{2, 1, 2, 2});
  CHECK(ds.images[0] == doctest::Approx(0.0));
  CHECK(ds.images[1] == doctest::Approx(1.0));
  CHECK(ds.images[2] == doctest::Approx(128.0 / 255.0));
  CHECK(ds.labels[0] == 3);
  CHECK(ds.labels[1] == 9);
  ds.validate();
}

TEST_CASE("labels file with image magic is rejected") {
  TempDir dir;
  auto img = idx_images_header(1, 1, 1);
  img.push_back(7);
  write_bytes(dir.file("img"), img);
  auto lab = idx_labels_header(1, 0x803);  // wrong magic
  lab.push_back(1);
  write_bytes(dir.file("lab"), lab);
  CHECK_THROWS_AS(load_idx(dir.file("img"), dir.file("lab")), FormatError);
}

TEST_CASE("IDX count mismatch is rejected") {
  TempDir dir;
  auto img = idx_images_header(2, 1, 1);
  img.insert(img.end(), {1, 2});
  write_bytes(dir.file("img"), img);
  auto lab = idx_labels_header(3);
  lab.insert(lab.end(), {0, 1, 2});
  write_bytes(dir.file("lab"), lab);
  CHECK_THROWS_AS(load_idx(dir.file("img"), dir.file("lab")), FormatError);
}

TEST_CASE("truncated IDX payload is an IoError") {
  TempDir dir;
  auto img = idx_images_header(2, 2, 2);
  img.insert(img.end(), {1, 2, 3});  // 5 bytes short
  write_bytes(dir.file("img"), img);
  auto lab = idx_labels_header(2);
  lab.insert(lab.end(), {0, 1});
  write_bytes(dir.file("lab"), lab);
  CHECK_THROWS_AS(load_idx(dir.file("img"), dir.file("lab")), IoError);
}

TEST_CASE("IDX round trip is bit-exact") {
  TempDir dir;
  Dataset ds = synth_two_template(8, 8, 5, 0.2, 42);
  // Quantize to the byte grid first so the round trip is exact by design.
  for (std::size_t i = 0; i < ds.images.numel(); ++i) {
    ds.images[i] = std::round(ds.images[i] * 255.0f) / 255.0f;
  }
  save_idx(ds, dir.file("img"), dir.file("lab"));
  Dataset back = load_idx(dir.file("img"), dir.file("lab"), ds.num_classes);
  CHECK(testutil::bit_equal(ds.images, back.images));
  CHECK(ds.labels == back.labels);

  // Writing the reloaded dataset again gives byte-identical files.
  save_idx(back, dir.file("img2"), dir.file("lab2"));
  std::ifstream a(dir.file("img"), std::ios::binary), b(dir.file("img2"), std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("single hand-built CIFAR record") {
  TempDir dir;
  std::vector<unsigned char> rec(3073, 0);
  rec[0] = 7;
  rec[1] = 255;     // first red pixel
  rec[1 + 1024] = 128;  // first green pixel
  write_bytes(dir.file("batch"), rec);
  Dataset ds = load_cifar10({dir.file("batch")});
  CHECK(ds.size() == 1);
  CHECK(ds.labels[0] == 7);
  CHECK(ds.images.shape() == Shape{1, 3, 32, 32});
  CHECK(ds.images.at4(0, 0, 0, 0) == doctest::Approx(1.0));
  CHECK(ds.images.at4(0, 1, 0, 0) == doctest::Approx(128.0 / 255.0));
}

TEST_CASE("misaligned CIFAR file length is rejected") {
  TempDir dir;
  write_bytes(dir.file("bad"), std::vector<unsigned char>(3074, 0));
  CHECK_THROWS_AS(load_cifar10({dir.file("bad")}), FormatError);
}

TEST_CASE("CIFAR label byte above 9 is rejected") {
  TempDir dir;
  std::vector<unsigned char> rec(3073, 0);
  rec[0] = 10;
  write_bytes(dir.file("bad"), rec);
  CHECK_THROWS_AS(load_cifar10({dir.file("bad")}), FormatError);
}

TEST_CASE("multiple CIFAR batches concatenate") {
  TempDir dir;
  std::vector<unsigned char> two(2 * 3073, 0);
  two[0] = 1;
  two[3073] = 2;
  std::vector<unsigned char> one(3073, 0);
  one[0] = 3;
  write_bytes(dir.file("b1"), two);
  write_bytes(dir.file("b2"), one);
  Dataset ds = load_cifar10({dir.file("b1"), dir.file("b2")});
  CHECK(ds.size() == 3);
  CHECK(ds.labels == std::vector<int>{1, 2, 3});
}

TEST_CASE("synth_two_template with zero noise equals the bar templates") {
  Dataset ds = synth_two_template(8, 10, 3, 0.0, 1);
  CHECK(ds.size() == 6);
  CHECK(ds.labels == std::vector<int>{0, 0, 0, 1, 1, 1});
  // All class-0 images identical; vertical bar at column w/2.
  for (std::size_t i = 1; i < 3; ++i) {
    CHECK(testutil::bit_equal(ds.image(0), ds.image(i)));
  }
  Tensor t = ds.image(0);
  CHECK(t.at3(0, 0, 5) == doctest::Approx(1.0));
  CHECK(t.at3(0, 0, 0) == doctest::Approx(0.0));
  // Horizontal bar for class 1.
  Tensor h = ds.image(3);
  CHECK(h.at3(0, 4, 0) == doctest::Approx(1.0));
}

TEST_CASE("same seed gives byte-identical synthetic datasets") {
  Dataset a = synth_two_template(8, 8, 4, 0.3, 77);
  Dataset b = synth_two_template(8, 8, 4, 0.3, 77);
  Dataset c = synth_two_template(8, 8, 4, 0.3, 78);
  CHECK(testutil::bit_equal(a.images, b.images));
  CHECK(!testutil::bit_equal(a.images, c.images));

  Dataset g1 = synth_glyphs(4, 16, 16, 10, 0.1, 5);
  Dataset g2 = synth_glyphs(4, 16, 16, 10, 0.1, 5);
  CHECK(testutil::bit_equal(g1.images, g2.images));
  g1.validate();
}

TEST_CASE("class mean images") {
  Dataset ds = synth_two_template(8, 8, 50, 0.0, 3);
  Tensor means = class_mean_images(ds);
  CHECK(means.shape() == Shape{2, 1, 8, 8});
  CHECK(means.at4(0, 0, 0, 4) == doctest::Approx(1.0));
  CHECK(means.at4(1, 0, 4, 0) == doctest::Approx(1.0));
}
