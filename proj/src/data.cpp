#include "irbnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "irbnn/errors.hpp"

namespace irbnn {
namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff len = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  if (len > 0) f.read(reinterpret_cast<char*>(buf.data()), len);
  if (!f) throw IoError("short read on " + path);
  return buf;
}

std::uint32_t read_u32_be(const std::vector<std::uint8_t>& b, std::size_t off,
                          const std::string& path) {
  if (off + 4 > b.size()) {
    throw FormatError(path + ": truncated at offset " + std::to_string(off));
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void expect_magic(const std::vector<std::uint8_t>& b, std::uint32_t want,
                  const std::string& path) {
  const std::uint32_t got = read_u32_be(b, 0, path);
  if (got != want) {
    char msg[160];
    std::snprintf(msg, sizeof(msg), "%s: bad magic at offset 0: expected 0x%08x, found 0x%08x",
                  path.c_str(), want, got);
    throw FormatError(msg);
  }
}

// IDX image file: magic 0x00000803, count, rows, cols (all u32 BE), pixels.
void read_idx_images(const std::string& path, std::vector<std::uint8_t>& out,
                     std::uint32_t& count, std::uint32_t& rows, std::uint32_t& cols) {
  const auto b = read_file(path);
  expect_magic(b, 0x00000803u, path);
  count = read_u32_be(b, 4, path);
  rows = read_u32_be(b, 8, path);
  cols = read_u32_be(b, 12, path);
  const std::size_t want = 16 + std::size_t{count} * rows * cols;
  if (b.size() != want) {
    throw FormatError(path + ": expected " + std::to_string(want) + " bytes, found " +
                      std::to_string(b.size()));
  }
  out.assign(b.begin() + 16, b.end());
}

// IDX label file: magic 0x00000801, count (u32 BE), labels.
void read_idx_labels(const std::string& path, std::vector<std::uint8_t>& out,
                     std::uint32_t& count) {
  const auto b = read_file(path);
  expect_magic(b, 0x00000801u, path);
  count = read_u32_be(b, 4, path);
  const std::size_t want = 8 + std::size_t{count};
  if (b.size() != want) {
    throw FormatError(path + ": expected " + std::to_string(want) + " bytes, found " +
                      std::to_string(b.size()));
  }
  out.assign(b.begin() + 8, b.end());
}

void write_u32_be(std::ofstream& f, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  f.write(b, 4);
}

void write_idx_pair(const std::string& dir, const std::string& img_name,
                    const std::string& lbl_name, const std::vector<std::uint8_t>& images,
                    const std::vector<std::uint8_t>& labels) {
  std::ofstream fi(dir + "/" + img_name, std::ios::binary);
  if (!fi) throw IoError("cannot write " + dir + "/" + img_name);
  write_u32_be(fi, 0x00000803u);
  write_u32_be(fi, static_cast<std::uint32_t>(labels.size()));
  write_u32_be(fi, 28);
  write_u32_be(fi, 28);
  fi.write(reinterpret_cast<const char*>(images.data()),
           static_cast<std::streamsize>(images.size()));
  if (!fi) throw IoError("short write on " + img_name);

  std::ofstream fl(dir + "/" + lbl_name, std::ios::binary);
  if (!fl) throw IoError("cannot write " + dir + "/" + lbl_name);
  write_u32_be(fl, 0x00000801u);
  write_u32_be(fl, static_cast<std::uint32_t>(labels.size()));
  fl.write(reinterpret_cast<const char*>(labels.data()),
           static_cast<std::streamsize>(labels.size()));
  if (!fl) throw IoError("short write on " + lbl_name);
}

void fill_rect(std::uint8_t* img, int y0, int x0, int y1, int x1, int value) {
  y0 = std::max(y0, 0);
  x0 = std::max(x0, 0);
  y1 = std::min(y1, 28);
  x1 = std::min(x1, 28);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const int v = img[y * 28 + x] + value;
      img[y * 28 + x] = static_cast<std::uint8_t>(std::min(v, 255));
    }
  }
}

}  // namespace

Dataset load_mnist_split(const std::string& dir, bool train) {
  Dataset ds;
  ds.name = "mnist";
  const std::string prefix = train ? "train" : "t10k";
  std::uint32_t n_img = 0, rows = 0, cols = 0, n_lbl = 0;
  read_idx_images(dir + "/" + prefix + "-images-idx3-ubyte", ds.images, n_img, rows, cols);
  read_idx_labels(dir + "/" + prefix + "-labels-idx1-ubyte", ds.labels, n_lbl);
  if (n_img != n_lbl) {
    throw FormatError(dir + ": image count " + std::to_string(n_img) + " != label count " +
                      std::to_string(n_lbl));
  }
  ds.count = n_img;
  ds.channels = 1;
  ds.height = static_cast<int>(rows);
  ds.width = static_cast<int>(cols);
  ds.classes = 10;
  ds.norm_mean = {0.1307};
  ds.norm_std = {0.3081};
  return ds;
}

Dataset load_mnist(const std::string& dir) { return load_mnist_split(dir, true); }

Dataset load_cifar10(const std::string& dir, bool train) {
  constexpr std::size_t kRecord = 3073;  // 1 label byte + 3x32x32 pixels
  Dataset ds;
  ds.name = "cifar10";
  ds.channels = 3;
  ds.height = 32;
  ds.width = 32;
  ds.classes = 10;
  ds.norm_mean = {0.4914, 0.4822, 0.4465};
  ds.norm_std = {0.2470, 0.2435, 0.2616};
  std::vector<std::string> files;
  if (train) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back(dir + "/test_batch.bin");
  }
  for (const std::string& path : files) {
    const auto b = read_file(path);
    if (b.size() % kRecord != 0) {
      throw FormatError(path + ": size " + std::to_string(b.size()) +
                        " is not a multiple of the 3073-byte record");
    }
    const std::size_t records = b.size() / kRecord;
    for (std::size_t r = 0; r < records; ++r) {
      const std::uint8_t* rec = b.data() + r * kRecord;
      if (rec[0] > 9) {
        throw FormatError(path + ": label " + std::to_string(rec[0]) + " out of range at offset " +
                          std::to_string(r * kRecord));
      }
      ds.labels.push_back(rec[0]);
      ds.images.insert(ds.images.end(), rec + 1, rec + kRecord);
    }
  }
  ds.count = static_cast<std::int64_t>(ds.labels.size());
  return ds;
}

Dataset load_auto(const std::string& dir, bool train) {
  namespace fs = std::filesystem;
  if (fs::exists(dir + "/train-images-idx3-ubyte")) {
    Dataset ds = load_mnist_split(dir, train);
    if (fs::exists(dir + "/SYNTH")) ds.name = "synth";
    return ds;
  }
  if (fs::exists(dir + "/data_batch_1.bin")) return load_cifar10(dir, train);
  throw FormatError(dir + ": no MNIST IDX or CIFAR-10 batch files found");
}

void render_glyph(int digit, Rng& rng, std::uint8_t* out) {
  if (digit < 0 || digit > 9) throw DomainError("render_glyph: digit out of range");
  std::fill(out, out + 784, std::uint8_t{0});

  // Seven-segment layout, jittered. Segment order: top, top-right,
  // bottom-right, bottom, bottom-left, top-left, middle.
  static constexpr int kSegs[10] = {
      0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110,
      0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111,
  };
  const int w = 10 + static_cast<int>(rng.next_below(3));   // glyph width
  const int h = 16 + static_cast<int>(rng.next_below(4));   // glyph height
  const int x0 = 3 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(28 - w - 5)));
  const int y0 = 3 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(28 - h - 5)));
  const int t = 2 + static_cast<int>(rng.next_below(2));    // stroke thickness
  const int mid = y0 + h / 2;
  const int mask = kSegs[digit];

  auto seg_value = [&rng] { return 150 + static_cast<int>(rng.next_below(106)); };
  auto jit = [&rng] { return static_cast<int>(rng.next_below(3)) - 1; };
  if (mask & 0b0000001) fill_rect(out, y0 + jit(), x0, y0 + t, x0 + w, seg_value());
  if (mask & 0b0000010) fill_rect(out, y0, x0 + w - t + jit(), mid, x0 + w, seg_value());
  if (mask & 0b0000100) fill_rect(out, mid, x0 + w - t + jit(), y0 + h, x0 + w, seg_value());
  if (mask & 0b0001000) fill_rect(out, y0 + h - t + jit(), x0, y0 + h, x0 + w, seg_value());
  if (mask & 0b0010000) fill_rect(out, mid, x0 + jit(), y0 + h, x0 + t, seg_value());
  if (mask & 0b0100000) fill_rect(out, y0, x0 + jit(), mid, x0 + t, seg_value());
  if (mask & 0b1000000) fill_rect(out, mid - t / 2 + jit(), x0, mid - t / 2 + t, x0 + w, seg_value());

  // Distractor stroke somewhere in the frame, roughly a third of the time.
  if (rng.next_uniform() < 0.35) {
    const int dy = static_cast<int>(rng.next_below(26));
    const int dx = static_cast<int>(rng.next_below(20));
    const int len = 4 + static_cast<int>(rng.next_below(6));
    const int val = 60 + static_cast<int>(rng.next_below(90));
    if (rng.next_uniform() < 0.5) {
      fill_rect(out, dy, dx, dy + 1 + static_cast<int>(rng.next_below(2)), dx + len, val);
    } else {
      fill_rect(out, dy, dx, dy + len, dx + 1 + static_cast<int>(rng.next_below(2)), val);
    }
  }

  // Per-pixel noise, clipped to bytes.
  for (int i = 0; i < 784; ++i) {
    const double v = out[i] + 18.0 * rng.next_normal();
    out[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
}

void write_synth_dataset(const std::string& dir, std::int64_t train_count,
                         std::int64_t test_count, std::uint64_t seed) {
  if (train_count <= 0 || test_count <= 0) {
    throw DomainError("write_synth_dataset: counts must be positive");
  }
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  auto make_split = [&rng](std::int64_t n, std::vector<std::uint8_t>& images,
                           std::vector<std::uint8_t>& labels) {
    images.resize(static_cast<std::size_t>(n) * 784);
    labels.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      const int digit = static_cast<int>(rng.next_below(10));
      labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(digit);
      render_glyph(digit, rng, images.data() + i * 784);
    }
  };
  std::vector<std::uint8_t> images, labels;
  make_split(train_count, images, labels);
  write_idx_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", images, labels);
  make_split(test_count, images, labels);
  write_idx_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", images, labels);
  std::ofstream marker(dir + "/SYNTH");
  marker << "deterministic synthetic digit glyphs, seed " << seed << "\n";
}

Tensor make_batch(const Dataset& ds, const std::vector<std::int64_t>& indices, bool augment,
                  Rng* rng) {
  if (indices.empty()) throw DomainError("make_batch: empty index list");
  if (augment && rng == nullptr) throw DomainError("make_batch: augmentation needs an rng");
  const std::int64_t b = static_cast<std::int64_t>(indices.size());
  const int c = ds.channels, h = ds.height, w = ds.width;
  Tensor out({b, c, h, w});
  double* od = out.data();
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (std::int64_t s = 0; s < b; ++s) {
    const std::int64_t idx = indices[static_cast<std::size_t>(s)];
    if (idx < 0 || idx >= ds.count) throw DomainError("make_batch: sample index out of range");
    const std::uint8_t* src = ds.images.data() + idx * ds.sample_bytes();
    int dy = 0, dx = 0;
    bool flip = false;
    if (augment) {
      // Pad-4 random crop plus horizontal flip; padded pixels read as 0.
      dy = static_cast<int>(rng->next_below(9)) - 4;
      dx = static_cast<int>(rng->next_below(9)) - 4;
      flip = rng->next_uniform() < 0.5;
    }
    for (int ci = 0; ci < c; ++ci) {
      const double m = ds.norm_mean[static_cast<std::size_t>(ci)];
      const double sd = ds.norm_std[static_cast<std::size_t>(ci)];
      double* dst = od + (s * c + ci) * plane;
      const std::uint8_t* sp = src + static_cast<std::int64_t>(ci) * plane;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int sy = y + dy;
          const int sx = flip ? (w - 1 - (x + dx)) : (x + dx);
          const double px =
              (sy < 0 || sy >= h || sx < 0 || sx >= w) ? 0.0 : sp[sy * w + sx] / 255.0;
          dst[y * w + x] = (px - m) / sd;
        }
      }
    }
  }
  return out;
}

std::vector<int> batch_labels(const Dataset& ds, const std::vector<std::int64_t>& indices) {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::int64_t idx = indices[i];
    if (idx < 0 || idx >= ds.count) throw DomainError("batch_labels: sample index out of range");
    const int label = ds.labels[static_cast<std::size_t>(idx)];
    if (label >= ds.classes) throw DomainError("batch_labels: label out of range");
    out[i] = label;
  }
  return out;
}

}  // namespace irbnn
