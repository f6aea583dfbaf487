#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irbnn/tensor.hpp"

namespace irbnn {

/// Labeled image set held as raw bytes; batches are normalized to floats on
/// assembly. Images are [c, h, w] row-major per sample.
struct Dataset {
  std::string name;  // mnist | cifar10 | synth
  std::int64_t count = 0;
  int channels = 0, height = 0, width = 0;
  int classes = 10;
  std::vector<std::uint8_t> images;  // count * channels*height*width
  std::vector<std::uint8_t> labels;  // count
  std::vector<double> norm_mean;     // per channel, applied after /255
  std::vector<double> norm_std;

  std::int64_t sample_bytes() const {
    return static_cast<std::int64_t>(channels) * height * width;
  }
};

/// Parses the four IDX files (train/t10k x images/labels) under `dir`.
/// Magic, dimension, and length mismatches are format errors naming the
/// byte offset. Pixels stay u8; normalization constants 0.1307 / 0.3081.
Dataset load_mnist(const std::string& dir);

/// Parses data_batch_{1..5}.bin and test_batch.bin under `dir` (one label
/// byte + 3072 pixel bytes per record). `train` selects which files.
Dataset load_cifar10(const std::string& dir, bool train);

Dataset load_mnist_split(const std::string& dir, bool train);

/// Sniffs `dir` for MNIST IDX or CIFAR-10 batch files and loads the
/// requested split. Unknown layout is a format error.
Dataset load_auto(const std::string& dir, bool train);

/// Deterministic stand-in dataset in genuine MNIST IDX layout: 28x28
/// digit glyphs with random shift, stroke thickness, per-pixel noise, and
/// occasional distractor strokes. Written so the MNIST loader (and any
/// other IDX reader) ingests it unchanged.
void write_synth_dataset(const std::string& dir, std::int64_t train_count,
                         std::int64_t test_count, std::uint64_t seed);

/// Renders one 28x28 glyph for `digit` into out[784] (values 0..255).
void render_glyph(int digit, Rng& rng, std::uint8_t* out);

/// Assembles a normalized [b, c, h, w] batch from the given sample indices.
/// With `augment`, applies pad-4 random crop + horizontal flip (CIFAR
/// recipe), drawing from `rng`.
Tensor make_batch(const Dataset& ds, const std::vector<std::int64_t>& indices,
                  bool augment = false, Rng* rng = nullptr);

/// Labels for the given indices, range-checked against ds.classes.
std::vector<int> batch_labels(const Dataset& ds, const std::vector<std::int64_t>& indices);

}  // namespace irbnn
