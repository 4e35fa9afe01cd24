#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <zlib.h>

#include "rstn/errors.hpp"

// IDX reader for the MNIST image/label files. Files may be raw or gzip
// compressed (zlib reads both transparently).

namespace rstn {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline constexpr std::size_t kDigitSide = 28;
inline constexpr std::size_t kDigitPixels = kDigitSide * kDigitSide;

struct MnistDigit {
  std::array<std::uint8_t, kDigitPixels> pixels{};
  std::uint8_t label = 0;
  Split split = Split::train;
  std::uint32_t index = 0;  // position in the source IDX file

  float intensity(std::size_t row, std::size_t col) const { return pixels[row * kDigitSide + col] / 255.0f; }
};

namespace detail {

inline std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      gzclose(f);
      throw FormatError("read error in " + path.string());
    }
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  gzclose(f);
  return out;
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& what) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(what + ": truncated at offset " + std::to_string(offset) + " (file has " +
                      std::to_string(bytes.size()) + " bytes)");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

inline IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  const auto magic = detail::read_be32(bytes, 0, name);
  if (magic != kIdxImageMagic) throw FormatError(name + ": bad IDX image magic " + std::to_string(magic));
  IdxImages img{detail::read_be32(bytes, 4, name), detail::read_be32(bytes, 8, name), detail::read_be32(bytes, 12, name), {}};
  const std::size_t need = 16 + img.count * img.rows * img.cols;
  if (bytes.size() < need) {
    throw FormatError(name + ": truncated at offset " + std::to_string(bytes.size()) + ", expected " +
                      std::to_string(need) + " bytes");
  }
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(need));
  return img;
}

inline std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  const auto magic = detail::read_be32(bytes, 0, name);
  if (magic != kIdxLabelMagic) throw FormatError(name + ": bad IDX label magic " + std::to_string(magic));
  const std::size_t count = detail::read_be32(bytes, 4, name);
  if (bytes.size() < 8 + count) {
    throw FormatError(name + ": truncated at offset " + std::to_string(bytes.size()) + ", expected " +
                      std::to_string(8 + count) + " bytes");
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

// Loads one image/label file pair, tagging every digit with `split`.
inline std::vector<MnistDigit> load_mnist(const std::filesystem::path& images_path,
                                          const std::filesystem::path& labels_path, Split split) {
  const auto images = parse_idx_images(detail::read_maybe_gzip(images_path), images_path.string());
  const auto labels = parse_idx_labels(detail::read_maybe_gzip(labels_path), labels_path.string());
  if (images.rows != kDigitSide || images.cols != kDigitSide) {
    throw FormatError(images_path.string() + ": expected 28x28 images, got " + std::to_string(images.rows) + "x" +
                      std::to_string(images.cols));
  }
  if (images.count != labels.size()) {
    throw FormatError("image/label count mismatch: " + std::to_string(images.count) + " images vs " +
                      std::to_string(labels.size()) + " labels");
  }
  std::vector<MnistDigit> out(images.count);
  for (std::size_t i = 0; i < images.count; ++i) {
    auto& d = out[i];
    std::copy_n(images.pixels.begin() + static_cast<std::ptrdiff_t>(i * kDigitPixels), kDigitPixels, d.pixels.begin());
    if (labels[i] > 9) throw FormatError(labels_path.string() + ": label " + std::to_string(labels[i]) + " at index " + std::to_string(i));
    d.label = labels[i];
    d.split = split;
    d.index = static_cast<std::uint32_t>(i);
  }
  return out;
}

struct MnistPools {
  std::vector<MnistDigit> train;
  std::vector<MnistDigit> val;
  std::vector<MnistDigit> test;
};

// The training file is partitioned into generator-train and generator-val
// pools: the last `validation_fraction` of it (10000 of the standard 60000)
// becomes the validation pool. The test file is the test pool.
struct SplitRule {
  double validation_fraction = 1.0 / 6.0;
};

inline std::filesystem::path find_idx(const std::filesystem::path& dir, const std::string& stem) {
  for (const auto& cand : {stem, stem + ".gz"}) {
    if (std::filesystem::exists(dir / cand)) return dir / cand;
  }
  throw FormatError("missing " + stem + "[.gz] in " + dir.string());
}

inline MnistPools load_mnist_dir(const std::filesystem::path& dir, SplitRule rule = {}) {
  MnistPools pools;
  auto train = load_mnist(find_idx(dir, "train-images-idx3-ubyte"), find_idx(dir, "train-labels-idx1-ubyte"), Split::train);
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(train.size()) * rule.validation_fraction));
  const auto cut = train.size() - std::min(n_val, train.size());
  pools.val.assign(train.begin() + static_cast<std::ptrdiff_t>(cut), train.end());
  for (auto& d : pools.val) d.split = Split::val;
  train.resize(cut);
  pools.train = std::move(train);
  pools.test = load_mnist(find_idx(dir, "t10k-images-idx3-ubyte"), find_idx(dir, "t10k-labels-idx1-ubyte"), Split::test);
  return pools;
}

}  // namespace rstn
