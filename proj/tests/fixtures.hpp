#pragma once

// Scratch directories and synthetic MNIST-layout IDX files for tests.

#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rstn/mnist.hpp"

namespace fixture {

namespace fs = std::filesystem;
using rstn::MnistDigit;
using rstn::Split;

inline fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("rstn_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

inline std::vector<std::uint8_t> idx_images(const std::vector<MnistDigit>& digits) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x803);
  put_be32(b, static_cast<std::uint32_t>(digits.size()));
  put_be32(b, 28);
  put_be32(b, 28);
  for (const auto& d : digits) b.insert(b.end(), d.pixels.begin(), d.pixels.end());
  return b;
}

inline std::vector<std::uint8_t> idx_labels(const std::vector<MnistDigit>& digits) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x801);
  put_be32(b, static_cast<std::uint32_t>(digits.size()));
  for (const auto& d : digits) b.push_back(d.label);
  return b;
}

inline void write_raw(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_gz(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  gzFile f = gzopen(p.string().c_str(), "wb");
  if (!f) throw std::runtime_error("cannot write " + p.string());
  gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
}

// A directory laid out like the MNIST distribution, built from synthetic digits.
inline fs::path synthetic_mnist_dir(std::size_t n_train, std::size_t n_test, const std::string& tag = "") {
  const auto dir = temp_dir("mnist_" + tag + std::to_string(n_train));
  const auto train = oracle::synthetic_pool(n_train, 1, Split::train);
  const auto test = oracle::synthetic_pool(n_test, 2, Split::test);
  write_gz(dir / "train-images-idx3-ubyte.gz", idx_images(train));
  write_gz(dir / "train-labels-idx1-ubyte.gz", idx_labels(train));
  write_raw(dir / "t10k-images-idx3-ubyte", idx_images(test));
  write_raw(dir / "t10k-labels-idx1-ubyte", idx_labels(test));
  return dir;
}

}  // namespace fixture
