#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "rstn/config.hpp"
#include "rstn/errors.hpp"
#include "rstn/loss.hpp"
#include "rstn/mnist.hpp"
#include "rstn/random.hpp"
#include "rstn/tensor.hpp"
#include "rstn/tensor_io.hpp"

// Cluttered MNIST sequences: three sloped, non-overlapping digits on a
// 100x100 canvas plus eight 9x9 clutter patches cut from random digits.

namespace rstn {

struct Corner {
  std::uint16_t y = 0;
  std::uint16_t x = 0;
  friend bool operator==(const Corner&, const Corner&) = default;
};

struct SequenceExample {
  std::vector<std::uint8_t> canvas;  // kCanvasSize^2 intensities, row-major
  std::array<std::uint8_t, kSequenceLength> labels{};
  std::array<Corner, kSequenceLength> corners{};  // digit box top-left, left to right
  double slope_deg = 0.0;
  std::array<std::uint32_t, kSequenceLength> sources{};  // digit indices in the source IDX file

  float intensity(std::size_t row, std::size_t col) const { return canvas[row * kCanvasSize + col] / 255.0f; }
  friend bool operator==(const SequenceExample&, const SequenceExample&) = default;
};

struct GeneratorOptions {
  std::optional<double> forced_slope_deg;  // test hook: skip the slope draw
  int max_gap = 12;
  int clutter_patches = 8;
  int clutter_side = 9;
  int max_attempts = 100;
};

namespace detail {

inline void max_composite(std::vector<std::uint8_t>& canvas, const MnistDigit& d, int src_y, int src_x, int side,
                          int dst_y, int dst_x) {
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      auto& px = canvas[static_cast<std::size_t>(dst_y + r) * kCanvasSize + static_cast<std::size_t>(dst_x + c)];
      px = std::max(px, d.pixels[static_cast<std::size_t>(src_y + r) * kDigitSide + static_cast<std::size_t>(src_x + c)]);
    }
  }
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace detail

// One example from `pool`:
//  1. three digits drawn uniformly;
//  2. slope phi ~ U(-45, 45) degrees;
//  3. horizontal gaps g2, g3 ~ U{0..max_gap} between consecutive boxes;
//  4. x1 uniform such that the three boxes plus gaps fit the canvas width;
//  5. dy_i = round(tan(phi) * (x_{i+1} - x_i)), y1 uniform such that every box
//     fits vertically; infeasible draws of (phi, gaps) are redrawn;
//  6. digits max-composited onto a zero canvas;
//  7. clutter: random 9x9 windows of random pool digits max-composited at
//     uniform positions (may overlap digits and each other).
inline SequenceExample generate_example(Rng& rng, std::span<const MnistDigit> pool, const GeneratorOptions& opts = {}) {
  if (pool.empty()) throw std::invalid_argument("generate_example: empty digit pool");
  constexpr int side = static_cast<int>(kDigitSide);
  constexpr int canvas = kCanvasSize;
  constexpr int steps = kSequenceLength;
  const auto pick = [&] { return &pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]; };

  std::array<const MnistDigit*, steps> digits{};
  for (auto& d : digits) d = pick();

  SequenceExample ex;
  bool placed = false;
  for (int attempt = 0; attempt < opts.max_attempts && !placed; ++attempt) {
    const double phi = opts.forced_slope_deg ? *opts.forced_slope_deg
                                             : std::uniform_real_distribution<double>(-45.0, 45.0)(rng);
    std::array<int, steps> gaps{};
    int span = steps * side;
    for (int i = 1; i < steps; ++i) span += gaps[i] = detail::uniform_int(rng, 0, opts.max_gap);
    if (span > canvas) continue;
    std::array<int, steps> xs{};
    xs[0] = detail::uniform_int(rng, 0, canvas - span);
    for (int i = 1; i < steps; ++i) xs[i] = xs[i - 1] + side + gaps[i];
    const double slope = std::tan(phi * std::numbers::pi / 180.0);
    std::array<int, steps> offsets{};
    for (int i = 1; i < steps; ++i) {
      offsets[i] = offsets[i - 1] + static_cast<int>(std::lround(slope * (xs[i] - xs[i - 1])));
    }
    const int lo = -*std::min_element(offsets.begin(), offsets.end());
    const int hi = (canvas - side) - *std::max_element(offsets.begin(), offsets.end());
    if (lo > hi) continue;
    const int y1 = detail::uniform_int(rng, lo, hi);
    for (int i = 0; i < steps; ++i) {
      ex.corners[i] = {static_cast<std::uint16_t>(y1 + offsets[i]), static_cast<std::uint16_t>(xs[i])};
    }
    ex.slope_deg = phi;
    placed = true;
  }
  if (!placed) throw std::runtime_error("generate_example: no feasible placement after " + std::to_string(opts.max_attempts) + " attempts");

  ex.canvas.assign(static_cast<std::size_t>(canvas) * canvas, 0);
  for (int i = 0; i < steps; ++i) {
    detail::max_composite(ex.canvas, *digits[i], 0, 0, side, ex.corners[i].y, ex.corners[i].x);
    ex.labels[i] = digits[i]->label;
    ex.sources[i] = digits[i]->index;
  }
  const int cs = opts.clutter_side;
  for (int k = 0; k < opts.clutter_patches; ++k) {
    const MnistDigit* src = pick();
    const int sy = detail::uniform_int(rng, 0, side - cs), sx = detail::uniform_int(rng, 0, side - cs);
    const int dy = detail::uniform_int(rng, 0, canvas - cs), dx = detail::uniform_int(rng, 0, canvas - cs);
    detail::max_composite(ex.canvas, *src, sy, sx, cs, dy, dx);
  }
  return ex;
}

// In-memory image of a CMSQ file.
struct DatasetFile {
  Split split = Split::train;
  std::vector<SequenceExample> records;

  std::size_t size() const noexcept { return records.size(); }
  friend bool operator==(const DatasetFile&, const DatasetFile&) = default;
};

// Per-example RNG streams are derived from (seed, split, index), so the
// result is independent of the number of worker threads.
inline DatasetFile generate_split(std::uint64_t seed, Split split, std::span<const MnistDigit> pool, std::size_t count,
                                  const GeneratorOptions& opts = {}, unsigned threads = 1) {
  DatasetFile file{split, std::vector<SequenceExample>(count)};
  const auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(split), i));
      file.records[i] = generate_example(rng, pool, opts);
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1 || count < 2 * threads) {
    work(0, count);
    return file;
  }
  {
    std::vector<std::jthread> workers;
    const std::size_t chunk = (count + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(count, b + chunk);
      if (b < e) workers.emplace_back(work, b, e);
    }
  }
  return file;
}

struct SplitCounts {
  std::size_t train = 60000;
  std::size_t val = 10000;
  std::size_t test = 10000;
};

inline std::array<DatasetFile, 3> generate_dataset(std::uint64_t seed, const MnistPools& pools, SplitCounts counts = {},
                                                   const GeneratorOptions& opts = {}, unsigned threads = 1) {
  return {generate_split(seed, Split::train, pools.train, counts.train, opts, threads),
          generate_split(seed, Split::val, pools.val, counts.val, opts, threads),
          generate_split(seed, Split::test, pools.test, counts.test, opts, threads)};
}

// ---------------------------------------------------------------------------
// CMSQ file:
//   "CMSQ" | version u8 | split u8 | count u32 | height u16 | width u16 | seq_len u8 |
//   count x record { canvas u8[h*w] | labels u8[T] | T x (y u16, x u16) | slope f64 | T x source u32 }

inline constexpr std::array<char, 4> kDatasetMagic{'C', 'M', 'S', 'Q'};
inline constexpr std::uint8_t kDatasetVersion = 1;

inline void write_dataset(std::ostream& os, const DatasetFile& file) {
  os.write(kDatasetMagic.data(), kDatasetMagic.size());
  io::write_pod(os, kDatasetVersion);
  io::write_pod(os, static_cast<std::uint8_t>(file.split));
  io::write_pod(os, static_cast<std::uint32_t>(file.records.size()));
  io::write_pod(os, static_cast<std::uint16_t>(kCanvasSize));
  io::write_pod(os, static_cast<std::uint16_t>(kCanvasSize));
  io::write_pod(os, static_cast<std::uint8_t>(kSequenceLength));
  for (const auto& r : file.records) {
    if (r.canvas.size() != static_cast<std::size_t>(kCanvasSize) * kCanvasSize) throw ShapeError("canvas must be 100x100");
    os.write(reinterpret_cast<const char*>(r.canvas.data()), static_cast<std::streamsize>(r.canvas.size()));
    os.write(reinterpret_cast<const char*>(r.labels.data()), kSequenceLength);
    for (const auto& c : r.corners) {
      io::write_pod(os, c.y);
      io::write_pod(os, c.x);
    }
    io::write_pod(os, r.slope_deg);
    for (const auto s : r.sources) io::write_pod(os, s);
  }
}

inline DatasetFile read_dataset(std::istream& is) {
  std::array<char, 4> magic{};
  io::read_exact(is, magic.data(), magic.size(), "dataset magic");
  if (magic != kDatasetMagic) throw FormatError("bad dataset magic (expected CMSQ)");
  const auto version = io::read_pod<std::uint8_t>(is, "dataset version");
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  DatasetFile file;
  const auto split = io::read_pod<std::uint8_t>(is, "dataset split");
  if (split > 2) throw FormatError("invalid dataset split tag " + std::to_string(split));
  file.split = static_cast<Split>(split);
  const auto count = io::read_pod<std::uint32_t>(is, "dataset count");
  const auto h = io::read_pod<std::uint16_t>(is, "dataset height");
  const auto w = io::read_pod<std::uint16_t>(is, "dataset width");
  const auto t = io::read_pod<std::uint8_t>(is, "dataset sequence length");
  if (h != kCanvasSize || w != kCanvasSize || t != kSequenceLength) {
    throw FormatError("unsupported dataset geometry " + std::to_string(h) + "x" + std::to_string(w) + ", T=" + std::to_string(t));
  }
  file.records.resize(count);
  for (auto& r : file.records) {
    r.canvas.resize(static_cast<std::size_t>(h) * w);
    io::read_exact(is, reinterpret_cast<char*>(r.canvas.data()), r.canvas.size(), "dataset canvas");
    io::read_exact(is, reinterpret_cast<char*>(r.labels.data()), kSequenceLength, "dataset labels");
    for (auto& c : r.corners) {
      c.y = io::read_pod<std::uint16_t>(is, "dataset corner");
      c.x = io::read_pod<std::uint16_t>(is, "dataset corner");
    }
    r.slope_deg = io::read_pod<double>(is, "dataset slope");
    for (auto& s : r.sources) s = io::read_pod<std::uint32_t>(is, "dataset provenance");
  }
  return file;
}

inline void save_dataset(const std::filesystem::path& path, const DatasetFile& file) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_dataset(os, file);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline DatasetFile load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open dataset " + path.string());
  return read_dataset(is);
}

// ---------------------------------------------------------------------------
// Batching.

template <class T>
struct Batch {
  Tensor<T> images;  // [N,1,100,100]
  Labels labels;     // [N,T]
  std::vector<std::size_t> indices;
};

template <class T>
Batch<T> make_batch(const DatasetFile& file, std::span<const std::size_t> indices) {
  const std::size_t n = indices.size(), px = static_cast<std::size_t>(kCanvasSize) * kCanvasSize;
  Batch<T> b{Tensor<T>({n, 1, kCanvasSize, kCanvasSize}), Labels({n, kSequenceLength}), {indices.begin(), indices.end()}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = file.records.at(indices[i]);
    for (std::size_t k = 0; k < px; ++k) b.images[i * px + k] = static_cast<T>(r.canvas[k]) / T{255};
    for (std::size_t t = 0; t < kSequenceLength; ++t) b.labels(i, t) = r.labels[t];
  }
  return b;
}

// Index order for one pass over `count` records; identity when no seed is given.
inline std::vector<std::size_t> epoch_order(std::size_t count, std::optional<std::uint64_t> shuffle_seed) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

// Consecutive batches over a seeded permutation; the final short batch is emitted.
template <class T>
class BatchStream {
 public:
  BatchStream(const DatasetFile& file, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed)
      : file_(&file), batch_size_(batch_size), order_(epoch_order(file.size(), shuffle_seed)) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  }

  std::size_t batch_count() const noexcept { return (order_.size() + batch_size_ - 1) / batch_size_; }

  std::optional<Batch<T>> next() {
    if (pos_ >= order_.size()) return std::nullopt;
    const std::size_t n = std::min(batch_size_, order_.size() - pos_);
    auto b = make_batch<T>(*file_, std::span(order_).subspan(pos_, n));
    pos_ += n;
    return b;
  }

 private:
  const DatasetFile* file_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// 8-bit binary PGM (P5) for visual inspection.

inline void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      std::span<const std::uint8_t> pixels) {
  if (pixels.size() != width * height) throw ShapeError("write_pgm: pixel count does not match extents");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

struct PgmImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
};

inline PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::string magic;
  PgmImage img;
  int maxval = 0;
  if (!(is >> magic >> img.width >> img.height >> maxval) || magic != "P5" || maxval != 255) {
    throw FormatError("not an 8-bit P5 PGM: " + path.string());
  }
  is.get();
  img.pixels.resize(img.width * img.height);
  io::read_exact(is, reinterpret_cast<char*>(img.pixels.data()), img.pixels.size(), "pgm pixels");
  return img;
}

template <class T>
std::vector<std::uint8_t> to_gray8(std::span<const T> values) {
  std::vector<std::uint8_t> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [](T v) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
  });
  return out;
}

}  // namespace rstn
