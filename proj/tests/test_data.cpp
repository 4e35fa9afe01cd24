#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rstn/mnist.hpp"
#include "rstn/sequence_data.hpp"

using namespace rstn;
namespace fs = std::filesystem;

namespace {

using fixture::idx_images;
using fixture::idx_labels;
using fixture::synthetic_mnist_dir;
using fixture::temp_dir;
using fixture::write_raw;

void expect_invariants(const SequenceExample& ex) {
  ASSERT_EQ(ex.canvas.size(), 100u * 100u);
  EXPECT_LE(std::abs(ex.slope_deg), 45.0);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_LE(ex.corners[i].y + 28u, 100u);
    EXPECT_LE(ex.corners[i].x + 28u, 100u);
    EXPECT_LT(ex.labels[i], 10);
  }
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j) {
      const bool sep_x = ex.corners[i].x + 28 <= ex.corners[j].x || ex.corners[j].x + 28 <= ex.corners[i].x;
      const bool sep_y = ex.corners[i].y + 28 <= ex.corners[j].y || ex.corners[j].y + 28 <= ex.corners[i].y;
      EXPECT_TRUE(sep_x || sep_y);
    }
  EXPECT_LT(ex.corners[0].x, ex.corners[1].x);
  EXPECT_LT(ex.corners[1].x, ex.corners[2].x);
}

}  // namespace

// --- IDX ingestion ---------------------------------------------------------

TEST(Mnist, LoadsRawAndGzipFiles) {
  const auto dir = synthetic_mnist_dir(60, 20);
  const auto train = load_mnist(dir / "train-images-idx3-ubyte.gz", dir / "train-labels-idx1-ubyte.gz", Split::train);
  const auto test = load_mnist(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", Split::test);
  ASSERT_EQ(train.size(), 60u);
  ASSERT_EQ(test.size(), 20u);
  const auto ref = oracle::synthetic_pool(60, 1, Split::train);
  for (std::size_t i = 0; i < 60; ++i) {
    EXPECT_EQ(train[i].pixels, ref[i].pixels);
    EXPECT_EQ(train[i].label, ref[i].label);
    EXPECT_EQ(train[i].index, i);
  }
  for (const auto& d : train)
    for (std::size_t r = 0; r < 28; ++r)
      for (std::size_t c = 0; c < 28; ++c) {
        EXPECT_GE(d.intensity(r, c), 0.0f);
        EXPECT_LE(d.intensity(r, c), 1.0f);
      }
}

TEST(Mnist, ValidationPoolIsTailOfTrainingFile) {
  const auto pools = load_mnist_dir(synthetic_mnist_dir(60, 20));
  ASSERT_EQ(pools.train.size(), 50u);
  ASSERT_EQ(pools.val.size(), 10u);
  ASSERT_EQ(pools.test.size(), 20u);
  for (const auto& d : pools.train) EXPECT_LT(d.index, 50u);
  for (const auto& d : pools.val) {
    EXPECT_GE(d.index, 50u);
    EXPECT_EQ(d.split, Split::val);
  }
}

TEST(Mnist, TruncatedFileNamesOffset) {
  const auto dir = temp_dir("trunc");
  auto bytes = idx_images(oracle::synthetic_pool(3, 1, Split::train));
  bytes.resize(16 + 784 + 100);
  write_raw(dir / "img", bytes);
  write_raw(dir / "lbl", idx_labels(oracle::synthetic_pool(3, 1, Split::train)));
  try {
    load_mnist(dir / "img", dir / "lbl", Split::train);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 900"), std::string::npos) << e.what();
  }
}

TEST(Mnist, BadMagicAndCountMismatch) {
  const auto dir = temp_dir("badmagic");
  const auto digits = oracle::synthetic_pool(4, 1, Split::train);
  auto img = idx_images(digits);
  img[3] = 0x01;
  write_raw(dir / "img_bad", img);
  write_raw(dir / "img", idx_images(digits));
  write_raw(dir / "lbl", idx_labels(digits));
  write_raw(dir / "lbl3", idx_labels(oracle::synthetic_pool(3, 1, Split::train)));
  EXPECT_THROW(load_mnist(dir / "img_bad", dir / "lbl", Split::train), FormatError);
  EXPECT_THROW(load_mnist(dir / "img", dir / "lbl3", Split::train), FormatError);
  EXPECT_THROW(load_mnist(dir / "missing", dir / "lbl", Split::train), FormatError);
}

// --- generator -------------------------------------------------------------

TEST(Generator, InvariantsHoldOverTenThousandDraws) {
  const auto pool = oracle::synthetic_pool(200, 3, Split::train);
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    const auto ex = generate_example(rng, pool);
    expect_invariants(ex);
    if (::testing::Test::HasFailure()) return;
  }
}

TEST(Generator, ZeroSlopeAlignsDigits) {
  const auto pool = oracle::synthetic_pool(50, 3, Split::train);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto ex = generate_example(rng, pool, {.forced_slope_deg = 0.0});
    EXPECT_EQ(ex.corners[0].y, ex.corners[1].y);
    EXPECT_EQ(ex.corners[1].y, ex.corners[2].y);
  }
}

TEST(Generator, DigitsAreCompositedAtTheirCorners) {
  const auto pool = oracle::synthetic_pool(30, 4, Split::train);
  Rng rng(6);
  const auto ex = generate_example(rng, pool, {.clutter_patches = 0});
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& d = pool[ex.sources[i]];
    EXPECT_EQ(d.label, ex.labels[i]);
    for (std::size_t r = 0; r < 28; ++r)
      for (std::size_t c = 0; c < 28; ++c)
        EXPECT_EQ(ex.canvas[(ex.corners[i].y + r) * 100 + ex.corners[i].x + c], d.pixels[r * 28 + c]);
  }
}

TEST(Generator, LabelMarginalIsUniform) {
  const auto pool = oracle::synthetic_pool(100, 3, Split::train);
  Rng rng(17);
  std::array<double, 10> counts{};
  const int draws = 100000;
  for (int i = 0; i < draws; ++i)
    for (auto l : generate_example(rng, pool, {.clutter_patches = 0}).labels) counts[l] += 1;
  const double expected = 3.0 * draws / 10.0;
  double chi2 = 0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 27.88);  // 9 degrees of freedom, p = 0.001
}

TEST(Generator, EmptyPoolIsRejected) {
  Rng rng(1);
  EXPECT_THROW(generate_example(rng, std::span<const MnistDigit>{}), std::invalid_argument);
}

TEST(Generator, DatasetIsDeterministicAndThreadCountInvariant) {
  const auto pools = load_mnist_dir(synthetic_mnist_dir(120, 30));
  const SplitCounts counts{40, 10, 10};
  const auto a = generate_dataset(9, pools, counts, {}, 1);
  const auto b = generate_dataset(9, pools, counts, {}, 4);
  const auto c = generate_dataset(10, pools, counts, {}, 1);
  EXPECT_EQ(a, b);
  EXPECT_NE(a[0], c[0]);
  EXPECT_EQ(a[0].size(), 40u);
  EXPECT_EQ(a[1].size(), 10u);
  EXPECT_EQ(a[2].split, Split::test);
  std::stringstream s1, s2;
  write_dataset(s1, a[0]);
  write_dataset(s2, b[0]);
  EXPECT_EQ(s1.str(), s2.str());
}

TEST(Generator, SplitsDrawFromDisjointPools) {
  const auto pools = load_mnist_dir(synthetic_mnist_dir(120, 30));
  const auto files = generate_dataset(3, pools, {50, 20, 20});
  for (const auto& r : files[0].records)
    for (auto s : r.sources) EXPECT_LT(s, 100u);
  for (const auto& r : files[1].records)
    for (auto s : r.sources) EXPECT_GE(s, 100u);
  for (const auto& r : files[2].records)
    for (auto s : r.sources) EXPECT_LT(s, 30u);
}

// --- CMSQ format -----------------------------------------------------------

TEST(DatasetFormat, RoundTripIsBitExact) {
  const auto pool = oracle::synthetic_pool(40, 3, Split::val);
  const auto file = generate_split(4, Split::val, pool, 25);
  std::stringstream ss;
  write_dataset(ss, file);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.size(), 4u + 1 + 1 + 4 + 2 + 2 + 1 + 25u * (10000 + 3 + 12 + 8 + 12));
  std::istringstream in(bytes);
  const auto back = read_dataset(in);
  EXPECT_EQ(back, file);
  std::stringstream again;
  write_dataset(again, back);
  EXPECT_EQ(again.str(), bytes);
}

TEST(DatasetFormat, RejectsCorruption) {
  const auto pool = oracle::synthetic_pool(20, 3, Split::train);
  std::stringstream ss;
  write_dataset(ss, generate_split(1, Split::train, pool, 3));
  std::string bytes = ss.str();
  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream b1(bad);
  EXPECT_THROW(read_dataset(b1), FormatError);
  std::istringstream b2(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_dataset(b2), FormatError);
}

// --- batching --------------------------------------------------------------

TEST(Batching, TenThousandByTwoFiftySix) {
  DatasetFile file;
  file.records.resize(10000);
  for (std::size_t i = 0; i < file.records.size(); ++i) {
    file.records[i].canvas.assign(100 * 100, static_cast<std::uint8_t>(i % 256));
    file.records[i].labels = {static_cast<std::uint8_t>(i % 10), 0, 0};
  }
  BatchStream<float> stream(file, 256, 3);
  EXPECT_EQ(stream.batch_count(), 40u);
  std::size_t batches = 0, last = 0;
  std::vector<std::size_t> seen;
  while (auto b = stream.next()) {
    ++batches;
    last = b->images.dim(0);
    for (std::size_t i = 0; i < last; ++i) {
      const auto idx = b->indices[i];
      seen.push_back(idx);
      EXPECT_EQ(b->labels(i, 0), static_cast<std::int32_t>(idx % 10));
      EXPECT_EQ(b->images(i, 0, 50, 50), static_cast<float>(idx % 256) / 255.0f);
    }
  }
  EXPECT_EQ(batches, 40u);
  EXPECT_EQ(last, 16u);
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < seen.size(); ++i) ASSERT_EQ(seen[i], i);
}

TEST(Batching, SameSeedSameOrderAndLabelMultiset) {
  const auto pool = oracle::synthetic_pool(30, 3, Split::train);
  const auto file = generate_split(2, Split::train, pool, 37);
  const auto collect = [&](std::uint64_t seed) {
    std::vector<std::int32_t> labels;
    BatchStream<float> s(file, 8, seed);
    while (auto b = s.next())
      for (auto l : b->labels.data()) labels.push_back(l);
    return labels;
  };
  EXPECT_EQ(collect(5), collect(5));
  EXPECT_NE(collect(5), collect(6));
  auto got = collect(5);
  std::vector<std::int32_t> want;
  for (const auto& r : file.records)
    for (auto l : r.labels) want.push_back(l);
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  EXPECT_EQ(got, want);
}

TEST(Batching, IntensitiesStayInUnitRange) {
  const auto pool = oracle::synthetic_pool(30, 3, Split::train);
  const auto file = generate_split(2, Split::train, pool, 20);
  BatchStream<double> s(file, 20, std::nullopt);
  const auto b = s.next();
  ASSERT_TRUE(b);
  for (double v : b->images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Pgm, WriteReadRoundTrip) {
  const auto dir = temp_dir("pgm");
  std::vector<std::uint8_t> px(12);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 20);
  write_pgm(dir / "a.pgm", 4, 3, px);
  const auto img = read_pgm(dir / "a.pgm");
  EXPECT_EQ(img.width, 4u);
  EXPECT_EQ(img.height, 3u);
  EXPECT_EQ(img.pixels, px);
  const std::vector<double> vals{-0.5, 0.0, 0.5, 1.0, 2.0};
  EXPECT_EQ(to_gray8<double>(vals), (std::vector<std::uint8_t>{0, 0, 128, 255, 255}));
}
