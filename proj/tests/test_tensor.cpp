#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "oracles.hpp"
#include "rstn/random.hpp"
#include "rstn/tensor.hpp"
#include "rstn/tensor_io.hpp"

using namespace rstn;

TEST(Tensor, ShapeAndRowMajorOffsets) {
  Tensor<double> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.strides(), (Shape{12, 4, 1}));
  EXPECT_EQ(t.offset(1, 2, 3), 23u);
  t(1, 0, 2) = 5.0;
  EXPECT_EQ(t[12 + 2], 5.0);
  EXPECT_THROW(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(t.reshape({5, 5}), ShapeError);
}

TEST(Tensor, Elementwise) {
  const Tensor<double> v({3}, {-1, 0, 2});
  EXPECT_EQ(relu(v).data()[0], 0.0);
  EXPECT_EQ(relu(v), Tensor<double>({3}, {0, 0, 2}));
  EXPECT_EQ(sigmoid(Tensor<double>({1}, {0.0}))[0], 0.5);
  EXPECT_EQ(add(Tensor<double>({2}, {1, 2}), Tensor<double>({2}, {3, 4})), Tensor<double>({2}, {4, 6}));
  EXPECT_EQ(scale(Tensor<double>({2}, {1, 2}), 3.0), Tensor<double>({2}, {3, 6}));
  EXPECT_EQ(tanh(Tensor<double>({1}, {0.0}))[0], 0.0);
}

TEST(Tensor, ShapeMismatchReportsBothShapes) {
  try {
    add(Tensor<double>({2, 3}), Tensor<double>({3, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[3,2]"), std::string::npos);
  }
}

TEST(Tensor, OperationsDoNotMutateInputs) {
  Rng rng(3);
  const auto a = random_uniform<double>({4, 5}, -1, 1, rng);
  const auto b = random_uniform<double>({5, 3}, -1, 1, rng);
  const auto a0 = a, b0 = b;
  matmul(a, b);
  relu(a);
  reduce_sum(a, 1);
  elementwise(BinaryOp::mul, a, a);
  EXPECT_EQ(a, a0);
  EXPECT_EQ(b, b0);
}

TEST(Tensor, MatmulSmallCases) {
  const Tensor<double> id({2, 2}, {1, 0, 0, 1});
  const Tensor<double> m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(id, m), m);
  EXPECT_EQ(matmul(Tensor<double>({1, 2}, {1, 0}), Tensor<double>({2, 1}, {5, 7})), Tensor<double>({1, 1}, {5}));
  EXPECT_THROW(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), ShapeError);
}

TEST(Tensor, MatmulMatchesTripleLoop) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    const auto a = random_uniform<double>({4, 5}, -1, 1, rng);
    const auto b = random_uniform<double>({5, 3}, -1, 1, rng);
    const auto want = oracle::matmul({a.data().begin(), a.data().end()}, {b.data().begin(), b.data().end()}, 4, 5, 3);
    const auto got = matmul(a, b);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Tensor, MatmulByIdentityIsExact) {
  Rng rng(11);
  for (std::size_t n : {1u, 3u, 7u, 16u}) {
    const auto a = random_uniform<double>({5, n}, -10, 10, rng);
    Tensor<double> id({n, n});
    for (std::size_t i = 0; i < n; ++i) id(i, i) = 1.0;
    EXPECT_EQ(matmul(a, id), a);
  }
}

TEST(Tensor, Reductions) {
  const Tensor<double> m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(reduce_sum(m, 0), Tensor<double>({2}, {4, 6}));
  EXPECT_EQ(reduce_sum(m, 1), Tensor<double>({2}, {3, 7}));
  EXPECT_EQ(argmax(Tensor<double>({3}, {0.1, 0.7, 0.2}), 0)[0], 1);
  EXPECT_EQ(argmax(Tensor<double>({3}, {0.5, 0.5, 0.5}), 0)[0], 0);
  EXPECT_THROW(reduce_sum(m, 2), ShapeError);
  EXPECT_THROW(reduce_max(Tensor<double>({2, 0}), 1), ShapeError);
  EXPECT_THROW(argmax(Tensor<double>({0}), 0), ShapeError);
}

TEST(Tensor, MaxMatchesLinearScan) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto t = random_uniform<double>({3, 4, 5}, -1, 1, rng);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const auto got = reduce_max(t, axis);
      const auto idx = argmax(t, axis);
      // Scan every element and update the matching output slot.
      std::vector<double> want(got.size(), -1e300);
      std::vector<std::int64_t> want_idx(got.size(), -1);
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j)
          for (std::size_t k = 0; k < 5; ++k) {
            const std::size_t ijk[3] = {i, j, k};
            std::size_t o = 0;
            for (std::size_t a = 0; a < 3; ++a) {
              if (a == axis) continue;
              o = o * t.dim(a) + ijk[a];
            }
            if (t(i, j, k) > want[o]) {
              want[o] = t(i, j, k);
              want_idx[o] = static_cast<std::int64_t>(ijk[axis]);
            }
          }
      for (std::size_t o = 0; o < got.size(); ++o) {
        EXPECT_EQ(got[o], want[o]);
        EXPECT_EQ(idx[o], want_idx[o]);
      }
    }
  }
}

TEST(Tensor, SumIsPermutationInvariant) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto t = random_uniform<double>({1000}, -1, 1, rng);
    const double s0 = sum(t);
    std::shuffle(t.data().begin(), t.data().end(), rng);
    EXPECT_NEAR(sum(t), s0, 1e-10);
  }
}

TEST(Tensor, NonFiniteIsDetectable) {
  Tensor<double> t({2}, {1.0, std::nan("")});
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(check_finite(t, "t"), NumericError);
}

TEST(TensorIo, RecordLayout) {
  const Tensor<float> t({2, 1}, {1.0f, -2.0f});
  std::ostringstream os;
  write_tensor(os, t);
  const std::string s = os.str();
  ASSERT_EQ(s.size(), 4u + 1 + 1 + 2 * 4 + 1 + 2 * 4);
  EXPECT_EQ(s.substr(0, 4), "TNSR");
  EXPECT_EQ(static_cast<int>(s[4]), 1);   // version
  EXPECT_EQ(static_cast<int>(s[5]), 2);   // rank
  EXPECT_EQ(static_cast<unsigned char>(s[6]), 2);  // extent 0, little-endian u32
  EXPECT_EQ(static_cast<int>(s[14]), 0);  // dtype f32
}

TEST(TensorIo, RoundTripPreservesBits) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed);
    const auto shape = Shape{1 + seed, 3, 2 + seed};
    const auto d = random_uniform<double>(shape, -1e3, 1e3, rng);
    std::stringstream ss;
    write_tensor(ss, d);
    EXPECT_EQ(read_tensor<double>(ss), d);
    const auto f = cast<float>(d);
    std::stringstream sf;
    write_tensor(sf, f);
    EXPECT_EQ(read_tensor<float>(sf), f);
  }
}

TEST(TensorIo, RejectsCorruptRecords) {
  std::stringstream ss;
  write_tensor(ss, Tensor<double>({3}, {1, 2, 3}));
  std::string bytes = ss.str();
  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream b1(bad);
  EXPECT_THROW(read_tensor<double>(b1), FormatError);
  std::istringstream b2(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_tensor<double>(b2), FormatError);
}
