#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "stp/tasks.hpp"
#include "test_util.hpp"

using namespace stp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stp_tasks_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double binom9(int k) {
  double c = 1;
  for (int i = 0; i < k; ++i) c = c * (9 - i) / (i + 1);
  return c / 512.0;
}

}  // namespace

TEST(BruteForceLabel, HandSample) {
  const std::vector<double> x1{1, 0, 1, 1, 0, 1, 0, 0, 1, 1};
  // Marks at {0,2,3,5,8,9} plus three on zero bits (1,4,6).
  const std::vector<double> x2{1, 1, 1, 1, 1, 1, 1, 0, 1, 1};
  EXPECT_EQ(brute_force_label<double>(x1, x2), 6);
}

TEST(BruteForceLabel, Extremes) {
  std::vector<double> x2(12, 0.0);
  for (int i = 0; i < 9; ++i) x2[i] = 1;
  EXPECT_EQ(brute_force_label<double>(std::vector<double>(12, 1.0), x2), 9);
  EXPECT_EQ(brute_force_label<double>(std::vector<double>(12, 0.0), x2), 0);
}

TEST(BruteForceLabel, RejectsWrongMarkCount) {
  std::vector<double> x2(12, 0.0);
  x2[0] = 1;
  EXPECT_THROW(brute_force_label<double>(std::vector<double>(12, 1.0), x2), DataError);
}

TEST(BinaryAdding, ShortSequenceRejected) {
  BinaryAddingSpec s;
  s.steps = 5;
  EXPECT_THROW(gen_binary_adding(s), ConfigError);
  s.steps = 9;
  EXPECT_THROW(gen_binary_adding(s), ConfigError);
}

TEST(BinaryAdding, LabelsMatchOracleAndShapes) {
  BinaryAddingSpec s;
  s.steps = 30;
  s.train_size = 2000;
  s.test_size = 500;
  const auto [train, test] = gen_binary_adding<float>(s);
  ASSERT_EQ(train.inputs.shape(), (Shape{2000, 30, 2}));
  ASSERT_EQ(test.inputs.shape(), (Shape{500, 30, 2}));
  for (const auto* ds : {&train, &test}) {
    for (std::size_t i = 0; i < ds->samples(); ++i) {
      std::vector<float> x1(30), x2(30);
      for (std::size_t t = 0; t < 30; ++t) x1[t] = ds->inputs(i, t, 0), x2[t] = ds->inputs(i, t, 1);
      ASSERT_EQ(brute_force_label<float>(x1, x2), ds->labels[i]);
    }
  }
}

TEST(BinaryAdding, BalancedIsExactlyUniform) {
  BinaryAddingSpec s;
  s.steps = 20;
  s.train_size = 1000;
  s.test_size = 100;
  const auto [train, test] = gen_binary_adding<float>(s);
  std::array<int, 10> h{};
  for (int y : train.labels) ++h[y];
  for (int c : h) EXPECT_EQ(c, 100);
}

TEST(BinaryAdding, BalancedNeedsDivisibleSizes) {
  BinaryAddingSpec s;
  s.train_size = 1001;
  EXPECT_THROW(s.validate(), ConfigError);
  s.balance = Balance::Natural;
  EXPECT_NO_THROW(s.validate());
}

TEST(BinaryAdding, NaturalHistogramIsBinomial) {
  BinaryAddingSpec s;
  s.steps = 20;
  s.train_size = 20000;
  s.test_size = 10;
  s.balance = Balance::Natural;
  const auto train = gen_binary_adding<float>(s).first;
  std::array<double, 10> h{};
  for (int y : train.labels) ++h[y];
  for (int k = 0; k < 10; ++k) {
    const double p = binom9(k), n = 20000;
    EXPECT_LE(std::abs(h[k] - n * p), 5 * std::sqrt(n * p * (1 - p)) + 1e-9) << k;
  }
  EXPECT_DOUBLE_EQ(binom9(0), 1.0 / 512.0);
}

TEST(BinaryAdding, SplitsUseDistinctStreams) {
  BinaryAddingSpec s;
  s.steps = 20;
  s.train_size = 100;
  s.test_size = 100;
  const auto [train, test] = gen_binary_adding<float>(s);
  EXPECT_NE(train.inputs, test.inputs);
  const auto again = gen_binary_adding<float>(s);
  EXPECT_EQ(again.first.inputs, train.inputs);
  EXPECT_EQ(again.first.labels, train.labels);
}

TEST(BinaryAdding, HashTracksSpec) {
  BinaryAddingSpec a, b;
  b.seed = 1;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash(), BinaryAddingSpec{}.hash());
}

TEST(Stpd, RoundTrip) {
  const auto dir = scratch("stpd");
  BinaryAddingSpec s;
  s.steps = 12;
  s.train_size = 50;
  s.test_size = 10;
  const auto train = gen_binary_adding<double>(s).first;
  save_dataset(train, dir / "a.stpd");
  const auto back = load_dataset<double>(dir / "a.stpd");
  EXPECT_EQ(back.inputs, train.inputs);
  EXPECT_EQ(back.labels, train.labels);
  EXPECT_EQ(back.n_classes, 10u);
  EXPECT_EQ(back.meta.task, "binary_adding");
  EXPECT_EQ(back.meta.seed, train.meta.seed);
}

TEST(Stpd, TruncatedAndBadMagicRejected) {
  const auto dir = scratch("stpd_bad");
  BinaryAddingSpec s;
  s.steps = 12;
  s.train_size = 20;
  s.test_size = 10;
  save_dataset(gen_binary_adding<double>(s).first, dir / "a.stpd");
  fs::resize_file(dir / "a.stpd", fs::file_size(dir / "a.stpd") - 3);
  EXPECT_THROW(load_dataset<double>(dir / "a.stpd"), DataError);
  {
    std::ofstream os(dir / "b.stpd", std::ios::binary);
    os << "NOPE";
  }
  EXPECT_THROW(load_dataset<double>(dir / "b.stpd"), DataError);
  EXPECT_THROW(load_dataset<double>(dir / "missing.stpd"), DataError);
}

TEST(MnistIdx, LoadsSyntheticFiles) {
  const auto dir = scratch("idx");
  stp::testing::write_synthetic_idx(dir / "img", dir / "lab", 25);
  const auto m = load_mnist_idx<double>(dir / "img", dir / "lab");
  ASSERT_EQ(m.images.shape(), (Shape{25, 28, 28}));
  EXPECT_DOUBLE_EQ(m.images(3, 1, 2), (3 + 7 + 6) / 255.0);
  EXPECT_EQ(m.labels[13], 3);
}

TEST(MnistIdx, WrongMagicRejected) {
  const auto dir = scratch("idx_magic");
  stp::testing::write_synthetic_idx(dir / "img", dir / "lab", 5, 0x801, 0x801);
  EXPECT_THROW(load_mnist_idx<double>(dir / "img", dir / "lab"), DataError);
  stp::testing::write_synthetic_idx(dir / "img", dir / "lab", 5, 0x803, 0x803);
  EXPECT_THROW(load_mnist_idx<double>(dir / "img", dir / "lab"), DataError);
}

TEST(MnistIdx, TruncatedRejected) {
  const auto dir = scratch("idx_trunc");
  stp::testing::write_synthetic_idx(dir / "img", dir / "lab", 5);
  fs::resize_file(dir / "img", fs::file_size(dir / "img") - 1);
  EXPECT_THROW(load_mnist_idx<double>(dir / "img", dir / "lab"), DataError);
}

// Runs only when the official files are present under $STP_DATA_ROOT/mnist.
TEST(MnistIdx, OfficialTrainFiles) {
  const char* env = std::getenv("STP_DATA_ROOT");
  const fs::path dir = fs::path(env ? env : "data") / "mnist";
  if (!fs::exists(dir / "train-images-idx3-ubyte")) GTEST_SKIP() << "official MNIST files not present";
  const auto m = load_mnist_idx<float>(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  EXPECT_EQ(m.labels.size(), 60000u);
  // Independent byte-level count of class 1.
  std::ifstream lab(dir / "train-labels-idx1-ubyte", std::ios::binary);
  lab.seekg(8);
  long ones = 0;
  for (char c; lab.get(c);) ones += c == 1;
  EXPECT_EQ(ones, 6742);
  EXPECT_EQ(std::count(m.labels.begin(), m.labels.end(), 1), 6742);
}

TEST(PsMnist, PermutationGolden) {
  const auto p = ps_mnist_permutation(2024);
  EXPECT_EQ(std::vector<std::uint32_t>(p.begin(), p.begin() + 5), (std::vector<std::uint32_t>{274, 383, 278, 283, 665}));
}

TEST(PsMnist, IdentityPermutationIsRowMajorScan) {
  Tensor<double> img({2, 28, 28});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i % 97);
  std::vector<std::uint32_t> id(784);
  std::iota(id.begin(), id.end(), 0u);
  const std::vector<int> y{1, 2};
  const auto ds = make_ps_mnist(img, y, id);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < 784; ++j) ASSERT_EQ(ds.inputs(k, j, 0), img(k, j / 28, j % 28));
}

TEST(PsMnist, SharedPermutationRoundTrip) {
  Tensor<double> img({3, 28, 28});
  Rng64 r(1);
  for (auto& v : img.values()) v = r.uniform();
  const std::vector<int> y{0, 1, 2};
  const auto perm = ps_mnist_permutation(2024);
  const auto ds = make_ps_mnist(img, y, perm);
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> flat(784);
    for (std::size_t j = 0; j < 784; ++j) flat[perm[j]] = ds.inputs(k, j, 0);
    for (std::size_t j = 0; j < 784; ++j) ASSERT_EQ(flat[j], img.row(k)[j]);
  }
}

TEST(PsMnist, RejectsBadShapes) {
  const std::vector<int> y{0};
  EXPECT_THROW(make_ps_mnist(Tensor<double>({1, 27, 28}), y, std::uint64_t{0}), ShapeError);
  std::vector<std::uint32_t> short_perm(10);
  EXPECT_THROW(make_ps_mnist(Tensor<double>({1, 28, 28}), y, short_perm), ShapeError);
}

TEST(Dataset, GatherCopiesRows) {
  BinaryAddingSpec s;
  s.steps = 12;
  s.train_size = 30;
  s.test_size = 10;
  const auto ds = gen_binary_adding<double>(s).first;
  const std::vector<std::uint32_t> idx{5, 2};
  const auto b = ds.gather(idx);
  for (std::size_t t = 0; t < 12; ++t) {
    EXPECT_EQ(b(0, t, 0), ds.inputs(5, t, 0));
    EXPECT_EQ(b(1, t, 1), ds.inputs(2, t, 1));
  }
}
