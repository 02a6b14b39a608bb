#pragma once

// Benchmark construction: Binary Adding and permuted-sequential MNIST, plus
// the STPD dataset file format.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stp/binio.hpp"
#include "stp/hash.hpp"
#include "stp/numerics.hpp"

namespace stp {

struct DatasetMeta {
  std::string task;
  std::uint64_t seed = 0;
  std::string spec_hash;
};

template <typename Real = double>
struct SequenceDataset {
  Tensor<Real> inputs;  // [N x T x C]
  std::vector<int> labels;
  std::uint32_t n_classes = 0;
  DatasetMeta meta;

  std::size_t samples() const { return labels.size(); }
  std::size_t steps() const { return inputs.dim(1); }
  std::size_t channels() const { return inputs.dim(2); }

  void validate() const {
    if (inputs.rank() != 3 || inputs.dim(0) != labels.size())
      throw DataError("dataset inputs/labels disagree on sample count");
    for (int y : labels)
      if (y < 0 || static_cast<std::uint32_t>(y) >= n_classes)
        throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(n_classes) + ")");
  }

  // Rows `idx` gathered into a batch tensor.
  Tensor<Real> gather(std::span<const std::uint32_t> idx) const {
    const std::size_t stride = steps() * channels();
    Tensor<Real> b({idx.size(), steps(), channels()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = inputs.row(idx[i]);
      std::copy(src.begin(), src.end(), b.data() + i * stride);
    }
    return b;
  }
};

enum class Balance { Natural, Balanced };

struct BinaryAddingSpec {
  static constexpr std::uint32_t kMarks = 9;
  static constexpr std::uint32_t kClasses = 10;

  std::uint32_t steps = 100;
  std::uint32_t train_size = 50000;
  std::uint32_t test_size = 2000;
  std::uint64_t seed = 0;
  Balance balance = Balance::Balanced;

  void validate() const {
    if (steps < 10 || steps <= kMarks)
      throw ConfigError("binary adding needs T >= 10, got " + std::to_string(steps));
    if (train_size == 0 || test_size == 0) throw ConfigError("binary adding split sizes must be > 0");
    if (balance == Balance::Balanced && (train_size % kClasses || test_size % kClasses))
      throw ConfigError("balanced binary adding needs split sizes divisible by 10");
  }

  std::string canonical() const {
    std::ostringstream oss;
    oss << "binary_adding;T=" << steps << ";train=" << train_size << ";test=" << test_size
        << ";seed=" << seed << ";balance=" << (balance == Balance::Balanced ? "balanced" : "natural");
    return oss.str();
  }

  std::string hash() const { return hex(sha256(canonical())); }
};

// Literal sum of x1[t] * x2[t]; x2 must mark exactly nine steps.
template <typename Real>
int brute_force_label(std::span<const Real> x1, std::span<const Real> x2) {
  if (x1.size() != x2.size()) throw DataError("binary adding channels differ in length");
  int marks = 0, y = 0;
  for (std::size_t t = 0; t < x1.size(); ++t) {
    if ((x1[t] != Real(0) && x1[t] != Real(1)) || (x2[t] != Real(0) && x2[t] != Real(1)))
      throw DataError("binary adding channels must be 0/1");
    if (x2[t] == Real(1)) {
      ++marks;
      if (x1[t] == Real(1)) ++y;
    }
  }
  if (marks != static_cast<int>(BinaryAddingSpec::kMarks))
    throw DataError("mark channel has " + std::to_string(marks) + " ones, expected 9");
  return y;
}

namespace detail {

template <typename Real>
SequenceDataset<Real> binary_adding_split(const BinaryAddingSpec& spec, std::uint32_t n,
                                          std::uint64_t seed, const std::string& hash) {
  constexpr std::uint32_t K = BinaryAddingSpec::kClasses;
  const std::uint32_t T = spec.steps;
  Rng64 rng(seed);
  SequenceDataset<Real> ds;
  ds.inputs = Tensor<Real>({n, T, 2});
  ds.labels.reserve(n);
  ds.n_classes = K;
  ds.meta = {"binary_adding", seed, hash};

  const std::uint32_t quota = n / K;
  std::array<std::uint32_t, K> filled{};
  std::vector<std::uint8_t> x1(T);
  std::uint32_t accepted = 0;
  while (accepted < n) {
    for (auto& v : x1) v = static_cast<std::uint8_t>(rng.below(2));
    const auto marks = choose_k(rng, T, BinaryAddingSpec::kMarks);
    int y = 0;
    for (auto t : marks) y += x1[t];
    if (spec.balance == Balance::Balanced) {
      if (filled[y] >= quota) continue;
      ++filled[y];
    }
    for (std::uint32_t t = 0; t < T; ++t) ds.inputs(accepted, t, 0) = static_cast<Real>(x1[t]);
    for (auto t : marks) ds.inputs(accepted, t, 1) = Real(1);
    ds.labels.push_back(y);
    ++accepted;
  }
  return ds;
}

}  // namespace detail

// Train split draws from stream `seed`, test split from `seed + 1`.
template <typename Real = double>
std::pair<SequenceDataset<Real>, SequenceDataset<Real>> gen_binary_adding(const BinaryAddingSpec& spec) {
  spec.validate();
  const std::string h = spec.hash();
  auto train = detail::binary_adding_split<Real>(spec, spec.train_size, spec.seed, h);
  auto test = detail::binary_adding_split<Real>(spec, spec.test_size, spec.seed + 1, h);
  return {std::move(train), std::move(test)};
}

template <typename Real = double>
struct MnistSet {
  Tensor<Real> images;  // [N x 28 x 28], scaled to [0, 1]
  std::vector<int> labels;
};

// Big-endian IDX image/label pair as distributed.
template <typename Real = double>
MnistSet<Real> load_mnist_idx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataError("cannot open " + images_path.string());
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataError("cannot open " + labels_path.string());

  const auto img_magic = binio::get_be<std::uint32_t>(img, "image magic");
  if (img_magic != 0x00000803u) throw DataError("bad IDX image magic in " + images_path.string());
  const auto n = binio::get_be<std::uint32_t>(img, "image count");
  const auto rows = binio::get_be<std::uint32_t>(img, "image rows");
  const auto cols = binio::get_be<std::uint32_t>(img, "image cols");
  if (rows != 28 || cols != 28) throw DataError("IDX images must be 28x28");

  const auto lab_magic = binio::get_be<std::uint32_t>(lab, "label magic");
  if (lab_magic != 0x00000801u) throw DataError("bad IDX label magic in " + labels_path.string());
  const auto nl = binio::get_be<std::uint32_t>(lab, "label count");
  if (nl != n) throw DataError("IDX image/label counts disagree");

  MnistSet<Real> out{Tensor<Real>({n, 28, 28}), std::vector<int>(n)};
  std::vector<unsigned char> buf(static_cast<std::size_t>(n) * 784);
  binio::read_exact(img, reinterpret_cast<char*>(buf.data()), buf.size(), "image pixels");
  for (std::size_t i = 0; i < buf.size(); ++i) out.images[i] = static_cast<Real>(buf[i]) / Real(255);
  std::vector<unsigned char> lb(n);
  binio::read_exact(lab, reinterpret_cast<char*>(lb.data()), lb.size(), "labels");
  for (std::size_t i = 0; i < n; ++i) {
    if (lb[i] > 9) throw DataError("IDX label out of range");
    out.labels[i] = lb[i];
  }
  return out;
}

inline std::vector<std::uint32_t> ps_mnist_permutation(std::uint64_t seed) {
  Rng64 r(seed);
  return fisher_yates(r, 784);
}

// Row-major flatten, then one shared pixel permutation: step j shows pixel perm[j].
template <typename Real>
SequenceDataset<Real> make_ps_mnist(const Tensor<Real>& images, std::span<const int> labels,
                                    std::span<const std::uint32_t> perm, std::uint64_t seed = 0) {
  if (images.rank() != 3 || images.dim(1) != 28 || images.dim(2) != 28)
    throw ShapeError("PS-MNIST expects [N x 28 x 28] images");
  if (images.dim(0) != labels.size()) throw ShapeError("PS-MNIST images/labels disagree");
  if (perm.size() != 784) throw ShapeError("PS-MNIST permutation must have 784 entries");
  const std::size_t n = images.dim(0);
  SequenceDataset<Real> ds;
  ds.inputs = Tensor<Real>({n, 784, 1});
  ds.labels.assign(labels.begin(), labels.end());
  ds.n_classes = 10;
  ds.meta = {"ps_mnist", seed, hex(sha256("ps_mnist;seed=" + std::to_string(seed)))};
  for (std::size_t i = 0; i < n; ++i) {
    auto src = images.row(i);
    auto dst = ds.inputs.row(i);
    for (std::size_t j = 0; j < 784; ++j) dst[j] = src[perm[j]];
  }
  return ds;
}

template <typename Real>
SequenceDataset<Real> make_ps_mnist(const Tensor<Real>& images, std::span<const int> labels,
                                    std::uint64_t seed) {
  const auto perm = ps_mnist_permutation(seed);
  return make_ps_mnist(images, labels, perm, seed);
}

// STPD: "STPD", version u32, name len u32 + UTF-8, seed u64, N, T, C, classes
// (u32 each), N*T*C f32 inputs, N u16 labels. All little-endian.
inline constexpr std::uint32_t kDatasetVersion = 1;

template <typename Real>
void save_dataset(const SequenceDataset<Real>& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  binio::put_bytes(os, "STPD");
  binio::put_le<std::uint32_t>(os, kDatasetVersion);
  binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.meta.task.size()));
  binio::put_bytes(os, ds.meta.task);
  binio::put_le<std::uint64_t>(os, ds.meta.seed);
  binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.samples()));
  binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.steps()));
  binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.channels()));
  binio::put_le<std::uint32_t>(os, ds.n_classes);
  for (Real v : ds.inputs.values()) binio::put_f32(os, static_cast<float>(v));
  for (int y : ds.labels) binio::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(y));
  if (!os) throw DataError("write failed for " + path.string());
}

template <typename Real = double>
SequenceDataset<Real> load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  if (binio::get_bytes(is, 4, "magic") != "STPD") throw DataError("not an STPD file: " + path.string());
  const auto version = binio::get_le<std::uint32_t>(is, "version");
  if (version != kDatasetVersion) throw DataError("unsupported STPD version " + std::to_string(version));
  SequenceDataset<Real> ds;
  const auto name_len = binio::get_le<std::uint32_t>(is, "name length");
  ds.meta.task = binio::get_bytes(is, name_len, "task name");
  ds.meta.seed = binio::get_le<std::uint64_t>(is, "seed");
  const auto n = binio::get_le<std::uint32_t>(is, "N");
  const auto t = binio::get_le<std::uint32_t>(is, "T");
  const auto c = binio::get_le<std::uint32_t>(is, "C");
  ds.n_classes = binio::get_le<std::uint32_t>(is, "classes");
  ds.inputs = Tensor<Real>({n, t, c});
  std::vector<char> raw(ds.inputs.size() * 4);
  binio::read_exact(is, raw.data(), raw.size(), "inputs");
  for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
    std::uint32_t w = 0;
    for (int b = 0; b < 4; ++b) w |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * i + b])) << (8 * b);
    ds.inputs[i] = static_cast<Real>(std::bit_cast<float>(w));
  }
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = binio::get_le<std::uint16_t>(is, "labels");
  ds.validate();
  return ds;
}

}  // namespace stp
