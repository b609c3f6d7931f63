#include "olala/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "olala/error.hpp"
#include "olala/rng.hpp"

namespace olala {

namespace {

constexpr std::uint8_t kUnsignedByte = 0x08;

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

}  // namespace

void Dataset::validate() const {
  if (static_cast<std::size_t>(samples.cols()) != labels.size()) {
    throw UsageError("dataset: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(samples.cols()) + " samples");
  }
  if (classes < 1) throw UsageError("dataset: needs at least one class");
  for (int y : labels) {
    if (y < 0 || y >= classes) throw UsageError("dataset: label " + std::to_string(y) + " out of range");
  }
}

IdxArray parse_idx(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw IoError("idx: truncated header");
  if (bytes[0] != 0 || bytes[1] != 0) throw IoError("idx: bad magic");
  if (bytes[2] != kUnsignedByte) throw IoError("idx: only unsigned-byte data is supported");
  const int ndims = bytes[3];
  if (ndims < 1) throw IoError("idx: zero dimensions");
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(ndims);
  if (bytes.size() < header) throw IoError("idx: truncated dimension list");
  IdxArray out;
  std::size_t total = 1;
  for (int i = 0; i < ndims; ++i) {
    out.dims.push_back(read_be32(bytes, 4 + 4 * static_cast<std::size_t>(i)));
    total *= out.dims.back();
  }
  if (bytes.size() - header != total) {
    throw IoError("idx: expected " + std::to_string(total) + " data bytes, found " +
                  std::to_string(bytes.size() - header));
  }
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

IdxArray read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_idx(bytes);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_idx(const IdxArray& array) {
  std::vector<std::uint8_t> out = {0, 0, kUnsignedByte, static_cast<std::uint8_t>(array.dims.size())};
  for (std::uint32_t d : array.dims) put_be32(out, d);
  out.insert(out.end(), array.data.begin(), array.data.end());
  return out;
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path, int classes) {
  const IdxArray images = read_idx(images_path);
  const IdxArray labels = read_idx(labels_path);
  if (labels.dims.size() != 1) throw IoError(labels_path + ": label file must be one-dimensional");
  const std::size_t n = images.dims[0];
  if (labels.dims[0] != n) throw IoError("image and label counts differ");
  if (n == 0) throw IoError(images_path + ": no samples");
  const std::size_t d = images.data.size() / n;

  Dataset ds;
  ds.samples.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      ds.samples(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = images.data[i * d + j] / 255.0;
  ds.labels.assign(labels.data.begin(), labels.data.end());
  ds.classes = classes > 0 ? classes : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.validate();
  return ds;
}

TrainTest synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.features < 1 || spec.classes < 1 || spec.train_size < 1 || spec.test_size < 1) {
    throw UsageError("synthetic dataset: sizes must be positive");
  }
  Rng centre_rng(mix_seed(spec.seed, 0));
  Matrix centres(spec.features, spec.classes);
  for (auto& v : centres.reshaped()) v = spec.separation * centre_rng.normal();

  auto draw = [&](Eigen::Index n, std::uint64_t tag) {
    Rng rng(mix_seed(spec.seed, tag));
    Dataset ds;
    ds.classes = spec.classes;
    ds.samples.resize(spec.features, n);
    ds.labels.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = static_cast<int>(i % spec.classes);
      ds.labels[static_cast<std::size_t>(i)] = y;
      for (int j = 0; j < spec.features; ++j) {
        const double z = centres(j, y) + rng.normal();
        ds.samples(j, i) = 1.0 / (1.0 + std::exp(-z));
      }
    }
    return ds;
  };
  return {draw(spec.train_size, 1), draw(spec.test_size, 2)};
}

std::vector<int> user_classes(int user, int classes) {
  return {(2 * user) % classes, (2 * user + 1) % classes, (2 * user + 2) % classes};
}

std::vector<Shard> partition_dataset(const Dataset& ds, int users, std::uint64_t seed) {
  if (ds.classes < 3) throw PartitionError("partition needs at least 3 classes, got " + std::to_string(ds.classes));
  if (users < 1) throw PartitionError("partition needs at least one user");

  std::vector<std::vector<int>> owners(static_cast<std::size_t>(ds.classes));
  for (int u = 0; u < users; ++u) {
    for (int c : user_classes(u, ds.classes)) {
      auto& list = owners[static_cast<std::size_t>(c)];
      if (std::find(list.begin(), list.end(), u) == list.end()) list.push_back(u);
    }
  }
  std::vector<Shard> by_class(static_cast<std::size_t>(ds.classes));
  for (Eigen::Index i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);

  std::vector<Shard> shards(static_cast<std::size_t>(users));
  for (int c = 0; c < ds.classes; ++c) {
    const auto& list = owners[static_cast<std::size_t>(c)];
    if (list.empty()) continue;
    Shard members = by_class[static_cast<std::size_t>(c)];
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(std::span<Eigen::Index>(members));
    const std::size_t n = members.size();
    const std::size_t k = list.size();
    for (std::size_t i = 0; i < k; ++i) {
      auto& shard = shards[static_cast<std::size_t>(list[i])];
      shard.insert(shard.end(), members.begin() + static_cast<std::ptrdiff_t>(n * i / k),
                   members.begin() + static_cast<std::ptrdiff_t>(n * (i + 1) / k));
    }
  }
  for (auto& shard : shards) std::sort(shard.begin(), shard.end());
  return shards;
}

Dataset subset(const Dataset& ds, const Shard& indices) {
  Dataset out;
  out.classes = ds.classes;
  out.samples.resize(ds.samples.rows(), static_cast<Eigen::Index>(indices.size()));
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.samples.col(static_cast<Eigen::Index>(i)) = ds.samples.col(indices[i]);
    out.labels[i] = ds.labels[static_cast<std::size_t>(indices[i])];
  }
  return out;
}

}  // namespace olala
