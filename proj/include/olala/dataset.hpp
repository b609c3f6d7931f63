#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "olala/lattice.hpp"

namespace olala {

/// Labelled samples; one column of `samples` per sample, values in [0, 1].
struct Dataset {
  Matrix samples;  // d x N
  std::vector<int> labels;
  int classes = 0;

  Eigen::Index size() const noexcept { return samples.cols(); }
  int features() const noexcept { return static_cast<int>(samples.rows()); }
  /// Throws UsageError when labels and samples disagree or a label is out of range.
  void validate() const;
};

/// Raw IDX array: big-endian dimensions followed by unsigned bytes.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

/// Only the unsigned-byte element type (0x08) is supported. Throws IoError.
IdxArray read_idx(const std::string& path);
IdxArray parse_idx(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_idx(const IdxArray& array);

/// Image file (N x rows x cols or N x d) plus label file (N); pixels are
/// divided by 255. `classes` <= 0 infers max label + 1.
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path, int classes = 0);

struct SyntheticSpec {
  int features = 64;
  int classes = 10;
  Eigen::Index train_size = 10000;
  Eigen::Index test_size = 2000;
  /// Spread of the class centres relative to the unit within-class noise.
  double separation = 1.0;
  std::uint64_t seed = 1;
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

/// Gaussian mixture (one centre per class, balanced labels) squashed into
/// (0, 1) by the logistic function.
TrainTest synthetic_dataset(const SyntheticSpec& spec);

using Shard = std::vector<Eigen::Index>;

/// User u gets the classes {2u, 2u+1, 2u+2} mod C. A class held by several
/// users is shuffled (seeded) and dealt out in near-equal contiguous chunks
/// in ascending user order. Throws PartitionError for C < 3 or users < 1.
std::vector<Shard> partition_dataset(const Dataset& ds, int users, std::uint64_t seed);

std::vector<int> user_classes(int user, int classes);

Dataset subset(const Dataset& ds, const Shard& indices);

}  // namespace olala
