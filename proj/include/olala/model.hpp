#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "olala/dataset.hpp"
#include "olala/rng.hpp"

namespace olala {

enum class ModelKind { linear, mlp };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Fully connected classifier. Linear is softmax regression; mlp adds ReLU
/// hidden layers. Parameters are stored per layer as W (out x in,
/// column-major) followed by b (out).
struct ModelArch {
  ModelKind kind = ModelKind::linear;
  int inputs = 0;
  int classes = 0;
  std::vector<int> hidden;

  /// Layer widths from input to output.
  std::vector<int> widths() const;
  Eigen::Index parameter_count() const;
  void validate() const;
};

struct Model {
  ModelArch arch;
  Vector params;
};

/// Fan-in uniform weights, zero biases.
Model init_model(const ModelArch& arch, std::uint64_t seed);

Vector model_logits(const ModelArch& arch, const Vector& params, const Eigen::Ref<const Vector>& x);

/// Cross-entropy of one sample; adds its parameter gradient into `grad`
/// (sized like params) when non-null.
double sample_loss(const ModelArch& arch, const Vector& params, const Eigen::Ref<const Vector>& x, int label,
                   Vector* grad);

/// Mean cross-entropy over the dataset, with the mean gradient.
double dataset_loss(const ModelArch& arch, const Vector& params, const Dataset& ds, Vector* grad);

/// Where an SGD run sits in the experiment, for error messages.
struct TrainContext {
  int round = 0;
  int client = -1;
};

/// `steps` single-sample SGD steps starting from `model`, sample indices
/// drawn uniformly from `rng`. Returns w_after - w_before; `model` is not
/// modified. A non-finite loss throws NumericError naming round and step.
Vector local_train(const Model& model, const Dataset& shard, int steps, double eta, Rng& rng,
                   const TrainContext& context = {});

/// Fraction of argmax-correct predictions (lowest class wins ties).
double evaluate(const Model& model, const Dataset& test);

/// Kind (u32), input/class counts (u32), hidden count and widths (u32),
/// parameter count (u64), parameters (f64), all little-endian.
std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes);

}  // namespace olala
