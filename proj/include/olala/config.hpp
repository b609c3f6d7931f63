#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "olala/learner.hpp"
#include "olala/model.hpp"
#include "olala/protocol.hpp"

namespace olala {

/// Every knob of one FL experiment. Keys in config files match the field
/// comments; see config_keys() for the full list.
struct ExperimentConfig {
  ModelKind model = ModelKind::linear;        // model
  std::vector<int> hidden = {64, 32};         // hidden (mlp only)
  std::string dataset = "synthetic";          // dataset: synthetic | idx
  std::string train_images;                   // train_images
  std::string train_labels;                   // train_labels
  std::string test_images;                    // test_images
  std::string test_labels;                    // test_labels
  int synthetic_features = 64;                // synthetic_features
  int synthetic_classes = 10;                 // synthetic_classes
  int synthetic_train = 10000;                // synthetic_train
  int synthetic_test = 2000;                  // synthetic_test
  double synthetic_separation = 0.5;          // synthetic_separation
  std::uint64_t data_seed = 0;                // data_seed (0: derive from master_seed)

  int users = 5;                              // U
  int dim = 2;                                // L
  double rate = 3.0;                          // R
  int rounds = 20;                            // rounds
  int local_steps = 100;                      // local_steps
  double lr = 0.1;                            // lr
  int adapt_every = 1;                        // adapt_every (rounds)
  QuantizerKind quantizer = QuantizerKind::olala;  // quantizer

  LossKind loss_kind = LossKind::mse;         // loss_kind
  double lattice_lr = 0.0;                    // lattice_lr (0: per-loss default)
  int learner_epochs = 20;                    // learner_epochs
  int learner_batches = 8;                    // learner_batches
  double target_overload = 0.005;             // target_overload
  OverloadMode overload_mode = OverloadMode::fraction;  // overload_mode
  double heuristic_target = 0.003;            // heuristic_target
  double heuristic_sigmas = 3.0;              // heuristic_sigmas
  double gamma = 1.0;                         // gamma
  bool include_zeta = true;                   // include_zeta
  bool reset_theta_each_round = false;        // reset_theta_each_round

  std::uint64_t master_seed = 1;              // master_seed
  int parallel = 1;                           // parallel
  std::string out = ".";                      // out
  int verbosity = 0;                          // verbosity

  /// Throws ConfigError naming the first offending key.
  void validate() const;
  LearnerConfig learner() const;
  ModelArch arch(int inputs, int classes) const;
  std::uint64_t effective_data_seed() const;
};

/// Keys accepted by apply_setting, in documentation order.
const std::vector<std::string>& config_keys();

/// Sets one field from text. Unknown keys and malformed values throw
/// ConfigError naming the key. Does not run validate().
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Splits "key=value" (whitespace around either side is trimmed).
std::pair<std::string, std::string> split_assignment(const std::string& text);

/// Flat "key = value" lines, '#' starts a comment, blank lines ignored.
void apply_config_text(ExperimentConfig& cfg, const std::string& text);

/// File (optional, "" for none) then overrides, then validate().
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

/// Canonical key=value dump of every field.
std::string format_config(const ExperimentConfig& cfg);

std::vector<std::string> split_list(const std::string& text);

/// Shortest text that parses back to the same double ("inf", "nan" for
/// non-finite values).
std::string format_number(double v);

}  // namespace olala
