#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "olala/config.hpp"
#include "olala/dataset.hpp"
#include "olala/learner.hpp"
#include "olala/model.hpp"
#include "olala/prior_net.hpp"
#include "olala/protocol.hpp"

namespace olala {

/// Per-round seed purposes, mixed into mix_seed(xi_u, t).
enum class SeedPurpose : std::uint64_t { dither = 0, train = 1, probe = 2, learner = 3 };

/// xi_u, the root seed of client u, shared with the server.
std::uint64_t client_seed(std::uint64_t master_seed, int client);
std::uint64_t round_seed(std::uint64_t xi, int round, SeedPurpose purpose);

struct ClientState {
  int id = 0;
  Dataset shard;
  std::uint64_t seed = 0;  // xi_u
  QuantizerKind kind = QuantizerKind::none;
  /// Current codebook (fixed and static kinds: set once; olala: the last
  /// adapted lattice).
  std::optional<TruncatedLattice> lattice;
  std::optional<PriorNet> net;
};

struct LatticeLogEntry {
  int round = 0;
  int client = 0;
  GeneratorMatrix gen;
  double zeta = 1.0;
  std::int64_t codebook_size = 0;
};

struct ClientOutcome {
  std::vector<std::uint8_t> payload;
  Vector update;          // h
  Vector reconstruction;  // what the server will decode
  double distortion = 0.0;
  double overload = 0.0;
  double snr_db = 0.0;
  double zeta = 1.0;
  std::int64_t bits = 0;
  std::optional<LatticeLogEntry> lattice;
};

/// One client's side of round t (t >= 1): local SGD from w_global, lattice
/// adaptation when due, zeta fitting and SDQ encoding.
ClientOutcome client_round(ClientState& client, const Model& global, int round, const ExperimentConfig& cfg);

/// Decodes exactly one payload per client 0..U-1 (any arrival order) with
/// dithers regenerated from the clients' seeds and returns
/// w + (1/U) * sum of decoded updates, summed in ascending client id.
/// Missing, duplicate or stale payloads throw ProtocolError.
Model server_round(std::span<const std::vector<std::uint8_t>> payloads, const Model& global,
                   std::span<const std::uint64_t> client_seeds, int round, double gamma);

struct ClientMetrics {
  int client = 0;
  double distortion = 0.0;
  double overload = 0.0;
  double snr_db = 0.0;
  double zeta = 1.0;
  std::int64_t bits = 0;
};

struct RoundRecord {
  int round = 0;
  double accuracy = 0.0;
  double mean_snr_db = 0.0;
  double mean_distortion = 0.0;
  std::int64_t total_bits = 0;
  std::vector<ClientMetrics> clients;
};

struct FlResult {
  Model initial_model;
  Model final_model;
  std::vector<RoundRecord> rounds;
  std::vector<LatticeLogEntry> lattices;
};

/// Dataset named by the config (synthetic or IDX files).
TrainTest load_experiment_data(const ExperimentConfig& cfg);

/// Client states after partitioning and, for the static kinds, the one-off
/// lattice learned from each client's round-0 update at w0.
std::vector<ClientState> setup_clients(const ExperimentConfig& cfg, const Dataset& train, const Model& w0);

/// Full experiment. Deterministic for a given config regardless of
/// cfg.parallel.
FlResult run_fl(const ExperimentConfig& cfg);
FlResult run_fl(const ExperimentConfig& cfg, const TrainTest& data);

/// t,accuracy,mean_snr_db,mean_distortion,total_bits with a header row.
std::string rounds_csv(const std::vector<RoundRecord>& rounds);
/// One JSON object per line: t, client, G (row-major), zeta, codebook_size.
std::string lattices_jsonl(const std::vector<LatticeLogEntry>& lattices);

/// Writes rounds.csv, lattices.jsonl and final_model.bin into `dir`
/// (created if needed). Returns the written paths.
std::vector<std::string> write_outputs(const std::string& dir, const FlResult& result);

struct SweepRow {
  QuantizerKind quantizer = QuantizerKind::none;
  double rate = 0.0;
  double accuracy = 0.0;
  double mean_snr_db = 0.0;
  std::int64_t bits_per_round = 0;
};

/// Called after each sweep entry with its row and full result.
using SweepCallback = std::function<void(const SweepRow&, const FlResult&)>;

/// Runs cfg once per (quantizer, rate) pair, quantizers outermost.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::vector<QuantizerKind>& quantizers,
                                const std::vector<double>& rates, const SweepCallback& on_entry = {});
/// quantizer,R,accuracy,mean_snr_db,bits_per_round with a header row.
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace olala
