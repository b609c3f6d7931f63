#include "olala/fl.hpp"

#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "olala/error.hpp"
#include "olala/rng.hpp"

namespace olala {

namespace {

constexpr std::uint64_t kClientTag = 0xC11E;
constexpr std::uint64_t kNetTag = 0x9E7;
constexpr std::uint64_t kGlobalNetTag = 0x610B;
constexpr std::uint64_t kGlobalLearnerTag = 0x610C;
constexpr std::uint64_t kModelTag = 0x30DE;
constexpr std::uint64_t kPartitionTag = 0x9A27;

double snr_db(double signal, double noise) {
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  if (signal == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / noise);
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions are
// rethrown for the lowest failing index so failures are schedule-independent.
template <class Fn>
void for_each_index(int n, int threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  const int workers = std::max(1, std::min(threads, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
        break;
      }
    }
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int i = w; i < n; i += workers) {
          try {
            fn(i);
          } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

TaskContext shard_task(const Model& global, const Dataset& shard) {
  TaskContext task;
  task.model = global.params;
  task.objective = [arch = global.arch, &shard](const Vector& params, Vector* grad) {
    return dataset_loss(arch, params, shard, grad);
  };
  return task;
}

TruncatedLattice learned_codebook(const LearnedLattice& learned, double gamma) {
  return build_lattice(learned.gen, gamma);
}

}  // namespace

std::uint64_t client_seed(std::uint64_t master_seed, int client) {
  return mix_seed(mix_seed(master_seed, kClientTag), static_cast<std::uint64_t>(client));
}

std::uint64_t round_seed(std::uint64_t xi, int round, SeedPurpose purpose) {
  return mix_seed(mix_seed(xi, static_cast<std::uint64_t>(round)), static_cast<std::uint64_t>(purpose));
}

ClientOutcome client_round(ClientState& client, const Model& global, int round, const ExperimentConfig& cfg) {
  if (round < 1) throw UsageError("client_round: rounds start at 1");
  Rng rng(round_seed(client.seed, round, SeedPurpose::train));
  ClientOutcome out;
  out.update = local_train(global, client.shard, cfg.local_steps, cfg.lr, rng, TrainContext{round, client.id});
  const Vector& h = out.update;
  const auto m = static_cast<std::int64_t>(h.size());
  const auto id = static_cast<std::uint32_t>(client.id);
  const auto t = static_cast<std::uint32_t>(round);

  if (client.kind == QuantizerKind::none) {
    Encoded enc = encode_raw(h, id, t);
    out.payload = serialize_payload(enc.payload);
    out.reconstruction = std::move(enc.reconstruction);
    out.snr_db = snr_db(h.squaredNorm(), 0.0);
    out.bits = raw_bits(m);
    return out;
  }

  LearnerConfig lc = cfg.learner();
  lc.seed = round_seed(client.seed, round, SeedPurpose::learner);
  bool adapted = false;
  if (client.kind == QuantizerKind::olala && (round - 1) % cfg.adapt_every == 0) {
    if (!client.net || cfg.reset_theta_each_round) client.net.emplace(cfg.dim, mix_seed(client.seed, kNetTag));
    const TaskContext task = shard_task(global, client.shard);
    const LearnedLattice learned =
        online_lattice_learning(*client.net, h, lc, lc.loss == LossKind::task ? &task : nullptr);
    client.lattice = learned_codebook(learned, cfg.gamma);
    adapted = true;
  }
  if (!client.lattice) throw UsageError("client_round: client " + std::to_string(client.id) + " has no lattice");

  const SplitVector split = split_vector(h, cfg.dim);
  const ScaleFit fit = fit_zeta(split.blocks, *client.lattice, round_seed(client.seed, round, SeedPurpose::probe), lc);
  const SdqCodec codec(*client.lattice, fit.zeta);
  Encoded enc = encode_update(h, codec, round_seed(client.seed, round, SeedPurpose::dither), id, t, client.kind);
  out.payload = serialize_payload(enc.payload);
  out.reconstruction = std::move(enc.reconstruction);
  out.distortion = enc.distortion;
  out.overload = enc.overload;
  out.snr_db = snr_db(h.squaredNorm(), enc.distortion);
  out.zeta = fit.zeta;
  out.bits = bits_accounting(m, cfg.rate, cfg.dim, cfg.include_zeta);
  if (adapted || (client.kind != QuantizerKind::olala && round == 1)) {
    out.lattice = LatticeLogEntry{round, client.id, client.lattice->gen, fit.zeta,
                                  static_cast<std::int64_t>(client.lattice->size())};
  }
  return out;
}

Model server_round(std::span<const std::vector<std::uint8_t>> payloads, const Model& global,
                   std::span<const std::uint64_t> client_seeds, int round, double gamma) {
  const std::size_t users = client_seeds.size();
  if (users == 0) throw ProtocolError("server_round: no clients");
  if (payloads.size() != users) {
    throw ProtocolError("server_round: expected " + std::to_string(users) + " payloads, got " +
                        std::to_string(payloads.size()));
  }
  std::vector<std::optional<Payload>> by_client(users);
  for (const auto& bytes : payloads) {
    Payload p = deserialize_payload(bytes);
    if (p.client >= users) throw ProtocolError("server_round: unknown client " + std::to_string(p.client));
    if (p.round != static_cast<std::uint32_t>(round)) {
      throw ProtocolError("server_round: payload of client " + std::to_string(p.client) + " is for round " +
                          std::to_string(p.round));
    }
    if (p.size != static_cast<std::uint64_t>(global.params.size())) {
      throw ProtocolError("server_round: payload of client " + std::to_string(p.client) + " has the wrong length");
    }
    auto& slot = by_client[p.client];
    if (slot) throw ProtocolError("server_round: duplicate payload from client " + std::to_string(p.client));
    slot = std::move(p);
  }
  Vector sum = Vector::Zero(global.params.size());
  for (std::size_t u = 0; u < users; ++u) {
    sum += decode_payload(*by_client[u], gamma, round_seed(client_seeds[u], round, SeedPurpose::dither));
  }
  Model next = global;
  next.params += sum / static_cast<double>(users);
  return next;
}

TrainTest load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.dataset == "idx") {
    TrainTest out{load_idx_dataset(cfg.train_images, cfg.train_labels),
                  load_idx_dataset(cfg.test_images, cfg.test_labels)};
    const int classes = std::max(out.train.classes, out.test.classes);
    out.train.classes = out.test.classes = classes;
    return out;
  }
  SyntheticSpec spec;
  spec.features = cfg.synthetic_features;
  spec.classes = cfg.synthetic_classes;
  spec.train_size = cfg.synthetic_train;
  spec.test_size = cfg.synthetic_test;
  spec.separation = cfg.synthetic_separation;
  spec.seed = cfg.effective_data_seed();
  return synthetic_dataset(spec);
}

std::vector<ClientState> setup_clients(const ExperimentConfig& cfg, const Dataset& train, const Model& w0) {
  const auto shards = partition_dataset(train, cfg.users, mix_seed(cfg.effective_data_seed(), kPartitionTag));
  std::vector<ClientState> clients(static_cast<std::size_t>(cfg.users));
  for (int u = 0; u < cfg.users; ++u) {
    ClientState& c = clients[static_cast<std::size_t>(u)];
    c.id = u;
    c.shard = subset(train, shards[static_cast<std::size_t>(u)]);
    if (c.shard.size() == 0) throw PartitionError("client " + std::to_string(u) + " received no samples");
    c.seed = client_seed(cfg.master_seed, u);
    c.kind = cfg.quantizer;
  }

  if (is_fixed(cfg.quantizer)) {
    const NormalizedGenerator norm = normalize_generator(fixed_shape(cfg.quantizer).entries(), cfg.rate, cfg.gamma);
    const TruncatedLattice lat = build_lattice(norm.gen, cfg.gamma);
    for (auto& c : clients) c.lattice = lat;
    return clients;
  }
  if (cfg.quantizer != QuantizerKind::static_per_user && cfg.quantizer != QuantizerKind::static_global) {
    return clients;
  }

  // The static kinds learn once, from the update each client would send at
  // w0 (round 0 seeds), and never adapt again.
  std::vector<Vector> h0(clients.size());
  for_each_index(cfg.users, cfg.parallel, [&](int u) {
    ClientState& c = clients[static_cast<std::size_t>(u)];
    Rng rng(round_seed(c.seed, 0, SeedPurpose::train));
    h0[static_cast<std::size_t>(u)] = local_train(w0, c.shard, cfg.local_steps, cfg.lr, rng, TrainContext{0, u});
  });

  LearnerConfig lc = cfg.learner();
  if (cfg.quantizer == QuantizerKind::static_per_user) {
    for_each_index(cfg.users, cfg.parallel, [&](int u) {
      ClientState& c = clients[static_cast<std::size_t>(u)];
      LearnerConfig own = lc;
      own.seed = round_seed(c.seed, 0, SeedPurpose::learner);
      PriorNet net(cfg.dim, mix_seed(c.seed, kNetTag));
      const TaskContext task = shard_task(w0, c.shard);
      const LearnedLattice learned = online_lattice_learning(net, h0[static_cast<std::size_t>(u)], own,
                                                             own.loss == LossKind::task ? &task : nullptr);
      c.lattice = learned_codebook(learned, cfg.gamma);
    });
    return clients;
  }

  // static_global: one lattice for the concatenation of every client's
  // update. The task loss averages each client's objective at w0 + its slice.
  const Eigen::Index m = w0.params.size();
  Vector all(m * cfg.users);
  for (int u = 0; u < cfg.users; ++u) all.segment(m * u, m) = h0[static_cast<std::size_t>(u)];
  TaskContext task;
  task.model = w0.params.replicate(cfg.users, 1);
  task.objective = [&](const Vector& params, Vector* grad) {
    if (grad != nullptr) *grad = Vector::Zero(params.size());
    double total = 0.0;
    Vector g;
    for (int u = 0; u < cfg.users; ++u) {
      const Vector slice = params.segment(m * u, m);
      total += dataset_loss(w0.arch, slice, clients[static_cast<std::size_t>(u)].shard, grad ? &g : nullptr);
      if (grad != nullptr) grad->segment(m * u, m) = g / static_cast<double>(cfg.users);
    }
    return total / static_cast<double>(cfg.users);
  };
  lc.seed = mix_seed(cfg.master_seed, kGlobalLearnerTag);
  PriorNet net(cfg.dim, mix_seed(cfg.master_seed, kGlobalNetTag));
  const LearnedLattice learned = online_lattice_learning(net, all, lc, lc.loss == LossKind::task ? &task : nullptr);
  const TruncatedLattice lat = learned_codebook(learned, cfg.gamma);
  for (auto& c : clients) c.lattice = lat;
  return clients;
}

FlResult run_fl(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_fl(cfg, load_experiment_data(cfg));
}

FlResult run_fl(const ExperimentConfig& cfg, const TrainTest& data) {
  cfg.validate();
  data.train.validate();
  data.test.validate();
  if (data.train.features() != data.test.features()) throw UsageError("run_fl: train and test widths differ");
  const int classes = std::max(data.train.classes, data.test.classes);

  FlResult result;
  result.initial_model = init_model(cfg.arch(data.train.features(), classes), mix_seed(cfg.master_seed, kModelTag));
  result.final_model = result.initial_model;
  if (cfg.rounds == 0) return result;

  std::vector<ClientState> clients = setup_clients(cfg, data.train, result.initial_model);
  std::vector<std::uint64_t> seeds;
  for (const auto& c : clients) seeds.push_back(c.seed);

  Model& w = result.final_model;
  for (int t = 1; t <= cfg.rounds; ++t) {
    std::vector<ClientOutcome> outcomes(clients.size());
    for_each_index(cfg.users, cfg.parallel, [&](int u) {
      outcomes[static_cast<std::size_t>(u)] = client_round(clients[static_cast<std::size_t>(u)], w, t, cfg);
    });

    std::vector<std::vector<std::uint8_t>> payloads;
    RoundRecord rec;
    rec.round = t;
    for (auto& o : outcomes) {
      payloads.push_back(std::move(o.payload));
      const int u = static_cast<int>(payloads.size()) - 1;
      rec.clients.push_back(ClientMetrics{u, o.distortion, o.overload, o.snr_db, o.zeta, o.bits});
      rec.mean_distortion += o.distortion;
      rec.mean_snr_db += o.snr_db;
      rec.total_bits += o.bits;
      if (o.lattice) result.lattices.push_back(*o.lattice);
    }
    rec.mean_distortion /= static_cast<double>(cfg.users);
    rec.mean_snr_db /= static_cast<double>(cfg.users);

    w = server_round(payloads, w, seeds, t, cfg.gamma);
    if (!w.params.allFinite()) throw NumericError("global model became non-finite in round " + std::to_string(t));
    rec.accuracy = evaluate(w, data.test);
    if (cfg.verbosity > 0) {
      std::cerr << "round " << t << " accuracy " << rec.accuracy << " snr_db " << rec.mean_snr_db << "\n";
    }
    result.rounds.push_back(std::move(rec));
  }
  return result;
}

std::string rounds_csv(const std::vector<RoundRecord>& rounds) {
  std::string out = "t,accuracy,mean_snr_db,mean_distortion,total_bits\n";
  for (const auto& r : rounds) {
    out += std::to_string(r.round) + "," + format_number(r.accuracy) + "," + format_number(r.mean_snr_db) + "," +
           format_number(r.mean_distortion) + "," + std::to_string(r.total_bits) + "\n";
  }
  return out;
}

std::string lattices_jsonl(const std::vector<LatticeLogEntry>& lattices) {
  std::string out;
  for (const auto& e : lattices) {
    nlohmann::ordered_json j;
    j["t"] = e.round;
    j["client"] = e.client;
    j["L"] = e.gen.dim();
    j["G"] = e.gen.row_major();
    j["zeta"] = e.zeta;
    j["codebook_size"] = e.codebook_size;
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace

std::vector<std::string> write_outputs(const std::string& dir, const FlResult& result) {
  const std::filesystem::path root(dir);
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  const std::string csv = rounds_csv(result.rounds);
  const std::string jsonl = lattices_jsonl(result.lattices);
  const std::vector<std::uint8_t> model = serialize_model(result.final_model);
  std::vector<std::string> written;
  const auto put = [&](const char* name, const void* data, std::size_t size) {
    write_file(root / name, data, size);
    written.push_back((root / name).string());
  };
  put("rounds.csv", csv.data(), csv.size());
  put("lattices.jsonl", jsonl.data(), jsonl.size());
  put("final_model.bin", model.data(), model.size());
  return written;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::vector<QuantizerKind>& quantizers,
                                const std::vector<double>& rates, const SweepCallback& on_entry) {
  std::vector<SweepRow> rows;
  for (QuantizerKind q : quantizers) {
    for (double r : rates) {
      ExperimentConfig entry = cfg;
      entry.quantizer = q;
      entry.rate = r;
      entry.validate();
      const FlResult res = run_fl(entry);
      SweepRow row{q, r, 0.0, 0.0, 0};
      if (!res.rounds.empty()) {
        row.accuracy = res.rounds.back().accuracy;
        row.mean_snr_db = res.rounds.back().mean_snr_db;
        row.bits_per_round = res.rounds.back().total_bits;
      }
      if (on_entry) on_entry(row, res);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "quantizer,R,accuracy,mean_snr_db,bits_per_round\n";
  for (const auto& r : rows) {
    out += to_string(r.quantizer) + "," + format_number(r.rate) + "," + format_number(r.accuracy) + "," +
           format_number(r.mean_snr_db) + "," + std::to_string(r.bits_per_round) + "\n";
  }
  return out;
}

}  // namespace olala
