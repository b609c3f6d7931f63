#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "olala/config.hpp"
#include "olala/error.hpp"
#include "olala/fl.hpp"
#include "olala/rng.hpp"

using namespace olala;

namespace {

Dataset labelled_grid(int classes, int per_class, int features, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.classes = classes;
  ds.samples.resize(features, classes * per_class);
  for (int i = 0; i < classes * per_class; ++i) {
    ds.labels.push_back(i % classes);
    for (int j = 0; j < features; ++j) ds.samples(j, i) = rng.uniform();
  }
  return ds;
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.synthetic_features = 8;
  cfg.synthetic_train = 1000;
  cfg.synthetic_test = 300;
  cfg.synthetic_separation = 1.0;
  cfg.rounds = 3;
  cfg.local_steps = 20;
  cfg.learner_epochs = 2;
  cfg.learner_batches = 4;
  cfg.rate = 2;
  return cfg;
}

// Softmax cross-entropy gradient of a linear model, written out per entry.
Vector softmax_step_gradient(const Model& model, const Vector& x, int label) {
  const int c = model.arch.classes;
  const int d = model.arch.inputs;
  std::vector<double> z(static_cast<std::size_t>(c));
  double top = -1e300;
  for (int k = 0; k < c; ++k) {
    double acc = model.params[static_cast<Eigen::Index>(c) * d + k];
    for (int j = 0; j < d; ++j) acc += model.params[static_cast<Eigen::Index>(j) * c + k] * x[j];
    z[static_cast<std::size_t>(k)] = acc;
    top = std::max(top, acc);
  }
  double total = 0.0;
  for (auto& v : z) total += (v = std::exp(v - top));
  Vector g = Vector::Zero(model.params.size());
  for (int k = 0; k < c; ++k) {
    const double delta = z[static_cast<std::size_t>(k)] / total - (k == label ? 1.0 : 0.0);
    for (int j = 0; j < d; ++j) g[static_cast<Eigen::Index>(j) * c + k] = delta * x[j];
    g[static_cast<Eigen::Index>(c) * d + k] = delta;
  }
  return g;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("partition follows the sliding class window") {
  CHECK(user_classes(0, 10) == std::vector<int>{0, 1, 2});
  CHECK(user_classes(4, 10) == std::vector<int>{8, 9, 0});
  CHECK(user_classes(2, 10) == std::vector<int>{4, 5, 6});

  const Dataset ds = labelled_grid(10, 101, 3, 7);
  const auto shards = partition_dataset(ds, 5, 99);
  REQUIRE(shards.size() == 5);

  std::set<Eigen::Index> seen;
  std::map<std::pair<int, int>, std::size_t> count;  // (user, class)
  for (int u = 0; u < 5; ++u) {
    const auto cls = user_classes(u, 10);
    for (Eigen::Index i : shards[static_cast<std::size_t>(u)]) {
      CHECK(seen.insert(i).second);
      const int label = ds.labels[static_cast<std::size_t>(i)];
      CHECK(std::find(cls.begin(), cls.end(), label) != cls.end());
      ++count[{u, label}];
    }
  }
  // Every class is owned by someone at U=5, C=10, so all samples are dealt.
  CHECK(seen.size() == static_cast<std::size_t>(ds.size()));
  // Even classes are shared by two users, odd ones belong to one.
  for (int c = 0; c < 10; c += 2) {
    const int a = (c / 2 + 4) % 5;
    const int b = c / 2;
    const auto na = count[{a, c}];
    const auto nb = count[{b, c}];
    CHECK(na + nb == 101);
    CHECK(std::max(na, nb) - std::min(na, nb) <= 1);
  }
  CHECK(count[{0, 1}] == 101);

  CHECK(partition_dataset(ds, 5, 99) == shards);
  CHECK(partition_dataset(ds, 5, 100) != shards);
  CHECK_THROWS_AS(partition_dataset(labelled_grid(2, 4, 1, 1), 2, 1), PartitionError);
}

TEST_CASE("IDX files round-trip") {
  IdxArray images{{3, 2, 2}, {0, 255, 51, 102, 1, 2, 3, 4, 10, 20, 30, 40}};
  IdxArray labels{{3}, {2, 0, 1}};
  const auto bytes = encode_idx(images);
  CHECK(bytes[2] == 0x08);
  CHECK(bytes[3] == 3);
  const IdxArray back = parse_idx(bytes);
  CHECK(back.dims == images.dims);
  CHECK(back.data == images.data);

  const auto dir = std::filesystem::temp_directory_path() / "olala_idx_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "img", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    const auto lb = encode_idx(labels);
    std::ofstream(dir / "lab", std::ios::binary).write(reinterpret_cast<const char*>(lb.data()), static_cast<std::streamsize>(lb.size()));
  }
  const Dataset ds = load_idx_dataset((dir / "img").string(), (dir / "lab").string());
  CHECK(ds.size() == 3);
  CHECK(ds.features() == 4);
  CHECK(ds.classes == 3);
  CHECK(ds.samples(1, 0) == 1.0);
  CHECK(ds.samples(2, 0) == doctest::Approx(0.2));
  CHECK(ds.labels == std::vector<int>{2, 0, 1});

  auto bad = bytes;
  bad[2] = 0x0D;
  CHECK_THROWS_AS(parse_idx(bad), IoError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(parse_idx(bad), IoError);
  CHECK_THROWS_AS(read_idx((dir / "missing").string()), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic data is balanced, bounded and seeded") {
  SyntheticSpec spec;
  spec.features = 6;
  spec.train_size = 200;
  spec.test_size = 50;
  const TrainTest a = synthetic_dataset(spec);
  const TrainTest b = synthetic_dataset(spec);
  CHECK(a.train.samples == b.train.samples);
  CHECK(a.train.size() == 200);
  CHECK(a.test.size() == 50);
  CHECK(a.train.samples.minCoeff() > 0.0);
  CHECK(a.train.samples.maxCoeff() < 1.0);
  std::vector<int> hist(10, 0);
  for (int l : a.train.labels) ++hist[static_cast<std::size_t>(l)];
  for (int h : hist) CHECK(h == 20);
  spec.seed = 2;
  CHECK(synthetic_dataset(spec).train.samples != a.train.samples);
}

TEST_CASE("local SGD") {
  const Dataset shard = labelled_grid(4, 5, 3, 11);
  const Model model = init_model(ModelArch{ModelKind::linear, 3, 4, {}}, 5);

  SUBCASE("zero learning rate gives a zero update") {
    Rng rng(1);
    CHECK(local_train(model, shard, 10, 0.0, rng).isZero(0.0));
  }

  SUBCASE("one linear step matches the closed-form softmax gradient") {
    Rng rng(42);
    Rng mirror(42);
    const auto i = static_cast<Eigen::Index>(mirror.below(static_cast<std::uint64_t>(shard.size())));
    const Vector before = model.params;
    const Vector h = local_train(model, shard, 1, 0.3, rng);
    const Vector expected = -0.3 * softmax_step_gradient(model, shard.samples.col(i), shard.labels[static_cast<std::size_t>(i)]);
    CHECK((h - expected).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(model.params == before);
  }

  SUBCASE("MLP backprop matches central differences") {
    const ModelArch arch{ModelKind::mlp, 3, 4, {6, 5}};
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
      const Model mlp = init_model(arch, 100 + static_cast<std::uint64_t>(trial));
      const Vector x = shard.samples.col(trial);
      const int label = shard.labels[static_cast<std::size_t>(trial)];
      Vector grad = Vector::Zero(mlp.params.size());
      sample_loss(arch, mlp.params, x, label, &grad);
      Vector fd(mlp.params.size());
      const double eps = 1e-6;
      for (Eigen::Index k = 0; k < fd.size(); ++k) {
        Vector p = mlp.params;
        p[k] += eps;
        const double up = sample_loss(arch, p, x, label, nullptr);
        p[k] -= 2 * eps;
        fd[k] = (up - sample_loss(arch, p, x, label, nullptr)) / (2 * eps);
      }
      CHECK((grad - fd).norm() / fd.norm() <= 1e-4);
    }
  }

  SUBCASE("non-finite loss names round, client and step") {
    Model broken = model;
    broken.params[0] = std::numeric_limits<double>::quiet_NaN();
    Rng rng(1);
    try {
      local_train(broken, shard, 3, 0.1, rng, TrainContext{7, 2});
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("round 7") != std::string::npos);
      CHECK(msg.find("client 2") != std::string::npos);
      CHECK(msg.find("step 0") != std::string::npos);
    }
  }
}

TEST_CASE("evaluate") {
  const Dataset test = labelled_grid(10, 30, 4, 2);
  Model constant = init_model(ModelArch{ModelKind::linear, 4, 10, {}}, 1);
  constant.params.setZero();
  constant.params[4 * 10 + 3] = 1.0;
  CHECK(evaluate(constant, test) == doctest::Approx(0.1).epsilon(1e-12));

  // Overfit a tiny shard.
  const Dataset tiny = labelled_grid(3, 4, 6, 9);
  const ModelArch arch{ModelKind::mlp, 6, 3, {32}};
  Model m = init_model(arch, 4);
  Rng rng(8);
  m.params += local_train(m, tiny, 20000, 0.2, rng);
  CHECK(evaluate(m, tiny) >= 0.95);

  // Reversing the test set changes nothing.
  const Model probe = init_model(ModelArch{ModelKind::linear, 4, 10, {}}, 3);
  Shard reversed;
  for (Eigen::Index i = test.size(); i-- > 0;) reversed.push_back(i);
  CHECK(evaluate(probe, subset(test, reversed)) == evaluate(probe, test));
  CHECK_THROWS_AS(evaluate(probe, Dataset{Matrix(4, 0), {}, 10}), UsageError);
}

TEST_CASE("model serialization") {
  const Model m = init_model(ModelArch{ModelKind::mlp, 5, 3, {4, 2}}, 6);
  const auto bytes = serialize_model(m);
  const Model back = deserialize_model(bytes);
  CHECK(back.params == m.params);
  CHECK(back.arch.hidden == m.arch.hidden);
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(deserialize_model(cut), ProtocolError);
}

TEST_CASE("bits accounting") {
  CHECK(bits_accounting(1000, 3, 2, false) == 3256);
  CHECK(bits_accounting(1000, 3, 2, true) == 3320);
  CHECK(bits_accounting(7, 1.5, 2, false) == 11 + 256);
  CHECK(bits_accounting(10, 0.3, 1, false) == 3 + 64);
  CHECK(raw_bits(1000) == 64000);
  const double overhead = 256.0 / (64.0 * 1e6);
  CHECK(overhead < 1e-5);
  CHECK(static_cast<double>(bits_accounting(1000000, 64, 2, false) - 64000000) / 64e6 < 1e-5);
  CHECK_THROWS_AS(bits_accounting(0, 3, 2, false), UsageError);
  CHECK_THROWS_AS(bits_accounting(5, 0, 2, false), UsageError);
}

TEST_CASE("payload wire format") {
  const TruncatedLattice lat = build_lattice(normalize_generator(generators::hexagonal().entries(), 3).gen, 1.0);
  Rng rng(5);
  Vector h(11);
  for (auto& v : h) v = rng.normal();
  const SdqCodec codec(lat, 0.4);
  const Encoded enc = encode_update(h, codec, 77, 3, 9, QuantizerKind::fixed_hex);
  CHECK(enc.payload.indices.size() == 6);
  CHECK(enc.payload.padding == 1);
  const auto bytes = serialize_payload(enc.payload);
  const Payload back = deserialize_payload(bytes);
  CHECK(back.client == 3);
  CHECK(back.round == 9);
  CHECK(back.indices == enc.payload.indices);
  CHECK(decode_payload(back, 1.0, 77) == enc.reconstruction);
  CHECK(enc.distortion == (enc.reconstruction - h).squaredNorm());

  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(deserialize_payload(cut), ProtocolError);
  auto magic = bytes;
  magic[0] ^= 1;
  CHECK_THROWS_AS(deserialize_payload(magic), ProtocolError);
  Payload inconsistent = enc.payload;
  inconsistent.size = 15;
  CHECK_THROWS_AS(deserialize_payload(serialize_payload(inconsistent)), ProtocolError);
  Payload bad_zeta = enc.payload;
  bad_zeta.zeta = -1.0;
  CHECK_THROWS_AS(deserialize_payload(serialize_payload(bad_zeta)), ProtocolError);

  const Encoded raw = encode_raw(h, 1, 2);
  const auto raw_bytes = serialize_payload(raw.payload);
  CHECK(raw_bytes.size() == 24 + 8 * 11);
  CHECK(decode_payload(deserialize_payload(raw_bytes), 1.0, 0) == h);
}

TEST_CASE("client round") {
  const ExperimentConfig base = small_config();
  const TrainTest data = load_experiment_data(base);
  const Model w0 = init_model(base.arch(data.train.features(), data.train.classes), 3);
  const auto m = w0.params.size();

  SUBCASE("uncompressed path") {
    ExperimentConfig cfg = base;
    cfg.quantizer = QuantizerKind::none;
    auto clients = setup_clients(cfg, data.train, w0);
    const ClientOutcome out = client_round(clients[0], w0, 1, cfg);
    CHECK(out.bits == 64 * m);
    CHECK(out.reconstruction == out.update);
    CHECK(std::isinf(out.snr_db));
  }

  SUBCASE("fixed hexagonal at R=3") {
    ExperimentConfig cfg = base;
    cfg.quantizer = QuantizerKind::fixed_hex;
    cfg.rate = 3;
    auto clients = setup_clients(cfg, data.train, w0);
    CHECK(clients[0].lattice->size() <= 64);
    for (int u = 0; u < cfg.users; ++u) {
      const ClientOutcome out = client_round(clients[static_cast<std::size_t>(u)], w0, 1, cfg);
      const Payload p = deserialize_payload(out.payload);
      CHECK(p.indices.size() == static_cast<std::size_t>((m + 1) / 2));
      CHECK(out.bits == bits_accounting(m, 3, 2, true));
      const Vector server = decode_payload(p, cfg.gamma, round_seed(clients[static_cast<std::size_t>(u)].seed, 1, SeedPurpose::dither));
      CHECK(server == out.reconstruction);
      CHECK(out.distortion == (server - out.update).squaredNorm());
      REQUIRE(out.lattice.has_value());
      CHECK(out.lattice->codebook_size == static_cast<std::int64_t>(clients[0].lattice->size()));
    }
  }

  SUBCASE("olala adapts on schedule and keeps the rate ceiling") {
    ExperimentConfig cfg = base;
    cfg.quantizer = QuantizerKind::olala;
    cfg.adapt_every = 2;
    auto clients = setup_clients(cfg, data.train, w0);
    CHECK_FALSE(clients[1].lattice.has_value());
    const ClientOutcome r1 = client_round(clients[1], w0, 1, cfg);
    const ClientOutcome r2 = client_round(clients[1], w0, 2, cfg);
    const ClientOutcome r3 = client_round(clients[1], w0, 3, cfg);
    CHECK(r1.lattice.has_value());
    CHECK_FALSE(r2.lattice.has_value());
    CHECK(r3.lattice.has_value());
    CHECK(r1.lattice->codebook_size <= 16);
    CHECK(r3.lattice->codebook_size <= 16);
  }

  SUBCASE("odd-length updates survive padding") {
    ExperimentConfig cfg = base;
    cfg.quantizer = QuantizerKind::olala;
    cfg.dim = 3;
    cfg.rate = 1.5;
    cfg.synthetic_features = 4;
    cfg.synthetic_classes = 4;
    const TrainTest small = load_experiment_data(cfg);
    const Model w = init_model(cfg.arch(4, 4), 1);
    REQUIRE(w.params.size() % 3 != 0);
    auto clients = setup_clients(cfg, small.train, w);
    const ClientOutcome out = client_round(clients[0], w, 1, cfg);
    const Vector server = decode_payload(deserialize_payload(out.payload), cfg.gamma,
                                         round_seed(clients[0].seed, 1, SeedPurpose::dither));
    CHECK(server.size() == w.params.size());
    CHECK(server == out.reconstruction);
  }
}

TEST_CASE("server round") {
  const Model w = init_model(ModelArch{ModelKind::linear, 2, 3, {}}, 1);
  Vector a(w.params.size()), b(w.params.size());
  Rng rng(2);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  const std::vector<std::uint64_t> seeds{client_seed(1, 0), client_seed(1, 1)};
  std::vector<std::vector<std::uint8_t>> payloads{serialize_payload(encode_raw(a, 0, 4).payload),
                                                  serialize_payload(encode_raw(b, 1, 4).payload)};
  const Model next = server_round(payloads, w, seeds, 4, 1.0);
  CHECK(next.params == w.params + (a + b) / 2.0);

  std::swap(payloads[0], payloads[1]);
  CHECK(server_round(payloads, w, seeds, 4, 1.0).params == next.params);

  CHECK_THROWS_AS(server_round(std::span(payloads).first(1), w, seeds, 4, 1.0), ProtocolError);
  CHECK_THROWS_AS(server_round(payloads, w, seeds, 5, 1.0), ProtocolError);
  const std::vector<std::vector<std::uint8_t>> twice{payloads[0], payloads[0]};
  CHECK_THROWS_AS(server_round(twice, w, seeds, 4, 1.0), ProtocolError);
}

TEST_CASE("quantized payloads decode identically in any arrival order") {
  ExperimentConfig cfg = small_config();
  cfg.quantizer = QuantizerKind::fixed_a2;
  const TrainTest data = load_experiment_data(cfg);
  const Model w0 = init_model(cfg.arch(data.train.features(), data.train.classes), 3);
  auto clients = setup_clients(cfg, data.train, w0);
  std::vector<std::vector<std::uint8_t>> payloads;
  std::vector<std::uint64_t> seeds;
  Vector sum = Vector::Zero(w0.params.size());
  for (auto& c : clients) {
    ClientOutcome o = client_round(c, w0, 1, cfg);
    sum += o.reconstruction;
    payloads.push_back(std::move(o.payload));
    seeds.push_back(c.seed);
  }
  const Model next = server_round(payloads, w0, seeds, 1, cfg.gamma);
  CHECK(next.params == w0.params + sum / static_cast<double>(cfg.users));
  std::reverse(payloads.begin(), payloads.end());
  CHECK(server_round(payloads, w0, seeds, 1, cfg.gamma).params == next.params);
  std::rotate(payloads.begin(), payloads.begin() + 2, payloads.end());
  CHECK(server_round(payloads, w0, seeds, 1, cfg.gamma).params == next.params);
}

TEST_CASE("uncompressed runs reduce to plain FedAvg") {
  ExperimentConfig cfg = small_config();
  cfg.quantizer = QuantizerKind::none;
  const TrainTest data = load_experiment_data(cfg);
  const FlResult res = run_fl(cfg, data);

  // Plain FedAvg with the same shards and per-round sampling seeds.
  Model w = res.initial_model;
  const auto shards = setup_clients(cfg, data.train, w);
  for (int t = 1; t <= cfg.rounds; ++t) {
    Vector sum = Vector::Zero(w.params.size());
    for (const auto& c : shards) {
      Rng rng(round_seed(c.seed, t, SeedPurpose::train));
      sum += local_train(w, c.shard, cfg.local_steps, cfg.lr, rng);
    }
    w.params += sum / static_cast<double>(cfg.users);
  }
  CHECK(w.params == res.final_model.params);
}

TEST_CASE("run bookkeeping") {
  ExperimentConfig cfg = small_config();
  cfg.quantizer = QuantizerKind::fixed_hex;
  const TrainTest data = load_experiment_data(cfg);
  const FlResult res = run_fl(cfg, data);
  REQUIRE(res.rounds.size() == 3);
  for (const auto& r : res.rounds) {
    double d = 0.0;
    std::int64_t bits = 0;
    for (const auto& c : r.clients) {
      d += c.distortion;
      bits += c.bits;
      CHECK(c.overload <= 1.0);
    }
    CHECK(r.mean_distortion == doctest::Approx(d / cfg.users).epsilon(1e-12));
    CHECK(r.total_bits == bits);
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);
  }
  CHECK(res.lattices.size() == static_cast<std::size_t>(cfg.users));

  cfg.rounds = 0;
  const FlResult empty = run_fl(cfg, data);
  CHECK(empty.rounds.empty());
  CHECK(empty.final_model.params == empty.initial_model.params);
}

TEST_CASE("runs are deterministic, serial or threaded") {
  for (QuantizerKind q : {QuantizerKind::olala, QuantizerKind::static_global, QuantizerKind::static_per_user}) {
    ExperimentConfig cfg = small_config();
    cfg.quantizer = q;
    const FlResult a = run_fl(cfg);
    const FlResult b = run_fl(cfg);
    cfg.parallel = 8;
    const FlResult c = run_fl(cfg);
    CHECK(rounds_csv(a.rounds) == rounds_csv(b.rounds));
    CHECK(rounds_csv(a.rounds) == rounds_csv(c.rounds));
    CHECK(lattices_jsonl(a.lattices) == lattices_jsonl(c.lattices));
    CHECK(serialize_model(a.final_model) == serialize_model(c.final_model));
  }
}

TEST_CASE("task loss drives static and adaptive learners") {
  ExperimentConfig cfg = small_config();
  cfg.loss_kind = LossKind::task;
  cfg.rounds = 2;
  for (QuantizerKind q : {QuantizerKind::olala, QuantizerKind::static_global}) {
    cfg.quantizer = q;
    const FlResult res = run_fl(cfg);
    CHECK(res.rounds.size() == 2);
    CHECK(std::isfinite(res.rounds.back().mean_distortion));
  }
}

TEST_CASE("output files") {
  ExperimentConfig cfg = small_config();
  cfg.quantizer = QuantizerKind::olala;
  const FlResult res = run_fl(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "olala_out_test";
  std::filesystem::remove_all(dir);
  const auto written = write_outputs(dir.string(), res);
  CHECK(written.size() == 3);
  const auto csv = file_bytes(dir / "rounds.csv");
  const std::string text(csv.begin(), csv.end());
  CHECK(text.rfind("t,accuracy,mean_snr_db,mean_distortion,total_bits\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  const auto jsonl = file_bytes(dir / "lattices.jsonl");
  const std::string jtext(jsonl.begin(), jsonl.end());
  CHECK(std::count(jtext.begin(), jtext.end(), '\n') == 15);
  CHECK(jtext.find("\"codebook_size\"") != std::string::npos);
  CHECK(deserialize_model(file_bytes(dir / "final_model.bin")).params == res.final_model.params);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config parsing") {
  const ExperimentConfig defaults = load_config("", {});
  CHECK(format_config(defaults) == format_config(ExperimentConfig{}));
  CHECK(config_keys().size() == 36);

  const auto dir = std::filesystem::temp_directory_path() / "olala_cfg_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "exp.cfg").string();
  std::ofstream(path) << "# experiment\nR = 4\nquantizer=fixed_d2  # trailing\n\nrounds=7\nhidden=8, 4\n";
  const ExperimentConfig cfg = load_config(path, {"R=3", "L=2", "quantizer=olala"});
  CHECK(cfg.rate == 3.0);
  CHECK(cfg.quantizer == QuantizerKind::olala);
  CHECK(cfg.rounds == 7);
  CHECK(cfg.hidden == std::vector<int>{8, 4});

  std::ofstream(dir / "empty.cfg");
  CHECK(format_config(load_config((dir / "empty.cfg").string(), {})) == format_config(ExperimentConfig{}));

  auto key_of = [](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string("<none>");
  };
  CHECK(key_of([&] { load_config("", {"R=-1"}); }) == "R");
  CHECK(key_of([&] { load_config("", {"bogus=1"}); }) == "bogus");
  CHECK(key_of([&] { load_config("", {"U=five"}); }) == "U");
  CHECK(key_of([&] { load_config("", {"quantizer=cube"}); }) == "quantizer");
  CHECK(key_of([&] { load_config("", {"include_zeta=maybe"}); }) == "include_zeta");
  CHECK(key_of([&] { load_config("", {"L=3", "quantizer=fixed_hex"}); }) == "quantizer");
  CHECK(key_of([&] { load_config((dir / "nope.cfg").string(), {}); }) == "config");
  CHECK(key_of([&] { load_config("", {"rounds"}); }) == "rounds");

  // The canonical dump parses back to the same config.
  ExperimentConfig round_trip;
  apply_config_text(round_trip, format_config(cfg));
  CHECK(format_config(round_trip) == format_config(cfg));
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep covers the cartesian grid") {
  ExperimentConfig cfg = small_config();
  cfg.rounds = 1;
  const auto rows = run_sweep(cfg, {QuantizerKind::olala, QuantizerKind::fixed_hex}, {2.0, 3.0});
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].quantizer == QuantizerKind::olala);
  CHECK(rows[1].rate == 3.0);
  CHECK(rows[2].quantizer == QuantizerKind::fixed_hex);
  const std::string csv = sweep_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}
