// olala_sim: run FL experiments, rate sweeps and the theory check suite.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "olala/config.hpp"
#include "olala/error.hpp"
#include "olala/fl.hpp"
#include "olala/theory.hpp"

namespace fs = std::filesystem;
using namespace olala;

namespace {

enum Exit : int { ok = 0, checks_failed = 1, usage = 2, failure = 3 };

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::string> positional;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> parallel;
  double scale = 1.0;
};

// Staging directory inside the output directory. Files are moved into place
// only after the whole verb succeeded; otherwise the directory is removed.
class Staging {
 public:
  explicit Staging(const fs::path& out) : out_(out), dir_(out / ".olala_sim.partial") {
    created_out_ = fs::create_directories(out_);
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;
  ~Staging() {
    std::error_code ec;
    if (committed_) return;
    fs::remove_all(dir_, ec);
    if (created_out_) fs::remove(out_, ec);
  }

  const fs::path& dir() const { return dir_; }

  void commit() {
    for (const auto& entry : fs::directory_iterator(dir_)) {
      const fs::path target = out_ / entry.path().filename();
      fs::remove_all(target);
      fs::rename(entry.path(), target);
    }
    fs::remove(dir_);
    committed_ = true;
  }

 private:
  fs::path out_;
  fs::path dir_;
  bool committed_ = false;
  bool created_out_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw IoError("cannot write '" + path.string() + "'");
}

// file < OLALA_SIM_SEED < --set / positional < --seed, --parallel, --out.
ExperimentConfig build_config(const Options& opt, const std::vector<std::string>& positional) {
  std::vector<std::string> overrides;
  if (const char* env = std::getenv("OLALA_SIM_SEED"); env != nullptr && *env != '\0') {
    overrides.push_back(std::string("master_seed=") + env);
  }
  overrides.insert(overrides.end(), opt.sets.begin(), opt.sets.end());
  overrides.insert(overrides.end(), positional.begin(), positional.end());
  if (opt.seed) overrides.push_back("master_seed=" + std::to_string(*opt.seed));
  if (opt.parallel) overrides.push_back("parallel=" + std::to_string(*opt.parallel));
  if (opt.out) overrides.push_back("out=" + *opt.out);
  return load_config(opt.config, overrides);
}

int run_verb(const Options& opt) {
  const ExperimentConfig cfg = build_config(opt, opt.positional);
  Staging staging(cfg.out);
  const FlResult result = run_fl(cfg);
  write_outputs(staging.dir().string(), result);
  staging.commit();
  if (!result.rounds.empty()) {
    const RoundRecord& last = result.rounds.back();
    std::cout << "rounds " << last.round << " accuracy " << format_number(last.accuracy) << " mean_snr_db "
              << format_number(last.mean_snr_db) << " bits " << last.total_bits << "\n";
  }
  std::cout << "wrote " << (fs::path(cfg.out) / "rounds.csv").string() << "\n";
  return ok;
}

int checks_verb(const Options& opt) {
  const ExperimentConfig cfg = build_config(opt, opt.positional);
  if (!(opt.scale > 0.0)) throw UsageError("--scale must be positive");
  Staging staging(cfg.out);
  CheckSuiteOptions suite;
  suite.seed = cfg.master_seed;
  suite.scale = opt.scale;
  const std::vector<CheckReport> reports = run_check_suite(suite);
  write_text(staging.dir() / "checks.json", checks_json(reports));
  staging.commit();
  for (const CheckReport& r : reports) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << (r.negative_control ? " (negative control)" : "") << "\n";
  }
  const bool all = all_required_pass(reports);
  std::cout << (all ? "all required checks passed" : "required checks failed") << "\n";
  return all ? ok : checks_failed;
}

int sweep_verb(const Options& opt) {
  std::vector<double> rates{2.0, 3.0, 4.0};
  std::vector<QuantizerKind> quantizers{QuantizerKind::fixed_hex,       QuantizerKind::fixed_a2,
                                        QuantizerKind::fixed_d2,        QuantizerKind::static_global,
                                        QuantizerKind::static_per_user, QuantizerKind::olala};
  std::vector<std::string> rest;
  for (const std::string& arg : opt.positional) {
    const auto [key, value] = split_assignment(arg);
    if (key == "rates") {
      rates.clear();
      for (const std::string& r : split_list(value)) {
        ExperimentConfig probe;
        apply_setting(probe, "R", r);
        rates.push_back(probe.rate);
      }
    } else if (key == "quantizers") {
      quantizers.clear();
      for (const std::string& q : split_list(value)) {
        try {
          quantizers.push_back(parse_quantizer_kind(q));
        } catch (const Error& e) {
          throw ConfigError("quantizers", e.what());
        }
      }
    } else {
      rest.push_back(arg);
    }
  }
  if (rates.empty()) throw ConfigError("rates", "empty rate list");
  if (quantizers.empty()) throw ConfigError("quantizers", "empty quantizer list");

  const ExperimentConfig cfg = build_config(opt, rest);
  Staging staging(cfg.out);
  const fs::path entries = staging.dir() / "sweep";
  const auto rows = run_sweep(cfg, quantizers, rates, [&](const SweepRow& row, const FlResult& result) {
    const std::string name = to_string(row.quantizer) + "_R" + format_number(row.rate);
    write_outputs((entries / name).string(), result);
    write_text(entries / name / "row.csv", sweep_csv({row}));
    std::cout << name << " accuracy " << format_number(row.accuracy) << "\n";
  });
  write_text(staging.dir() / "sweep.csv", sweep_csv(rows));
  staging.commit();
  std::cout << "wrote " << (fs::path(cfg.out) / "sweep.csv").string() << " (" << rows.size() << " rows)\n";
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning with learned lattice quantizers"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--config", opt.config, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--set", opt.sets, "override key=value (repeatable)")->allow_extra_args(false);
  app.add_option("--out", opt.out, "output directory");
  app.add_option("--seed", opt.seed, "master seed (falls back to OLALA_SIM_SEED)");
  app.add_option("--parallel", opt.parallel, "worker threads");

  auto* run = app.add_subcommand("run", "single FL experiment: rounds.csv, lattices.jsonl, final_model.bin")->fallthrough();
  auto* checks = app.add_subcommand("checks", "theory check suite: checks.json")->fallthrough();
  auto* sweep = app.add_subcommand("sweep", "rate x quantizer sweep: sweep.csv")->fallthrough();
  for (auto* sub : {run, checks, sweep}) sub->add_option("settings", opt.positional, "key=value overrides");
  checks->add_option("--scale", opt.scale, "multiplier on every sample count");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_verb(opt);
    if (checks->parsed()) return checks_verb(opt);
    return sweep_verb(opt);
  } catch (const ConfigError& e) {
    std::cerr << "olala_sim: config error (" << e.key() << "): " << e.what() << "\n";
    return usage;
  } catch (const UsageError& e) {
    std::cerr << "olala_sim: " << e.what() << "\n";
    return usage;
  } catch (const std::exception& e) {
    std::cerr << "olala_sim: error: " << e.what() << "\n";
    return failure;
  }
}
