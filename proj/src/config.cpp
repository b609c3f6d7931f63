#include "olala/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "olala/error.hpp"
#include "olala/rng.hpp"

namespace olala {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError(key, "cannot parse '" + value + "' as a number");
  }
  return out;
}

int parse_int(const std::string& key, const std::string& value) { return parse_number<int>(key, value); }

double parse_double(const std::string& key, const std::string& value) {
  const double v = parse_number<double>(key, value);
  if (!std::isfinite(v)) throw ConfigError(key, "value must be finite");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError(key, "expected a boolean, got '" + value + "'");
}

std::string join(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

// Wraps UsageError from the enum parsers into ConfigError for `key`.
template <class Fn>
auto as_config(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError& e) {
    throw ConfigError(key, e.what());
  }
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define OLALA_INT(name, member)                                                           \
  Field {                                                                                  \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_int(name, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                 \
  }
#define OLALA_DOUBLE(name, member)                                                           \
  Field {                                                                                     \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(name, v); }, \
        [](const ExperimentConfig& c) { return format_number(c.member); }                     \
  }
#define OLALA_BOOL(name, member)                                                            \
  Field {                                                                                    \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(name, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }   \
  }
#define OLALA_STRING(name, member)                                            \
  Field {                                                                      \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = v; },    \
        [](const ExperimentConfig& c) { return c.member; }                    \
  }
#define OLALA_U64(name, member)                                                                           \
  Field {                                                                                                  \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_number<std::uint64_t>(name, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                                 \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"model",
            [](ExperimentConfig& c, const std::string& v) {
              c.model = as_config("model", [&] { return parse_model_kind(v); });
            },
            [](const ExperimentConfig& c) { return to_string(c.model); }},
      Field{"hidden",
            [](ExperimentConfig& c, const std::string& v) {
              c.hidden.clear();
              for (const auto& item : split_list(v)) c.hidden.push_back(parse_int("hidden", item));
            },
            [](const ExperimentConfig& c) { return join(c.hidden); }},
      OLALA_STRING("dataset", dataset),
      OLALA_STRING("train_images", train_images),
      OLALA_STRING("train_labels", train_labels),
      OLALA_STRING("test_images", test_images),
      OLALA_STRING("test_labels", test_labels),
      OLALA_INT("synthetic_features", synthetic_features),
      OLALA_INT("synthetic_classes", synthetic_classes),
      OLALA_INT("synthetic_train", synthetic_train),
      OLALA_INT("synthetic_test", synthetic_test),
      OLALA_DOUBLE("synthetic_separation", synthetic_separation),
      OLALA_U64("data_seed", data_seed),
      OLALA_INT("U", users),
      OLALA_INT("L", dim),
      OLALA_DOUBLE("R", rate),
      OLALA_INT("rounds", rounds),
      OLALA_INT("local_steps", local_steps),
      OLALA_DOUBLE("lr", lr),
      OLALA_INT("adapt_every", adapt_every),
      Field{"quantizer",
            [](ExperimentConfig& c, const std::string& v) {
              c.quantizer = as_config("quantizer", [&] { return parse_quantizer_kind(v); });
            },
            [](const ExperimentConfig& c) { return to_string(c.quantizer); }},
      Field{"loss_kind",
            [](ExperimentConfig& c, const std::string& v) {
              c.loss_kind = as_config("loss_kind", [&] { return parse_loss_kind(v); });
            },
            [](const ExperimentConfig& c) { return to_string(c.loss_kind); }},
      OLALA_DOUBLE("lattice_lr", lattice_lr),
      OLALA_INT("learner_epochs", learner_epochs),
      OLALA_INT("learner_batches", learner_batches),
      OLALA_DOUBLE("target_overload", target_overload),
      Field{"overload_mode",
            [](ExperimentConfig& c, const std::string& v) {
              c.overload_mode = as_config("overload_mode", [&] { return parse_overload_mode(v); });
            },
            [](const ExperimentConfig& c) { return to_string(c.overload_mode); }},
      OLALA_DOUBLE("heuristic_target", heuristic_target),
      OLALA_DOUBLE("heuristic_sigmas", heuristic_sigmas),
      OLALA_DOUBLE("gamma", gamma),
      OLALA_BOOL("include_zeta", include_zeta),
      OLALA_BOOL("reset_theta_each_round", reset_theta_each_round),
      OLALA_U64("master_seed", master_seed),
      OLALA_INT("parallel", parallel),
      OLALA_STRING("out", out),
      OLALA_INT("verbosity", verbosity),
  };
  return table;
}

#undef OLALA_INT
#undef OLALA_DOUBLE
#undef OLALA_BOOL
#undef OLALA_STRING
#undef OLALA_U64

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return keys;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError(key, "unknown configuration key");
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError(trim(text), "expected key=value");
  std::string key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("", "missing key in '" + text + "'");
  return {std::move(key), trim(text.substr(eq + 1))};
}

void apply_config_text(ExperimentConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto [key, value] = split_assignment(line);
    apply_setting(cfg, key, value);
  }
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    apply_config_text(cfg, buf.str());
  }
  for (const auto& o : overrides) {
    const auto [key, value] = split_assignment(o);
    apply_setting(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(cfg) + "\n";
  return out;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const char* key, const std::string& what) {
    if (!ok) throw ConfigError(key, what);
  };
  if (model == ModelKind::mlp) {
    require(!hidden.empty(), "hidden", "mlp needs at least one hidden width");
    for (int h : hidden) require(h >= 1, "hidden", "widths must be positive");
  }
  require(dataset == "synthetic" || dataset == "idx", "dataset", "must be 'synthetic' or 'idx'");
  if (dataset == "idx") {
    require(!train_images.empty(), "train_images", "required for dataset=idx");
    require(!train_labels.empty(), "train_labels", "required for dataset=idx");
    require(!test_images.empty(), "test_images", "required for dataset=idx");
    require(!test_labels.empty(), "test_labels", "required for dataset=idx");
  }
  require(synthetic_features >= 1, "synthetic_features", "must be >= 1");
  require(synthetic_classes >= 3, "synthetic_classes", "must be >= 3");
  require(synthetic_train >= 1, "synthetic_train", "must be >= 1");
  require(synthetic_test >= 1, "synthetic_test", "must be >= 1");
  require(synthetic_separation > 0.0, "synthetic_separation", "must be positive");
  require(users >= 1 && users <= 1024, "U", "must be in [1, 1024]");
  require(dim >= 1 && dim <= kMaxLatticeDim, "L", "must be in [1, 8]");
  require(rate > 0.0 && dim * rate <= 24.0, "R", "must be positive with L*R <= 24");
  require(rounds >= 0, "rounds", "must be >= 0");
  require(local_steps >= 1, "local_steps", "must be >= 1");
  require(lr >= 0.0, "lr", "must be >= 0");
  require(adapt_every >= 1, "adapt_every", "must be >= 1");
  require(!is_fixed(quantizer) || dim == 2, "quantizer", "fixed lattices are two-dimensional (set L=2)");
  require(lattice_lr >= 0.0, "lattice_lr", "must be >= 0");
  require(learner_epochs >= 0, "learner_epochs", "must be >= 0");
  require(learner_batches >= 1, "learner_batches", "must be >= 1");
  require(target_overload >= 0.0 && target_overload < 1.0, "target_overload", "must be in [0, 1)");
  require(heuristic_target >= 0.0 && heuristic_target < 1.0, "heuristic_target", "must be in [0, 1)");
  require(heuristic_sigmas > 0.0, "heuristic_sigmas", "must be positive");
  require(gamma > 0.0, "gamma", "must be positive");
  require(parallel >= 1 && parallel <= 256, "parallel", "must be in [1, 256]");
  require(!out.empty(), "out", "must not be empty");
  require(verbosity >= 0, "verbosity", "must be >= 0");
}

LearnerConfig ExperimentConfig::learner() const {
  LearnerConfig c;
  c.loss = loss_kind;
  c.learning_rate = lattice_lr;
  c.epochs = learner_epochs;
  c.batches = learner_batches;
  c.rate = rate;
  c.gamma = gamma;
  c.target_overload = target_overload;
  c.overload_mode = overload_mode;
  c.heuristic_target = heuristic_target;
  c.heuristic_sigmas = heuristic_sigmas;
  return c;
}

ModelArch ExperimentConfig::arch(int inputs, int classes) const {
  ModelArch a;
  a.kind = model;
  a.inputs = inputs;
  a.classes = classes;
  if (model == ModelKind::mlp) a.hidden = hidden;
  return a;
}

std::uint64_t ExperimentConfig::effective_data_seed() const {
  return data_seed != 0 ? data_seed : mix_seed(master_seed, 0xDA7A);
}

}  // namespace olala
