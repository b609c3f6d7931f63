#include "olala/learner.hpp"

#include <cmath>
#include <numeric>
#include <optional>

#include "olala/dither.hpp"
#include "olala/error.hpp"
#include "olala/rng.hpp"

namespace olala {

namespace {

constexpr double kScaleLo = 1e-6;
constexpr double kScaleHi = 1e6;
constexpr int kScaleSteps = 60;
constexpr double kBoundaryMargin = 1e-8;
constexpr int kMaxReversions = 3;
constexpr Eigen::Index kHeuristicMinBlocks = 10;

void check_batch(const SdqCodec& codec, const LossBatch& batch) {
  if (batch.blocks.cols() == 0) throw UsageError("loss: empty batch");
  if (batch.blocks.rows() != codec.lattice.dim() || batch.dithers.rows() != batch.blocks.rows() ||
      batch.dithers.cols() != batch.blocks.cols()) {
    throw UsageError("loss: batch shape does not match the lattice");
  }
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::mse: return "mse";
    case LossKind::task: return "task";
    case LossKind::neg_snr: return "neg_snr";
  }
  return "?";
}

std::string to_string(OverloadMode mode) {
  return mode == OverloadMode::fraction ? "fraction" : "heuristic_minus1";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "mse") return LossKind::mse;
  if (name == "task") return LossKind::task;
  if (name == "neg_snr") return LossKind::neg_snr;
  throw UsageError("unknown loss kind '" + name + "'");
}

OverloadMode parse_overload_mode(const std::string& name) {
  if (name == "fraction") return OverloadMode::fraction;
  if (name == "heuristic_minus1") return OverloadMode::heuristic_minus1;
  throw UsageError("unknown overload mode '" + name + "'");
}

double default_learning_rate(LossKind kind) {
  switch (kind) {
    case LossKind::mse: return 1e-6;
    case LossKind::neg_snr: return 1e-4;
    case LossKind::task: return 1e-7;
  }
  return 1e-6;
}

void LearnerConfig::validate() const {
  auto fail = [](const std::string& what) { throw UsageError("learner config: " + what); };
  if (!std::isfinite(learning_rate)) fail("learning_rate must be finite");
  if (epochs < 0) fail("epochs must be >= 0");
  if (batches < 1) fail("batches must be >= 1");
  if (!(rate > 0.0) || !std::isfinite(rate)) fail("rate must be positive");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) fail("gamma must be positive");
  if (!(target_overload >= 0.0 && target_overload < 1.0)) fail("target_overload must be in [0, 1)");
  if (!(heuristic_target >= 0.0 && heuristic_target < 1.0)) fail("heuristic_target must be in [0, 1)");
  if (!(heuristic_sigmas > 0.0)) fail("heuristic_sigmas must be positive");
}

double LearnerConfig::effective_learning_rate() const {
  return learning_rate > 0.0 ? learning_rate : default_learning_rate(loss);
}

int LearnerConfig::effective_batches() const { return loss == LossKind::task ? 1 : batches; }

std::int64_t codeword_budget(int dim, double rate) {
  const double bits = dim * rate;
  if (!(bits >= 0.0) || bits > 62.0) throw UsageError("codeword budget: L * R must be in [0, 62]");
  return static_cast<std::int64_t>(std::floor(std::exp2(bits) + 1e-9));
}

NormalizedGenerator normalize_generator(const Matrix& raw, double rate, double gamma) {
  std::optional<GeneratorMatrix> base;
  try {
    base.emplace(raw);
  } catch (const GeometryError& e) {
    throw DegenerateLatticeError(std::string("normalize_generator: ") + e.what());
  }
  const std::int64_t budget = codeword_budget(base->dim(), rate);
  auto feasible = [&](double c) {
    return count_lattice_points(base->scaled(c), gamma, budget) <= budget;
  };
  if (!feasible(kScaleHi)) throw DegenerateLatticeError("normalize_generator: no feasible scale");
  double lo = kScaleLo;
  double hi = kScaleHi;
  if (feasible(lo)) return {base->scaled(lo), lo};
  for (int i = 0; i < kScaleSteps; ++i) {
    const double mid = std::sqrt(lo * hi);
    (feasible(mid) ? hi : lo) = mid;
  }
  // Step off the shell that bisection converged onto so no codeword sits
  // within rounding distance of the support radius.
  const double c = std::min(hi * (1.0 + kBoundaryMargin), kScaleHi);
  return {base->scaled(c), c};
}

Eigen::MatrixXi assign_codewords(const SdqCodec& codec, const LossBatch& batch) {
  check_batch(codec, batch);
  const Eigen::Index n = batch.blocks.cols();
  Eigen::MatrixXi out(codec.lattice.dim(), n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Vector target = codec.zeta * batch.blocks.col(k) + batch.dithers.col(k);
    out.col(k) = codec.lattice.index_set.col(static_cast<Eigen::Index>(quantize_index(codec.lattice, target)));
  }
  return out;
}

LossValue evaluate_loss(LossKind kind, const SdqCodec& codec, const LossBatch& batch, const TaskContext* task) {
  const Eigen::MatrixXi assigned = assign_codewords(codec, batch);
  const Matrix& g = codec.lattice.gen.entries();
  const Matrix coeffs = assigned.cast<double>();
  const Matrix recon = (g * coeffs - batch.dithers) / codec.zeta;
  const Matrix err = batch.blocks - recon;

  LossValue out;
  Matrix d_recon;
  switch (kind) {
    case LossKind::mse:
      out.loss = err.squaredNorm();
      d_recon = -2.0 * err;
      break;
    case LossKind::neg_snr: {
      const double signal = batch.blocks.squaredNorm();
      const double distortion = err.squaredNorm();
      out.loss = -signal / distortion;
      d_recon = (signal / (distortion * distortion)) * (-2.0 * err);
      break;
    }
    case LossKind::task: {
      if (task == nullptr || !task->objective) throw UsageError("task loss needs a model and objective");
      const Eigen::Index m = task->model.size();
      const Eigen::Index total = recon.size();
      if (m > total || total - m >= recon.rows()) {
        throw UsageError("task loss needs every block of the update (beta = 1)");
      }
      const Vector params = task->model + recon.reshaped().head(m);
      Vector grad;
      out.loss = task->objective(params, &grad);
      if (grad.size() != m) throw UsageError("task objective returned a gradient of the wrong size");
      Vector padded = Vector::Zero(total);
      padded.head(m) = grad;
      d_recon = padded.reshaped(recon.rows(), recon.cols());
      break;
    }
  }
  out.grad_gen = d_recon * coeffs.transpose() / codec.zeta;
  return out;
}

double compute_loss(LossKind kind, const SdqCodec& codec, const LossBatch& batch, const TaskContext* task) {
  return evaluate_loss(kind, codec, batch, task).loss;
}

Vector lattice_grad(const PriorNet& net, double scale, const Matrix& grad_gen) {
  return net.backward(scale * grad_gen);
}

ScaleFit overload_heuristic_minus1(const Eigen::Ref<const Matrix>& blocks, const TruncatedLattice& lat,
                                   const Eigen::Ref<const Matrix>& probe_dithers, double target, double sigmas) {
  const Eigen::Index n = blocks.cols();
  if (n < kHeuristicMinBlocks) throw UsageError("overload heuristic needs at least 10 blocks");
  if (probe_dithers.rows() != blocks.rows() || probe_dithers.cols() != n) {
    throw UsageError("overload heuristic: dither shape mismatch");
  }
  const Vector mean = blocks.rowwise().mean();
  const Matrix centered = blocks.colwise() - mean;
  const Vector sd = (centered.rowwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt();

  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < n; ++k) {
    bool inside = true;
    for (Eigen::Index j = 0; j < blocks.rows() && inside; ++j) {
      inside = std::abs(centered(j, k)) < sigmas * sd[j];
    }
    if (inside) keep.push_back(k);
  }
  if (keep.empty()) return fit_scale_with_dithers(blocks, lat, probe_dithers, target);
  Matrix kept_blocks(blocks.rows(), static_cast<Eigen::Index>(keep.size()));
  Matrix kept_dithers(blocks.rows(), kept_blocks.cols());
  for (Eigen::Index i = 0; i < kept_blocks.cols(); ++i) {
    kept_blocks.col(i) = blocks.col(keep[static_cast<std::size_t>(i)]);
    kept_dithers.col(i) = probe_dithers.col(keep[static_cast<std::size_t>(i)]);
  }
  return fit_scale_with_dithers(kept_blocks, lat, kept_dithers, target);
}

LearnerStreams learner_streams(std::uint64_t seed) {
  return {mix_seed(seed, 1), mix_seed(seed, 2), mix_seed(seed, 3), mix_seed(seed, 4)};
}

Matrix indexed_dithers(std::uint64_t seed, const GeneratorMatrix& gen, std::span<const Eigen::Index> indices) {
  const DitherStream stream(seed, gen);
  Matrix out(gen.dim(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = stream.at(static_cast<std::uint64_t>(indices[i]));
  }
  return out;
}

Matrix indexed_dithers(std::uint64_t seed, const GeneratorMatrix& gen, Eigen::Index count) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(count));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  return indexed_dithers(seed, gen, all);
}

ScaleFit fit_zeta(const Eigen::Ref<const Matrix>& blocks, const TruncatedLattice& lat, std::uint64_t probe_seed,
                  const LearnerConfig& cfg) {
  const Matrix probe = indexed_dithers(probe_seed, lat.gen, blocks.cols());
  if (cfg.overload_mode == OverloadMode::heuristic_minus1) {
    if (blocks.cols() >= kHeuristicMinBlocks) {
      return overload_heuristic_minus1(blocks, lat, probe, cfg.heuristic_target, cfg.heuristic_sigmas);
    }
    return fit_scale_with_dithers(blocks, lat, probe, cfg.heuristic_target);
  }
  return fit_scale_with_dithers(blocks, lat, probe, cfg.target_overload);
}

void write_learned_lattice(std::vector<std::uint8_t>& out, const LearnedLattice& lattice) {
  write_generator(out, lattice.gen);
  put_f64(out, lattice.zeta);
}

namespace {

struct Candidate {
  NormalizedGenerator norm;
  double zeta;
  double loss;
  double distortion;
};

// Lattice emitted for the current theta of `net`: normalized generator, zeta
// fitted on the whole update, and the loss / distortion on fixed dithers.
std::optional<Candidate> emit(const PriorNet& net, const Matrix& blocks, const LearnerConfig& cfg,
                              const LearnerStreams& streams, const TaskContext* task) {
  try {
    NormalizedGenerator norm = normalize_generator(net.forward(), cfg.rate, cfg.gamma);
    TruncatedLattice lat = build_lattice(norm.gen, cfg.gamma);
    const double zeta = fit_zeta(blocks, lat, streams.probe, cfg).zeta;
    const SdqCodec codec(std::move(lat), zeta);
    const LossBatch batch{blocks, indexed_dithers(streams.eval, norm.gen, blocks.cols())};
    const double distortion = compute_loss(LossKind::mse, codec, batch);
    const double loss =
        cfg.loss == LossKind::mse ? distortion : compute_loss(cfg.loss, codec, batch, task);
    if (!std::isfinite(loss) || !std::isfinite(distortion)) return std::nullopt;
    return Candidate{std::move(norm), zeta, loss, distortion};
  } catch (const DegenerateLatticeError&) {
    return std::nullopt;
  } catch (const NumericError&) {
    return std::nullopt;
  } catch (const ResourceError&) {
    return std::nullopt;
  }
}

LearnedLattice make_result(const Candidate& c, const Vector& theta) {
  LearnedLattice out{c.norm.gen, c.zeta, theta};
  out.scale = c.norm.scale;
  return out;
}

}  // namespace

LearnedLattice online_lattice_learning(PriorNet& net, const Eigen::Ref<const Vector>& h, const LearnerConfig& cfg,
                                       const TaskContext* task) {
  cfg.validate();
  const int dim = net.lattice_dim();
  if (cfg.loss == LossKind::task) {
    if (task == nullptr || !task->objective) throw UsageError("task loss needs a model and objective");
    if (task->model.size() != h.size()) throw UsageError("task loss: model and update sizes differ");
  }
  const SplitVector split = split_vector(h, dim);
  const Matrix& blocks = split.blocks;
  const Eigen::Index n = blocks.cols();
  const LearnerStreams streams = learner_streams(cfg.seed);

  const Vector theta0 = net.theta();
  const std::optional<Candidate> initial = emit(net, blocks, cfg, streams, task);
  if (!initial) throw DegenerateLatticeError("online_lattice_learning: the initial lattice is unusable");

  const int batches = static_cast<int>(std::min<Eigen::Index>(cfg.effective_batches(), n));
  double eta = cfg.learning_rate > 0.0 ? cfg.learning_rate : default_learning_rate(cfg.loss);
  Vector last_valid = theta0;
  int reversions = 0;
  bool aborted = false;
  Rng shuffler(streams.shuffle);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));

  // Returns false once the reversion budget is spent.
  auto revert = [&]() {
    if (reversions == kMaxReversions) {
      aborted = true;
      net.set_theta(last_valid);
      return false;
    }
    ++reversions;
    net.set_theta(last_valid);
    eta *= 0.1;
    return true;
  };

  for (int epoch = 0; epoch < cfg.epochs && !aborted; ++epoch) {
    double zeta;
    try {
      const NormalizedGenerator norm = normalize_generator(net.forward(), cfg.rate, cfg.gamma);
      zeta = fit_zeta(blocks, build_lattice(norm.gen, cfg.gamma), streams.probe, cfg).zeta;
    } catch (const Error&) {
      revert();
      continue;
    }
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    // the task loss reassembles the whole vector, so keep block order there
    if (cfg.loss != LossKind::task) shuffler.shuffle(std::span<Eigen::Index>(order));

    for (int b = 0; b < batches && !aborted; ++b) {
      const std::size_t from = static_cast<std::size_t>(n) * b / batches;
      const std::size_t to = static_cast<std::size_t>(n) * (b + 1) / batches;
      const std::span<const Eigen::Index> idx(order.data() + from, to - from);
      Vector grad;
      try {
        const NormalizedGenerator norm = normalize_generator(net.forward(), cfg.rate, cfg.gamma);
        const SdqCodec codec(build_lattice(norm.gen, cfg.gamma), zeta);
        LossBatch batch{Matrix(dim, static_cast<Eigen::Index>(idx.size())), indexed_dithers(streams.train, norm.gen, idx)};
        for (std::size_t i = 0; i < idx.size(); ++i) batch.blocks.col(static_cast<Eigen::Index>(i)) = blocks.col(idx[i]);
        const LossValue value = evaluate_loss(cfg.loss, codec, batch, task);
        grad = lattice_grad(net, norm.scale, value.grad_gen);
        if (!std::isfinite(value.loss) || !grad.allFinite()) throw NumericError("non-finite learner gradient");
      } catch (const UsageError&) {
        throw;
      } catch (const Error&) {
        if (!revert()) break;
        continue;
      }
      last_valid = net.theta();
      net.set_theta(last_valid - eta * grad);
    }
  }

  std::optional<Candidate> final_candidate = emit(net, blocks, cfg, streams, task);
  if (!final_candidate && net.theta() != last_valid) {
    net.set_theta(last_valid);
    final_candidate = emit(net, blocks, cfg, streams, task);
  }
  const bool improved = final_candidate && final_candidate->loss <= initial->loss &&
                        final_candidate->distortion <= initial->distortion;
  if (!improved) net.set_theta(theta0);
  const Candidate& chosen = improved ? *final_candidate : *initial;

  LearnedLattice out = make_result(chosen, net.theta());
  out.initial_loss = initial->loss;
  out.initial_distortion = initial->distortion;
  out.final_loss = chosen.loss;
  out.final_distortion = chosen.distortion;
  out.reversions = reversions;
  out.kept_initial = !improved && cfg.epochs > 0;
  return out;
}

}  // namespace olala
