#include "olala/model.hpp"

#include <cmath>

#include "olala/error.hpp"

namespace olala {

namespace {

struct Layer {
  int in;
  int out;
  Eigen::Index w;  // offset of W
  Eigen::Index b;  // offset of b
};

std::vector<Layer> layers_of(const ModelArch& arch) {
  const std::vector<int> widths = arch.widths();
  std::vector<Layer> out;
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Layer l{widths[i], widths[i + 1], offset, 0};
    l.b = l.w + static_cast<Eigen::Index>(l.in) * l.out;
    offset = l.b + l.out;
    out.push_back(l);
  }
  return out;
}

using ConstMap = Eigen::Map<const Matrix>;

// Forward pass keeping every layer's output (post-activation).
std::vector<Vector> forward_all(const ModelArch& arch, const std::vector<Layer>& layers, const Vector& params,
                                const Eigen::Ref<const Vector>& x) {
  if (x.size() != arch.inputs) throw UsageError("model: input has the wrong width");
  std::vector<Vector> acts;
  acts.reserve(layers.size() + 1);
  acts.emplace_back(x);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    Vector z = ConstMap(params.data() + l.w, l.out, l.in) * acts.back() +
               Eigen::Map<const Vector>(params.data() + l.b, l.out);
    if (i + 1 < layers.size()) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  return acts;
}

int argmax(const Vector& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::linear ? "linear" : "mlp"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "linear") return ModelKind::linear;
  if (name == "mlp") return ModelKind::mlp;
  throw UsageError("unknown model kind '" + name + "'");
}

std::vector<int> ModelArch::widths() const {
  std::vector<int> out{inputs};
  if (kind == ModelKind::mlp) out.insert(out.end(), hidden.begin(), hidden.end());
  out.push_back(classes);
  return out;
}

Eigen::Index ModelArch::parameter_count() const {
  Eigen::Index total = 0;
  const std::vector<int> w = widths();
  for (std::size_t i = 0; i + 1 < w.size(); ++i) total += static_cast<Eigen::Index>(w[i] + 1) * w[i + 1];
  return total;
}

void ModelArch::validate() const {
  if (inputs < 1 || classes < 2) throw UsageError("model: needs >= 1 input and >= 2 classes");
  if (kind == ModelKind::mlp && hidden.empty()) throw UsageError("model: mlp needs hidden layers");
  for (int h : hidden)
    if (h < 1) throw UsageError("model: hidden widths must be positive");
}

Model init_model(const ModelArch& arch, std::uint64_t seed) {
  arch.validate();
  Model m{arch, Vector::Zero(arch.parameter_count())};
  Rng rng(seed);
  for (const Layer& l : layers_of(arch)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (Eigen::Index i = l.w; i < l.b; ++i) m.params[i] = rng.uniform(-bound, bound);
  }
  return m;
}

Vector model_logits(const ModelArch& arch, const Vector& params, const Eigen::Ref<const Vector>& x) {
  return forward_all(arch, layers_of(arch), params, x).back();
}

double sample_loss(const ModelArch& arch, const Vector& params, const Eigen::Ref<const Vector>& x, int label,
                   Vector* grad) {
  const std::vector<Layer> layers = layers_of(arch);
  const std::vector<Vector> acts = forward_all(arch, layers, params, x);
  const Vector& logits = acts.back();
  const double top = logits.maxCoeff();
  const Vector e = (logits.array() - top).exp().matrix();
  const double z = e.sum();
  const double loss = std::log(z) - (logits[label] - top);
  if (grad == nullptr) return loss;

  Vector delta = e / z;
  delta[label] -= 1.0;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const Layer& l = layers[i];
    Eigen::Map<Matrix>(grad->data() + l.w, l.out, l.in) += delta * acts[i].transpose();
    Eigen::Map<Vector>(grad->data() + l.b, l.out) += delta;
    if (i == 0) break;
    Vector back = ConstMap(params.data() + l.w, l.out, l.in).transpose() * delta;
    for (Eigen::Index j = 0; j < back.size(); ++j)
      if (acts[i][j] <= 0.0) back[j] = 0.0;
    delta = std::move(back);
  }
  return loss;
}

double dataset_loss(const ModelArch& arch, const Vector& params, const Dataset& ds, Vector* grad) {
  if (ds.size() == 0) throw UsageError("dataset_loss: empty dataset");
  if (grad != nullptr) *grad = Vector::Zero(params.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    total += sample_loss(arch, params, ds.samples.col(i), ds.labels[static_cast<std::size_t>(i)], grad);
  }
  const double n = static_cast<double>(ds.size());
  if (grad != nullptr) *grad /= n;
  return total / n;
}

Vector local_train(const Model& model, const Dataset& shard, int steps, double eta, Rng& rng,
                   const TrainContext& context) {
  if (steps < 1) throw UsageError("local_train: steps must be >= 1");
  if (shard.size() == 0) throw UsageError("local_train: empty shard");
  Vector w = model.params;
  Vector grad(w.size());
  for (int s = 0; s < steps; ++s) {
    const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(shard.size())));
    grad.setZero();
    const double loss = sample_loss(model.arch, w, shard.samples.col(i), shard.labels[static_cast<std::size_t>(i)], &grad);
    if (!std::isfinite(loss)) {
      throw NumericError("non-finite training loss at round " + std::to_string(context.round) + ", client " +
                         std::to_string(context.client) + ", step " + std::to_string(s));
    }
    w -= eta * grad;
  }
  return w - model.params;
}

double evaluate(const Model& model, const Dataset& test) {
  if (test.size() == 0) throw UsageError("evaluate: empty test set");
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    if (argmax(model_logits(model.arch, model.params, test.samples.col(i))) == test.labels[static_cast<std::size_t>(i)]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

std::vector<std::uint8_t> serialize_model(const Model& model) {
  std::vector<std::uint8_t> out;
  put_u32(out, model.arch.kind == ModelKind::linear ? 0 : 1);
  put_u32(out, static_cast<std::uint32_t>(model.arch.inputs));
  put_u32(out, static_cast<std::uint32_t>(model.arch.classes));
  put_u32(out, static_cast<std::uint32_t>(model.arch.hidden.size()));
  for (int h : model.arch.hidden) put_u32(out, static_cast<std::uint32_t>(h));
  put_u64(out, static_cast<std::uint64_t>(model.params.size()));
  for (double v : model.params) put_f64(out, v);
  return out;
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  Model m;
  const std::uint32_t kind = get_u32(bytes, off);
  if (kind > 1) throw ProtocolError("model: unknown kind");
  m.arch.kind = kind == 0 ? ModelKind::linear : ModelKind::mlp;
  m.arch.inputs = static_cast<int>(get_u32(bytes, off));
  m.arch.classes = static_cast<int>(get_u32(bytes, off));
  const std::uint32_t layers = get_u32(bytes, off);
  if (layers > 64) throw ProtocolError("model: too many hidden layers");
  for (std::uint32_t i = 0; i < layers; ++i) m.arch.hidden.push_back(static_cast<int>(get_u32(bytes, off)));
  const std::uint64_t count = get_u64(bytes, off);
  if (count != static_cast<std::uint64_t>(m.arch.parameter_count())) throw ProtocolError("model: parameter count");
  m.params.resize(static_cast<Eigen::Index>(count));
  for (auto& v : m.params) v = get_f64(bytes, off);
  if (off != bytes.size()) throw ProtocolError("model: trailing bytes");
  return m;
}

}  // namespace olala
