#include "olala/prior_net.hpp"

#include <cmath>

#include "olala/error.hpp"
#include "olala/rng.hpp"

namespace olala {

namespace {

constexpr int kIn = PriorNet::kInputWidth;
constexpr int kHid = PriorNet::kHiddenWidth;

struct Layout {
  Eigen::Index w1, b1, w2, b2, w3, b3, total;
  explicit Layout(int dim) {
    const Eigen::Index out = static_cast<Eigen::Index>(dim) * dim;
    w1 = 0;
    b1 = w1 + kHid * kIn;
    w2 = b1 + kHid;
    b2 = w2 + kHid * kHid;
    w3 = b2 + kHid;
    b3 = w3 + out * kHid;
    total = b3 + out;
  }
};

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

}  // namespace

Eigen::Index PriorNet::parameter_count(int lattice_dim) { return Layout(lattice_dim).total; }

Matrix PriorNet::default_warm_start(int lattice_dim) {
  if (lattice_dim == 2) return generators::hexagonal().entries();
  return Matrix::Identity(lattice_dim, lattice_dim);
}

PriorNet::PriorNet(int lattice_dim, std::uint64_t seed)
    : PriorNet(lattice_dim, seed, default_warm_start(lattice_dim)) {}

PriorNet::PriorNet(int lattice_dim, std::uint64_t seed, const Matrix& warm_start)
    : dim_(lattice_dim), input_(Vector::Ones(kIn)) {
  if (dim_ < 1 || dim_ > kMaxLatticeDim) throw UsageError("prior net: lattice dimension out of range");
  if (warm_start.rows() != dim_ || warm_start.cols() != dim_) {
    throw UsageError("prior net: warm start must be L x L");
  }
  const Layout lay(dim_);
  theta_.resize(lay.total);
  Rng rng(seed);
  auto fill = [&](Eigen::Index from, Eigen::Index to, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = from; i < to; ++i) theta_[i] = rng.uniform(-bound, bound);
  };
  fill(lay.w1, lay.w2, kIn);
  fill(lay.w2, lay.w3, kHid);
  fill(lay.w3, lay.b3, kHid);
  theta_.segment(lay.b3, lay.total - lay.b3).setZero();
  const Vector current = run().out;
  Vector target(static_cast<Eigen::Index>(dim_) * dim_);
  for (int r = 0; r < dim_; ++r)
    for (int c = 0; c < dim_; ++c) target[r * dim_ + c] = warm_start(r, c);
  theta_.segment(lay.b3, lay.total - lay.b3) = target - current;
}

PriorNet::PriorNet(int lattice_dim, Vector theta) : dim_(lattice_dim), input_(Vector::Ones(kIn)) {
  if (dim_ < 1 || dim_ > kMaxLatticeDim) throw UsageError("prior net: lattice dimension out of range");
  set_theta(std::move(theta));
}

void PriorNet::set_theta(Vector theta) {
  if (theta.size() != parameter_count(dim_)) throw UsageError("prior net: wrong parameter count");
  theta_ = std::move(theta);
}

PriorNet::Activations PriorNet::run() const {
  const Layout lay(dim_);
  const Eigen::Index out = static_cast<Eigen::Index>(dim_) * dim_;
  const double* p = theta_.data();
  Activations a;
  a.h1 = (ConstMap(p + lay.w1, kHid, kIn) * input_ + Eigen::Map<const Vector>(p + lay.b1, kHid))
             .array()
             .tanh()
             .matrix();
  a.h2 = (ConstMap(p + lay.w2, kHid, kHid) * a.h1 + Eigen::Map<const Vector>(p + lay.b2, kHid))
             .array()
             .tanh()
             .matrix();
  a.out = ConstMap(p + lay.w3, out, kHid) * a.h2 + Eigen::Map<const Vector>(p + lay.b3, out);
  return a;
}

Matrix PriorNet::forward() const {
  if (!theta_.allFinite()) throw NumericError("prior net: non-finite parameters");
  const Vector out = run().out;
  Matrix raw(dim_, dim_);
  for (int r = 0; r < dim_; ++r)
    for (int c = 0; c < dim_; ++c) raw(r, c) = out[r * dim_ + c];
  return raw;
}

Vector PriorNet::backward(const Matrix& d_raw) const {
  if (d_raw.rows() != dim_ || d_raw.cols() != dim_) throw UsageError("prior net: gradient shape");
  const Layout lay(dim_);
  const Eigen::Index out = static_cast<Eigen::Index>(dim_) * dim_;
  const Activations a = run();
  Vector d_out(out);
  for (int r = 0; r < dim_; ++r)
    for (int c = 0; c < dim_; ++c) d_out[r * dim_ + c] = d_raw(r, c);

  const double* p = theta_.data();
  Vector grad(lay.total);
  double* g = grad.data();
  MutMap(g + lay.w3, out, kHid) = d_out * a.h2.transpose();
  Eigen::Map<Vector>(g + lay.b3, out) = d_out;
  const Vector dz2 = ((ConstMap(p + lay.w3, out, kHid).transpose() * d_out).array() *
                      (1.0 - a.h2.array().square()))
                         .matrix();
  MutMap(g + lay.w2, kHid, kHid) = dz2 * a.h1.transpose();
  Eigen::Map<Vector>(g + lay.b2, kHid) = dz2;
  const Vector dz1 = ((ConstMap(p + lay.w2, kHid, kHid).transpose() * dz2).array() *
                      (1.0 - a.h1.array().square()))
                         .matrix();
  MutMap(g + lay.w1, kHid, kIn) = dz1 * input_.transpose();
  Eigen::Map<Vector>(g + lay.b1, kHid) = dz1;
  return grad;
}

}  // namespace olala
