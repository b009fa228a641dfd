#include "sgld/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sgld::linalg {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t splitmix64(std::uint64_t& z) {
  z += 0x9e3779b97f4a7c15ULL;
  std::uint64_t x = z;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t z = seed;
  for (auto& word : state_) word = splitmix64(z);
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::uniform_open() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }

double Rng::gaussian() {
  if (has_cached_gaussian_) {
    has_cached_gaussian_ = false;
    return cached_gaussian_;
  }
  const double u1 = uniform_open();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * kPi * u2;
  cached_gaussian_ = r * std::sin(theta);
  has_cached_gaussian_ = true;
  return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = next();
  while (x >= limit) x = next();
  return x % n;
}

Rng Rng::split(std::uint64_t stream) const {
  std::uint64_t z = seed_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  const std::uint64_t derived = splitmix64(z);
  return Rng(derived);
}

SymMatrix::SymMatrix(int dim) : dim_(dim) {
  if (dim <= 0) throw std::invalid_argument("SymMatrix: dimension must be positive");
  entries_.assign(static_cast<std::size_t>(dim) * dim, 0.0);
}

SymMatrix::SymMatrix(int dim, std::vector<double> entries) : dim_(dim), entries_(std::move(entries)) {
  if (dim <= 0) throw std::invalid_argument("SymMatrix: dimension must be positive");
  if (entries_.size() != static_cast<std::size_t>(dim) * dim)
    throw std::invalid_argument("SymMatrix: entry count does not match dimension");
  for (int i = 0; i < dim_; ++i) {
    for (int j = 0; j < dim_; ++j) {
      const double aij = (*this)(i, j);
      if (!std::isfinite(aij)) throw std::invalid_argument("SymMatrix: non-finite entry");
      const double aji = (*this)(j, i);
      if (std::abs(aij - aji) > 1e-12 * std::max(1.0, std::abs(aij)))
        throw std::invalid_argument("SymMatrix: input is not symmetric");
    }
  }
}

SymMatrix SymMatrix::identity(int dim) {
  SymMatrix m(dim);
  for (int i = 0; i < dim; ++i) m.set(i, i, 1.0);
  return m;
}

SymMatrix SymMatrix::diagonal(std::span<const double> diag) {
  SymMatrix m(static_cast<int>(diag.size()));
  for (int i = 0; i < m.dim(); ++i) m.set(i, i, diag[static_cast<std::size_t>(i)]);
  return m;
}

void SymMatrix::set(int i, int j, double value) {
  entries_[static_cast<std::size_t>(i) * dim_ + j] = value;
  entries_[static_cast<std::size_t>(j) * dim_ + i] = value;
}

double SymMatrix::trace() const {
  double t = 0.0;
  for (int i = 0; i < dim_; ++i) t += (*this)(i, i);
  return t;
}

double SymMatrix::frobenius_norm() const {
  double s = 0.0;
  for (double e : entries_) s += e * e;
  return std::sqrt(s);
}

std::vector<double> SymMatrix::matvec(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim_) throw std::invalid_argument("SymMatrix::matvec: size mismatch");
  std::vector<double> y(static_cast<std::size_t>(dim_), 0.0);
  for (int i = 0; i < dim_; ++i) {
    const double* row = entries_.data() + static_cast<std::size_t>(i) * dim_;
    double acc = 0.0;
    for (int j = 0; j < dim_; ++j) acc += row[j] * x[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

SymMatrix SymMatrix::scaled(double factor) const {
  SymMatrix out = *this;
  for (double& e : out.entries_) e *= factor;
  return out;
}

SymMatrix SymMatrix::plus_scaled_identity(double sigma) const {
  SymMatrix out = *this;
  for (int i = 0; i < dim_; ++i) out.set(i, i, (*this)(i, i) + sigma);
  return out;
}

std::vector<double> EigenDecomp::column(int j) const {
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) v[static_cast<std::size_t>(i)] = basis_at(i, j);
  return v;
}

SymMatrix EigenDecomp::reconstruct() const { return reconstruct_with(eigenvalues); }

SymMatrix EigenDecomp::reconstruct_with(std::span<const double> new_eigenvalues) const {
  if (static_cast<int>(new_eigenvalues.size()) != dim)
    throw std::invalid_argument("EigenDecomp::reconstruct_with: eigenvalue count mismatch");
  SymMatrix out(dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = i; j < dim; ++j) {
      double acc = 0.0;
      for (int k = 0; k < dim; ++k)
        acc += new_eigenvalues[static_cast<std::size_t>(k)] * basis_at(i, k) * basis_at(j, k);
      out.set(i, j, acc);
    }
  }
  return out;
}

EigenDecomp sym_eigen(const SymMatrix& input, double tol) {
  const int d = input.dim();
  if (d == 0) throw std::invalid_argument("sym_eigen: empty matrix");
  if (tol == -1.0) {
    tol = 1e-12 * input.frobenius_norm();
    if (tol <= 0.0) tol = 1e-300;  // zero matrix: already diagonal
  } else if (tol <= 0.0) {
    throw std::invalid_argument("sym_eigen: tol must be positive");
  }

  std::vector<double> a = input.data();
  std::vector<double> v(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) v[static_cast<std::size_t>(i) * d + i] = 1.0;

  auto off_norm = [&]() {
    double s = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i != j) s += a[static_cast<std::size_t>(i) * d + j] * a[static_cast<std::size_t>(i) * d + j];
    return std::sqrt(s);
  };

  constexpr int kSweepCap = 64;
  bool converged = off_norm() < tol;
  for (int sweep = 0; sweep < kSweepCap && !converged; ++sweep) {
    for (int p = 0; p < d - 1; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = a[static_cast<std::size_t>(p) * d + q];
        if (apq == 0.0) continue;
        const double app = a[static_cast<std::size_t>(p) * d + p];
        const double aqq = a[static_cast<std::size_t>(q) * d + q];
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        for (int k = 0; k < d; ++k) {
          const double akp = a[static_cast<std::size_t>(k) * d + p];
          const double akq = a[static_cast<std::size_t>(k) * d + q];
          a[static_cast<std::size_t>(k) * d + p] = c * akp - s * akq;
          a[static_cast<std::size_t>(k) * d + q] = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          const double apk = a[static_cast<std::size_t>(p) * d + k];
          const double aqk = a[static_cast<std::size_t>(q) * d + k];
          a[static_cast<std::size_t>(p) * d + k] = c * apk - s * aqk;
          a[static_cast<std::size_t>(q) * d + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < d; ++k) {
          const double vkp = v[static_cast<std::size_t>(k) * d + p];
          const double vkq = v[static_cast<std::size_t>(k) * d + q];
          v[static_cast<std::size_t>(k) * d + p] = c * vkp - s * vkq;
          v[static_cast<std::size_t>(k) * d + q] = s * vkp + c * vkq;
        }
      }
    }
    converged = off_norm() < tol;
  }
  if (!converged)
    throw std::runtime_error("sym_eigen: Jacobi sweeps did not converge, off-diagonal residual " +
                             std::to_string(off_norm()));

  std::vector<int> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int lhs, int rhs) {
    return a[static_cast<std::size_t>(lhs) * d + lhs] > a[static_cast<std::size_t>(rhs) * d + rhs];
  });

  EigenDecomp out;
  out.dim = d;
  out.eigenvalues.resize(static_cast<std::size_t>(d));
  out.basis.resize(static_cast<std::size_t>(d) * d);
  for (int j = 0; j < d; ++j) {
    const int src = order[static_cast<std::size_t>(j)];
    out.eigenvalues[static_cast<std::size_t>(j)] = a[static_cast<std::size_t>(src) * d + src];
    int arg_max = 0;
    double best = 0.0;
    for (int i = 0; i < d; ++i) {
      const double entry = std::abs(v[static_cast<std::size_t>(i) * d + src]);
      if (entry > best) {
        best = entry;
        arg_max = i;
      }
    }
    const double sign = v[static_cast<std::size_t>(arg_max) * d + src] < 0.0 ? -1.0 : 1.0;
    for (int i = 0; i < d; ++i)
      out.basis[static_cast<std::size_t>(i) * d + j] = sign * v[static_cast<std::size_t>(i) * d + src];
  }
  return out;
}

SymMatrix psd_sqrt(const SymMatrix& a) {
  EigenDecomp ed = sym_eigen(a);
  const double clamp = 1e-10 * std::abs(a.trace());
  std::vector<double> roots(ed.eigenvalues.size());
  for (std::size_t i = 0; i < ed.eigenvalues.size(); ++i) {
    const double lambda = ed.eigenvalues[i];
    if (lambda < -clamp)
      throw std::domain_error("psd_sqrt: materially negative eigenvalue " + std::to_string(lambda));
    roots[i] = std::sqrt(std::max(lambda, 0.0));
  }
  return ed.reconstruct_with(roots);
}

std::vector<double> sample_gaussian(std::span<const double> mean, const EigenDecomp& cov, Rng& rng) {
  const int d = cov.dim;
  if (static_cast<int>(mean.size()) != d) throw std::invalid_argument("sample_gaussian: mean size mismatch");
  double eig_sum = 0.0;
  for (double lambda : cov.eigenvalues) eig_sum += std::abs(lambda);
  for (double lambda : cov.eigenvalues)
    if (lambda < -1e-10 * std::max(eig_sum, 1e-300))
      throw std::domain_error("sample_gaussian: negative eigenvalue in covariance");

  std::vector<double> z(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k)
    z[static_cast<std::size_t>(k)] = std::sqrt(std::max(cov.eigenvalues[static_cast<std::size_t>(k)], 0.0)) * rng.gaussian();

  std::vector<double> out(mean.begin(), mean.end());
  for (int i = 0; i < d; ++i) {
    double acc = 0.0;
    for (int k = 0; k < d; ++k) acc += cov.basis_at(i, k) * z[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(i)] += acc;
  }
  return out;
}

double condition_number(const SymMatrix& a, double floor) {
  if (floor < 0.0) throw std::invalid_argument("condition_number: floor must be nonnegative");
  EigenDecomp ed = sym_eigen(a);
  const double top = ed.eigenvalues.front();
  if (top <= 0.0) throw std::domain_error("condition_number: matrix has no positive eigenvalue");
  const double bottom = std::max(ed.eigenvalues.back(), floor);
  if (bottom <= 0.0) return std::numeric_limits<double>::infinity();
  return top / bottom;
}

std::vector<double> mat_mul(const SymMatrix& a, const SymMatrix& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("mat_mul: dimension mismatch");
  const int d = a.dim();
  std::vector<double> out(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] += aik * b(k, j);
    }
  return out;
}

double commutator_norm(const SymMatrix& a, const SymMatrix& b) {
  const auto ab = mat_mul(a, b);
  const auto ba = mat_mul(b, a);
  double s = 0.0;
  for (std::size_t i = 0; i < ab.size(); ++i) {
    const double diff = ab[i] - ba[i];
    s += diff * diff;
  }
  return std::sqrt(s);
}

double frobenius_distance(const SymMatrix& a, const SymMatrix& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("frobenius_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double diff = a.data()[i] - b.data()[i];
    s += diff * diff;
  }
  return std::sqrt(s);
}

}  // namespace sgld::linalg
