#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

// Dense symmetric/PSD linear algebra used throughout the project:
// cyclic-Jacobi eigendecomposition, matrix square root, condition numbers,
// and covariance-shaped Gaussian sampling with a reproducible generator.

namespace sgld::linalg {

// Counter-free xoshiro256++ generator seeded through splitmix64.
//
// The exact algorithm (so runs can be reproduced elsewhere):
//   state: four 64-bit words s0..s3, filled by iterating
//     splitmix64(z += 0x9e3779b97f4a7c15;
//                z = (z ^ z>>30) * 0xbf58476d1ce4e5b9;
//                z = (z ^ z>>27) * 0x94d049bb133111eb;
//                return z ^ z>>31)
//   starting from the 64-bit seed.
//   next(): rotl(s0+s3, 23) + s0, followed by the xoshiro256++ state update.
//   uniform():       (next() >> 11) * 2^-53            in [0, 1)
//   uniform_open():  ((next() >> 11) + 1) * 2^-53      in (0, 1]
//   gaussian():      Box-Muller; each pair of uniforms (u1 open, u2 half-open)
//                    yields r*cos(2*pi*u2) then r*sin(2*pi*u2) with
//                    r = sqrt(-2 ln u1). The second variate is cached.
//   below(n):        unbiased rejection sampling on next().
//
// A generator is single-owner; derive independent streams with split().
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();
  double uniform_open();
  double gaussian();
  std::uint64_t below(std::uint64_t n);

  // Independent stream keyed by (seed, stream); does not advance *this.
  Rng split(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_;
  double cached_gaussian_ = 0.0;
  bool has_cached_gaussian_ = false;
};

// Dense symmetric matrix, row-major, validated on construction:
// entries finite and |a_ij - a_ji| <= 1e-12 * max(1, |a_ij|).
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(int dim);  // zero matrix
  SymMatrix(int dim, std::vector<double> entries);

  static SymMatrix identity(int dim);
  static SymMatrix diagonal(std::span<const double> diag);

  int dim() const { return dim_; }
  double operator()(int i, int j) const { return entries_[static_cast<std::size_t>(i) * dim_ + j]; }
  // Writes both (i,j) and (j,i) so the symmetry invariant is preserved.
  void set(int i, int j, double value);

  double trace() const;
  double frobenius_norm() const;
  std::vector<double> matvec(std::span<const double> x) const;

  SymMatrix scaled(double factor) const;
  SymMatrix plus_scaled_identity(double sigma) const;

  const std::vector<double>& data() const { return entries_; }

 private:
  int dim_ = 0;
  std::vector<double> entries_;
};

// Spectral factorization A = basis * diag(eigenvalues) * basis^T with
// eigenvalues sorted descending (ties keep the pre-sort column order) and
// basis columns holding the paired eigenvectors.
struct EigenDecomp {
  int dim = 0;
  std::vector<double> eigenvalues;
  std::vector<double> basis;  // row-major dim x dim; column j pairs eigenvalues[j]

  double basis_at(int i, int j) const { return basis[static_cast<std::size_t>(i) * dim + j]; }
  std::vector<double> column(int j) const;
  SymMatrix reconstruct() const;
  SymMatrix reconstruct_with(std::span<const double> new_eigenvalues) const;
};

// Cyclic Jacobi sweeps until the off-diagonal Frobenius norm drops below tol
// (default 1e-12 * ||A||_F), capped at 64 sweeps. Deterministic for a fixed
// input: fixed sweep order, stable eigenvalue sort, and a sign convention
// making the largest-magnitude entry of every eigenvector positive.
// Throws std::runtime_error with the residual if the cap is hit.
EigenDecomp sym_eigen(const SymMatrix& a, double tol = -1.0);

// Returns B with B*B = A. Eigenvalues below -1e-10*tr(A) raise
// std::domain_error; tiny negatives from round-off are clamped to zero.
SymMatrix psd_sqrt(const SymMatrix& a);

// mean + basis * diag(sqrt(eigenvalues)) * z with z iid standard normal,
// drawn in coordinate order from rng. Zero eigenvalues contribute exactly
// nothing (the variate is still consumed, keeping streams aligned).
std::vector<double> sample_gaussian(std::span<const double> mean, const EigenDecomp& cov, Rng& rng);

// lambda_max / max(lambda_min, floor). Throws std::domain_error when the top
// eigenvalue is not positive; returns +inf for singular input with floor 0.
double condition_number(const SymMatrix& a, double floor = 0.0);

// Helpers shared by tests and the noise solvers.
std::vector<double> mat_mul(const SymMatrix& a, const SymMatrix& b);
double commutator_norm(const SymMatrix& a, const SymMatrix& b);
double frobenius_distance(const SymMatrix& a, const SymMatrix& b);

}  // namespace sgld::linalg
