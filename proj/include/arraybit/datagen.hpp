#pragma once

// Synthetic arrays whose cells hold a sum of G multivariate Gaussian
// densities evaluated at the cell coordinates.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "arraybit/chunkstore.hpp"
#include "arraybit/error.hpp"

namespace arraybit {

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

struct SumGaussSpec {
  std::vector<std::int64_t> shape;
  std::vector<std::int64_t> chunk;  // empty: 32 per dimension, clipped to the shape
  std::size_t gaussians = 8;
  std::uint64_t seed = 1;
  double threshold = 1e-4;  // values below become empty
  double eig_min = 0.5;
  double eig_max = 0.0;  // 0: smallest extent / 4
  std::string attribute = "a";
};

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Means uniform over the grid; covariances A*A^T + 0.1*I with A uniform in
/// [-1, 1], rescaled so the eigenvalues land in [eig_min, eig_max].
inline std::vector<Gaussian> sample_gaussians(const SumGaussSpec& spec) {
  const auto n = static_cast<Eigen::Index>(spec.shape.size());
  if (n == 0) throw input_error("shape needs at least one dimension");
  if (spec.gaussians == 0) throw input_error("need at least one gaussian");
  std::int64_t smallest = spec.shape.front();
  for (const auto e : spec.shape) {
    if (e < 1) throw input_error("extents must be positive");
    smallest = std::min(smallest, e);
  }
  const double lo = spec.eig_min;
  const double hi = spec.eig_max > 0.0 ? spec.eig_max : std::max(lo, static_cast<double>(smallest) / 4.0);
  if (!(lo > 0.0) || hi < lo) throw input_error("covariance eigenvalue bounds must satisfy 0 < min <= max");

  std::mt19937_64 rng(spec.seed);
  std::vector<Gaussian> out;
  for (std::size_t g = 0; g < spec.gaussians; ++g) {
    Gaussian gs;
    gs.mean.resize(n);
    for (Eigen::Index d = 0; d < n; ++d)
      gs.mean[d] = detail::unit(rng) * static_cast<double>(spec.shape[static_cast<std::size_t>(d)]);
    for (int attempt = 0;; ++attempt) {
      if (attempt == 16) throw invariant_error("could not sample a positive definite covariance");
      Eigen::MatrixXd a(n, n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) a(i, j) = 2.0 * detail::unit(rng) - 1.0;
      const Eigen::MatrixXd m = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
      if (eig.info() != Eigen::Success) continue;
      Eigen::VectorXd lambda = eig.eigenvalues();
      const double scale = hi / (static_cast<double>(n) + 0.1);
      for (Eigen::Index i = 0; i < n; ++i) lambda[i] = std::clamp(lambda[i] * scale, lo, hi);
      gs.covariance = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
      gs.covariance = 0.5 * (gs.covariance + gs.covariance.transpose());
      Eigen::LLT<Eigen::MatrixXd> llt(gs.covariance);
      if (llt.info() == Eigen::Success) break;
    }
    out.push_back(std::move(gs));
  }
  return out;
}

/// Precomputed inverse and normalization of one Gaussian.
class GaussianDensity {
 public:
  explicit GaussianDensity(const Gaussian& g) : n_(static_cast<std::size_t>(g.mean.size())) {
    const auto n = g.mean.size();
    Eigen::LLT<Eigen::MatrixXd> llt(g.covariance);
    if (llt.info() != Eigen::Success) throw input_error("covariance is not positive definite");
    const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
    mean_.assign(g.mean.data(), g.mean.data() + n);
    inverse_.resize(n_ * n_);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) inverse_[static_cast<std::size_t>(i * n + j)] = inv(i, j);
    const double det = g.covariance.determinant();
    norm_ = std::pow(2.0 * std::numbers::pi, -0.5 * static_cast<double>(n)) / std::sqrt(det);
  }

  double operator()(std::span<const double> x) const {
    double diff[8];
    for (std::size_t i = 0; i < n_; ++i) diff[i] = x[i] - mean_[i];
    double q = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n_; ++j) row += inverse_[i * n_ + j] * diff[j];
      q += diff[i] * row;
    }
    return norm_ * std::exp(-0.5 * q);
  }

 private:
  std::size_t n_;
  std::vector<double> mean_;
  std::vector<double> inverse_;
  double norm_ = 0.0;
};

inline ArraySchema sumgauss_schema(const SumGaussSpec& spec) {
  ArraySchema s;
  for (std::size_t d = 0; d < spec.shape.size(); ++d) s.dims.push_back({"d" + std::to_string(d), spec.shape[d]});
  s.attributes.push_back({spec.attribute, ValueType::Float64, std::nullopt});
  if (spec.chunk.empty()) {
    for (const auto e : spec.shape) s.chunk_shape.push_back(std::min<std::int64_t>(32, e));
  } else {
    if (spec.chunk.size() != spec.shape.size()) throw input_error("chunk rank differs from shape rank");
    s.chunk_shape = spec.chunk;
  }
  s.validate();
  return s;
}

/// Value at a cell: the sum of all densities.
inline double sumgauss_value(const std::vector<GaussianDensity>& densities, std::span<const std::int64_t> cell) {
  double x[8];
  for (std::size_t d = 0; d < cell.size(); ++d) x[d] = static_cast<double>(cell[d]);
  double v = 0.0;
  for (const auto& g : densities) v += g(std::span<const double>(x, cell.size()));
  return v;
}

/// Evaluates the explicit Gaussians on every cell; values below the threshold
/// are left empty and all-empty chunks are not stored.
inline ArrayStore generate(const ArraySchema& schema, const std::vector<Gaussian>& gaussians, double threshold) {
  std::vector<GaussianDensity> densities;
  for (const auto& g : gaussians) {
    if (static_cast<std::size_t>(g.mean.size()) != schema.rank()) throw input_error("gaussian rank mismatch");
    densities.emplace_back(g);
  }
  ArrayStore store(schema);
  const double empty = std::numeric_limits<double>::quiet_NaN();
  store.for_each_grid([&](const GridCoord& grid) {
    Coord off, end;
    chunk_bounds(schema, grid, off, end);
    std::uint64_t cells = 1;
    for (std::size_t d = 0; d < off.size(); ++d) cells *= static_cast<std::uint64_t>(end[d] - off[d]);
    std::vector<double> vals(cells);
    Coord cell = off;
    for (std::uint64_t i = 0; i < cells; ++i) {
      const double v = sumgauss_value(densities, cell);
      vals[i] = v < threshold ? empty : v;
      for (std::size_t d = off.size(); d-- > 0;) {
        if (++cell[d] < end[d]) break;
        cell[d] = off[d];
      }
    }
    store.put_chunk(grid, {std::move(vals)});
  });
  return store;
}

inline ArrayStore generate(const SumGaussSpec& spec) {
  return generate(sumgauss_schema(spec), sample_gaussians(spec), spec.threshold);
}

}  // namespace arraybit
