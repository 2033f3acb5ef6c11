#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "arraybit/datagen.hpp"

using namespace arraybit;

namespace {

double reference_density(const std::vector<Gaussian>& gs, const Coord& cell) {
  double sum = 0;
  for (const auto& g : gs) {
    const auto n = g.mean.size();
    Eigen::VectorXd x(n);
    for (Eigen::Index d = 0; d < n; ++d) x[d] = static_cast<double>(cell[static_cast<std::size_t>(d)]) - g.mean[d];
    const double q = x.dot(g.covariance.inverse() * x);
    sum += std::exp(-0.5 * q) / std::sqrt(std::pow(2 * std::numbers::pi, static_cast<double>(n)) * g.covariance.determinant());
  }
  return sum;
}

}  // namespace

TEST(SumGauss, StandardNormalPeak) {
  for (const std::size_t n : {1u, 2u, 3u, 4u}) {
    Gaussian g{Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 3.0),
               Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))};
    const std::vector<GaussianDensity> dens{GaussianDensity(g)};
    const Coord at(n, 3);
    EXPECT_NEAR(sumgauss_value(dens, at), std::pow(2 * std::numbers::pi, -0.5 * static_cast<double>(n)), 1e-15);
  }
}

TEST(SumGauss, SampledCovariancesRespectBounds) {
  SumGaussSpec spec;
  spec.shape = {64, 48, 40};
  spec.gaussians = 20;
  spec.seed = 9;
  const auto gs = sample_gaussians(spec);
  ASSERT_EQ(gs.size(), 20u);
  for (const auto& g : gs) {
    for (Eigen::Index d = 0; d < 3; ++d) {
      EXPECT_GE(g.mean[d], 0);
      EXPECT_LT(g.mean[d], static_cast<double>(spec.shape[static_cast<std::size_t>(d)]));
    }
    EXPECT_TRUE(g.covariance.isApprox(g.covariance.transpose()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g.covariance);
    EXPECT_GE(eig.eigenvalues().minCoeff(), spec.eig_min - 1e-9);
    EXPECT_LE(eig.eigenvalues().maxCoeff(), 40.0 / 4 + 1e-9);
  }
}

TEST(SumGauss, ValuesMatchReferenceDensity) {
  SumGaussSpec spec;
  spec.shape = {50, 40};
  spec.chunk = {16, 16};
  spec.gaussians = 5;
  spec.seed = 3;
  spec.threshold = 0;
  const auto gs = sample_gaussians(spec);
  const auto store = generate(sumgauss_schema(spec), gs, spec.threshold);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Coord cell{static_cast<std::int64_t>(rng() % 50), static_cast<std::int64_t>(rng() % 40)};
    const auto v = store.value_at(cell, 0);
    ASSERT_TRUE(v.has_value());
    const double ref = reference_density(gs, cell);
    EXPECT_NEAR(*v, ref, 1e-12 * std::max(1.0, ref));
  }
}

TEST(SumGauss, ThresholdAboveMaximumLeavesNoChunks) {
  SumGaussSpec spec;
  spec.shape = {32, 32};
  spec.gaussians = 2;
  spec.threshold = 10.0;  // densities here stay far below 1
  EXPECT_EQ(generate(spec).chunk_count(), 0u);
}

TEST(SumGauss, DeterministicForSeed) {
  SumGaussSpec spec;
  spec.shape = {40, 40};
  spec.chunk = {8, 8};
  spec.seed = 77;
  const auto a = generate(spec).to_row_major(0);
  const auto b = generate(spec).to_row_major(0);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(a[i])) EXPECT_TRUE(std::isnan(b[i]));
    else EXPECT_EQ(a[i], b[i]);
  }
  spec.seed = 78;
  EXPECT_NE(generate(spec).nonempty_count(), 0u);
}

TEST(SumGauss, HigherThresholdKeepsSubset) {
  SumGaussSpec spec;
  spec.shape = {48, 48};
  spec.chunk = {8, 8};
  spec.gaussians = 4;
  spec.seed = 5;
  std::uint64_t prev = std::numeric_limits<std::uint64_t>::max();
  std::vector<double> prev_vals;
  for (const double t : {0.0, 1e-6, 1e-4, 1e-3, 1e-2}) {
    spec.threshold = t;
    const auto store = generate(spec);
    EXPECT_LE(store.nonempty_count(), prev);
    const auto vals = store.to_row_major(0);
    for (std::size_t i = 0; i < prev_vals.size(); ++i)
      if (!std::isnan(vals[i])) { EXPECT_EQ(vals[i], prev_vals[i]); }
    prev = store.nonempty_count();
    prev_vals = vals;
  }
  spec.threshold = 0;
  EXPECT_EQ(generate(spec).nonempty_count(), 48u * 48u);
}

TEST(SumGauss, RejectsBadSpecs) {
  SumGaussSpec spec;
  EXPECT_THROW(sample_gaussians(spec), input_error);
  spec.shape = {8, 8};
  spec.gaussians = 0;
  EXPECT_THROW(sample_gaussians(spec), input_error);
  spec.gaussians = 1;
  spec.eig_min = 5;
  spec.eig_max = 1;
  EXPECT_THROW(sample_gaussians(spec), input_error);
  spec.eig_max = 0;
  spec.chunk = {4};
  EXPECT_THROW(sumgauss_schema(spec), input_error);
}
