#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <sstream>

#include "metcc/error.hpp"
#include "metcc/pca.hpp"
#include "oracles.hpp"

using namespace metcc;
using namespace metcc::test;

TEST_SUITE("pca") {
  TEST_CASE("diagonal point cloud") {
    Rng rng(1);
    Matrix x(50, 2);
    for (Index i = 0; i < x.rows(); ++i) {
      const double t = rng.normal() * 3, jitter = rng.normal() * 1e-3;
      x(i, 0) = (t + jitter) / std::sqrt(2.0);
      x(i, 1) = (t - jitter) / std::sqrt(2.0);
    }
    const auto model = pca::fit(x, 1);
    // Closed-form leading eigenvector of the 2 x 2 covariance.
    const Matrix c = x.rowwise() - x.colwise().mean();
    const double a = c.col(0).squaredNorm(), b = c.col(0).dot(c.col(1)), d = c.col(1).squaredNorm();
    const double theta = 0.5 * std::atan2(2 * b, a - d);
    CHECK(model.components(0, 0) == doctest::Approx(std::cos(theta)).epsilon(1e-10));
    CHECK(model.components(0, 1) == doctest::Approx(std::sin(theta)).epsilon(1e-10));
    CHECK(model.components(0, 0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-3));
    CHECK(model.components(0, 1) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-3));
  }

  TEST_CASE("sign convention: largest entry positive") {
    Rng rng(2);
    const Matrix x = test::random_matrix(30, 8, rng);
    const auto model = pca::fit(x, 5);
    for (Index r = 0; r < model.k(); ++r) {
      Index arg;
      model.components.row(r).cwiseAbs().maxCoeff(&arg);
      CHECK(model.components(r, arg) > 0);
    }
    const auto again = pca::fit(x, 5);
    CHECK(again.components == model.components);
    CHECK(again.explained_variance == model.explained_variance);
  }

  TEST_CASE("full rank reconstruction and round trip") {
    Rng rng(3);
    const Matrix x = test::random_matrix(9, 14, rng);
    const auto model = pca::fit(x, 8);
    const Matrix scores = pca::transform(model, x).values;
    const Matrix back = pca::inverse_transform(model, scores);
    CHECK((back - x).norm() / x.norm() < 1e-8);
    const Matrix centred = x.rowwise() - model.mean.transpose();
    CHECK((scores * model.components - centred).norm() < 1e-8 * centred.norm());
  }

  TEST_CASE("duplicated columns share loadings") {
    Rng rng(4);
    Matrix x = test::random_matrix(20, 5, rng);
    x.col(3) = x.col(1);
    const auto model = pca::fit(x, 4);
    for (Index r = 0; r < 4; ++r) CHECK(std::abs(model.components(r, 3) - model.components(r, 1)) < 1e-8);
  }

  TEST_CASE("transform identities and tagging") {
    Rng rng(5);
    const Matrix x = test::random_matrix(15, 6, rng);
    const auto model = pca::fit(x, 3);
    const Matrix mean_row = model.mean.transpose();
    const auto e = pca::transform(model, mean_row);
    CHECK(e.values.norm() < 1e-12);
    CHECK(e.recipe == Recipe::kPca);
    const Matrix row4 = x.row(4);
    CHECK(pca::transform(model, row4).values == pca::transform(model, x).values.row(4));
    CHECK_THROWS_AS(pca::transform(model, Matrix::Zero(2, 5)), Error);
  }

  TEST_CASE("invariants: orthonormal rows, sorted variances matching embedding columns") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      const Index n = 5 + static_cast<Index>(rng.below(20)), p = 2 + static_cast<Index>(rng.below(20));
      const Matrix x = test::random_matrix(n, p, rng) * Matrix(test::random_matrix(p, p, rng));
      const Index k = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(std::min(n - 1, p))));
      const auto model = pca::fit(x, k);
      const Matrix gram = model.components * model.components.transpose();
      CHECK((gram - Matrix::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-8);
      for (Index i = 1; i < k; ++i) CHECK(model.explained_variance(i) <= model.explained_variance(i - 1));
      CHECK(model.explained_variance.minCoeff() >= 0);
      const Matrix scores = pca::transform(model, x).values;
      for (Index c = 0; c < k; ++c) {
        const double var = (scores.col(c).array() - scores.col(c).mean()).square().sum() / static_cast<double>(n - 1);
        CHECK(var == doctest::Approx(model.explained_variance(c)).epsilon(1e-8));
      }
    }
  }

  TEST_CASE("covariance eigendecomposition oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      const Index n = 3 + static_cast<Index>(rng.below(18)), p = 2 + static_cast<Index>(rng.below(19));
      Matrix x = test::random_matrix(n, p, rng);
      // Spread the spectrum so the leading subspace is well separated.
      for (Index j = 0; j < p; ++j) x.col(j) *= std::pow(1.6, static_cast<double>(p - j));
      const Index k = std::max<Index>(1, std::min(n - 1, p) / 2);
      const auto model = pca::fit(x, k);
      const Matrix centred = x.rowwise() - x.colwise().mean();
      const Matrix cov = centred.transpose() * centred / static_cast<double>(n - 1);
      Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
      const Matrix top = eig.eigenvectors().rightCols(k).rowwise().reverse().transpose();
      CHECK(max_principal_angle(model.components, top) < 1e-6);
      for (Index c = 0; c < k; ++c)
        CHECK(model.explained_variance(c) == doctest::Approx(eig.eigenvalues()(p - 1 - c)).epsilon(1e-8));
    }
  }

  TEST_CASE("errors") {
    Rng rng(8);
    const Matrix x = test::random_matrix(5, 3, rng);
    auto code = [](auto fn) {
      try {
        fn();
      } catch (const Error& e) {
        return e.code();
      }
      return Errc::kIo;
    };
    CHECK(code([&] { pca::fit(x, 4); }) == Errc::kRankTooHigh);
    CHECK(code([&] { pca::fit(x, 0); }) == Errc::kInvalidArgument);
    CHECK(code([&] { pca::fit(Matrix::Constant(5, 3, 2.0), 1); }) == Errc::kDegenerateData);
    Matrix bad = x;
    bad(0, 0) = std::nan("");
    CHECK(code([&] { pca::fit(bad, 1); }) == Errc::kNonFiniteValue);
  }

  TEST_CASE("model persistence round trip") {
    Rng rng(9);
    const auto model = pca::fit(test::random_matrix(12, 7, rng), 3);
    std::ostringstream out;
    pca::write_model(out, model);
    std::istringstream in(out.str());
    const auto back = pca::read_model(in);
    CHECK(back.mean == model.mean);
    CHECK(back.components == model.components);
    CHECK(back.explained_variance == model.explained_variance);
  }
}
