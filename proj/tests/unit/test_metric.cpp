#include <doctest.h>

#include <Eigen/QR>
#include <cmath>
#include <sstream>

#include "metcc/error.hpp"
#include "metcc/metric.hpp"
#include "oracles.hpp"

using namespace metcc;
using namespace metcc::test;
using namespace metcc::metric;

namespace {

TripletNetParams identity_net(Index d) {
  auto p = TripletNetParams::zeros(d, d, d);
  p.w1.setIdentity();
  p.w2.setIdentity();
  return p;
}

std::vector<int> alternating(Index n) {
  std::vector<int> y;
  for (Index i = 0; i < n; ++i) y.push_back(static_cast<int>(i % 2));
  return y;
}

// Two well separated Gaussian blobs.
Matrix blobs(Index n, Index d, Rng& rng) {
  Matrix x = test::random_matrix(n, d, rng) * 0.3;
  for (Index i = 0; i < n; ++i) x(i, 0) += (i % 2 == 0) ? -3.0 : 3.0;
  return x;
}

}  // namespace

TEST_SUITE("metric") {
  TEST_CASE("forward examples") {
    Rng rng(31);
    const Vector x = test::random_matrix(3, 1, rng);
    CHECK(forward(TripletNetParams::zeros(3, 5, 2), x).isZero());

    const auto p = random_net(3, 4, 2, rng);
    DropoutMask none{Eigen::ArrayXd::Ones(4), 0.0};
    CHECK(forward(p, x, none) == forward(p, x));

    const Vector positive = Vector::Constant(3, 0.5) + x.cwiseAbs();
    CHECK(forward(identity_net(3), positive) == positive);

    // Inverted dropout: kept units scaled by 1/(1-p).
    DropoutMask half{Eigen::ArrayXd::Ones(3), 0.5};
    CHECK((forward(identity_net(3), positive, half) - 2 * positive).norm() < 1e-15);
  }

  TEST_CASE("triplet loss examples") {
    const auto id = identity_net(2);
    const Vector a = Vector::Constant(2, 2.0);
    Vector n = a;
    n(0) += 1.0;
    CHECK(triplet_loss(id, a, a, n) == 0.0);
    Rng rng(32);
    const Vector r1 = test::random_matrix(2, 1, rng), r2 = test::random_matrix(2, 1, rng);
    CHECK(triplet_loss(TripletNetParams::zeros(2, 3, 2), r1, r2, a) == 1.0);

    for (int t = 0; t < 20; ++t) {
      const auto p = random_net(3, 4, 3, rng);
      const Vector x = test::random_matrix(3, 1, rng), xp = test::random_matrix(3, 1, rng),
                   xn = test::random_matrix(3, 1, rng);
      const double dp = (forward(p, x) - forward(p, xp)).norm();
      const double dn = (forward(p, x) - forward(p, xn)).norm();
      CHECK(std::abs(triplet_loss(p, x, xp, xn) - (dp * dp + (dn - 1) * (dn - 1))) < 1e-12);
    }
  }

  TEST_CASE("siamese loss, literal convention") {
    const auto id = identity_net(1);
    const Vector zero = Vector::Constant(1, 1.0), far = Vector::Constant(1, 4.0);
    const auto lit = SiameseConvention::kLiteral;
    CHECK(siamese_loss(id, zero, far, true, 2.0, lit) == 0.0);
    CHECK(siamese_loss(id, zero, zero, false, 2.0, lit) == 0.0);
    CHECK(siamese_loss(id, zero, zero, true, 2.0, lit) == 4.0);
    CHECK(siamese_loss(id, zero, far, false, 2.0, lit) == 9.0);
  }

  TEST_CASE("siamese loss, contrastive convention") {
    const auto id = identity_net(1);
    const Vector zero = Vector::Constant(1, 1.0), far = Vector::Constant(1, 4.0);
    CHECK(siamese_loss(id, zero, far, false, 2.0) == 0.0);
    CHECK(siamese_loss(id, zero, zero, true, 2.0) == 0.0);
    CHECK(siamese_loss(id, zero, zero, false, 2.0) == 4.0);
    CHECK(siamese_loss(id, zero, far, true, 2.0) == 9.0);
  }

  TEST_CASE("losses are non-negative and invariant to output rotations") {
    Rng rng(33);
    for (int t = 0; t < 20; ++t) {
      auto p = random_net(4, 5, 3, rng);
      const Vector a = test::random_matrix(4, 1, rng), b = test::random_matrix(4, 1, rng),
                   c = test::random_matrix(4, 1, rng);
      const Matrix q = Eigen::HouseholderQR<Matrix>(test::random_matrix(3, 3, rng)).householderQ();
      auto rotated = p;
      rotated.w2 = q * p.w2;
      rotated.b2 = q * p.b2;
      const double tl = triplet_loss(p, a, b, c);
      CHECK(tl >= 0);
      CHECK(triplet_loss(rotated, a, b, c) == doctest::Approx(tl).epsilon(1e-12));
      for (bool same : {true, false})
        for (auto conv : {SiameseConvention::kContrastive, SiameseConvention::kLiteral}) {
          const double sl = siamese_loss(p, a, b, same, 1.5, conv);
          CHECK(sl >= 0);
          CHECK(siamese_loss(rotated, a, b, same, 1.5, conv) == doctest::Approx(sl).epsilon(1e-12));
        }
    }
  }

  TEST_CASE("gradients match central finite differences") {
    Rng rng(34);
    for (int t = 0; t < 20; ++t) {
      const Index d = 1 + static_cast<Index>(rng.below(4)), h = 1 + static_cast<Index>(rng.below(4)),
                  k = 1 + static_cast<Index>(rng.below(4));
      const auto p = random_net(d, h, k, rng);
      const Matrix x = test::random_matrix(10, d, rng);
      const auto labels = alternating(10);
      MetricTrainConfig cfg;
      cfg.dropout_p = 0;
      const auto triplets = sample_triplets(labels, 6, rng);
      CHECK(max_fd_error(p, x, triplets, cfg) < 1e-4);
      cfg.loss = LossKind::kSiamese;
      cfg.margin = 2.0;
      const auto pairs = sample_pairs(labels, 6, rng);
      CHECK(max_fd_error(p, x, pairs, cfg) < 1e-4);
      cfg.convention = SiameseConvention::kLiteral;
      CHECK(max_fd_error(p, x, pairs, cfg) < 1e-4);
    }
  }

  TEST_CASE("gradient at the minimum is zero and mean-invariant to duplication") {
    const auto id = identity_net(1);
    const Matrix x = Matrix{{2.0}, {2.0}, {3.0}};
    TripletBatch batch{{0}, {1}, {2}};
    MetricTrainConfig cfg;
    const auto g = loss_gradient(id, x, batch, cfg);
    CHECK(g.loss == 0.0);
    CHECK(g.gradient.w1.isZero());
    CHECK(g.gradient.w2.isZero());
    CHECK(g.gradient.b1.isZero());
    CHECK(g.gradient.b2.isZero());

    Rng rng(35);
    const auto p = random_net(3, 4, 2, rng);
    const Matrix xs = test::random_matrix(8, 3, rng);
    auto once = sample_triplets(alternating(8), 5, rng);
    auto twice = once;
    twice.anchors.insert(twice.anchors.end(), once.anchors.begin(), once.anchors.end());
    twice.positives.insert(twice.positives.end(), once.positives.begin(), once.positives.end());
    twice.negatives.insert(twice.negatives.end(), once.negatives.begin(), once.negatives.end());
    const auto g1 = loss_gradient(p, xs, once, cfg), g2 = loss_gradient(p, xs, twice, cfg);
    CHECK((g1.gradient.w1 - g2.gradient.w1).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((g1.gradient.w2 - g2.gradient.w2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(g1.loss - g2.loss) < 1e-12);
  }

  TEST_CASE("samplers produce valid triplets and pairs") {
    Rng rng(36);
    const std::vector<int> labels{0, 0, 1, 1, 1, 0, 1};
    const auto t = sample_triplets(labels, 200, rng);
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(labels[static_cast<std::size_t>(t.anchors[i])] == labels[static_cast<std::size_t>(t.positives[i])]);
      CHECK(labels[static_cast<std::size_t>(t.anchors[i])] != labels[static_cast<std::size_t>(t.negatives[i])]);
      CHECK(t.anchors[i] != t.positives[i]);
    }
    const auto pr = sample_pairs(labels, 200, rng);
    int same = 0;
    for (std::size_t i = 0; i < pr.size(); ++i) {
      const bool s = labels[static_cast<std::size_t>(pr.first[i])] == labels[static_cast<std::size_t>(pr.second[i])];
      CHECK(s == static_cast<bool>(pr.same_class[i]));
      same += s;
    }
    CHECK(same > 60);
    CHECK(same < 140);
    CHECK_THROWS_AS(sample_triplets({1, 1, 1}, 3, rng), Error);
  }

  TEST_CASE("training separates blobs") {
    Rng rng(37);
    const Matrix x = blobs(80, 3, rng);
    const auto y = alternating(80);
    MetricTrainConfig cfg;
    cfg.hidden = 16;
    cfg.embed_dim = 2;
    cfg.epochs = 60;
    cfg.dropout_p = 0.0;
    cfg.seed = 5;
    const auto model = train(x, y, cfg);
    CHECK(model.loss_trace.size() == 60);
    CHECK(model.loss_trace.back() < 0.1);
    const Matrix e = embed(model.params, x).values;
    Vector c0 = Vector::Zero(2), c1 = Vector::Zero(2);
    for (Index i = 0; i < 80; ++i) (y[static_cast<std::size_t>(i)] ? c1 : c0) += e.row(i).transpose() / 40.0;
    double within = 0;
    for (Index i = 0; i < 80; ++i) within += (e.row(i).transpose() - (y[static_cast<std::size_t>(i)] ? c1 : c0)).norm() / 80.0;
    CHECK((c0 - c1).norm() > 5 * within);

    // Smoothed trace (5-epoch windows) does not rise by more than a small tolerance.
    for (std::size_t w = 5; w + 5 <= model.loss_trace.size(); w += 5) {
      double prev = 0, cur = 0;
      for (std::size_t i = 0; i < 5; ++i) {
        prev += model.loss_trace[w - 5 + i] / 5;
        cur += model.loss_trace[w + i] / 5;
      }
      CHECK(cur <= prev + 0.02);
    }
  }

  TEST_CASE("training determinism and the no-op case") {
    Rng rng(38);
    const Matrix x = blobs(30, 4, rng);
    const auto y = alternating(30);
    MetricTrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 9;
    const auto a = train(x, y, cfg), b = train(x, y, cfg);
    CHECK(a.params.w1 == b.params.w1);
    CHECK(a.params.w2 == b.params.w2);
    CHECK(a.loss_trace == b.loss_trace);

    cfg.epochs = 0;
    const auto idle = train(x, y, cfg);
    Rng init_rng(cfg.seed);
    const auto init = TripletNetParams::initialize(4, cfg.hidden, cfg.embed_dim, init_rng);
    CHECK(idle.params.w1 == init.w1);
    CHECK(idle.params.b2 == init.b2);
  }

  TEST_CASE("training errors") {
    const Matrix x = Matrix::Ones(4, 2);
    MetricTrainConfig cfg;
    try {
      train(x, {1, 1, 1, 1}, cfg);
      FAIL("expected SingleClassInput");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::kSingleClassInput);
    }
    Rng rng(39);
    const Matrix xs = blobs(20, 2, rng) * 1e150;
    cfg.optimizer = OptimizerKind::kSgd;
    cfg.learning_rate = 1e100;
    cfg.dropout_p = 0;
    try {
      train(xs, alternating(20), cfg);
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(e.code() == Errc::kDivergenceDetected);
      CHECK(!e.trace().empty());
    }
    cfg = MetricTrainConfig{};
    cfg.dropout_p = 1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
  }

  TEST_CASE("embed is row-wise forward in inference mode") {
    Rng rng(40);
    const auto p = random_net(3, 6, 2, rng);
    const Matrix x = test::random_matrix(7, 3, rng);
    const auto e = embed(p, x);
    CHECK(e.recipe == Recipe::kMetcc);
    for (Index i = 0; i < 7; ++i) CHECK((e.values.row(i).transpose() - forward(p, x.row(i).transpose())).norm() < 1e-12);
    const Matrix reversed = x.colwise().reverse();
    CHECK((embed(p, reversed).values - e.values.colwise().reverse()).norm() < 1e-12);
    CHECK_THROWS_AS(embed(p, Matrix::Zero(2, 4)), Error);
  }

  TEST_CASE("model file and loss trace round trip") {
    Rng rng(41);
    const Matrix x = blobs(20, 3, rng);
    MetricTrainConfig cfg;
    cfg.epochs = 3;
    cfg.loss = LossKind::kSiamese;
    cfg.margin = 1.7;
    const auto model = train(x, alternating(20), cfg);
    std::ostringstream out;
    to_file(model).write(out);
    std::istringstream in(out.str());
    const auto back = from_file(dataio::SectionedFile::read(in));
    CHECK(back.params.w1 == model.params.w1);
    CHECK(back.params.b2 == model.params.b2);
    CHECK(back.loss_trace == model.loss_trace);
    CHECK(back.config.margin == 1.7);
    CHECK(back.config.loss == LossKind::kSiamese);
    std::ostringstream trace;
    write_loss_trace(trace, model.loss_trace);
    CHECK(trace.str().rfind("epoch\tmean_loss\n", 0) == 0);
  }
}
