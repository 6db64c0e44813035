#include <cmath>
#include <functional>

#include "doctest.h"
#include "ftl/losses.hpp"
#include "support.hpp"

using namespace ftl;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(values.size(), values.begin()->size());
  std::size_t i = 0;
  for (const auto& r : values)
    for (double v : r) m.data[i++] = v;
  return m;
}

double fd_max_error(std::vector<double>& x, const std::vector<double>& g, const std::function<double()>& f) {
  constexpr double h = 1e-4;
  double err = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double v = x[k];
    x[k] = v + h;
    const double up = f();
    x[k] = v - h;
    const double down = f();
    x[k] = v;
    err = std::max(err, std::abs((up - down) / (2 * h) - g[k]));
  }
  return err / std::max(test::inf_norm(g), 1e-12);
}

Matrix random_distribution(Rng& rng, std::size_t n, std::size_t k) {
  Matrix p(n, k);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += p(r, c) = rng.uniform(0.05, 1.0);
    for (std::size_t c = 0; c < k; ++c) p(r, c) /= s;
  }
  return p;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("bce examples") {
    CHECK(bce_loss(std::vector<double>{1.0}, std::vector<int>{1}) == doctest::Approx(1.0000e-7).epsilon(1e-6));
    CHECK(bce_loss(std::vector<double>{0.5}, std::vector<int>{1}) == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(bce_loss(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == doctest::Approx(0.105361).epsilon(1e-5));
    CHECK_THROWS_AS(bce_loss(std::vector<double>{0.5}, std::vector<int>{1, 0}), ValidationError);
    CHECK_THROWS_AS(bce_loss(std::vector<double>{}, std::vector<int>{}), ValidationError);
  }

  TEST_CASE("triplet examples") {
    CHECK(triplet_loss(rows({{0, 0}}), rows({{0, 0}}), rows({{2, 0}}), 1.0) == 0.0);
    CHECK(triplet_loss(rows({{0, 0}}), rows({{2, 0}}), rows({{1, 0}}), 1.0) == 4.0);
    CHECK(triplet_loss(rows({{0, 0}}), rows({{1, 0}}), rows({{0, 2}}), 1.0) == 0.0);
    // the printed form subtracts the margin
    CHECK(triplet_loss(rows({{0, 0}}), rows({{2, 0}}), rows({{1, 0}}), 1.0, MarginSign::printed_minus) == 2.0);
    CHECK_THROWS_AS(triplet_loss(rows({{0, 0}}), rows({{0, 0}, {1, 1}}), rows({{0, 0}}), 1.0), ValidationError);
    CHECK_THROWS_AS(triplet_loss(rows({{0, 0}}), rows({{0, 0}}), rows({{0, 0}}), -1.0), ValidationError);
  }

  TEST_CASE("forgery cross-entropy examples") {
    CHECK(forgery_ce_loss(rows({{0, 1, 0}}), std::vector<int>{1}) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(forgery_ce_loss(rows({{0.2, 0.2, 0.2, 0.2, 0.2}}), std::vector<int>{3}) == doctest::Approx(1.609438).epsilon(1e-6));
    CHECK(forgery_ce_loss(rows({{0.5, 0.5, 0.0}, {0.25, 0.5, 0.25}}), std::vector<int>{0, 2}) ==
          doctest::Approx(1.039721).epsilon(1e-6));
    CHECK_THROWS_AS(forgery_ce_loss(rows({{0.5, 0.5}}), std::vector<int>{2}), ValidationError);
    CHECK_THROWS_AS(forgery_ce_loss(rows({{0.5, 0.6}}), std::vector<int>{0}), ValidationError);
  }

  TEST_CASE("total loss examples") {
    CHECK(total_loss(0.2, 0.4, 0.6, 1.0, 0.5).total == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(total_loss(0.3, 7.0, 9.0, 0.0, 0.0).total == 0.3);
    CHECK(total_loss(0.693147, 4.0, 1.609438, 1.0, 1.0).total == doctest::Approx(6.302585).epsilon(1e-12));
    const auto b = total_loss(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7);
    CHECK(b.alpha == 0.4);
    CHECK(b.beta == 0.5);
    CHECK(b.lambda == 0.6);
    CHECK(b.margin == 0.7);
    CHECK_THROWS_AS(total_loss(NAN, 0, 0, 1, 1), ValidationError);
    CHECK_THROWS_AS(total_loss(0, 0, 0, -1, 1), ValidationError);
  }

  TEST_CASE("total loss is linear in alpha") {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
      const double bce = rng.uniform(), trip = rng.uniform(0, 5), forg = rng.uniform(0, 3), beta = rng.uniform();
      const double t2 = total_loss(bce, trip, forg, 2.0, beta).total;
      const double t1 = total_loss(bce, trip, forg, 1.0, beta).total;
      CHECK(t2 - t1 == doctest::Approx(trip).epsilon(1e-14));
    }
    // exact on dyadic values
    CHECK(total_loss(0.25, 0.75, 0.5, 2.0, 0.5).total - total_loss(0.25, 0.75, 0.5, 1.0, 0.5).total == 0.75);
  }

  TEST_CASE("losses are non-negative") {
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
      std::vector<double> p(6);
      std::vector<int> y(6);
      for (std::size_t k = 0; k < 6; ++k) {
        p[k] = rng.uniform();
        y[k] = static_cast<int>(rng.below(2));
      }
      CHECK(bce_loss(p, y) >= 0.0);
      const auto a = test::random_matrix(rng, 3, 4), b = test::random_matrix(rng, 3, 4), c = test::random_matrix(rng, 3, 4);
      CHECK(triplet_loss(a, b, c, rng.uniform()) >= 0.0);
      std::vector<int> t{0, 1, 2};
      CHECK(forgery_ce_loss(random_distribution(rng, 3, 3), t) >= 0.0);
    }
  }

  TEST_CASE("triplet loss vanishes once every triplet is separated") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
      const auto a = test::random_matrix(rng, 4, 3);
      auto p = a, n = a;
      for (auto& v : p.data) v += 0.1 * rng.normal();
      for (std::size_t r = 0; r < 4; ++r) n(r, 0) += 5.0;
      CHECK(triplet_loss(a, p, n, 1.0) == 0.0);
    }
  }

  TEST_CASE("triplet loss is invariant under rigid transforms") {
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
      const auto a = test::random_matrix(rng, 5, 2), p = test::random_matrix(rng, 5, 2), n = test::random_matrix(rng, 5, 2);
      const double th = rng.uniform(0, 6.283185307179586), tx = rng.uniform(-5, 5), ty = rng.uniform(-5, 5);
      const auto move = [&](const Matrix& m) {
        Matrix o(m.rows, 2);
        for (std::size_t r = 0; r < m.rows; ++r) {
          o(r, 0) = std::cos(th) * m(r, 0) - std::sin(th) * m(r, 1) + tx;
          o(r, 1) = std::sin(th) * m(r, 0) + std::cos(th) * m(r, 1) + ty;
        }
        return o;
      };
      const double m = rng.uniform(0, 2);
      CHECK(std::abs(triplet_loss(a, p, n, m) - triplet_loss(move(a), move(p), move(n), m)) <= 1e-9);
    }
  }

  TEST_CASE("loss gradients match finite differences") {
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
      std::vector<double> probs(5);
      std::vector<int> y(5);
      for (std::size_t k = 0; k < 5; ++k) {
        probs[k] = rng.uniform(0.05, 0.95);
        y[k] = static_cast<int>(rng.below(2));
      }
      CHECK(fd_max_error(probs, bce_gradient(probs, y), [&] { return bce_loss(probs, y); }) <= 1e-5);

      // through the logistic
      std::vector<double> z(5);
      for (auto& v : z) v = rng.normal();
      const auto sig = [&] {
        std::vector<double> p(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) p[k] = 1.0 / (1.0 + std::exp(-z[k]));
        return p;
      };
      CHECK(fd_max_error(z, bce_logit_gradient(sig(), y), [&] { return bce_loss(sig(), y); }) <= 1e-5);

      for (auto sign : {MarginSign::plus, MarginSign::printed_minus}) {
        auto a = test::random_matrix(rng, 4, 3), p = test::random_matrix(rng, 4, 3), n = test::random_matrix(rng, 4, 3);
        const auto g = triplet_gradient(a, p, n, 1.0, sign);
        const auto f = [&] { return triplet_loss(a, p, n, 1.0, sign); };
        CHECK(fd_max_error(a.data, g.anchor.data, f) <= 1e-5);
        CHECK(fd_max_error(p.data, g.positive.data, f) <= 1e-5);
        CHECK(fd_max_error(n.data, g.negative.data, f) <= 1e-5);
      }

      auto q = random_distribution(rng, 4, 3);
      const std::vector<int> t{0, 2, 1, 2};
      CHECK(fd_max_error(q.data, forgery_ce_gradient(q, t).data, [&] {
              // the loss reads only the target entries, so unnormalised rows are fine here
              double s = 0.0;
              for (std::size_t r = 0; r < 4; ++r) s -= std::log(q(r, static_cast<std::size_t>(t[r])));
              return s / 4;
            }) <= 1e-5);

      auto logits = test::random_matrix(rng, 4, 3);
      const auto softmax = [&] {
        Matrix p(4, 3);
        for (std::size_t r = 0; r < 4; ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < 3; ++c) s += p(r, c) = std::exp(logits(r, c));
          for (std::size_t c = 0; c < 3; ++c) p(r, c) /= s;
        }
        return p;
      };
      CHECK(fd_max_error(logits.data, forgery_ce_logit_gradient(softmax(), t).data,
                         [&] { return forgery_ce_loss(softmax(), t); }) <= 1e-5);
    }
  }

  TEST_CASE("bce gradient is zero where the clamp is active") {
    const auto g = bce_gradient(std::vector<double>{1.0, 0.0}, std::vector<int>{1, 0});
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
  }
}

TEST_CASE("non-finite embeddings give a non-finite triplet loss") {
  Matrix a(1, 2), p(1, 2), n(1, 2);
  a.data = {INFINITY, 0.0};
  p.data = {INFINITY, 0.0};
  n.data = {0.0, 0.0};
  CHECK(std::isnan(triplet_loss(a, p, n, 1.0)));
}
