#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "catreid/error.hpp"
#include "catreid/losses.hpp"
#include "support.hpp"

using namespace catreid::loss;

namespace {

// Worst relative error between an analytic gradient and central differences of f.
double fd_check(Matrix& x, const Matrix& analytic, const std::function<double()>& f, double h = 1e-6) {
  double worst = 0.0;
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      const double saved = x(i, j);
      x(i, j) = saved + h;
      const double up = f();
      x(i, j) = saved - h;
      const double down = f();
      x(i, j) = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = std::abs(numeric - analytic(i, j)) / std::max(1e-3, std::abs(numeric) + std::abs(analytic(i, j)));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double id_oracle(const Matrix& logits, const std::vector<int>& labels) {
  double total = 0.0;
  for (int i = 0; i < logits.rows(); ++i) {
    double denom = 0.0;
    for (int c = 0; c < logits.cols(); ++c) denom += std::exp(logits(i, c));
    total += -(logits(i, labels[i]) - std::log(denom));
  }
  return total / logits.rows();
}

std::array<HeadInput, 3> random_heads(int B, int E, int C, catreid::Rng& rng) {
  std::array<HeadInput, 3> heads;
  for (auto& h : heads) {
    h.embeddings = test::random_matrix(B, E, rng);
    h.class_weights = test::random_matrix(C, E, rng, 0.5);
    h.class_bias = Vector(test::random_matrix(C, 1, rng, 0.1));
  }
  return heads;
}

}  // namespace

TEST_CASE("identification loss spot values") {
  const std::vector<int> labels{0, 2};
  CHECK(id_loss(Matrix::Zero(2, 5), labels).value == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  Matrix confident = Matrix::Zero(2, 3);
  confident(0, 0) = 60.0;
  confident(1, 2) = 60.0;
  CHECK(id_loss(confident, labels).value < 1e-20);
  catreid::Rng rng(1);
  const Matrix logits = test::random_matrix(4, 3, rng, 2.0);
  const std::vector<int> l4{0, 1, 2, 1};
  CHECK(id_loss(logits, l4).value == doctest::Approx(id_oracle(logits, l4)).epsilon(1e-12));
  CHECK_THROWS_AS(id_loss(logits, std::vector<int>{0, 1, 3, 1}), catreid::Error);
}

TEST_CASE("identification loss gradient matches central differences") {
  catreid::Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    Matrix logits = test::random_matrix(5, 4, rng, 2.0);
    const std::vector<int> labels{0, 3, 1, 1, 2};
    const auto v = id_loss(logits, labels);
    CHECK(fd_check(logits, v.grad, [&] { return id_loss(logits, labels).value; }) < 1e-4);
  }
}

TEST_CASE("triplet loss spot values") {
  Matrix x(4, 2);
  x << 0, 0, 0, 0, 5, 0, 5, 0;
  const std::vector<int> labels{0, 0, 1, 1};
  CHECK(triplet_batch_hard(x, labels, 0.3).value == 0.0);
  CHECK(triplet_batch_hard(Matrix::Ones(4, 3), labels, 0.3).value == doctest::Approx(0.3).epsilon(1e-15));
  CHECK_THROWS_AS(triplet_batch_hard(x, std::vector<int>{0, 0, 0, 1}, 0.3), catreid::Error);
  CHECK_THROWS_AS(triplet_batch_hard(x, std::vector<int>{0, 0, 0, 0}, 0.3), catreid::Error);
}

TEST_CASE("batch-hard triplet equals exhaustive enumeration and ignores batch order") {
  catreid::Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const int P = 2 + static_cast<int>(catreid::uniform_index(rng, 3));
    const int K = 2 + static_cast<int>(catreid::uniform_index(rng, 3));
    const auto labels = test::pk_labels(P, K, rng);
    const Matrix x = test::random_matrix(P * K, 6, rng);
    const double loss = triplet_batch_hard(x, labels, 0.3).value;
    CHECK(loss == doctest::Approx(test::brute_force_triplet(x, labels, 0.3)).epsilon(1e-12));
    std::vector<int> perm(labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    catreid::shuffle(perm, rng);
    Matrix xp(x.rows(), x.cols());
    std::vector<int> lp(labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      xp.row(i) = x.row(perm[i]);
      lp[i] = labels[perm[i]];
    }
    CHECK(triplet_batch_hard(xp, lp, 0.3).value == doctest::Approx(loss).epsilon(1e-12));
  }
}

TEST_CASE("triplet gradient matches central differences") {
  catreid::Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto labels = test::pk_labels(2, 3, rng);
    Matrix x = test::random_matrix(6, 5, rng);
    const auto v = triplet_batch_hard(x, labels, 0.5);
    CHECK(fd_check(x, v.grad, [&] { return triplet_batch_hard(x, labels, 0.5).value; }) < 1e-4);
  }
}

TEST_CASE("arcface with zero margin is the scaled cosine matrix") {
  catreid::Rng rng(5);
  const Matrix x = test::random_matrix(5, 6, rng);
  const Matrix w = test::random_matrix(3, 6, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1};
  const Matrix logits = arcface_logits(x, w, labels, 30.0, 0.0);
  for (int i = 0; i < 5; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double cosine = x.row(i).dot(w.row(c)) / (x.row(i).norm() * w.row(c).norm());
      CHECK(logits(i, c) == doctest::Approx(30.0 * cosine).epsilon(1e-12));
    }
  }
}

TEST_CASE("an embedding aligned with its class gets s cos m") {
  Matrix x(1, 3);
  x << 1, 2, 3;
  const Matrix w = 4.0 * x;
  const Matrix logits = arcface_logits(x, w, std::vector<int>{0}, 30.0, 0.5);
  // The cosine clamp moves theta off zero by about 4.5e-4 rad.
  CHECK(logits(0, 0) == doctest::Approx(30.0 * std::cos(0.5)).epsilon(1e-3));
  CHECK(logits(0, 0) < 30.0);
}

TEST_CASE("a positive margin never raises the true-class logit and leaves the others alone") {
  catreid::Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const Matrix x = test::random_matrix(6, 4, rng);
    const Matrix w = test::random_matrix(4, 4, rng);
    std::vector<int> labels(6);
    for (auto& l : labels) l = static_cast<int>(catreid::uniform_index(rng, 4));
    const double m = catreid::uniform(rng, 0.0, std::numbers::pi / 2 - 1e-3);
    const Matrix plain = arcface_logits(x, w, labels, 30.0, 0.0);
    const Matrix margin = arcface_logits(x, w, labels, 30.0, m);
    for (int i = 0; i < 6; ++i) {
      for (int c = 0; c < 4; ++c) {
        if (c == labels[i]) {
          CHECK(margin(i, c) <= plain(i, c));
        } else {
          CHECK(margin(i, c) == plain(i, c));
        }
      }
    }
  }
}

TEST_CASE("arcface logits ignore the scale of the embeddings") {
  catreid::Rng rng(7);
  const Matrix x = test::random_matrix(5, 6, rng);
  const Matrix w = test::random_matrix(3, 6, rng);
  const std::vector<int> labels{0, 1, 2, 2, 1};
  const Matrix a = arcface_logits(x, w, labels, 30.0, 0.5);
  const Matrix b = arcface_logits(10.0 * x, w, labels, 30.0, 0.5);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_THROWS_AS(arcface_logits(Matrix::Zero(1, 6), w, std::vector<int>{0}, 30.0, 0.5), catreid::Error);
}

TEST_CASE("arcface gradients match central differences") {
  catreid::Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    Matrix x = test::random_matrix(5, 6, rng);
    Matrix w = test::random_matrix(4, 6, rng);
    const std::vector<int> labels{0, 1, 2, 3, 1};
    const double s = 8.0, m = 0.4;
    auto f = [&] { return id_loss(arcface_logits(x, w, labels, s, m), labels).value; };
    const Matrix g = id_loss(arcface_logits(x, w, labels, s, m), labels).grad;
    const auto grads = arcface_backward(x, w, labels, s, m, g);
    CHECK(fd_check(x, grads.embeddings, f) < 1e-4);
    CHECK(fd_check(w, grads.class_weights, f) < 1e-4);
  }
}

TEST_CASE("total loss weighting and isolation") {
  catreid::Rng rng(9);
  const auto labels = test::pk_labels(2, 3, rng);
  const auto heads = random_heads(6, 5, 2, rng);
  LossConfig zero;
  for (auto& w : zero.head_weights) w = {0.0, 0.0};
  CHECK(total_loss(heads, labels, zero).breakdown.total == 0.0);

  LossConfig only_full = zero;
  only_full.head_weights[0].id = 1.0;
  Matrix logits = heads[0].embeddings * heads[0].class_weights.transpose();
  logits.rowwise() += heads[0].class_bias->transpose();
  CHECK(total_loss(heads, labels, only_full).breakdown.total == doctest::Approx(id_oracle(logits, labels)).epsilon(1e-12));

  LossConfig defaults;
  double expected = 0.0;
  for (const auto& h : heads) {
    Matrix l = h.embeddings * h.class_weights.transpose();
    l.rowwise() += h.class_bias->transpose();
    expected += id_oracle(l, labels) + test::brute_force_triplet(h.embeddings, labels, 0.3);
  }
  const auto total = total_loss(heads, labels, defaults);
  CHECK(total.breakdown.total == doctest::Approx(expected).epsilon(1e-12));
  for (const auto& t : total.breakdown.heads) {
    CHECK(t.id >= 0.0);
    CHECK(t.triplet >= 0.0);
  }
}

TEST_CASE("total loss gradients match central differences with and without arcface") {
  catreid::Rng rng(10);
  for (bool arcface : {false, true}) {
    auto heads = random_heads(6, 5, 3, rng);
    const auto labels = test::pk_labels(3, 2, rng);
    LossConfig cfg;
    cfg.use_arcface = arcface;
    cfg.arcface_scale = 6.0;
    cfg.head_weights = {HeadWeights{1.0, 0.5}, HeadWeights{0.7, 1.0}, HeadWeights{0.0, 2.0}};
    const auto total = total_loss(heads, labels, cfg);
    auto f = [&] { return total_loss(heads, labels, cfg).breakdown.total; };
    for (int h = 0; h < 3; ++h) {
      CAPTURE(h);
      CHECK(fd_check(heads[h].embeddings, total.grads[h].embeddings, f) < 1e-4);
      CHECK(fd_check(heads[h].class_weights, total.grads[h].class_weights, f) < 1e-4);
      if (!arcface) {
        Matrix bias = *heads[h].class_bias;
        auto fb = [&] {
          heads[h].class_bias = Vector(bias);
          return f();
        };
        CHECK(fd_check(bias, Matrix(total.grads[h].class_bias), fb) < 1e-4);
        heads[h].class_bias = Vector(bias);
      }
    }
  }
}

TEST_CASE("losses stay finite on duplicate points and extreme logits") {
  const std::vector<int> labels{0, 0, 1, 1};
  const Matrix dup = Matrix::Ones(4, 3);
  const auto t = triplet_batch_hard(dup, labels, 0.3);
  CHECK(std::isfinite(t.value));
  CHECK(t.grad.allFinite());
  Matrix huge(4, 2);
  huge << 1e4, -1e4, -1e4, 1e4, 700, -700, -700, 700;
  const auto id = id_loss(huge, labels);
  CHECK(std::isfinite(id.value));
  CHECK(id.grad.allFinite());
  Matrix w(2, 3);
  w << 1, 1, 1, -1, -1, -1;
  const Matrix logits = arcface_logits(dup, w, labels, 30.0, 0.5);
  CHECK(logits.allFinite());
  CHECK(arcface_backward(dup, w, labels, 30.0, 0.5, Matrix::Ones(4, 2)).embeddings.allFinite());
}

TEST_CASE("loss config validation") {
  LossConfig c;
  CHECK_NOTHROW(c.validate());
  c.arcface_margin = std::numbers::pi / 2;
  CHECK_THROWS_AS(c.validate(), catreid::Error);
  c = {};
  c.arcface_scale = 0.0;
  CHECK_THROWS_AS(c.validate(), catreid::Error);
  c = {};
  c.triplet_margin = -0.1;
  CHECK_THROWS_AS(c.validate(), catreid::Error);
}
