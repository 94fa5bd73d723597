#include <cmath>
#include <random>

#include "doctest.h"
#include "maria/autodiff.hpp"
#include "maria/metrics.hpp"
#include "maria/model.hpp"

namespace {

// Fraction of (positive, negative) pairs ordered correctly, ties count 1/2.
double pairwise_auc(const std::vector<double>& s, const std::vector<double>& y) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1.0 && y[j] == 0.0) {
        pairs += 1.0;
        good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return good / pairs;
}

}  // namespace

TEST_CASE("auc examples") {
  using V = std::vector<double>;
  CHECK(*maria::auc(V{0.1, 0.4, 0.35, 0.8}, V{0, 0, 1, 1}) == 0.75);
  CHECK(*maria::auc(V{0.1, 0.9}, V{0, 1}) == 1.0);
  CHECK(*maria::auc(V{0.9, 0.1}, V{0, 1}) == 0.0);
  CHECK(*maria::auc(V{0.5, 0.5, 0.5, 0.5}, V{0, 1, 0, 1}) == 0.5);
  CHECK_FALSE(maria::auc(V{0.1, 0.2}, V{1, 1}).has_value());
  CHECK_FALSE(maria::auc(V{}, V{}).has_value());
  CHECK_THROWS(maria::auc(V{0.1}, V{1, 0}));
}

TEST_CASE("auc matches the pairwise definition") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    // Few distinct score levels in half the trials to force ties.
    const std::size_t levels = trial % 2 ? 4 : 1000000;
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % levels) / static_cast<double>(levels);
      y[i] = static_cast<double>(rng() % 2);
    }
    y[0] = 0.0;
    y[1] = 1.0;
    CAPTURE(trial);
    CHECK(std::abs(*maria::auc(s, y) - pairwise_auc(s, y)) <= 1e-12);
  }
}

TEST_CASE("pcoc") {
  using V = std::vector<double>;
  CHECK(*maria::pcoc(V{0.2, 0.4, 0.6}, V{0, 1, 0}) == doctest::Approx(1.2).epsilon(1e-15));
  CHECK_FALSE(maria::pcoc(V{0.2, 0.3}, V{0, 0}).has_value());

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    V s(40), y(40);
    double ss = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < 40; ++i) {
      s[i] = u(rng);
      y[i] = i == 0 || u(rng) < 0.3 ? 1.0 : 0.0;
      ss += s[i];
      yy += y[i];
    }
    CHECK(std::abs(*maria::pcoc(s, y) - ss / yy) <= 1e-12);
  }
}

TEST_CASE("batch loss matches a loop") {
  namespace ad = maria::ad;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  ad::Graph g;
  std::vector<double> p(30), y(30);
  double expect = 0.0;
  for (std::size_t i = 0; i < 30; ++i) {
    p[i] = u(rng);
    y[i] = static_cast<double>(i % 3 == 0);
    expect -= y[i] * std::log(p[i]) + (1.0 - y[i]) * std::log(1.0 - p[i]);
  }
  ad::Value l = maria::batch_loss(ad::constant(g, ad::Shape{30, 1}, p), y);
  CHECK(std::abs(l.item() - expect) <= 1e-12);
}
