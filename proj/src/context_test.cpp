#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "mlcrnn/context.hpp"
#include "oracles.hpp"

using namespace mlcrnn;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "mlcrnn_context_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("rounded partition: near-equal pieces covering the extent") {
  CHECK(rounded_partition(3, 3) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(rounded_partition(7, 3) == std::vector<std::size_t>{0, 2, 5, 7});
  for (std::size_t n = 3; n < 40; ++n) {
    const auto b = rounded_partition(n, 3);
    CHECK(b == oracle::thirds(n));
    std::size_t lo = n, hi = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      lo = std::min(lo, b[k + 1] - b[k]);
      hi = std::max(hi, b[k + 1] - b[k]);
    }
    CHECK(hi - lo <= 1);
    CHECK(lo >= 1);
  }
}

TEST_CASE("global feature of a 3x3 ramp is the ramp") {
  FeatureMap<double> x(3, 3, 1);
  std::iota(x.values().begin(), x.values().end(), 1.0);
  const auto g = global_feature(x);
  CHECK(g.values == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("global feature of a constant map is constant") {
  const FeatureMap<double> x(5, 8, 3, -0.75);
  const auto g = global_feature(x);
  CHECK(g.values == std::vector<double>(27, -0.75));
}

TEST_CASE("global feature matches brute-force block maxima") {
  std::mt19937_64 rng(21);
  for (auto [h, w] : {std::pair{7, 5}, std::pair{3, 11}, std::pair{10, 10}, std::pair{4, 6}}) {
    const auto x = oracle::random_map(h, w, 2, rng);
    CHECK(global_feature(x).values == oracle::global_feature(x));
  }
}

TEST_CASE("global feature rejects maps smaller than 3x3") {
  CHECK_THROWS_AS(global_feature(FeatureMap<double>(2, 5, 1)), DimensionError);
  CHECK_THROWS_AS(global_feature(FeatureMap<double>(5, 2, 1)), DimensionError);
}

TEST_CASE("global feature backward: zero, reshape, stale, and finite differences") {
  std::mt19937_64 rng(22);
  const auto x3 = oracle::random_map(3, 3, 2, rng);
  const auto rec = global_feature(x3);
  CHECK(global_feature_backward<double>(rec, std::vector<double>(18, 0.0)) == FeatureMap<double>(3, 3, 2));
  std::vector<double> dg(18);
  oracle::fill_uniform(dg, rng);
  const auto dm = global_feature_backward<double>(rec, dg);
  CHECK(std::equal(dm.values().begin(), dm.values().end(), dg.begin()));

  CHECK_THROWS_AS(global_feature_backward<double>(GlobalFeature<double>{}, dg), StateError);
  CHECK_THROWS_AS(global_feature_backward<double>(rec, std::vector<double>(5, 0.0)), DimensionError);

  auto x = oracle::random_map(7, 8, 3, rng);
  std::vector<double> r(27);
  oracle::fill_uniform(r, rng);
  auto loss = [&] { return oracle::dot(global_feature(x).values, r); };
  const auto analytic = global_feature_backward<double>(global_feature(x), r);
  CHECK(oracle::gradient_error(analytic.values(), oracle::numeric_gradient(x.values(), loss)) <= 1e-6);
}

TEST_CASE("global feature is invariant to shuffling inside a block") {
  std::mt19937_64 rng(23);
  auto x = oracle::random_map(9, 7, 2, rng);
  const auto before = global_feature(x).values;
  const auto rb = rounded_partition(9, 3), cb = rounded_partition(7, 3);
  for (std::size_t br = 0; br < 3; ++br) {
    for (std::size_t bc = 0; bc < 3; ++bc) {
      std::vector<double> cell;
      for (std::size_t r = rb[br]; r < rb[br + 1]; ++r) {
        for (std::size_t c = cb[bc]; c < cb[bc + 1]; ++c) cell.push_back(x.at(r, c, 1));
      }
      std::shuffle(cell.begin(), cell.end(), rng);
      std::size_t i = 0;
      for (std::size_t r = rb[br]; r < rb[br + 1]; ++r) {
        for (std::size_t c = cb[bc]; c < cb[bc + 1]; ++c) x.at(r, c, 1) = cell[i++];
      }
    }
  }
  CHECK(global_feature(x).values == before);
}

TEST_CASE("global feature is monotone in every cell") {
  std::mt19937_64 rng(24);
  auto x = oracle::random_map(6, 5, 2, rng);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto before = global_feature(x).values;
    x.values()[i] += 0.3;
    const auto after = global_feature(x).values;
    for (std::size_t k = 0; k < before.size(); ++k) CHECK(after[k] >= before[k]);
  }
}

TEST_CASE("oriented kernels are odd and L1-normalized") {
  for (double sigma : {1.0, 2.0, 1.5}) {
    for (int o = 0; o < 4; ++o) {
      std::size_t radius = 0;
      const auto k = oriented_kernel(sigma, std::numbers::pi * o / 4, radius);
      CHECK(radius == static_cast<std::size_t>(std::ceil(3 * sigma)));
      const std::size_t side = 2 * radius + 1;
      REQUIRE(k.size() == side * side);
      double l1 = 0.0, sum = 0.0;
      for (std::size_t i = 0; i < k.size(); ++i) {
        l1 += std::abs(k[i]);
        sum += k[i];
        CHECK(k[i] == doctest::Approx(-k[k.size() - 1 - i]).epsilon(1e-14));
      }
      CHECK(l1 == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(std::abs(sum) < 1e-14);
    }
  }
}

TEST_CASE("topic feature: constant image gives zero, length follows the config") {
  const FeatureMap<double> flat(20, 24, 3, 0.4);
  const auto t = topic_feature(flat);
  CHECK(t.size() == 128);
  for (double v : t) CHECK(v == 0.0);

  TopicConfig cfg;
  cfg.scales = {1.0, 1.5, 3.0};
  cfg.orientations = 6;
  cfg.grid = 2;
  CHECK(topic_feature(FeatureMap<double>(12, 12, 1), cfg).size() == 3 * 6 * 4);
  CHECK(cfg.length() == 72);
}

TEST_CASE("topic feature matches a direct filtering oracle") {
  std::mt19937_64 rng(25);
  const auto img = oracle::random_map(16, 20, 3, rng, 0.0, 1.0);
  const auto t = topic_feature(img);
  const auto ref = oracle::topic(img, {1.0, 2.0}, 4, 4);
  REQUIRE(t.size() == ref.size());
  CHECK(oracle::max_rel_diff(t, ref, 1e-12) < 1e-10);

  const auto gray = oracle::random_map(13, 9, 1, rng, 0.0, 1.0);
  TopicConfig cfg;
  cfg.scales = {1.0};
  cfg.orientations = 3;
  cfg.grid = 3;
  CHECK(oracle::max_rel_diff(topic_feature(gray, cfg), oracle::topic(gray, {1.0}, 3, 3), 1e-12) < 1e-10);
}

TEST_CASE("topic feature is nonnegative and invariant to a constant offset") {
  std::mt19937_64 rng(26);
  auto img = oracle::random_map(16, 16, 1, rng, 0.0, 1.0);
  const auto t = topic_feature(img);
  for (double v : t) CHECK(v >= 0.0);
  for (double& v : img.values()) v += 0.37;
  CHECK(oracle::max_rel_diff(topic_feature(img), t, 1e-12) < 1e-9);
}

TEST_CASE("topic feature rejects unsupported channel counts") {
  CHECK_THROWS_AS(topic_feature(FeatureMap<double>(8, 8, 2)), DimensionError);
}

TEST_CASE("topic vector files: zeros, round trip, bad lines, length") {
  const auto zeros = scratch("zeros.txt");
  {
    std::ofstream out(zeros);
    for (int i = 0; i < 128; ++i) out << "0\n";
  }
  const auto z = load_topic_feature<double>(zeros, 128);
  CHECK(z == std::vector<double>(128, 0.0));

  std::mt19937_64 rng(27);
  std::vector<double> v(128);
  oracle::fill_uniform(v, rng, 0.0, 1e-3);
  v[3] = 1.0 / 3.0;
  const auto path = scratch("round.txt");
  save_topic_feature<double>(path, v);
  CHECK(load_topic_feature<double>(path, 128) == v);

  const auto bad = scratch("bad.txt");
  {
    std::ofstream out(bad);
    out << "0.5\n1.5\nabc\n";
  }
  try {
    load_topic_feature<double>(bad, 0);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }

  CHECK_THROWS_AS(load_topic_feature<double>(path, 64), ParseError);
  CHECK_THROWS_AS(load_topic_feature<double>(scratch("missing.txt"), 0), IoError);
}
