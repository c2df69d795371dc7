#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "richunet/error.hpp"
#include "richunet/metrics.hpp"
#include "richunet/rng.hpp"
#include "support.hpp"

using namespace richunet;

namespace {

BinaryMask from_rows(const std::vector<std::string>& rows) {
  BinaryMask m(rows.size(), rows[0].size());
  for (std::size_t y = 0; y < rows.size(); ++y)
    for (std::size_t x = 0; x < rows[y].size(); ++x) m.set(y, x, rows[y][x] == '#');
  return m;
}

BinaryMask random_mask(std::size_t h, std::size_t w, double p, Rng& rng) {
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < h * w; ++i) m.set(i / w, i % w, rng.uniform() < p);
  return m;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("dice and iou examples") {
    BinaryMask a = from_rows({"##..", "....", "...."});
    BinaryMask b = from_rows({"##..", "##..", "...."});
    CHECK(dice(b, b) == 1.0);
    CHECK(iou(b, b) == 1.0);
    BinaryMask far = from_rows({"....", "....", "..##"});
    CHECK(dice(a, far) == 0.0);
    CHECK(iou(a, far) == 0.0);
    CHECK(dice(a, b) == doctest::Approx(2.0 * 2.0 / 6.0));
    CHECK(iou(a, b) == 0.5);
    BinaryMask empty(3, 4);
    CHECK(dice(empty, empty) == 1.0);
    CHECK(iou(empty, empty) == 1.0);
    CHECK(dice(empty, a) == 0.0);
    CHECK(iou(a, empty) == 0.0);
    CHECK_THROWS_AS(dice(a, BinaryMask(4, 3)), ShapeError);
    CHECK_THROWS_AS(hd95(a, BinaryMask(4, 3)), ShapeError);
  }

  TEST_CASE("boundary") {
    BinaryMask one = from_rows({".....", "..#..", "....."});
    CHECK(boundary(one) == std::vector<Pixel>{{1, 2}});
    BinaryMask square = from_rows({".....", ".###.", ".###.", ".###.", "....."});
    auto b = boundary(square);
    CHECK(b.size() == 8);
    CHECK(std::find(b.begin(), b.end(), Pixel{2, 2}) == b.end());
    BinaryMask full = from_rows({"##", "##"});
    CHECK(boundary(full).size() == 4);
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
      BinaryMask m = random_mask(9, 11, 0.5, rng);
      auto got = boundary(m);
      CHECK(std::set<Pixel>(got.begin(), got.end()) == test::brute_boundary(m));
      CHECK(std::is_sorted(got.begin(), got.end()));
    }
  }

  TEST_CASE("percentile uses linear interpolation between ranks") {
    CHECK(percentile({1, 2, 3, 4, 5}, 50) == 3.0);
    CHECK(percentile({5, 1, 3, 2, 4}, 95) == doctest::Approx(4.8));
    CHECK(percentile({0, 10}, 95) == doctest::Approx(9.5));
    CHECK(percentile({7}, 95) == 7.0);
  }

  TEST_CASE("hd95 examples") {
    BinaryMask a(5, 5), b(5, 5);
    a.set(0, 0, true);
    b.set(3, 4, true);
    CHECK(hd95(a, b) == 5.0);
    Rng rng(2);
    BinaryMask m = random_mask(8, 8, 0.5, rng);
    CHECK(hd95(m, m) == 0.0);
    CHECK_THROWS_AS(hd95(BinaryMask(5, 5), b), MetricUndefined);
    CHECK_THROWS_AS(hd95(a, BinaryMask(5, 5)), MetricUndefined);
  }

  TEST_CASE("random pairs agree with exhaustive oracles") {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
      BinaryMask a = random_mask(16, 16, rng.uniform(0.02, 0.7), rng);
      BinaryMask b = random_mask(16, 16, rng.uniform(0.02, 0.7), rng);
      std::size_t inter = 0, uni = 0;
      for (std::size_t i = 0; i < 256; ++i) inter += a[i] && b[i], uni += a[i] || b[i];
      const double d = dice(a, b);
      if (a.count() + b.count() > 0) CHECK(d == 2.0 * double(inter) / double(a.count() + b.count()));
      if (uni > 0) CHECK(iou(a, b) == double(inter) / double(uni));
      CHECK(std::abs(iou(a, b) - d / (2.0 - d)) <= 1e-15);
      CHECK(dice(a, b) == dice(b, a));
      if (a.empty() || b.empty()) continue;
      const double h = hd95(a, b);
      CHECK(std::abs(h - std::max(test::brute_directed(a, b), test::brute_directed(b, a))) <= 1e-9);
      CHECK(h == hd95(b, a));
      CHECK(h >= 0.0);
      CHECK(h <= std::hypot(15.0, 15.0));
    }
  }

  TEST_CASE("removing a false positive never lowers dice") {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
      BinaryMask pred = random_mask(10, 10, 0.4, rng), gt = random_mask(10, 10, 0.4, rng);
      for (std::size_t i = 0; i < 100; ++i) {
        if (pred[i] && !gt[i]) {
          BinaryMask fixed = pred;
          fixed.set(i / 10, i % 10, false);
          CHECK(dice(fixed, gt) >= dice(pred, gt));
          break;
        }
      }
    }
  }

  TEST_CASE("argmax mask and tensor conversion") {
    Tensor logits({2, 1, 3}, {0.2, 0.9, 0.5, 0.1, 1.0, 0.5});
    BinaryMask m = argmax_mask(logits);
    CHECK(m(0, 0) == false);
    CHECK(m(0, 1) == true);
    CHECK(m(0, 2) == false);  // tie keeps class 0
    CHECK(BinaryMask::from_tensor(m.to_tensor()) == m);
    CHECK_THROWS_AS(BinaryMask(2, 2, {1, 0, 2, 0}), ShapeError);
  }
}
