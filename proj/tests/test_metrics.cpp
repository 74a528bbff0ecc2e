#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rgbdmae/metrics.hpp"

using namespace rgbdmae;

TEST_CASE("miou: perfect, inverted, and hand-counted cases") {
  ConfusionMatrix perfect(2);
  perfect.at(0, 0) = 10;
  perfect.at(1, 1) = 5;
  CHECK(miou(perfect) == doctest::Approx(1.0));

  ConfusionMatrix inverted(2);
  inverted.at(0, 1) = 4;
  inverted.at(1, 0) = 6;
  CHECK(miou(inverted) == doctest::Approx(0.0));

  // counts [[3,1],[1,3]]: IoU_0 = 3/5, IoU_1 = 3/5
  ConfusionMatrix mixed(2);
  mixed.at(0, 0) = 3;
  mixed.at(0, 1) = 1;
  mixed.at(1, 0) = 1;
  mixed.at(1, 1) = 3;
  CHECK(std::fabs(miou(mixed) - 0.6) < 1e-9);
}

TEST_CASE("miou excludes classes absent from both gt and prediction") {
  ConfusionMatrix c(4);
  c.at(0, 0) = 5;
  c.at(1, 1) = 5;  // classes 2 and 3 never appear
  CHECK(miou(c) == doctest::Approx(1.0));
}

TEST_CASE("miou rejects empty and degenerate inputs") {
  CHECK_THROWS_AS(ConfusionMatrix(1), ValidationError);
  ConfusionMatrix empty(3);
  CHECK_THROWS_AS(miou(empty), ValidationError);
}

TEST_CASE("confusion matrix honors the ignore index") {
  ConfusionMatrix c(2);
  c.add(kIgnoreIndex, 1);  // not scored
  c.add(0, 0);
  CHECK(c.total() == 1);
  CHECK_THROWS_AS(c.add(5, 0), ValidationError);
}

TEST_CASE("miou is equivariant under simultaneous class relabeling") {
  ConfusionMatrix a(3);
  a.at(0, 0) = 7;
  a.at(0, 1) = 2;
  a.at(1, 1) = 4;
  a.at(2, 0) = 1;
  a.at(2, 2) = 5;
  // permute classes (0,1,2) -> (2,0,1) in both axes
  int perm[3] = {2, 0, 1};
  ConfusionMatrix b(3);
  for (int g = 0; g < 3; ++g)
    for (int p = 0; p < 3; ++p) b.at(perm[g], perm[p]) = a.at(g, p);
  CHECK(miou(a) == doctest::Approx(miou(b)).epsilon(1e-12));
}

TEST_CASE("delta1: exact, threshold, and mixed cases") {
  std::vector<double> gt{1.0, 2.0, 4.0, 0.5};
  std::vector<std::uint8_t> valid(4, 1);
  CHECK(delta1(gt, gt, valid) == doctest::Approx(100.0));

  std::vector<double> off(4);
  for (size_t i = 0; i < 4; ++i) off[i] = 1.3 * gt[i];  // ratio 1.3 >= 1.25 everywhere
  CHECK(delta1(off, gt, valid) == doctest::Approx(0.0));

  std::vector<double> half{1.0, 2.0, 8.0, 1.0};  // two exact, two at ratio 2
  CHECK(delta1(half, gt, valid) == doctest::Approx(50.0));
}

TEST_CASE("delta1 is symmetric in prediction and ground truth") {
  std::vector<double> a{1.0, 2.2, 3.1, 0.7};
  std::vector<double> b{1.2, 2.0, 3.3, 0.9};
  std::vector<std::uint8_t> valid(4, 1);
  CHECK(delta1(a, b, valid) == doctest::Approx(delta1(b, a, valid)));
}

TEST_CASE("delta1 validates its inputs") {
  std::vector<double> gt{1.0, 0.0};
  std::vector<double> pred{1.0, 1.0};
  std::vector<std::uint8_t> valid{1, 1};
  CHECK_THROWS_AS(delta1(pred, gt, valid), ValidationError);  // gt must be positive on valid pixels
  std::vector<std::uint8_t> none{0, 0};
  std::vector<double> gt2{1.0, 1.0};
  CHECK_THROWS_AS(delta1(pred, gt2, none), ValidationError);  // no valid pixels
}

TEST_CASE("top1 basic contract") {
  CHECK(top1({1, 2, 3}, {1, 2, 3}) == doctest::Approx(100.0));
  CHECK(top1({0, 0, 0}, {1, 2, 3}) == doctest::Approx(0.0));
  CHECK(top1({1, 2, 3, 4}, {1, 2, 3, 0}) == doctest::Approx(75.0));
  CHECK_THROWS_AS(top1({1}, {1, 2}), ValidationError);
  CHECK_THROWS_AS(top1({}, {}), ValidationError);
}
