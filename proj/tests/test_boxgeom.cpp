#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "suites.hpp"
#include "wsod/box.hpp"
#include "wsod/error.hpp"

using wsod::Box;

TEST(Iou, IdenticalBoxes) { EXPECT_DOUBLE_EQ(wsod::iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0); }

TEST(Iou, DisjointBoxes) { EXPECT_EQ(wsod::iou({0, 0, 10, 10}, {20, 20, 30, 30}), 0.0); }

TEST(Iou, HalfShifted) { EXPECT_DOUBLE_EQ(wsod::iou({0, 0, 10, 10}, {5, 0, 15, 10}), 1.0 / 3.0); }

TEST(Iou, TwoDegenerateBoxesGiveZero) { EXPECT_EQ(wsod::iou({3, 3, 3, 3}, {3, 3, 3, 3}), 0.0); }

TEST(Iou, SymmetricAndSelfOne) {
  suites::Rng rng(5);
  for (int k = 0; k < 2000; ++k) {
    const Box a = suites::lattice_box(rng), b = suites::lattice_box(rng);
    EXPECT_EQ(wsod::iou(a, b), wsod::iou(b, a));
    EXPECT_DOUBLE_EQ(wsod::iou(a, a), 1.0);
    const double v = wsod::iou(a, b);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(AssignToSeeds, ProposalEqualToSeed) {
  const std::vector<Box> p{{1, 2, 5, 7}};
  const std::vector<int> cls{3};
  const auto a = wsod::assign_to_seeds(p, p, cls);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].max_iou, 1.0);
  EXPECT_EQ(a[0].seed_index, 0u);
  EXPECT_EQ(a[0].seed_class, 3);
}

TEST(AssignToSeeds, DisjointProposalTakesFirstSeed) {
  const std::vector<Box> p{{100, 100, 110, 110}};
  const std::vector<Box> s{{0, 0, 10, 10}, {20, 0, 30, 10}};
  const std::vector<int> cls{4, 1};
  const auto a = wsod::assign_to_seeds(p, s, cls);
  EXPECT_EQ(a[0].max_iou, 0.0);
  EXPECT_EQ(a[0].seed_index, 0u);
  EXPECT_EQ(a[0].seed_class, 4);
}

TEST(AssignToSeeds, EmptySeedSetThrows) {
  const std::vector<Box> p{{0, 0, 1, 1}};
  EXPECT_THROW(wsod::assign_to_seeds(p, std::vector<Box>{}, std::vector<int>{}), wsod::NoSupervisionError);
}

TEST(AssignToSeeds, MatchesPairwiseOracle) {
  suites::Rng rng(17);
  for (int k = 0; k < 200; ++k) {
    const auto props = suites::lattice_boxes(rng, 50);
    const auto seeds = suites::lattice_boxes(rng, 5);
    const std::vector<int> cls{0, 1, 2, 3, 4};
    const auto a = wsod::assign_to_seeds(props, seeds, cls);
    const auto b = oracle::assign(props, seeds, cls);
    for (std::size_t i = 0; i < props.size(); ++i) {
      EXPECT_EQ(a[i].seed_index, b[i].seed_index);
      EXPECT_EQ(a[i].max_iou, b[i].max_iou);
    }
  }
}

TEST(Nms, SingleBox) {
  const std::vector<Box> b{{0, 0, 5, 5}};
  const std::vector<double> s{0.3};
  for (double thr : {0.0, 0.5, 1.0}) EXPECT_EQ(wsod::nms(b, s, thr), std::vector<std::size_t>{0});
}

TEST(Nms, IdenticalPairKeepsHigher) {
  const std::vector<Box> b{{0, 0, 5, 5}, {0, 0, 5, 5}};
  const std::vector<double> s{0.9, 0.8};
  EXPECT_EQ(wsod::nms(b, s, 0.1), std::vector<std::size_t>{0});
}

TEST(Nms, EmptyInput) { EXPECT_TRUE(wsod::nms(std::vector<Box>{}, std::vector<double>{}, 0.5).empty()); }

TEST(Nms, TiesGoToLowerIndex) {
  const std::vector<Box> b{{0, 0, 5, 5}, {0, 0, 5, 5}, {50, 50, 60, 60}};
  const std::vector<double> s{0.5, 0.5, 0.5};
  EXPECT_EQ(wsod::nms(b, s, 0.3), (std::vector<std::size_t>{0, 2}));
}

TEST(Nms, ThresholdOneKeepsEverything) {
  suites::Rng rng(3);
  const auto b = suites::lattice_boxes(rng, 30);
  std::vector<double> s(b.size());
  for (auto& v : s) v = suites::uniform(rng, 0, 1);
  EXPECT_EQ(wsod::nms(b, s, 1.0).size(), b.size());
}

TEST(Nms, MatchesGreedyOracle) {
  suites::Rng rng(19);
  for (int k = 0; k < 300; ++k) {
    const auto b = suites::lattice_boxes(rng, 20);
    std::vector<double> s(b.size());
    for (auto& v : s) v = suites::coarse_score(rng);
    EXPECT_EQ(wsod::nms(b, s, 0.3), oracle::nms(b, s, 0.3));
  }
}

TEST(ScaleBox, ZeroThetaIsIdentity) {
  std::mt19937_64 rng(1);
  const Box b{3, 4, 17, 19};
  EXPECT_EQ(wsod::scale_box(b, 0.0, rng, {0, 0, 100, 100}), b);
}

TEST(ScaleBox, SampledSizesStayInRange) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 1000; ++k) {
    const Box r = wsod::scale_box({0, 0, 20, 20}, 0.5, rng, {-100, -100, 100, 100});
    EXPECT_GE(r.width(), 10.0);
    EXPECT_LE(r.width(), 30.0);
    EXPECT_GE(r.height(), 10.0);
    EXPECT_LE(r.height(), 30.0);
    EXPECT_NEAR(r.cx(), 10.0, 1e-12);
    EXPECT_NEAR(r.cy(), 10.0, 1e-12);
  }
}

TEST(ScaleBox, DegenerateBoxStaysDegenerate) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 50; ++k) {
    const Box r = wsod::scale_box({5, 5, 5, 5}, 0.5, rng, {0, 0, 10, 10});
    EXPECT_EQ(r.width(), 0.0);
    EXPECT_EQ(r.height(), 0.0);
    EXPECT_EQ(r.cx(), 5.0);
  }
}

TEST(ScaleBox, ClipsToBounds) {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 200; ++k) {
    const Box r = wsod::scale_box({0, 0, 20, 20}, 0.5, rng, {0, 0, 20, 20});
    EXPECT_GE(r.x1, 0.0);
    EXPECT_LE(r.x2, 20.0);
  }
}

TEST(GridBoxes, Quartering) {
  const auto cells = wsod::grid_boxes({0, 0, 20, 20}, 2);
  const std::vector<Box> want{{0, 0, 10, 10}, {10, 0, 20, 10}, {0, 10, 10, 20}, {10, 10, 20, 20}};
  EXPECT_EQ(cells, want);
}

TEST(GridBoxes, OneCellIsTheBox) {
  const Box b{1.5, 2.25, 9.75, 4.0};
  EXPECT_EQ(wsod::grid_boxes(b, 1), std::vector<Box>{b});
}

TEST(GridBoxes, ThreeByThreeAreaBookkeeping) {
  const auto cells = wsod::grid_boxes({0, 0, 30, 30}, 3);
  ASSERT_EQ(cells.size(), 9u);
  double area = 0.0;
  for (std::size_t a = 0; a < cells.size(); ++a) {
    area += cells[a].area();
    for (std::size_t b = a + 1; b < cells.size(); ++b) EXPECT_EQ(wsod::intersection_area(cells[a], cells[b]), 0.0);
  }
  EXPECT_DOUBLE_EQ(area, 900.0);
}

TEST(GridBoxes, RejectsNonPositiveN) { EXPECT_THROW(wsod::grid_boxes({0, 0, 1, 1}, 0), wsod::Error); }

TEST(Geometry, RandomizedInvariants) {
  const auto r = suites::geometry_suite(2000);
  EXPECT_TRUE(r.passed) << r.detail;
}
