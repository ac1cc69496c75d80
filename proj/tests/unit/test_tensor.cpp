#include <gtest/gtest.h>

#include "fedlips/error.hpp"
#include "fedlips/tensor.hpp"

using namespace fedlips;

TEST(Tensor, SizeMatchesShapeProduct) {
  const Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(2), 4u);
}

TEST(Tensor, RejectsZeroDimensionAndCountMismatch) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ReshapeKeepsRowMajorOrder) {
  const Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  const Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.at(1, 0), 3.0);
  EXPECT_EQ(r.at(2, 1), 6.0);
  EXPECT_THROW((void)t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, NormAndDot) {
  const Tensor a = Tensor::vector({3, 4});
  EXPECT_DOUBLE_EQ(l2_norm(a.values()), 5.0);
  EXPECT_DOUBLE_EQ(dot(a.values(), a.values()), 25.0);
}

TEST(Tensor, FiniteCheck) {
  Tensor t({2}, 0.0);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}
