#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "hopa/paired_aspp.hpp"
#include "support/testing.hpp"

using namespace hopa;
using hopa::testing::grad_check;
using hopa::testing::random_tensor;
using hopa::testing::Readout;

namespace {

std::array<Tensor, 4> random_stages(Rng& rng, std::array<int, 4> c, int n = 1, int h4 = 6) {
  return {random_tensor({n, c[0], 4 * h4, 4 * h4}, rng), random_tensor({n, c[1], 2 * h4, 2 * h4}, rng),
          random_tensor({n, c[2], h4, h4}, rng), random_tensor({n, c[3], h4, h4}, rng)};
}

}  // namespace

TEST_CASE("pairing shapes and the Y4 block") {
  Rng rng(1);
  Tensor y = random_tensor({1, 255, 14, 14}, rng);
  auto v = pair(y, y, y, y);
  for (const auto& t : v) CHECK(t.shape() == Shape{1, 510, 14, 14});
  Tensor y1 = random_tensor({1, 255, 56, 56}, rng);
  auto w = pair(y1, y, y, y);
  CHECK(w[0].shape() == Shape{1, 510, 14, 14});
  Tensor tail = slice_channels(w[0], 255, 510);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(tail.data()[i] == y.data()[i]);
  CHECK_THROWS_AS(pair(Tensor({2, 1, 4, 4}), y, y, y), std::invalid_argument);
}

TEST_CASE("rate wiring of the two combinations") {
  PairedAsppConfig one;
  PairedAsppConfig two;
  two.combination = Combination::kTwo;
  auto b1 = one.branches();
  auto b2 = two.branches();
  REQUIRE(b1.size() == 5);
  REQUIRE(b2.size() == 5);
  auto rate_of = [](const std::vector<BranchSpec>& bs, BranchSource s) {
    for (const auto& b : bs)
      if (b.source == s) return b.rate;
    return -1;
  };
  CHECK(rate_of(b1, BranchSource::kPair3) == 18);
  CHECK(rate_of(b1, BranchSource::kPair2) == 12);
  CHECK(rate_of(b1, BranchSource::kPair1) == 6);
  CHECK(rate_of(b1, BranchSource::kStage4) == 1);
  CHECK(rate_of(b2, BranchSource::kPair3) == 6);
  CHECK(rate_of(b2, BranchSource::kPair2) == 12);
  CHECK(rate_of(b2, BranchSource::kPair1) == 18);
  CHECK(b1[4].source == BranchSource::kStage4Pool);
}

TEST_CASE("both combinations have identical parameter shapes") {
  std::array<int, 4> ch{3, 4, 5, 6};
  PairedAsppConfig one;
  PairedAsppConfig two;
  two.combination = Combination::kTwo;
  Rng r1(2), r2(2);
  PairedAsppParams p1 = make_paired_aspp(one, ch, r1);
  PairedAsppParams p2 = make_paired_aspp(two, ch, r2);
  ParamList l1, l2;
  register_paired_aspp(l1, p1);
  register_paired_aspp(l2, p2);
  REQUIRE(l1.size() == l2.size());
  for (std::size_t i = 0; i < l1.size(); ++i) {
    CHECK(l1[i].name == l2[i].name);
    CHECK(l1[i].tensor.shape() == l2[i].tensor.shape());
  }
  Rng rng(3);
  auto ys = random_stages(rng, ch);
  CHECK(paired_aspp_forward(ys, p1, false).shape() == paired_aspp_forward(ys, p2, false).shape());
}

TEST_CASE("output shape and zero-weight behaviour") {
  Rng rng(4);
  std::array<int, 4> ch{4, 4, 4, 4};
  PairedAsppConfig cfg;
  cfg.branch_channels = 16;
  cfg.fuse_channels = 8;
  PairedAsppParams p = make_paired_aspp(cfg, ch, rng);
  auto ys = random_stages(rng, ch, 1, 14);
  CHECK(paired_aspp_forward(ys, p, false).shape() == Shape{1, 8, 14, 14});

  ParamList list;
  register_paired_aspp(list, p);
  for (auto& e : list) {
    if (e.kind == ParamKind::kBuffer) continue;
    for (double& v : e.tensor.data()) v = 0.0;
  }
  for (int k = 0; k < 8; ++k) p.proj.bias->at(0, k, 0, 0) = 0.1 * k;
  for (int k = 0; k < 8; ++k) p.proj_bn.gamma.at(0, k, 0, 0) = 1.0;
  Tensor out = paired_aspp_forward(ys, p, false);
  const double s = 1.0 / std::sqrt(1.0 + p.proj_bn.eps);
  for (int k = 0; k < 8; ++k)
    for (int i = 0; i < 14; ++i)
      for (int j = 0; j < 14; ++j) CHECK(out.at(0, k, i, j) == doctest::Approx(0.1 * k * s));
}

TEST_CASE("zeroing one branch only changes that branch") {
  Rng rng(5);
  std::array<int, 4> ch{2, 3, 3, 4};
  PairedAsppParams p = make_paired_aspp(PairedAsppConfig{}, ch, rng);
  auto ys = random_stages(rng, ch);
  auto before = paired_aspp_branches(ys, p, false);
  for (int k = 0; k < 4; ++k) {
    PairedAsppParams q = p;
    q.atrous[k].weight = Tensor::zeros(p.atrous[k].weight.shape());
    auto after = paired_aspp_branches(ys, q, false);
    for (int b = 0; b < 5; ++b) {
      bool same = std::equal(before[b].data().begin(), before[b].data().end(), after[b].data().begin());
      CHECK(same == (b != k));
    }
  }
}

TEST_CASE("gradients reach every parameter and every stage") {
  Rng rng(6);
  std::array<int, 4> ch{2, 2, 3, 3};
  PairedAsppConfig cfg;
  cfg.rates = {3, 2, 1, 1};
  cfg.branch_channels = 3;
  cfg.fuse_channels = 4;
  PairedAsppParams p = make_paired_aspp(cfg, ch, rng);
  std::array<Tensor, 4> ys{random_tensor({2, 2, 8, 8}, rng), random_tensor({2, 2, 6, 6}, rng),
                           random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 3, 4, 4}, rng)};
  Readout ro({2, 4, 4, 4}, 7);
  auto loss = [&] { return ro(paired_aspp_forward(ys, p, true)); };
  ParamList list;
  register_paired_aspp(list, p);
  for (auto& e : list) {
    if (e.kind == ParamKind::kBuffer) continue;
    INFO(e.name);
    CHECK(grad_check(loss, e.tensor, rng, 20).max_rel_error < 1e-4);
  }
  for (auto& y : ys) {
    auto res = grad_check(loss, y, rng, 20);
    CHECK(res.max_rel_error < 1e-4);
    CHECK(res.nonzero > 0);
  }
}

TEST_CASE("scale coverage on the toy metadata") {
  const StageMetadata meta = stage_metadata(BackboneConfig::toy());
  PairedAsppConfig one;
  PairedAsppConfig two;
  two.combination = Combination::kTwo;
  const ScaleCoverage c1 = scale_coverage(one, meta);
  const ScaleCoverage c2 = scale_coverage(two, meta);
  CHECK(c1.branches.size() == 4);
  for (const auto& b : c1.branches) CHECK(b.min_rf <= b.max_rf);
  CHECK(c1.union_min <= c2.union_min);
  CHECK(c1.union_max >= c2.union_max);
  CHECK(c1.union_span() > c2.union_span());
  CHECK(c2.overlap_count > c1.overlap_count);
}

TEST_CASE("single Y4 branch at rate 1 spans [r4, r4 + 2 j4]") {
  StageMetadata meta{{{2, 11, 1}, {4, 19, 1}, {8, 35, 1}, {8, 67, 1}}};
  const ScaleCoverage c = scale_coverage(PairedAsppConfig{}, meta);
  for (const auto& b : c.branches) {
    if (b.source != BranchSource::kStage4) continue;
    CHECK(b.min_rf == 67);
    CHECK(b.max_rf == 67 + 2 * 8);
  }
}

TEST_CASE("combination one never covers less on monotone metadata") {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    StageMetadata meta;
    int r = 1;
    int j = 1;
    for (int i = 0; i < 4; ++i) {
      r += hopa::testing::uniform_int(rng, 0, 200);
      if (i < 3) j *= hopa::testing::uniform_int(rng, 1, 2);
      meta[i] = {j, r, 4};
    }
    PairedAsppConfig one;
    PairedAsppConfig two;
    two.combination = Combination::kTwo;
    CHECK(scale_coverage(one, meta).union_span() >= scale_coverage(two, meta).union_span());
  }
}
