#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "ncmatch/consensus.h"
#include "ncmatch/rng.h"
#include "oracles.h"

using namespace ncmatch;

namespace {

DescriptorMap random_map(SeededRng& rng, int h, int w, int dim) {
  std::vector<double> values(static_cast<std::size_t>(h) * w * dim);
  for (auto& v : values) v = rng.normal();
  return DescriptorMap::from_raw(h, w, dim, std::move(values));
}

Tensor4 random_correlation(SeededRng& rng, std::array<int, 4> dims) {
  Tensor4 t(dims, 1);
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// The 2x1x2x1 fixture from the soft mutual filtering contract.
Tensor4 mutual_example() {
  Tensor4 c({2, 1, 2, 1}, 1);
  c.at(0, 0, 0, 0) = 0.8;
  c.at(0, 0, 1, 0) = 0.4;
  c.at(1, 0, 0, 0) = 0.4;
  c.at(1, 0, 1, 0) = 0.8;
  return c;
}

}  // namespace

TEST_CASE("descriptor maps enforce unit norms with a uniform fallback") {
  std::vector<double> raw = {3.0, 4.0, 0.0, 0.0,   // norm 5
                             0.0, 0.0, 0.0, 0.0};  // zero vector
  const DescriptorMap map = DescriptorMap::from_raw(2, 1, 4, raw);
  CHECK(map.cell(0, 0)[0] == doctest::Approx(0.6));
  CHECK(map.cell(0, 0)[1] == doctest::Approx(0.8));
  CHECK(map.cell(1, 0)[0] == doctest::Approx(0.5));
  CHECK(map.cell(1, 0)[3] == doctest::Approx(0.5));
  CHECK(map.max_norm_error() < 1e-12);
  CHECK_THROWS_AS(DescriptorMap::from_raw(2, 1, 4, std::vector<double>(3)),
                  ContractViolation);
}

TEST_CASE("correlate computes all pairwise dot products") {
  // single cell, identical descriptor
  DescriptorMap one(1, 1, 4);
  one.set_cell(0, 0, {1.0, 0.0, 0.0, 0.0});
  const Tensor4 self = correlate(one, one);
  CHECK(self.dims() == std::array<int, 4>{1, 1, 1, 1});
  CHECK(self.at(0, 0, 0, 0) == doctest::Approx(1.0));

  DescriptorMap other(1, 1, 4);
  other.set_cell(0, 0, {0.0, 1.0, 0.0, 0.0});
  CHECK(correlate(one, other).at(0, 0, 0, 0) == doctest::Approx(0.0));

  // 2x1 basis vectors against 1x2 swapped basis vectors: indicator tensor
  DescriptorMap fa(2, 1, 4), fb(1, 2, 4);
  fa.set_cell(0, 0, {1.0, 0.0, 0.0, 0.0});
  fa.set_cell(1, 0, {0.0, 1.0, 0.0, 0.0});
  fb.set_cell(0, 0, {0.0, 1.0, 0.0, 0.0});
  fb.set_cell(0, 1, {1.0, 0.0, 0.0, 0.0});
  const Tensor4 c = correlate(fa, fb);
  CHECK(c.at(0, 0, 0, 0) == doctest::Approx(0.0));
  CHECK(c.at(0, 0, 0, 1) == doctest::Approx(1.0));
  CHECK(c.at(1, 0, 0, 0) == doctest::Approx(1.0));
  CHECK(c.at(1, 0, 0, 1) == doctest::Approx(0.0));

  DescriptorMap short_map(1, 1, 3);
  CHECK_THROWS_AS(correlate(one, short_map), ContractViolation);
}

TEST_CASE("correlate transpose symmetry is exact") {
  SeededRng rng(23);
  const DescriptorMap fa = random_map(rng, 3, 2, 8);
  const DescriptorMap fb = random_map(rng, 2, 4, 8);
  const Tensor4 ab = correlate(fa, fb);
  const Tensor4 ba = correlate(fb, fa);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 4; ++l) CHECK(ab.at(i, j, k, l) == ba.at(k, l, i, j));
}

TEST_CASE("correlate is bit-identical across thread counts") {
  SeededRng rng(29);
  const DescriptorMap fa = random_map(rng, 4, 4, 16);
  const DescriptorMap fb = random_map(rng, 4, 4, 16);
  const Tensor4 a = correlate(fa, fb, 1);
  const Tensor4 b = correlate(fa, fb, 4);
  CHECK(a.values() == b.values());
}

TEST_CASE("soft_mutual_nn handles the contract fixtures") {
  // lone positive entry is preserved exactly
  Tensor4 lone({2, 2, 2, 2}, 1);
  lone.at(1, 0, 0, 1) = 0.7;
  const Tensor4 lone_out = soft_mutual_nn(lone);
  CHECK(lone_out.at(1, 0, 0, 1) == doctest::Approx(0.7));
  double total = 0.0;
  for (double v : lone_out.values()) total += v;
  CHECK(total == doctest::Approx(0.7));

  // constant tensor is a fixed point
  Tensor4 flat({2, 2, 2, 2}, 1);
  for (auto& v : flat.values()) v = 0.3;
  const Tensor4 flat_out = soft_mutual_nn(flat);
  for (double v : flat_out.values()) CHECK(v == doctest::Approx(0.3));

  // the 2x1x2x1 hand-evaluated example
  const Tensor4 out = soft_mutual_nn(mutual_example());
  CHECK(out.at(0, 0, 0, 0) == doctest::Approx(0.8));
  CHECK(out.at(1, 0, 1, 0) == doctest::Approx(0.8));
  CHECK(out.at(0, 0, 1, 0) == doctest::Approx(0.1));
  CHECK(out.at(1, 0, 0, 0) == doctest::Approx(0.1));

  Tensor4 negative({1, 1, 1, 1}, 1);
  negative.at(0, 0, 0, 0) = -0.1;
  CHECK_THROWS_AS(soft_mutual_nn(negative), ContractViolation);
}

TEST_CASE("soft_mutual_nn never amplifies and keeps mutual argmaxes") {
  SeededRng rng(31);
  Tensor4 c({3, 2, 2, 3}, 1);
  for (auto& v : c.values()) v = rng.uniform();
  const Tensor4 out = soft_mutual_nn(c);
  for (std::size_t i = 0; i < c.values().size(); ++i) {
    CHECK(out.values()[i] <= c.values()[i] + 1e-15);
  }
}

TEST_CASE("ncn_filter with a delta stack doubles a one-hot tensor") {
  Tensor4 c({2, 2, 2, 2}, 1);
  c.at(0, 1, 1, 0) = 0.5;
  const Tensor4 out = ncn_filter(c, Conv4Stack::delta());
  CHECK(out.at(0, 1, 1, 0) == doctest::Approx(1.0));
  double total = 0.0;
  for (double v : out.values()) total += v;
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("ncn_filter with zero kernels yields zero") {
  Conv4Stack stack = Conv4Stack::delta(3);
  for (auto& w : stack.layers[0].weights) w = 0.0;
  SeededRng rng(37);
  Tensor4 c({2, 2, 2, 2}, 1);
  for (auto& v : c.values()) v = rng.uniform();
  const Tensor4 out = ncn_filter(c, stack);
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("ncn_filter equals the composed stage oracles") {
  SeededRng rng(41);
  Tensor4 c({3, 3, 3, 3}, 1);
  for (auto& v : c.values()) v = rng.uniform(-1.0, 1.0);
  const Conv4Stack stack = Conv4Stack::seeded_random(4, {1, 2, 1}, 3);

  // direct branch
  Tensor4 direct = oracle::conv4d_naive(c, stack.layers[0]);
  for (auto& v : direct.values()) v = std::max(0.0, v);
  direct = oracle::conv4d_naive(direct, stack.layers[1]);
  // swapped branch
  Tensor4 swapped = oracle::conv4d_naive(oracle::transpose_naive(c), stack.layers[0]);
  for (auto& v : swapped.values()) v = std::max(0.0, v);
  swapped = oracle::transpose_naive(oracle::conv4d_naive(swapped, stack.layers[1]));

  Tensor4 n = direct;
  for (std::size_t i = 0; i < n.values().size(); ++i) {
    n.values()[i] = std::max(0.0, direct.values()[i] + swapped.values()[i]);
  }
  const Tensor4 want = soft_mutual_nn(n);
  const Tensor4 got = ncn_filter(c, stack);
  for (std::size_t i = 0; i < want.values().size(); ++i) {
    CHECK(got.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-9));
  }
}

TEST_CASE("ncn_filter commutes with swapping the images") {
  SeededRng rng(43);
  Tensor4 c({2, 3, 3, 2}, 1);
  for (auto& v : c.values()) v = rng.uniform(-1.0, 1.0);
  const Conv4Stack stack = Conv4Stack::seeded_random(9, {1, 2, 1}, 3);
  const Tensor4 forward = ncn_filter(c, stack);
  const Tensor4 swapped = ncn_filter(transpose_pairs(c), stack);
  const Tensor4 back = transpose_pairs(swapped);
  for (std::size_t i = 0; i < forward.values().size(); ++i) {
    CHECK(back.values()[i] == doctest::Approx(forward.values()[i]).epsilon(1e-6));
  }
}

TEST_CASE("match_scores fixtures") {
  // all zeros, dims 2x2x1x1: sA uniform 0.25, sB uniform 1.0
  const Tensor4 zeros({2, 2, 1, 1}, 1);
  const ScoreTensors s = match_scores(zeros);
  for (double v : s.sA.values()) CHECK(v == doctest::Approx(0.25));
  for (double v : s.sB.values()) CHECK(v == doctest::Approx(1.0));

  // saturated one-hot
  Tensor4 hot({2, 2, 2, 2}, 1);
  hot.at(1, 1, 0, 0) = 50.0;
  const ScoreTensors sh = match_scores(hot);
  CHECK(sh.sA.at(1, 1, 0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sh.sB.at(1, 1, 0, 0) == doctest::Approx(1.0).epsilon(1e-9));

  // c = [1, 2] along the A axis
  Tensor4 two({2, 1, 1, 1}, 1);
  two.at(0, 0, 0, 0) = 1.0;
  two.at(1, 0, 0, 0) = 2.0;
  const ScoreTensors st = match_scores(two);
  CHECK(st.sA.at(0, 0, 0, 0) == doctest::Approx(0.2689).epsilon(1e-3));
  CHECK(st.sA.at(1, 0, 0, 0) == doctest::Approx(0.7311).epsilon(1e-3));
  CHECK(st.sA.at(0, 0, 0, 0) ==
        doctest::Approx(std::exp(1.0) / (std::exp(1.0) + std::exp(2.0))));
  CHECK(st.sB.at(0, 0, 0, 0) == doctest::Approx(1.0));
  CHECK(st.sB.at(1, 0, 0, 0) == doctest::Approx(1.0));

  Tensor4 bad({1, 1, 1, 1}, 1);
  bad.at(0, 0, 0, 0) = std::nan("");
  CHECK_THROWS_AS(match_scores(bad), ContractViolation);
}

TEST_CASE("match_scores slice sums are 1 and the literal flag aliases sA") {
  SeededRng rng(47);
  for (int rep = 0; rep < 10; ++rep) {
    const std::array<int, 4> dims = {1 + static_cast<int>(rng.uniform_index(3)),
                                     1 + static_cast<int>(rng.uniform_index(3)),
                                     1 + static_cast<int>(rng.uniform_index(3)),
                                     1 + static_cast<int>(rng.uniform_index(3))};
    const Tensor4 c = random_correlation(rng, dims);
    const ScoreTensors s = match_scores(c);

    const std::size_t na = static_cast<std::size_t>(dims[0]) * dims[1];
    const std::size_t nb = static_cast<std::size_t>(dims[2]) * dims[3];
    for (std::size_t sb = 0; sb < nb; ++sb) {
      double sum = 0.0;
      for (std::size_t sa = 0; sa < na; ++sa) sum += s.sA.values()[sa * nb + sb];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    for (std::size_t sa = 0; sa < na; ++sa) {
      double sum = 0.0;
      for (std::size_t sb = 0; sb < nb; ++sb) sum += s.sB.values()[sa * nb + sb];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }

    const ScoreTensors literal = match_scores(c, SbConvention::kLiteral);
    CHECK(literal.sB.values() == literal.sA.values());
    CHECK(literal.sA.values() == s.sA.values());
  }
}

TEST_CASE("pair_loss fixtures") {
  const Tensor4 single({1, 1, 1, 1}, 1);
  const ScoreTensors s1 = match_scores(single);
  CHECK(pair_loss(s1, {0}) == 0.0);
  CHECK(pair_loss(s1, {1}) == doctest::Approx(-2.0));

  Tensor4 two({2, 1, 1, 1}, 1);
  two.at(0, 0, 0, 0) = 1.0;
  two.at(1, 0, 0, 0) = 2.0;
  CHECK(pair_loss(match_scores(two), {1}) == doctest::Approx(-1.5));

  CHECK_THROWS_AS(pair_loss(s1, {2}), ContractViolation);
}

TEST_CASE("descriptor map files round trip") {
  SeededRng rng(53);
  DescriptorMap map = random_map(rng, 3, 2, 8);
  const std::string path = "map_roundtrip.dmap";
  save_descriptor_map(path, map);
  const DescriptorMap loaded = load_descriptor_map(path);
  REQUIRE(loaded.h() == map.h());
  REQUIRE(loaded.w() == map.w());
  REQUIRE(loaded.dim() == map.dim());
  // f32 storage plus re-normalization on load
  for (std::size_t i = 0; i < map.values().size(); ++i) {
    CHECK(loaded.values()[i] == doctest::Approx(map.values()[i]).epsilon(1e-6));
  }
  CHECK(loaded.max_norm_error() < 1e-5);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_descriptor_map("missing.dmap"), IoError);
}
