#include <doctest.h>

#include <cmath>

#include <Eigen/Geometry>

#include "ncmatch/geometry.h"
#include "ncmatch/rng.h"

using namespace ncmatch;

namespace {

constexpr double kPi = 3.14159265358979323846;

Eigen::Vector3d random_unit(SeededRng& rng) {
  while (true) {
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    if (v.norm() > 1e-6) return v.normalized();
  }
}

Eigen::Matrix3d random_rotation(SeededRng& rng, double max_angle = kPi) {
  return Eigen::AngleAxisd(rng.uniform(0.0, max_angle), random_unit(rng)).toRotationMatrix();
}

// Exact projections of random points visible in both cameras of the relative
// pose x_b = R x_a + t.
std::vector<PointPair> exact_pairs(SeededRng& rng, const Eigen::Matrix3d& r,
                                   const Eigen::Vector3d& t, int n) {
  std::vector<PointPair> pairs;
  while (static_cast<int>(pairs.size()) < n) {
    const Eigen::Vector3d xa(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                             rng.uniform(2.0, 8.0));
    const Eigen::Vector3d xb = r * xa + t;
    if (xb.z() < 0.1) continue;
    pairs.push_back({xa.x() / xa.z(), xa.y() / xa.z(), xb.x() / xb.z(), xb.y() / xb.z()});
  }
  return pairs;
}

double epipolar_residual(const Eigen::Matrix3d& e, const std::vector<PointPair>& pairs) {
  double worst = 0.0;
  for (const auto& p : pairs) {
    const Eigen::Vector3d xa(p.xa, p.ya, 1.0);
    const Eigen::Vector3d xb(p.xb, p.yb, 1.0);
    worst = std::max(worst, std::abs(xb.dot(e * xa)));
  }
  return worst;
}

// Frobenius distance up to the global sign, both inputs normalized.
double essential_gap(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const Eigen::Matrix3d an = a / a.norm();
  const Eigen::Matrix3d bn = b / b.norm();
  return std::min((an - bn).norm(), (an + bn).norm());
}

}  // namespace

TEST_CASE("normalize_points applies the intrinsics") {
  const CameraIntrinsics k{100.0, 50.0, 320.0, 240.0};
  const auto out = normalize_points({{320.0, 240.0}, {420.0, 240.0}}, k);
  CHECK(out[0][0] == doctest::Approx(0.0));
  CHECK(out[0][1] == doctest::Approx(0.0));
  CHECK(out[1][0] == doctest::Approx(1.0));
  CHECK(out[1][1] == doctest::Approx(0.0));

  const CameraIntrinsics ident;
  const auto same = normalize_points({{0.3, -0.7}}, ident);
  CHECK(same[0][0] == doctest::Approx(0.3));
  CHECK(same[0][1] == doctest::Approx(-0.7));

  CameraIntrinsics bad;
  bad.fx = -1.0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("five_point solves the pure x-translation case analytically") {
  SeededRng rng(103);
  const Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  const Eigen::Vector3d t(1.0, 0.0, 0.0);
  const auto pairs = exact_pairs(rng, r, t, 5);
  const auto solutions = five_point(pairs);
  REQUIRE(!solutions.empty());

  Eigen::Matrix3d want;
  want << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  want /= want.norm();

  double best = 1e9;
  for (const auto& s : solutions) {
    best = std::min(best, essential_gap(s.E, want));
    CHECK(epipolar_residual(s.E, pairs) < 1e-8);
    s.validate();
  }
  CHECK(best < 1e-8);
}

TEST_CASE("five_point recovers random ground-truth essentials") {
  SeededRng rng(107);
  int solved = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::Matrix3d r = random_rotation(rng, 0.5);
    const Eigen::Vector3d t = random_unit(rng);
    const auto pairs = exact_pairs(rng, r, t, 5);
    const Eigen::Matrix3d want = essential_from_rt(r, t).E;

    const auto solutions = five_point(pairs);
    double gap = 1e9, residual = 1e9;
    for (const auto& s : solutions) {
      gap = std::min(gap, essential_gap(s.E, want));
      residual = std::min(residual, epipolar_residual(s.E, pairs));
    }
    if (gap < 1e-6 && residual < 1e-8) ++solved;
  }
  CHECK(solved == 50);
}

TEST_CASE("five_point rejects degenerate configurations") {
  SeededRng rng(109);
  auto pairs = exact_pairs(rng, Eigen::Matrix3d::Identity(), Eigen::Vector3d(1, 0, 0), 5);
  pairs[1] = pairs[0];  // coincident correspondence
  CHECK_THROWS_AS(five_point(pairs), DegeneracyError);

  // points on the plane y = 0 through both camera centres project onto a
  // line in both views: the design matrix drops below rank 5
  std::vector<PointPair> planar;
  for (int i = 0; i < 5; ++i) {
    const double x = -2.0 + i, z = 4.0 + i;
    planar.push_back({x / z, 0.0, (x - 1.0) / z, 0.0});
  }
  CHECK_THROWS_AS(five_point(planar), DegeneracyError);

  CHECK_THROWS_AS(five_point(std::vector<PointPair>(4)), ContractViolation);
}

TEST_CASE("sampson_distance vanishes exactly on the epipolar surface") {
  SeededRng rng(113);
  const Eigen::Matrix3d r = random_rotation(rng, 0.4);
  const Eigen::Vector3d t = random_unit(rng);
  const Eigen::Matrix3d e = essential_from_rt(r, t).E;
  for (const auto& p : exact_pairs(rng, r, t, 20)) {
    CHECK(sampson_distance(e, p) < 1e-18);
    PointPair off = p;
    off.xb += 0.01;
    CHECK(sampson_distance(e, off) > 1e-8);
  }
}

TEST_CASE("ransac_essential recovers planted models") {
  SeededRng rng(127);
  const Eigen::Matrix3d r = random_rotation(rng, 0.4);
  const Eigen::Vector3d t = random_unit(rng);
  const Eigen::Matrix3d want = essential_from_rt(r, t).E;

  // all-inlier case
  const auto clean = exact_pairs(rng, r, t, 100);
  const RansacResult res = ransac_essential(clean, 1e-3, 0.999, 1000, 7);
  CHECK(res.n_inliers == 100);
  CHECK(essential_gap(res.e.E, want) < 1e-6);

  // half the points replaced by uniform outliers
  auto mixed = exact_pairs(rng, r, t, 100);
  for (int i = 50; i < 100; ++i) {
    mixed[i] = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 1.0)};
  }
  const RansacResult robust = ransac_essential(mixed, 1e-3, 0.999, 1000, 7);
  int recovered = 0;
  for (int i = 0; i < 50; ++i) recovered += robust.inlier_mask[i] ? 1 : 0;
  CHECK(recovered >= 49);

  CHECK_THROWS_AS(ransac_essential(std::vector<PointPair>(4), 1e-3, 0.999, 100, 1),
                  ContractViolation);
}

TEST_CASE("ransac_essential is deterministic for a fixed seed") {
  SeededRng rng(131);
  const Eigen::Matrix3d r = random_rotation(rng, 0.3);
  const Eigen::Vector3d t = random_unit(rng);
  auto pairs = exact_pairs(rng, r, t, 60);
  for (int i = 40; i < 60; ++i) {
    pairs[i] = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 1.0)};
  }
  const RansacResult a = ransac_essential(pairs, 1e-3, 0.999, 500, 11);
  const RansacResult b = ransac_essential(pairs, 1e-3, 0.999, 500, 11);
  CHECK(a.e.E == b.e.E);
  CHECK(a.inlier_mask == b.inlier_mask);
  CHECK(a.iterations == b.iterations);

  const RansacResult c = ransac_essential(pairs, 1e-3, 0.999, 500, 12);
  CHECK(a.n_inliers == c.n_inliers);  // same consensus even if path differs
}

TEST_CASE("refine_essential polishes a perturbed model back onto clean pairs") {
  SeededRng rng(151);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Matrix3d r = random_rotation(rng, 0.5);
    const Eigen::Vector3d t = random_unit(rng);
    const auto pairs = exact_pairs(rng, r, t, 40);
    const EssentialMatrix want = essential_from_rt(r, t);

    // an exact model is a fixed point of the refinement
    const EssentialMatrix kept = refine_essential(want, pairs);
    CHECK(essential_gap(kept.E, want.E) < 1e-8);
    CHECK(epipolar_residual(kept.E, pairs) < 1e-10);

    // a nearby pose (about a degree off in R and t) converges back
    const Eigen::Matrix3d r_off =
        Eigen::AngleAxisd(0.02, random_unit(rng)).toRotationMatrix() * r;
    const Eigen::Vector3d t_off =
        (t + 0.02 * random_unit(rng)).normalized();
    const EssentialMatrix start = essential_from_rt(r_off, t_off);
    const double gap_before = essential_gap(start.E, want.E);
    const EssentialMatrix polished = refine_essential(start, pairs);
    const double gap_after = essential_gap(polished.E, want.E);
    CHECK(gap_after < 1e-6);
    CHECK(gap_after < gap_before);
    polished.validate();

    // same inputs, same output
    const EssentialMatrix again = refine_essential(start, pairs);
    CHECK(polished.E == again.E);
  }

  CHECK_THROWS_AS(refine_essential(EssentialMatrix{Eigen::Matrix3d::Identity()}, {}),
                  ContractViolation);
}

TEST_CASE("decompose_essential resolves the pure-translation pose by cheirality") {
  SeededRng rng(137);
  const Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  const Eigen::Vector3d t(1.0, 0.0, 0.0);
  const auto pairs = exact_pairs(rng, r, t, 30);
  const Pose pose = decompose_essential(essential_from_rt(r, t), pairs);
  CHECK(rotation_error(r, pose.R) < 1e-9);
  CHECK((pose.t - t).norm() < 1e-9);

  CHECK_THROWS_AS(decompose_essential(essential_from_rt(r, t), {}), ContractViolation);
}

TEST_CASE("decompose_essential round-trips random poses") {
  SeededRng rng(139);
  for (int rep = 0; rep < 30; ++rep) {
    const Eigen::Matrix3d r = random_rotation(rng, 0.6);
    const Eigen::Vector3d t = random_unit(rng);
    const auto pairs = exact_pairs(rng, r, t, 25);
    const Pose pose = decompose_essential(essential_from_rt(r, t), pairs);
    pose.validate();
    // arccos floors near-zero angles at sqrt(2 eps) ~ 2e-8 even for an exact R
    CHECK(rotation_error(r, pose.R) < 1e-7);
    CHECK(translation_error(t, pose.t) < 1e-9);
    CHECK(pose.t.norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("rotation_error fixtures and properties") {
  SeededRng rng(149);
  const Eigen::Matrix3d r = random_rotation(rng);
  CHECK(rotation_error(r, r) == doctest::Approx(0.0));

  const Eigen::Matrix3d rz =
      r * Eigen::AngleAxisd(kPi / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  CHECK(rotation_error(r, rz) == doctest::Approx(kPi / 2).epsilon(1e-9));

  const Eigen::Vector3d axis = Eigen::Vector3d(1, 1, 1).normalized();
  const Eigen::Matrix3d ra = r * Eigen::AngleAxisd(0.3, axis).toRotationMatrix();
  CHECK(std::abs(rotation_error(r, ra) - 0.3) < 1e-12);

  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Matrix3d base = random_rotation(rng);
    const double theta = rng.uniform(0.0, kPi);
    const Eigen::Matrix3d rot =
        base * Eigen::AngleAxisd(theta, random_unit(rng)).toRotationMatrix();
    CHECK(std::abs(rotation_error(base, rot) - theta) < 1e-9);
    CHECK(std::abs(rotation_error(base, rot) - rotation_error(rot, base)) < 1e-12);
  }
}

TEST_CASE("translation_error fixtures and properties") {
  const Eigen::Vector3d t(3.0, 0.0, 0.0);
  CHECK(translation_error(t, Eigen::Vector3d(0.5, 0.0, 0.0)) == doctest::Approx(0.0));
  CHECK(translation_error(t, Eigen::Vector3d(-7.0, 0.0, 0.0)) == doctest::Approx(6.0));
  CHECK(translation_error(t, Eigen::Vector3d(0.0, 1.0, 0.0)) ==
        doctest::Approx(3.0 * std::sqrt(2.0)));
  CHECK(translation_error(Eigen::Vector3d::Zero(), Eigen::Vector3d(1.0, 2.0, 3.0)) == 0.0);
  CHECK_THROWS_AS(translation_error(t, Eigen::Vector3d::Zero()), ContractViolation);

  SeededRng rng(151);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Vector3d base = 3.0 * random_unit(rng);
    const Eigen::Vector3d hat = random_unit(rng);
    const double e1 = translation_error(base, hat);
    const double e2 = translation_error(base, 17.5 * hat);
    CHECK(std::abs(e1 - e2) < 1e-12);
  }
}

TEST_CASE("success_ratios bins and counts failures") {
  std::vector<PairOutcome> outcomes;
  // bin [0, 1): two perfect estimates
  outcomes.push_back({0.5, true, {0.0, 0.0}});
  outcomes.push_back({0.9, true, {0.0, 0.0}});
  // bin [1, 2): one estimate over the rotation threshold only
  outcomes.push_back({1.5, true, {0.2, 0.01}});
  // bin [2, 5): one failed estimation
  outcomes.push_back({3.0, false, {0.0, 0.0}});

  const auto bins = success_ratios(outcomes, 0.1, 0.05, {0.0, 1.0, 2.0, 5.0, 10.0});
  REQUIRE(bins.size() == 4);
  CHECK(bins[0].n_pairs == 2);
  CHECK(bins[0].populated);
  CHECK(bins[0].rot_success == doctest::Approx(1.0));
  CHECK(bins[0].trans_success == doctest::Approx(1.0));
  CHECK(bins[1].n_pairs == 1);
  CHECK(bins[1].rot_success == doctest::Approx(0.0));  // 0.2 >= 0.1
  CHECK(bins[1].trans_success == doctest::Approx(1.0));  // 0.01 < 0.05 * 1.5
  CHECK(bins[2].n_pairs == 1);
  CHECK(bins[2].rot_success == doctest::Approx(0.0));  // failure counts against
  CHECK(bins[2].trans_success == doctest::Approx(0.0));
  CHECK(!bins[3].populated);

  int total = 0;
  for (const auto& b : bins) total += b.n_pairs;
  CHECK(total == 4);

  CHECK_THROWS_AS(success_ratios(outcomes, 0.1, 0.05, {1.0, 1.0}), ContractViolation);
  CHECK_THROWS_AS(success_ratios(outcomes, 0.1, 0.05, {2.0}), ContractViolation);
}

TEST_CASE("essential matrix validation enforces the rank-2 structure") {
  SeededRng rng(157);
  const EssentialMatrix e = essential_from_rt(random_rotation(rng), random_unit(rng));
  e.validate();

  EssentialMatrix bad;
  bad.E = Eigen::Matrix3d::Identity();
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}
