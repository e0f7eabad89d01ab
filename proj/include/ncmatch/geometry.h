#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "ncmatch/errors.h"

namespace ncmatch {

struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  void validate() const;
};

// Rigid camera pose, x_cam = R x + t.
struct Pose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  void validate() const;  // R orthonormal and det +1 within 1e-9
};

struct EssentialMatrix {
  Eigen::Matrix3d E = Eigen::Matrix3d::Zero();
  // After Frobenius normalization: |det| <= 1e-8 and the two leading singular
  // values equal within 1e-6.
  void validate() const;
};

struct PoseErrors {
  double r_err = 0.0;  // radians, in [0, pi]
  double t_err = 0.0;  // meters
};

// One correspondence in normalized image coordinates, A first.
struct PointPair {
  double xa = 0.0, ya = 0.0;
  double xb = 0.0, yb = 0.0;
};

struct RansacResult {
  EssentialMatrix e;
  std::vector<char> inlier_mask;
  int n_inliers = 0;
  int iterations = 0;
  int degenerate_samples = 0;
};

// Pixel to normalized coordinates: ((x - cx) / fx, (y - cy) / fy).
std::vector<std::array<double, 2>> normalize_points(
    const std::vector<std::array<double, 2>>& pixels, const CameraIntrinsics& k);

// Nister's five point algorithm. Solves the 5x9 epipolar system for the
// 4-dimensional null space, expands the det and trace cubic constraints over
// the 20-monomial basis, eliminates to a degree-10 polynomial whose real
// roots (companion-matrix eigenvalues) yield up to 10 candidates. Every
// returned matrix satisfies the epipolar (1e-8), det (1e-8) and trace (1e-6)
// residual bounds after Frobenius normalization. Returns an empty list when
// no real root survives; throws DegeneracyError when the design matrix loses
// rank beyond the expected null space.
std::vector<EssentialMatrix> five_point(const std::vector<PointPair>& pairs);

// Squared first-order geometric (Sampson) error of the epipolar constraint.
double sampson_distance(const Eigen::Matrix3d& e, const PointPair& p);

// Seeded RANSAC over five_point hypotheses scored by Sampson inlier count,
// with an adaptive iteration bound and a linear least-squares refit (kept only
// if it does not lose inliers) when at least 8 inliers are available.
// Deterministic for a fixed seed. Throws EstimationFailed when no model
// reaches 5 inliers, DegeneracyError when every sampled subset was degenerate.
RansacResult ransac_essential(const std::vector<PointPair>& pairs, double threshold,
                              double confidence, int max_iter, std::uint64_t seed);

// Gauss-Newton polish of E over its (R, unit t) factorization, minimizing the
// total first-order geometric (Sampson) epipolar error on the given pairs.
// Deterministic; returns the input unchanged when it cannot be improved or
// the decomposition is ambiguous.
EssentialMatrix refine_essential(const EssentialMatrix& e,
                                 const std::vector<PointPair>& pairs);

// Factorizes E into the four (R, t) candidates and returns the one with the
// most positive-depth triangulations over the given inliers; |t| = 1. An
// exact tie between distinct candidates raises AmbiguityError.
Pose decompose_essential(const EssentialMatrix& e, const std::vector<PointPair>& inliers);

// arccos((tr(R^-1 R_hat) - 1) / 2), trace term clamped to [-1, 1].
double rotation_error(const Eigen::Matrix3d& r, const Eigen::Matrix3d& r_hat);

// |scale * t_hat - t| with t_hat rescaled to |t|. |t| = 0 returns 0 by
// convention; |t_hat| = 0 is a contract violation.
double translation_error(const Eigen::Vector3d& t, const Eigen::Vector3d& t_hat);

// One evaluated pair: ground-truth baseline length (the binning key and the
// translation threshold scale) plus the estimation outcome.
struct PairOutcome {
  double distance = 0.0;
  bool estimated = false;
  PoseErrors errors;
};

struct BinRatio {
  double lo = 0.0, hi = 0.0;
  int n_pairs = 0;
  bool populated = false;
  double rot_success = 0.0;
  double trans_success = 0.0;
};

// Per distance bin [lo, hi): fraction with r_err < theta_r and fraction with
// t_err < theta_t * distance. Failed estimations count against both ratios;
// empty bins are returned unpopulated.
std::vector<BinRatio> success_ratios(const std::vector<PairOutcome>& outcomes,
                                     double theta_r, double theta_t,
                                     const std::vector<double>& bins);

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

// E = [t]x R, Frobenius-normalized.
EssentialMatrix essential_from_rt(const Eigen::Matrix3d& r, const Eigen::Vector3d& t);

}  // namespace ncmatch
