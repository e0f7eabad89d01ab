#include "ncmatch/geometry.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ncmatch/rng.h"

namespace ncmatch {

namespace {

constexpr double kOrthoTol = 1e-9;

void check_rotation(const Eigen::Matrix3d& r, const char* what) {
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > kOrthoTol || std::abs(r.determinant() - 1.0) > kOrthoTol) {
    throw ContractViolation(std::string(what) + " is not a rotation matrix");
  }
}

// Polynomials in (x, y, z) over fixed monomial bases.
// Degree one: [x, y, z, 1].
using Poly1 = std::array<double, 4>;
// Degree two: [x2, y2, z2, xy, xz, yz, x, y, z, 1].
using Poly2 = std::array<double, 10>;
// Degree three, Nister's column order:
// [x3, y3, x2y, xy2, x2z, x2, y2z, y2, xyz, xy, xz2, xz, x, yz2, yz, y, z3, z2, z, 1].
using Poly3 = std::array<double, 20>;

constexpr int kMul11[4][4] = {
    {0, 3, 4, 6},
    {3, 1, 5, 7},
    {4, 5, 2, 8},
    {6, 7, 8, 9},
};

constexpr int kMul21[10][4] = {
    {0, 2, 4, 5},      // x2 * [x y z 1]
    {3, 1, 6, 7},      // y2
    {10, 13, 16, 17},  // z2
    {2, 3, 8, 9},      // xy
    {4, 8, 10, 11},    // xz
    {8, 6, 13, 14},    // yz
    {5, 9, 11, 12},    // x
    {9, 7, 14, 15},    // y
    {11, 14, 17, 18},  // z
    {12, 15, 18, 19},  // 1
};

Poly2 mul11(const Poly1& a, const Poly1& b) {
  Poly2 out{};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) out[kMul11[i][j]] += a[i] * b[j];
  }
  return out;
}

Poly3 mul21(const Poly2& a, const Poly1& b) {
  Poly3 out{};
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 4; ++j) out[kMul21[i][j]] += a[i] * b[j];
  }
  return out;
}

Poly2 sub2(const Poly2& a, const Poly2& b) {
  Poly2 out;
  for (int i = 0; i < 10; ++i) out[i] = a[i] - b[i];
  return out;
}

// Univariate polynomials in z, coefficients ascending.
std::vector<double> pmul(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

std::vector<double> psub(std::vector<double> a, const std::vector<double>& b) {
  if (a.size() < b.size()) a.resize(b.size(), 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) a[i] -= b[i];
  return a;
}

std::vector<double> padd(std::vector<double> a, const std::vector<double>& b) {
  if (a.size() < b.size()) a.resize(b.size(), 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) a[i] += b[i];
  return a;
}

double peval(const std::vector<double>& p, double z) {
  double v = 0.0;
  for (std::size_t i = p.size(); i-- > 0;) v = v * z + p[i];
  return v;
}

std::vector<double> pderiv(const std::vector<double>& p) {
  if (p.size() <= 1) return {0.0};
  std::vector<double> d(p.size() - 1);
  for (std::size_t i = 1; i < p.size(); ++i) d[i - 1] = p[i] * static_cast<double>(i);
  return d;
}

// One eliminated constraint row grouped as px(z) x + py(z) y + p1(z) = 0.
struct RowPoly {
  std::vector<double> px, py, p1;
};

double max_epipolar_residual(const Eigen::Matrix3d& e, const std::vector<PointPair>& pairs) {
  double worst = 0.0;
  for (const auto& p : pairs) {
    const Eigen::Vector3d xa(p.xa, p.ya, 1.0);
    const Eigen::Vector3d xb(p.xb, p.yb, 1.0);
    worst = std::max(worst, std::abs(xb.dot(e * xa)));
  }
  return worst;
}

double trace_constraint_residual(const Eigen::Matrix3d& e) {
  const Eigen::Matrix3d eet = e * e.transpose();
  return (2.0 * eet * e - eet.trace() * e).cwiseAbs().maxCoeff();
}

int count_inliers(const Eigen::Matrix3d& e, const std::vector<PointPair>& pairs,
                  double threshold, std::vector<char>* mask) {
  int count = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const bool in = sampson_distance(e, pairs[i]) < threshold;
    if (mask) (*mask)[i] = in ? 1 : 0;
    if (in) ++count;
  }
  return count;
}

Eigen::Matrix<double, Eigen::Dynamic, 9> epipolar_design(const std::vector<PointPair>& pairs) {
  Eigen::Matrix<double, Eigen::Dynamic, 9> q(pairs.size(), 9);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    const auto& p = pairs[r];
    q.row(static_cast<Eigen::Index>(r)) << p.xb * p.xa, p.xb * p.ya, p.xb, p.yb * p.xa,
        p.yb * p.ya, p.yb, p.xa, p.ya, 1.0;
  }
  return q;
}

Eigen::Matrix3d unstack(const Eigen::Matrix<double, 9, 1>& e) {
  Eigen::Matrix3d m;
  m << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  return m;
}

}  // namespace

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy) ||
      !std::isfinite(cx) || !std::isfinite(cy)) {
    throw ContractViolation("camera intrinsics invalid");
  }
}

void Pose::validate() const {
  check_rotation(R, "pose rotation");
  if (!t.allFinite()) throw ContractViolation("pose translation is not finite");
}

void EssentialMatrix::validate() const {
  const double norm = E.norm();
  if (!(norm > 0.0)) throw ContractViolation("essential matrix is zero");
  const Eigen::Matrix3d en = E / norm;
  if (std::abs(en.determinant()) > 1e-8) {
    throw ContractViolation("essential matrix determinant is not zero");
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(en);
  const auto& s = svd.singularValues();
  if (std::abs(s(0) - s(1)) > 1e-6) {
    throw ContractViolation("essential matrix singular values are unequal");
  }
}

std::vector<std::array<double, 2>> normalize_points(
    const std::vector<std::array<double, 2>>& pixels, const CameraIntrinsics& k) {
  k.validate();
  std::vector<std::array<double, 2>> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    out[i] = {(pixels[i][0] - k.cx) / k.fx, (pixels[i][1] - k.cy) / k.fy};
  }
  return out;
}

namespace {

// Ten cubic invariants that cut the essential manifold out of the epipolar
// null space: det(E) and the entries of 2 E Et E - tr(E Et) E.
Eigen::Matrix<double, 10, 1> manifold_invariants(const Eigen::Matrix3d& e) {
  Eigen::Matrix<double, 10, 1> r;
  r(0) = e.determinant();
  const Eigen::Matrix3d eet = e * e.transpose();
  const Eigen::Matrix3d k = 2.0 * eet * e - eet.trace() * e;
  for (int i = 0; i < 9; ++i) r(1 + i) = k(i / 3, i % 3);
  return r;
}

// Damped Newton on the invariants over the unit sphere of null-space
// coefficients. The epipolar constraints hold identically inside the null
// space, so this sharpens a candidate to full precision even when the
// degree-10 polynomial has clustered roots whose z positions are too
// ill-conditioned to separate the solutions.
Eigen::Vector4d polish_null_coeffs(const Eigen::Matrix<double, 9, 4>& basis, Eigen::Vector4d c) {
  c.normalize();
  double best = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 10; ++it) {
    const Eigen::Matrix3d e = unstack(basis * c);
    const Eigen::Matrix<double, 10, 1> r = manifold_invariants(e);
    const double rn = r.norm();
    if (!(rn < best)) break;
    best = rn;
    if (rn < 1e-15) break;

    Eigen::Matrix3d cof;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const int i1 = (i + 1) % 3, i2 = (i + 2) % 3;
        const int j1 = (j + 1) % 3, j2 = (j + 2) % 3;
        cof(i, j) = e(i1, j1) * e(i2, j2) - e(i1, j2) * e(i2, j1);
      }
    }
    const Eigen::Matrix3d eet = e * e.transpose();
    Eigen::Matrix<double, 10, 4> jac;
    for (int d = 0; d < 4; ++d) {
      const Eigen::Matrix3d dm = unstack(basis.col(d));
      jac(0, d) = (cof.array() * dm.array()).sum();
      const Eigen::Matrix3d dk = 2.0 * (dm * e.transpose() * e + e * dm.transpose() * e +
                                        eet * dm) -
                                 2.0 * (e.array() * dm.array()).sum() * e - eet.trace() * dm;
      for (int i = 0; i < 9; ++i) jac(1 + i, d) = dk(i / 3, i % 3);
    }
    // The invariants are homogeneous, so steps move on the tangent of the
    // unit sphere; the radial mode is the scale gauge.
    const Eigen::Matrix4d ct = Eigen::Matrix4d(Eigen::HouseholderQR<Eigen::Vector4d>(c)
                                                   .householderQ());
    const Eigen::Matrix<double, 4, 3> tan = ct.rightCols<3>();
    const Eigen::Matrix<double, 10, 3> jt = jac * tan;
    const Eigen::Vector3d step = jt.colPivHouseholderQr().solve(-r);

    double scale = 1.0;
    bool moved = false;
    for (int tries = 0; tries < 6 && !moved; ++tries) {
      const Eigen::Vector4d cn = (c + scale * (tan * step)).normalized();
      const Eigen::Matrix<double, 10, 1> rn2 =
          manifold_invariants(unstack(basis * cn));
      if (rn2.norm() < rn) {
        c = cn;
        moved = true;
      } else {
        scale *= 0.5;
      }
    }
    if (!moved) break;
  }
  return c;
}

}  // namespace

std::vector<EssentialMatrix> five_point(const std::vector<PointPair>& pairs) {
  if (pairs.size() != 5) throw ContractViolation("five_point needs exactly 5 pairs");
  for (int i = 0; i < 5; ++i) {
    for (int j = i + 1; j < 5; ++j) {
      if ((pairs[i].xa == pairs[j].xa && pairs[i].ya == pairs[j].ya) ||
          (pairs[i].xb == pairs[j].xb && pairs[i].yb == pairs[j].yb)) {
        throw DegeneracyError("five_point sample repeats a point");
      }
    }
  }

  const Eigen::Matrix<double, Eigen::Dynamic, 9> q = epipolar_design(pairs);
  Eigen::JacobiSVD<Eigen::Matrix<double, Eigen::Dynamic, 9>> svd(q, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(4) < 1e-10 * sv(0)) {
    throw DegeneracyError("five_point design matrix is rank deficient");
  }
  // Mix the null basis by a fixed generic rotation. The parameterization
  // below pins the fourth basis coefficient to 1, so a solution orthogonal to
  // the fourth basis vector sits at a root at infinity of the degree-10
  // polynomial and would be missed; structured inputs (axis-aligned pure
  // translations) produce exactly that alignment.
  static const Eigen::Matrix4d basis_mix = [] {
    Eigen::Matrix4d g;
    g << 0.71, -0.23, 0.48, -0.91, 0.17, 0.89, -0.64, 0.05, -0.58, 0.31, 0.77, 0.42,
        0.26, -0.67, -0.12, 0.83;
    return Eigen::Matrix4d(Eigen::HouseholderQR<Eigen::Matrix4d>(g).householderQ());
  }();
  const Eigen::Matrix<double, 9, 4> null_basis = svd.matrixV().rightCols<4>() * basis_mix;

  Poly1 e[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const int r = 3 * i + j;
      e[i][j] = {null_basis(r, 0), null_basis(r, 1), null_basis(r, 2), null_basis(r, 3)};
    }
  }

  // Ten cubic constraints over the 20-monomial basis: det(E) = 0 and the nine
  // entries of 2 E Et E - tr(E Et) E = 0.
  Poly3 rows[10];
  {
    const Poly2 m0 = sub2(mul11(e[1][1], e[2][2]), mul11(e[1][2], e[2][1]));
    const Poly2 m1 = sub2(mul11(e[1][0], e[2][2]), mul11(e[1][2], e[2][0]));
    const Poly2 m2 = sub2(mul11(e[1][0], e[2][1]), mul11(e[1][1], e[2][0]));
    const Poly3 d0 = mul21(m0, e[0][0]);
    const Poly3 d1 = mul21(m1, e[0][1]);
    const Poly3 d2 = mul21(m2, e[0][2]);
    for (int c = 0; c < 20; ++c) rows[0][c] = d0[c] - d1[c] + d2[c];

    Poly2 eet[3][3];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        Poly2 acc{};
        for (int k = 0; k < 3; ++k) {
          const Poly2 p = mul11(e[i][k], e[j][k]);
          for (int c = 0; c < 10; ++c) acc[c] += p[c];
        }
        eet[i][j] = acc;
      }
    }
    Poly2 trace{};
    for (int c = 0; c < 10; ++c) trace[c] = eet[0][0][c] + eet[1][1][c] + eet[2][2][c];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        Poly3 acc{};
        for (int k = 0; k < 3; ++k) {
          const Poly3 p = mul21(eet[i][k], e[k][j]);
          for (int c = 0; c < 20; ++c) acc[c] += p[c];
        }
        const Poly3 tr_term = mul21(trace, e[i][j]);
        for (int c = 0; c < 20; ++c) acc[c] = 2.0 * acc[c] - tr_term[c];
        rows[1 + 3 * i + j] = acc;
      }
    }
  }

  double m[10][20];
  double max_abs = 0.0;
  for (int r = 0; r < 10; ++r) {
    for (int c = 0; c < 20; ++c) {
      m[r][c] = rows[r][c];
      max_abs = std::max(max_abs, std::abs(m[r][c]));
    }
  }

  // Gauss-Jordan with partial pivoting over the first ten columns.
  for (int col = 0; col < 10; ++col) {
    int piv = col;
    for (int r = col + 1; r < 10; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    }
    if (std::abs(m[piv][col]) < 1e-12 * std::max(1.0, max_abs)) {
      throw DegeneracyError("five_point constraint elimination collapsed");
    }
    if (piv != col) std::swap_ranges(m[piv], m[piv] + 20, m[col]);
    const double inv = 1.0 / m[col][col];
    for (int c = col; c < 20; ++c) m[col][c] *= inv;
    for (int r = 0; r < 10; ++r) {
      if (r == col) continue;
      const double f = m[r][col];
      if (f == 0.0) continue;
      for (int c = col; c < 20; ++c) m[r][c] -= f * m[col][c];
    }
  }

  // Reduced rows 4..9 carry leading monomials x2z, x2, y2z, y2, xyz, xy. The
  // combinations row(a) - z row(a+1) eliminate the quadratic terms and leave
  // px(z) x + py(z) y + p1(z) = 0 with tails over
  // [xz2, xz, x, yz2, yz, y, z3, z2, z, 1].
  auto make_row = [&m](int er, int fr) {
    const double* t = &m[er][10];
    const double* f = &m[fr][10];
    RowPoly rp;
    rp.px = {t[2], t[1] - f[2], t[0] - f[1], -f[0]};
    rp.py = {t[5], t[4] - f[5], t[3] - f[4], -f[3]};
    rp.p1 = {t[9], t[8] - f[9], t[7] - f[8], t[6] - f[7], -f[6]};
    return rp;
  };
  const RowPoly rk = make_row(4, 5);
  const RowPoly rl = make_row(6, 7);
  const RowPoly rm = make_row(8, 9);

  // det of the 3x3 polynomial matrix [rk; rl; rm] over columns (x, y, 1).
  std::vector<double> det10 = padd(
      psub(pmul(rk.px, psub(pmul(rl.py, rm.p1), pmul(rl.p1, rm.py))),
           pmul(rk.py, psub(pmul(rl.px, rm.p1), pmul(rl.p1, rm.px)))),
      pmul(rk.p1, psub(pmul(rl.px, rm.py), pmul(rl.py, rm.px))));

  double pmax = 0.0;
  for (double c : det10) pmax = std::max(pmax, std::abs(c));
  if (pmax == 0.0) {
    throw DegeneracyError("five_point solution space is not zero dimensional");
  }
  for (auto& c : det10) c /= pmax;
  int deg = static_cast<int>(det10.size()) - 1;
  while (deg > 0 && std::abs(det10[static_cast<std::size_t>(deg)]) < 1e-12) --deg;
  std::vector<EssentialMatrix> out;
  if (deg == 0) return out;

  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
  for (int i = 0; i < deg; ++i) {
    comp(i, deg - 1) = -det10[static_cast<std::size_t>(i)] / det10[static_cast<std::size_t>(deg)];
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp);
  if (es.info() != Eigen::Success) return out;

  const std::vector<double> det10d = pderiv(det10);
  for (int i = 0; i < deg; ++i) {
    const auto ev = es.eigenvalues()(i);
    // Near-double real roots surface as conjugate pairs with noticeable
    // imaginary parts; admit them generously and let the manifold polish plus
    // the exact epipolar and residual filters below reject impostors.
    if (std::abs(ev.imag()) > 1e-2 * (1.0 + std::abs(ev.real()))) continue;
    double z = ev.real();
    // Newton polish while the residual keeps shrinking.
    double pv = std::abs(peval(det10, z));
    for (int it = 0; it < 20 && pv > 0.0; ++it) {
      const double d = peval(det10d, z);
      if (d == 0.0) break;
      const double z2 = z - peval(det10, z) / d;
      const double pv2 = std::abs(peval(det10, z2));
      if (pv2 >= pv) break;
      z = z2;
      pv = pv2;
    }

    Eigen::Matrix3d b;
    b << peval(rk.px, z), peval(rk.py, z), peval(rk.p1, z),
        peval(rl.px, z), peval(rl.py, z), peval(rl.p1, z),
        peval(rm.px, z), peval(rm.py, z), peval(rm.p1, z);
    Eigen::JacobiSVD<Eigen::Matrix3d> bsvd(b, Eigen::ComputeFullV);
    const Eigen::Vector3d v = bsvd.matrixV().col(2);
    if (std::abs(v(2)) < 1e-12) continue;
    const double x = v(0) / v(2);
    const double y = v(1) / v(2);

    const Eigen::Vector4d coeffs =
        polish_null_coeffs(null_basis, Eigen::Vector4d(x, y, z, 1.0));
    Eigen::Matrix3d emat = unstack(null_basis * coeffs);
    const double norm = emat.norm();
    if (!(norm > 0.0) || !emat.allFinite()) continue;
    emat /= norm;

    if (max_epipolar_residual(emat, pairs) > 1e-8) continue;
    if (std::abs(emat.determinant()) > 1e-8) continue;
    if (trace_constraint_residual(emat) > 1e-6) continue;

    bool duplicate = false;
    for (const auto& prev : out) {
      if (std::min((prev.E - emat).norm(), (prev.E + emat).norm()) < 1e-6) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) out.push_back({emat});
  }
  return out;
}

double sampson_distance(const Eigen::Matrix3d& e, const PointPair& p) {
  const Eigen::Vector3d xa(p.xa, p.ya, 1.0);
  const Eigen::Vector3d xb(p.xb, p.yb, 1.0);
  const Eigen::Vector3d ea = e * xa;
  const Eigen::Vector3d etb = e.transpose() * xb;
  const double num = xb.dot(ea);
  const double den = ea(0) * ea(0) + ea(1) * ea(1) + etb(0) * etb(0) + etb(1) * etb(1);
  if (den <= 0.0) return std::numeric_limits<double>::infinity();
  return num * num / den;
}

namespace {

// Signed first-order geometric epipolar error, the square root of
// sampson_distance carrying the sign of the algebraic residual.
double signed_sampson(const Eigen::Matrix3d& e, const PointPair& p) {
  const Eigen::Vector3d xa(p.xa, p.ya, 1.0);
  const Eigen::Vector3d xb(p.xb, p.yb, 1.0);
  const Eigen::Vector3d ea = e * xa;
  const Eigen::Vector3d etb = e.transpose() * xb;
  const double den = ea(0) * ea(0) + ea(1) * ea(1) + etb(0) * etb(0) + etb(1) * etb(1);
  if (den <= 0.0) return 0.0;
  return xb.dot(ea) / std::sqrt(den);
}

Eigen::Matrix3d exp_so3(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  if (theta < 1e-12) return Eigen::Matrix3d::Identity() + skew(w);
  return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

// Levenberg-damped Gauss-Newton over a minimal essential parameterization:
// so(3) increment on R and a 2D tangent step on unit t, with forward
// difference Jacobians. With cauchy_c > 0 the residuals are reweighted each
// outer iteration by the Cauchy influence 1/(1 + (s/c)^2), frozen within the
// iteration (IRLS); cauchy_c = 0 is plain least squares. Only cost-reducing
// steps are taken, so the pair (r, t) never gets worse under the iteration's
// own weights.
void lm_refine_rt(Eigen::Matrix3d& r, Eigen::Vector3d& t, const std::vector<PointPair>& pairs,
                  double cauchy_c, int iters) {
  const std::size_t n = pairs.size();
  const double h = 1e-7;
  std::vector<double> w(n, 1.0);
  const auto weighted_cost = [&](const Eigen::Matrix3d& rr, const Eigen::Vector3d& tt) {
    const Eigen::Matrix3d ee = skew(tt) * rr;
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = signed_sampson(ee, pairs[i]);
      cost += w[i] * s * s;
    }
    return cost;
  };
  double lambda = 1e-3;
  for (int it = 0; it < iters; ++it) {
    const Eigen::Matrix3d e0 = skew(t) * r;
    if (cauchy_c > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        const double s = signed_sampson(e0, pairs[i]) / cauchy_c;
        w[i] = 1.0 / (1.0 + s * s);
      }
    }
    Eigen::Vector3d u1 = t.cross(Eigen::Vector3d::UnitX());
    if (u1.norm() < 1e-6) u1 = t.cross(Eigen::Vector3d::UnitY());
    u1.normalize();
    const Eigen::Vector3d u2 = t.cross(u1);

    Eigen::MatrixXd jac(n, 5);
    Eigen::VectorXd res(n);
    for (std::size_t i = 0; i < n; ++i) {
      res(static_cast<Eigen::Index>(i)) = std::sqrt(w[i]) * signed_sampson(e0, pairs[i]);
    }
    for (int c = 0; c < 5; ++c) {
      Eigen::Matrix3d rp = r;
      Eigen::Vector3d tp = t;
      if (c < 3) {
        Eigen::Vector3d dw = Eigen::Vector3d::Zero();
        dw(c) = h;
        rp = r * exp_so3(dw);
      } else {
        tp = (t + h * (c == 3 ? u1 : u2)).normalized();
      }
      const Eigen::Matrix3d ep = skew(tp) * rp;
      for (std::size_t i = 0; i < n; ++i) {
        jac(static_cast<Eigen::Index>(i), c) =
            (std::sqrt(w[i]) * signed_sampson(ep, pairs[i]) - res(static_cast<Eigen::Index>(i))) /
            h;
      }
    }
    const Eigen::Matrix<double, 5, 5> jtj = jac.transpose() * jac;
    const Eigen::Matrix<double, 5, 1> jtr = jac.transpose() * res;
    const double base = weighted_cost(r, t);

    bool accepted = false;
    bool converged = false;
    for (int tries = 0; tries < 8 && !accepted; ++tries) {
      Eigen::Matrix<double, 5, 5> a = jtj;
      for (int d = 0; d < 5; ++d) a(d, d) += lambda * (jtj(d, d) + 1e-12);
      const Eigen::Matrix<double, 5, 1> delta = a.ldlt().solve(-jtr);
      const Eigen::Matrix3d rn = r * exp_so3(delta.head<3>());
      const Eigen::Vector3d tn = (t + delta(3) * u1 + delta(4) * u2).normalized();
      const double cost = weighted_cost(rn, tn);
      if (cost < base) {
        r = rn;
        t = tn;
        lambda = std::max(lambda * 0.3, 1e-9);
        accepted = true;
        converged = base - cost < 1e-15 * (cost + 1e-30);
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted || converged) break;
  }
}

// Cauchy-robust polish of a model on a fit set; the input is returned
// unchanged when its cheirality decomposition is ambiguous.
Eigen::Matrix3d irls_polish(const Eigen::Matrix3d& e, const std::vector<PointPair>& fit,
                            double cauchy_c) {
  EssentialMatrix em{e / e.norm()};
  Pose pose;
  try {
    pose = decompose_essential(em, fit);
  } catch (const AmbiguityError&) {
    return em.E;
  }
  Eigen::Matrix3d r = pose.R;
  Eigen::Vector3d t = pose.t.normalized();
  lm_refine_rt(r, t, fit, cauchy_c, 30);
  Eigen::Matrix3d out = skew(t) * r;
  out /= out.norm();
  return out;
}

}  // namespace

RansacResult ransac_essential(const std::vector<PointPair>& pairs, double threshold,
                              double confidence, int max_iter, std::uint64_t seed) {
  const std::size_t n = pairs.size();
  if (n < 5) throw ContractViolation("ransac_essential needs at least 5 pairs");
  if (!(threshold > 0.0)) throw ContractViolation("ransac threshold must be positive");
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw ContractViolation("ransac confidence must be in (0, 1)");
  }
  if (max_iter < 1) throw ContractViolation("ransac max_iter must be positive");

  SeededRng rng(seed);
  // Cauchy kernel scale for the robust polish stages, about a third of the
  // inlier band so borderline pseudo-inliers lose most of their influence.
  const double kernel_c = std::sqrt(threshold) / 3.0;
  // Total Cauchy loss over every pair; breaks ties between models whose
  // inlier counts saturate at the same value.
  const auto robust_cost = [&](const Eigen::Matrix3d& m) {
    const double c2 = kernel_c * kernel_c;
    double cost = 0.0;
    for (const auto& p : pairs) cost += std::log1p(sampson_distance(m, p) / c2);
    return cost;
  };
  RansacResult best;
  best.inlier_mask.assign(n, 0);
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<char> mask(n, 0);
  std::vector<PointPair> sample(5);
  int needed = max_iter;
  int it = 0;
  while (it < needed) {
    ++it;
    std::array<std::size_t, 5> idx{};
    int got = 0;
    while (got < 5) {
      const std::size_t c = rng.uniform_index(n);
      bool dup = false;
      for (int s = 0; s < got; ++s) {
        if (idx[static_cast<std::size_t>(s)] == c) {
          dup = true;
          break;
        }
      }
      if (!dup) idx[static_cast<std::size_t>(got++)] = c;
    }
    for (int s = 0; s < 5; ++s) sample[static_cast<std::size_t>(s)] = pairs[idx[static_cast<std::size_t>(s)]];

    std::vector<EssentialMatrix> candidates;
    try {
      candidates = five_point(sample);
    } catch (const DegeneracyError&) {
      ++best.degenerate_samples;
      continue;
    }
    for (const auto& cand : candidates) {
      int count = count_inliers(cand.E, pairs, threshold, &mask);
      if (count < best.n_inliers || count < 5) continue;
      Eigen::Matrix3d model = cand.E;
      // Local optimization: polish every candidate that matches the count
      // lead on its own consensus and let the polished model compete by the
      // same inlier count, which lifts models near the true one to their
      // full consensus.
      if (count >= 8) {
        std::vector<PointPair> consensus;
        consensus.reserve(static_cast<std::size_t>(count));
        for (std::size_t i = 0; i < n; ++i) {
          if (mask[i]) consensus.push_back(pairs[i]);
        }
        const Eigen::Matrix3d polished = irls_polish(model, consensus, kernel_c);
        std::vector<char> pmask(n, 0);
        const int pcount = count_inliers(polished, pairs, threshold, &pmask);
        if (pcount >= count) {
          model = polished;
          mask = pmask;
          count = pcount;
        }
      }
      const double cost = robust_cost(model);
      if (count == best.n_inliers && cost >= best_cost) continue;
      best.n_inliers = count;
      best.e = {model};
      best.inlier_mask = mask;
      best_cost = cost;
      const double w = static_cast<double>(count) / static_cast<double>(n);
      const double p5 = w * w * w * w * w;
      if (p5 >= 1.0 - 1e-12) {
        needed = it;
      } else if (p5 > 0.0) {
        const double bound = std::log(1.0 - confidence) / std::log(1.0 - p5);
        const int bound_it =
            bound >= static_cast<double>(max_iter) ? max_iter : static_cast<int>(std::ceil(bound));
        needed = std::min(max_iter, std::max(it, bound_it));
      }
    }
  }
  best.iterations = it;
  if (best.n_inliers < 5) {
    if (best.degenerate_samples == it) {
      throw DegeneracyError("every RANSAC sample was degenerate");
    }
    throw EstimationFailed("no essential matrix reached 5 inliers");
  }

  // Linear refit over the consensus set, projected back onto the essential
  // manifold; adopted only when it keeps the consensus at least as large.
  if (best.n_inliers >= 8) {
    std::vector<PointPair> inliers;
    inliers.reserve(static_cast<std::size_t>(best.n_inliers));
    for (std::size_t i = 0; i < n; ++i) {
      if (best.inlier_mask[i]) inliers.push_back(pairs[i]);
    }
    const Eigen::Matrix<double, Eigen::Dynamic, 9> q = epipolar_design(inliers);
    Eigen::JacobiSVD<Eigen::Matrix<double, Eigen::Dynamic, 9>> svd(q, Eigen::ComputeFullV);
    const Eigen::Matrix3d lin = unstack(svd.matrixV().col(8));
    Eigen::JacobiSVD<Eigen::Matrix3d> esvd(lin, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double s = 1.0 / std::sqrt(2.0);
    const Eigen::Matrix3d refit = esvd.matrixU() * Eigen::Vector3d(s, s, 0.0).asDiagonal() *
                                  esvd.matrixV().transpose();
    const int count = count_inliers(refit, pairs, threshold, &mask);
    if (count >= best.n_inliers) {
      best.n_inliers = count;
      best.e = {refit};
      best.inlier_mask = mask;
    }
  }

  // Robust polish on the consensus set; a pass is adopted with its recounted
  // mask only when the consensus does not shrink.
  for (int pass = 0; pass < 2 && best.n_inliers >= 8; ++pass) {
    std::vector<PointPair> inliers;
    inliers.reserve(static_cast<std::size_t>(best.n_inliers));
    for (std::size_t i = 0; i < n; ++i) {
      if (best.inlier_mask[i]) inliers.push_back(pairs[i]);
    }
    const Eigen::Matrix3d refined = irls_polish(best.e.E, inliers, kernel_c);
    const int count = count_inliers(refined, pairs, threshold, &mask);
    if (count < best.n_inliers) break;
    const bool grew = count > best.n_inliers;
    best.n_inliers = count;
    best.e = {refined};
    best.inlier_mask = mask;
    if (!grew) break;
  }

  // Final refit over every pair under the Cauchy kernel; gross outliers carry
  // negligible weight, while points just beyond the hard threshold still pull
  // the model instead of being truncated away.
  if (best.n_inliers >= 8) {
    const Eigen::Matrix3d refit = irls_polish(best.e.E, pairs, kernel_c);
    const int count = count_inliers(refit, pairs, threshold, &mask);
    if (count >= 5) {
      best.n_inliers = count;
      best.e = {refit};
      best.inlier_mask = mask;
    }
  }
  return best;
}

Pose decompose_essential(const EssentialMatrix& e, const std::vector<PointPair>& inliers) {
  if (inliers.empty()) throw ContractViolation("decompose_essential needs at least one pair");
  e.validate();

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e.E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Eigen::Matrix3d w;
  w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Eigen::Matrix3d r1 = u * w * v.transpose();
  const Eigen::Matrix3d r2 = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2);
  const std::array<Pose, 4> candidates = {
      Pose{r1, t}, Pose{r1, -t}, Pose{r2, t}, Pose{r2, -t}};

  std::array<int, 4> counts{};
  for (int c = 0; c < 4; ++c) {
    const Eigen::Matrix3d& r = candidates[static_cast<std::size_t>(c)].R;
    const Eigen::Vector3d& tc = candidates[static_cast<std::size_t>(c)].t;
    for (const auto& p : inliers) {
      // DLT triangulation with P1 = [I | 0], P2 = [R | t].
      Eigen::Matrix4d a;
      a.row(0) << -1.0, 0.0, p.xa, 0.0;
      a.row(1) << 0.0, -1.0, p.ya, 0.0;
      Eigen::Matrix<double, 3, 4> p2;
      p2.leftCols<3>() = r;
      p2.col(3) = tc;
      a.row(2) = p.xb * p2.row(2) - p2.row(0);
      a.row(3) = p.yb * p2.row(2) - p2.row(1);
      Eigen::JacobiSVD<Eigen::Matrix4d> tsvd(a, Eigen::ComputeFullV);
      const Eigen::Vector4d x = tsvd.matrixV().col(3);
      if (std::abs(x(3)) < 1e-12 * x.norm()) continue;
      const Eigen::Vector3d pt = x.head<3>() / x(3);
      const double za = pt(2);
      const double zb = (r * pt + tc)(2);
      if (za > 0.0 && zb > 0.0) ++counts[static_cast<std::size_t>(c)];
    }
  }

  int best = 0;
  for (int c = 1; c < 4; ++c) {
    if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
  }
  for (int c = 0; c < 4; ++c) {
    if (c != best && counts[static_cast<std::size_t>(c)] == counts[static_cast<std::size_t>(best)]) {
      throw AmbiguityError("cheirality tie between pose candidates, depth counts " +
                           std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" +
                           std::to_string(counts[2]) + "/" + std::to_string(counts[3]));
    }
  }
  Pose pose = candidates[static_cast<std::size_t>(best)];
  pose.validate();
  return pose;
}

EssentialMatrix refine_essential(const EssentialMatrix& e,
                                 const std::vector<PointPair>& pairs) {
  if (pairs.empty()) throw ContractViolation("refine_essential needs at least one pair");
  EssentialMatrix start = e;
  start.E /= start.E.norm();
  Pose pose;
  try {
    pose = decompose_essential(start, pairs);
  } catch (const AmbiguityError&) {
    return start;
  }
  Eigen::Matrix3d r = pose.R;
  Eigen::Vector3d t = pose.t.normalized();
  lm_refine_rt(r, t, pairs, 0.0, 25);
  EssentialMatrix out;
  out.E = skew(t) * r;
  out.E /= out.E.norm();
  return out;
}

double rotation_error(const Eigen::Matrix3d& r, const Eigen::Matrix3d& r_hat) {
  check_rotation(r, "rotation_error first argument");
  check_rotation(r_hat, "rotation_error second argument");
  const double trace = (r.transpose() * r_hat).trace();
  return std::acos(std::clamp((trace - 1.0) / 2.0, -1.0, 1.0));
}

double translation_error(const Eigen::Vector3d& t, const Eigen::Vector3d& t_hat) {
  const double nh = t_hat.norm();
  if (nh == 0.0) throw ContractViolation("estimated translation has zero norm");
  const double nt = t.norm();
  if (nt == 0.0) return 0.0;
  return (t_hat * (nt / nh) - t).norm();
}

std::vector<BinRatio> success_ratios(const std::vector<PairOutcome>& outcomes,
                                     double theta_r, double theta_t,
                                     const std::vector<double>& bins) {
  if (bins.size() < 2) throw ContractViolation("success_ratios needs at least two bin edges");
  for (std::size_t i = 0; i + 1 < bins.size(); ++i) {
    if (!(bins[i] < bins[i + 1])) {
      throw ContractViolation("bin edges must be strictly increasing");
    }
  }
  std::vector<BinRatio> out(bins.size() - 1);
  std::vector<int> rot_hits(out.size(), 0), trans_hits(out.size(), 0);
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b].lo = bins[b];
    out[b].hi = bins[b + 1];
  }
  for (const auto& o : outcomes) {
    for (std::size_t b = 0; b < out.size(); ++b) {
      if (o.distance >= out[b].lo && o.distance < out[b].hi) {
        ++out[b].n_pairs;
        if (o.estimated && o.errors.r_err < theta_r) ++rot_hits[b];
        if (o.estimated && o.errors.t_err < theta_t * o.distance) ++trans_hits[b];
        break;
      }
    }
  }
  for (std::size_t b = 0; b < out.size(); ++b) {
    if (out[b].n_pairs > 0) {
      out[b].populated = true;
      out[b].rot_success = static_cast<double>(rot_hits[b]) / out[b].n_pairs;
      out[b].trans_success = static_cast<double>(trans_hits[b]) / out[b].n_pairs;
    }
  }
  return out;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v(2), v(1), v(2), 0.0, -v(0), -v(1), v(0), 0.0;
  return m;
}

EssentialMatrix essential_from_rt(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
  Eigen::Matrix3d e = skew(t) * r;
  const double norm = e.norm();
  if (!(norm > 0.0)) throw ContractViolation("essential matrix from zero translation");
  return {e / norm};
}

}  // namespace ncmatch
