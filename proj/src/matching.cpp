#include "ncmatch/matching.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ncmatch/errors.h"
#include "ncmatch/parallel.h"

namespace ncmatch {

namespace {

constexpr int kBlock = 16;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<CoarseMatch> coarse_matches(const Tensor4& filtered, double min_score,
                                        int threads) {
  if (filtered.channels() != 1) throw ContractViolation("coarse_matches needs one channel");
  const auto& dims = filtered.dims();
  const int ha = dims[0], wa = dims[1], hb = dims[2], wb = dims[3];
  const std::size_t slice = static_cast<std::size_t>(hb) * wb;
  const std::size_t n = static_cast<std::size_t>(ha) * wa;

  struct SliceBest {
    int bi = -1, bj = -1;
    double score = 0.0;
  };
  std::vector<SliceBest> best(n);
  const double* values = filtered.values().data();
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const double* v = values + s * slice;
      double m = -1.0;
      std::size_t arg = 0;
      for (std::size_t t = 0; t < slice; ++t) {
        if (v[t] < 0.0) throw ContractViolation("coarse_matches needs non-negative scores");
        if (v[t] > m) {
          m = v[t];
          arg = t;
        }
      }
      if (m >= min_score) {
        best[s] = {static_cast<int>(arg / wb), static_cast<int>(arg % wb), m};
      }
    }
  });

  std::vector<CoarseMatch> out;
  for (std::size_t s = 0; s < n; ++s) {
    if (best[s].bi < 0) continue;
    out.push_back({static_cast<int>(s) / wa, static_cast<int>(s) % wa, best[s].bi,
                   best[s].bj, best[s].score});
  }
  return out;
}

std::vector<double> interpolate_descriptor(const DescriptorMap& f, double px, double py) {
  // Grid coordinates with cell (i, j) centred at (16 j + 7.5, 16 i + 7.5).
  const double u = std::clamp((px - 7.5) / kBlock, 0.0, static_cast<double>(f.w() - 1));
  const double v = std::clamp((py - 7.5) / kBlock, 0.0, static_cast<double>(f.h() - 1));
  const int j0 = std::min(static_cast<int>(u), std::max(f.w() - 2, 0));
  const int i0 = std::min(static_cast<int>(v), std::max(f.h() - 2, 0));
  const int j1 = std::min(j0 + 1, f.w() - 1);
  const int i1 = std::min(i0 + 1, f.h() - 1);
  const double fu = u - j0;
  const double fv = v - i0;

  const double* c00 = f.cell(i0, j0);
  const double* c01 = f.cell(i0, j1);
  const double* c10 = f.cell(i1, j0);
  const double* c11 = f.cell(i1, j1);
  std::vector<double> d(f.dim());
  for (int k = 0; k < f.dim(); ++k) {
    d[k] = (1.0 - fv) * ((1.0 - fu) * c00[k] + fu * c01[k]) +
           fv * ((1.0 - fu) * c10[k] + fu * c11[k]);
  }
  double norm = std::sqrt(dot(d, d));
  if (norm <= 0.0) {
    const double uniform = 1.0 / std::sqrt(static_cast<double>(f.dim()));
    std::fill(d.begin(), d.end(), uniform);
  } else {
    for (auto& x : d) x /= norm;
  }
  return d;
}

std::vector<Correspondence> refine_matches(const std::vector<CoarseMatch>& coarse,
                                           const BlockKeypoints& kps_a,
                                           const BlockKeypoints& kps_b,
                                           const DescriptorMap& fa, const DescriptorMap& fb,
                                           bool mutual, int threads) {
  if (fa.dim() != fb.dim()) throw ContractViolation("descriptor dims differ");
  if (kps_a.block != kBlock || kps_b.block != kBlock) {
    throw ContractViolation("refine_matches expects 16x16 blocks");
  }

  std::vector<std::vector<Correspondence>> per_match(coarse.size());
  parallel_for(coarse.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t m = begin; m < end; ++m) {
      const CoarseMatch& cm = coarse[m];
      if (cm.ai < 0 || cm.ai >= kps_a.rows || cm.aj < 0 || cm.aj >= kps_a.cols ||
          cm.bi < 0 || cm.bi >= kps_b.rows || cm.bj < 0 || cm.bj >= kps_b.cols) {
        throw ContractViolation("coarse match cell outside block grid");
      }
      const auto& block_a = kps_a.at(cm.ai, cm.aj);
      const auto& block_b = kps_b.at(cm.bi, cm.bj);
      if (block_a.empty() || block_b.empty()) continue;

      std::vector<std::vector<double>> da, db;
      da.reserve(block_a.size());
      db.reserve(block_b.size());
      for (const auto& kp : block_a) da.push_back(interpolate_descriptor(fa, kp.x, kp.y));
      for (const auto& kp : block_b) db.push_back(interpolate_descriptor(fb, kp.x, kp.y));

      std::vector<int> best_b(da.size());
      for (std::size_t a = 0; a < da.size(); ++a) {
        double m_sim = -std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t b = 0; b < db.size(); ++b) {
          const double s = dot(da[a], db[b]);
          if (s > m_sim) {
            m_sim = s;
            arg = static_cast<int>(b);
          }
        }
        best_b[a] = arg;
      }
      std::vector<int> best_a(db.size());
      if (mutual) {
        for (std::size_t b = 0; b < db.size(); ++b) {
          double m_sim = -std::numeric_limits<double>::infinity();
          int arg = 0;
          for (std::size_t a = 0; a < da.size(); ++a) {
            const double s = dot(da[a], db[b]);
            if (s > m_sim) {
              m_sim = s;
              arg = static_cast<int>(a);
            }
          }
          best_a[b] = arg;
        }
      }

      for (std::size_t a = 0; a < da.size(); ++a) {
        const int b = best_b[a];
        if (mutual && best_a[b] != static_cast<int>(a)) continue;
        per_match[m].push_back({static_cast<double>(block_a[a].x),
                                static_cast<double>(block_a[a].y),
                                static_cast<double>(block_b[b].x),
                                static_cast<double>(block_b[b].y),
                                cm.score * dot(da[a], db[b])});
      }
    }
  });

  std::vector<Correspondence> out;
  for (const auto& list : per_match) out.insert(out.end(), list.begin(), list.end());
  return out;
}

std::vector<std::pair<int, int>> knn_ratio_match(const std::vector<std::vector<double>>& desc_a,
                                                 const std::vector<std::vector<double>>& desc_b,
                                                 double ratio, int threads) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ContractViolation("ratio must be in (0, 1]");
  if (desc_b.size() < 2 || desc_a.empty()) return {};
  const std::size_t dim = desc_a[0].size();
  for (const auto& d : desc_a) {
    if (d.size() != dim) throw ContractViolation("descriptor dims differ");
  }
  for (const auto& d : desc_b) {
    if (d.size() != dim) throw ContractViolation("descriptor dims differ");
  }

  std::vector<int> match(desc_a.size(), -1);
  parallel_for(desc_a.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double d1 = std::numeric_limits<double>::infinity();
      double d2 = std::numeric_limits<double>::infinity();
      int j1 = -1;
      for (std::size_t j = 0; j < desc_b.size(); ++j) {
        const double d = sq_dist(desc_a[i], desc_b[j]);
        if (d < d1) {
          d2 = d1;
          d1 = d;
          j1 = static_cast<int>(j);
        } else if (d < d2) {
          d2 = d;
        }
      }
      if (std::sqrt(d1) < ratio * std::sqrt(d2)) match[i] = j1;
    }
  });

  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < desc_a.size(); ++i) {
    if (match[i] >= 0) out.emplace_back(static_cast<int>(i), match[i]);
  }
  return out;
}

}  // namespace ncmatch
