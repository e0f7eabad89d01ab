#pragma once

// Deliberately naive reference implementations, written straight from the
// definitions. The tests compare the library against these.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ncmatch/keypoints.h"
#include "ncmatch/tensor4.h"

namespace oracle {

// Zero-padded stride-1 4D cross-correlation, eight nested spatial loops.
inline ncmatch::Tensor4 conv4d_naive(const ncmatch::Tensor4& x,
                                     const ncmatch::Conv4Kernel& kernel) {
  const auto& d = x.dims();
  ncmatch::Tensor4 out(d, kernel.out_channels);
  const int r = kernel.k / 2;
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int a = 0; a < d[2]; ++a)
        for (int b = 0; b < d[3]; ++b)
          for (int o = 0; o < kernel.out_channels; ++o) {
            double acc = kernel.bias[o];
            for (int p = 0; p < kernel.in_channels; ++p)
              for (int ka = 0; ka < kernel.k; ++ka)
                for (int kb = 0; kb < kernel.k; ++kb)
                  for (int kc = 0; kc < kernel.k; ++kc)
                    for (int kd = 0; kd < kernel.k; ++kd) {
                      const int ii = i + ka - r;
                      const int jj = j + kb - r;
                      const int aa = a + kc - r;
                      const int bb = b + kd - r;
                      if (ii < 0 || ii >= d[0] || jj < 0 || jj >= d[1] || aa < 0 ||
                          aa >= d[2] || bb < 0 || bb >= d[3]) {
                        continue;
                      }
                      acc += x.at(ii, jj, aa, bb, p) *
                             kernel.weights[kernel.weight_index(o, p, ka, kb, kc, kd)];
                    }
            out.at(i, j, a, b, o) = acc;
          }
  return out;
}

inline ncmatch::Tensor4 transpose_naive(const ncmatch::Tensor4& x) {
  const auto& d = x.dims();
  ncmatch::Tensor4 out({d[2], d[3], d[0], d[1]}, x.channels());
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k)
        for (int l = 0; l < d[3]; ++l)
          for (int q = 0; q < x.channels(); ++q)
            out.at(k, l, i, j, q) = x.at(i, j, k, l, q);
  return out;
}

// Scalar softmax without stabilization tricks beyond long double accumulation.
inline std::vector<double> softmax_naive(const std::vector<double>& logits) {
  long double denom = 0.0;
  for (double v : logits) denom += std::exp(static_cast<long double>(v));
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<double>(std::exp(static_cast<long double>(logits[i])) / denom);
  }
  return out;
}

// Greedy NMS by repeated global argmax on a mutable copy.
inline std::vector<ncmatch::Keypoint> nms_naive(ncmatch::KeypointResponseMap map,
                                                int radius, double threshold) {
  std::vector<ncmatch::Keypoint> out;
  while (true) {
    int by = -1, bx = -1;
    double best = 0.0;
    for (int y = 0; y < map.height; ++y) {
      for (int x = 0; x < map.width; ++x) {
        const double v = map.at(y, x);
        if (v < threshold || v <= 0.0) continue;
        if (v > best || (v == best && (by == -1 || y < by || (y == by && x < bx)))) {
          best = v;
          by = y;
          bx = x;
        }
      }
    }
    if (by < 0) break;
    out.push_back({bx, by, best});
    for (int y = std::max(0, by - radius); y <= std::min(map.height - 1, by + radius); ++y) {
      for (int x = std::max(0, bx - radius); x <= std::min(map.width - 1, bx + radius); ++x) {
        map.at(y, x) = 0.0;
      }
    }
  }
  return out;
}

inline double dist2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Brute-force Lowe ratio matching over the full distance matrix.
inline std::vector<std::pair<int, int>> knn_naive(
    const std::vector<std::vector<double>>& da, const std::vector<std::vector<double>>& db,
    double ratio) {
  std::vector<std::pair<int, int>> out;
  if (db.size() < 2) return out;
  for (std::size_t i = 0; i < da.size(); ++i) {
    int best = -1, second = -1;
    for (std::size_t j = 0; j < db.size(); ++j) {
      const double d = dist2(da[i], db[j]);
      if (best < 0 || d < dist2(da[i], db[static_cast<std::size_t>(best)])) {
        second = best;
        best = static_cast<int>(j);
      } else if (second < 0 || d < dist2(da[i], db[static_cast<std::size_t>(second)])) {
        second = static_cast<int>(j);
      }
    }
    const double d1 = std::sqrt(dist2(da[i], db[static_cast<std::size_t>(best)]));
    const double d2 = std::sqrt(dist2(da[i], db[static_cast<std::size_t>(second)]));
    if (d1 < ratio * d2) out.emplace_back(static_cast<int>(i), best);
  }
  return out;
}

}  // namespace oracle
