#pragma once

#include <utility>
#include <vector>

#include "ncmatch/consensus.h"
#include "ncmatch/keypoints.h"
#include "ncmatch/tensor4.h"

namespace ncmatch {

struct CoarseMatch {
  int ai = 0, aj = 0;  // cell in image A
  int bi = 0, bj = 0;  // cell in image B
  double score = 0.0;
};

struct Correspondence {
  double xa = 0.0, ya = 0.0;
  double xb = 0.0, yb = 0.0;
  double score = 0.0;
};

// For each A cell, the argmax B cell of the filtered tensor, kept when the
// maximum reaches min_score. Ties pick the lowest (k, l); output ordered by
// (i, j).
std::vector<CoarseMatch> coarse_matches(const Tensor4& filtered, double min_score = 0.0,
                                        int threads = 1);

// Descriptor at an arbitrary pixel position by bilinear interpolation between
// the four nearest cell centres (cell (i, j) is centred at pixel
// (16 j + 7.5, 16 i + 7.5)), L2-renormalized afterwards.
std::vector<double> interpolate_descriptor(const DescriptorMap& f, double px, double py);

// Pixel-level matches inside each coarse cell pair: block keypoints carry
// interpolated descriptors and are paired by nearest neighbour in descriptor
// space, mutually when `mutual` is set, one-way from A otherwise. Each
// correspondence scores coarse score times descriptor similarity.
std::vector<Correspondence> refine_matches(const std::vector<CoarseMatch>& coarse,
                                           const BlockKeypoints& kps_a,
                                           const BlockKeypoints& kps_b,
                                           const DescriptorMap& fa, const DescriptorMap& fb,
                                           bool mutual = true, int threads = 1);

// Lowe ratio matcher over unit descriptors: for each A entry the nearest and
// second-nearest B entries by Euclidean distance, kept iff d1 < ratio * d2,
// nearest ties resolved by lower B index. Fewer than two B entries leave the
// ratio undefined and reject everything.
std::vector<std::pair<int, int>> knn_ratio_match(const std::vector<std::vector<double>>& desc_a,
                                                 const std::vector<std::vector<double>>& desc_b,
                                                 double ratio, int threads = 1);

}  // namespace ncmatch
