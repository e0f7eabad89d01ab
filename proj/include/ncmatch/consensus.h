#pragma once

#include <string>
#include <vector>

#include "ncmatch/tensor4.h"

namespace ncmatch {

// Grid of unit-norm descriptors at 1/16 image resolution; one descriptor per
// 16x16 pixel block. Construction renormalizes every cell; a zero vector
// falls back to the uniform unit vector.
class DescriptorMap {
 public:
  DescriptorMap(int h, int w, int dim);
  static DescriptorMap from_raw(int h, int w, int dim, std::vector<double> values);

  int h() const { return h_; }
  int w() const { return w_; }
  int dim() const { return dim_; }

  const double* cell(int i, int j) const {
    return values_.data() + (static_cast<std::size_t>(i) * w_ + j) * dim_;
  }
  void set_cell(int i, int j, const std::vector<double>& descriptor);

  const std::vector<double>& values() const { return values_; }

  // Max deviation of any cell norm from 1.
  double max_norm_error() const;

 private:
  void renormalize_cell(double* d);

  int h_ = 0;
  int w_ = 0;
  int dim_ = 0;
  std::vector<double> values_;
};

// Softmax match scores over each image's locations; sA normalizes over
// image-A cells for a fixed (k, l), sB over image-B cells for a fixed (i, j).
struct ScoreTensors {
  Tensor4 sA;
  Tensor4 sB;
};

// Normalization convention for sB. The printed formula in the source method
// reuses the A-side denominator, which would make sB identical to sA; the
// corrected convention normalizes over the B-side axes.
enum class SbConvention {
  kNormalizedOverB,
  kLiteral,
};

struct PairLabel {
  int y = 0;  // 1 when both images show the same place
};

// All pairwise descriptor dot products: dims (hA, wA, hB, wB), one channel.
Tensor4 correlate(const DescriptorMap& fa, const DescriptorMap& fb, int threads = 1,
                  std::size_t element_cap = kDefaultElementCap);

// Rescales every score by its ratio to the row-wise and column-wise slice
// maxima, boosting reciprocal matches. Input must be non-negative.
Tensor4 soft_mutual_nn(const Tensor4& c);

// Symmetric consensus filtering followed by soft mutual filtering:
//   n = S(c) + T(S(T(c))), rectified, then soft_mutual_nn(n)
// where S is the conv stack and T swaps the image axes. `passes` repeats the
// whole sequence.
Tensor4 ncn_filter(const Tensor4& c, const Conv4Stack& stack, int threads = 1,
                   std::size_t element_cap = kDefaultElementCap, int passes = 1);

ScoreTensors match_scores(const Tensor4& c,
                          SbConvention sb = SbConvention::kNormalizedOverB);

// Weakly supervised objective: -y * (mean(sA) + mean(sB)), mean over all cells.
double pair_loss(const ScoreTensors& s, PairLabel label);

// Binary descriptor map file, magic "DMAP": h, w, dim as u32 LE then f32 LE
// descriptors row-major (h, w, dim). Loading renormalizes each cell.
void save_descriptor_map(const std::string& path, const DescriptorMap& map);
DescriptorMap load_descriptor_map(const std::string& path);

}  // namespace ncmatch
