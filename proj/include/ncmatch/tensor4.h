#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ncmatch/errors.h"

namespace ncmatch {

// Default refusal limit for tensor allocations, in value count.
inline constexpr std::size_t kDefaultElementCap = std::size_t{1} << 30;

// Dense 4D tensor over the cell-pair index space (a, b, c, d), stored
// row-major in that order with an innermost channel axis.
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(std::array<int, 4> dims, int channels,
          std::size_t element_cap = kDefaultElementCap);

  // Validates dims/channels and returns a*b*c*d*channels, or throws
  // CapacityError when it exceeds element_cap (overflow-checked).
  static std::size_t checked_element_count(std::array<int, 4> dims, int channels,
                                           std::size_t element_cap);

  const std::array<int, 4>& dims() const { return dims_; }
  int channels() const { return channels_; }
  std::size_t size() const { return values_.size(); }

  std::size_t index(int i, int j, int k, int l, int q = 0) const {
    return ((((static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k) *
                 dims_[3] +
             l) *
                channels_ +
            q);
  }

  double at(int i, int j, int k, int l, int q = 0) const {
    return values_[index(i, j, k, l, q)];
  }
  double& at(int i, int j, int k, int l, int q = 0) {
    return values_[index(i, j, k, l, q)];
  }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool all_finite() const;
  double sum_of_squares() const;

 private:
  std::array<int, 4> dims_{0, 0, 0, 0};
  int channels_ = 0;
  std::vector<double> values_;
};

// One 4D convolution layer: isotropic odd kernel k^4, dense weights in
// (out, in, k, k, k, k) order plus one bias per output channel.
struct Conv4Kernel {
  int k = 1;
  int in_channels = 1;
  int out_channels = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  std::size_t weight_index(int o, int i, int ka, int kb, int kc, int kd) const {
    return ((((static_cast<std::size_t>(o) * in_channels + i) * k + ka) * k + kb) * k +
            kc) *
               k +
           kd;
  }

  void validate() const;

  // Identity kernel: center tap 1, everything else 0.
  static Conv4Kernel delta(int k = 1, int channels = 1);
};

// Ordered conv layers with a rectifier between them (not after the last).
struct Conv4Stack {
  std::vector<Conv4Kernel> layers;

  void validate() const;
  int max_channels() const;

  static Conv4Stack delta(int k = 1);

  // Untrained default: three layers, kernel 3, channels 1-16-16-1, with
  // non-negative averaging weights drawn from the given seed. Non-negative
  // weights keep the stack a local smoothing operator, so filtering without
  // trained parameters still preserves score structure.
  static Conv4Stack seeded_default(std::uint64_t seed);
  static Conv4Stack seeded_random(std::uint64_t seed, const std::vector<int>& channels,
                                  int k);
};

// Zero-padded, stride-1 4D cross-correlation; output dims equal input dims.
Tensor4 conv4d(const Tensor4& input, const Conv4Kernel& kernel, int threads = 1,
               std::size_t element_cap = kDefaultElementCap);

// Applies the layers in order with max(0, .) between them.
Tensor4 conv4d_stack(const Tensor4& input, const Conv4Stack& stack, int threads = 1,
                     std::size_t element_cap = kDefaultElementCap);

// Swaps the (a, b) and (c, d) index pairs: out[k,l,i,j] = in[i,j,k,l].
Tensor4 transpose_pairs(const Tensor4& input);

// Binary weight file, magic "NCNW"; per layer k, in, out as u32 LE followed by
// weights and bias as f32 LE in the documented index order.
void save_conv4_stack(const std::string& path, const Conv4Stack& stack);
Conv4Stack load_conv4_stack(const std::string& path);

}  // namespace ncmatch
