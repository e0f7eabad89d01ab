#include "ncmatch/consensus.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "ncmatch/parallel.h"

namespace ncmatch {

DescriptorMap::DescriptorMap(int h, int w, int dim) : h_(h), w_(w), dim_(dim) {
  if (h <= 0 || w <= 0 || dim <= 0) {
    throw ContractViolation("descriptor map dims must be positive");
  }
  values_.assign(static_cast<std::size_t>(h) * w * dim, 0.0);
  // start from valid unit descriptors
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      renormalize_cell(values_.data() + (static_cast<std::size_t>(i) * w + j) * dim);
    }
  }
}

DescriptorMap DescriptorMap::from_raw(int h, int w, int dim,
                                      std::vector<double> values) {
  if (h <= 0 || w <= 0 || dim <= 0) {
    throw ContractViolation("descriptor map dims must be positive");
  }
  if (values.size() != static_cast<std::size_t>(h) * w * dim) {
    throw ContractViolation("descriptor value count does not match h*w*dim");
  }
  DescriptorMap map(h, w, dim);
  map.values_ = std::move(values);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      map.renormalize_cell(map.values_.data() +
                           (static_cast<std::size_t>(i) * w + j) * dim);
    }
  }
  return map;
}

void DescriptorMap::set_cell(int i, int j, const std::vector<double>& descriptor) {
  if (i < 0 || i >= h_ || j < 0 || j >= w_) {
    throw ContractViolation("descriptor cell index out of range");
  }
  if (descriptor.size() != static_cast<std::size_t>(dim_)) {
    throw ContractViolation("descriptor length mismatch");
  }
  double* d = values_.data() + (static_cast<std::size_t>(i) * w_ + j) * dim_;
  std::copy(descriptor.begin(), descriptor.end(), d);
  renormalize_cell(d);
}

void DescriptorMap::renormalize_cell(double* d) {
  double norm2 = 0.0;
  for (int q = 0; q < dim_; ++q) norm2 += d[q] * d[q];
  if (norm2 <= 0.0 || !std::isfinite(norm2)) {
    const double u = 1.0 / std::sqrt(static_cast<double>(dim_));
    for (int q = 0; q < dim_; ++q) d[q] = u;
    return;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (int q = 0; q < dim_; ++q) d[q] *= inv;
}

double DescriptorMap::max_norm_error() const {
  double worst = 0.0;
  for (int i = 0; i < h_; ++i) {
    for (int j = 0; j < w_; ++j) {
      const double* d = cell(i, j);
      double norm2 = 0.0;
      for (int q = 0; q < dim_; ++q) norm2 += d[q] * d[q];
      worst = std::max(worst, std::abs(std::sqrt(norm2) - 1.0));
    }
  }
  return worst;
}

Tensor4 correlate(const DescriptorMap& fa, const DescriptorMap& fb, int threads,
                  std::size_t element_cap) {
  if (fa.dim() != fb.dim()) {
    throw ContractViolation("descriptor length mismatch: " + std::to_string(fa.dim()) +
                            " vs " + std::to_string(fb.dim()));
  }
  Tensor4 out({fa.h(), fa.w(), fb.h(), fb.w()}, 1, element_cap);
  const int dim = fa.dim();
  const std::size_t cells_a = static_cast<std::size_t>(fa.h()) * fa.w();
  const std::size_t cells_b = static_cast<std::size_t>(fb.h()) * fb.w();
  double* dst = out.values().data();
  parallel_for(cells_a, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t sa = begin; sa < end; ++sa) {
      const double* da = fa.values().data() + sa * dim;
      double* row = dst + sa * cells_b;
      for (std::size_t sb = 0; sb < cells_b; ++sb) {
        const double* db = fb.values().data() + sb * dim;
        double dot = 0.0;
        for (int q = 0; q < dim; ++q) dot += da[q] * db[q];
        row[sb] = dot;
      }
    }
  });
  return out;
}

Tensor4 soft_mutual_nn(const Tensor4& c) {
  if (c.channels() != 1) throw ContractViolation("soft_mutual_nn expects one channel");
  const auto& d = c.dims();
  const std::size_t na = static_cast<std::size_t>(d[0]) * d[1];
  const std::size_t nb = static_cast<std::size_t>(d[2]) * d[3];
  const double* v = c.values().data();

  std::vector<double> max_over_a(nb, 0.0);  // per (k, l)
  std::vector<double> max_over_b(na, 0.0);  // per (i, j)
  for (std::size_t sa = 0; sa < na; ++sa) {
    const double* row = v + sa * nb;
    double row_max = 0.0;
    for (std::size_t sb = 0; sb < nb; ++sb) {
      const double x = row[sb];
      if (x < 0.0) throw ContractViolation("soft_mutual_nn input must be non-negative");
      row_max = std::max(row_max, x);
      max_over_a[sb] = std::max(max_over_a[sb], x);
    }
    max_over_b[sa] = row_max;
  }

  Tensor4 out(d, 1);
  double* o = out.values().data();
  for (std::size_t sa = 0; sa < na; ++sa) {
    const double* row = v + sa * nb;
    double* orow = o + sa * nb;
    const double mb = max_over_b[sa];
    for (std::size_t sb = 0; sb < nb; ++sb) {
      const double ma = max_over_a[sb];
      // a max of exactly 0 forces the whole slice to 0
      orow[sb] = (ma > 0.0 && mb > 0.0) ? row[sb] * (row[sb] / ma) * (row[sb] / mb) : 0.0;
    }
  }
  return out;
}

Tensor4 ncn_filter(const Tensor4& c, const Conv4Stack& stack, int threads,
                   std::size_t element_cap, int passes) {
  if (c.channels() != 1) throw ContractViolation("ncn_filter expects one channel");
  if (passes < 1) throw ContractViolation("ncn_filter passes must be >= 1");
  Tensor4 current = c;
  for (int pass = 0; pass < passes; ++pass) {
    Tensor4 direct = conv4d_stack(current, stack, threads, element_cap);
    Tensor4 swapped = transpose_pairs(
        conv4d_stack(transpose_pairs(current), stack, threads, element_cap));
    for (std::size_t idx = 0; idx < direct.size(); ++idx) {
      direct.values()[idx] =
          std::max(0.0, direct.values()[idx] + swapped.values()[idx]);
    }
    current = soft_mutual_nn(direct);
  }
  return current;
}

ScoreTensors match_scores(const Tensor4& c, SbConvention sb) {
  if (c.channels() != 1) throw ContractViolation("match_scores expects one channel");
  for (double v : c.values()) {
    if (!std::isfinite(v)) throw ContractViolation("match_scores input must be finite");
  }
  const auto& d = c.dims();
  const std::size_t na = static_cast<std::size_t>(d[0]) * d[1];
  const std::size_t nb = static_cast<std::size_t>(d[2]) * d[3];
  const double* v = c.values().data();

  ScoreTensors s{Tensor4(d, 1), Tensor4(d, 1)};

  // sA: softmax over image-A cells for each fixed (k, l), stabilized by the
  // slice max.
  for (std::size_t sb_idx = 0; sb_idx < nb; ++sb_idx) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t sa = 0; sa < na; ++sa) m = std::max(m, v[sa * nb + sb_idx]);
    double denom = 0.0;
    for (std::size_t sa = 0; sa < na; ++sa) denom += std::exp(v[sa * nb + sb_idx] - m);
    for (std::size_t sa = 0; sa < na; ++sa) {
      s.sA.values()[sa * nb + sb_idx] = std::exp(v[sa * nb + sb_idx] - m) / denom;
    }
  }

  if (sb == SbConvention::kLiteral) {
    // literal printed formula reuses the A-side denominator
    s.sB.values() = s.sA.values();
    return s;
  }

  // sB: softmax over image-B cells for each fixed (i, j).
  for (std::size_t sa = 0; sa < na; ++sa) {
    const double* row = v + sa * nb;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t sb_idx = 0; sb_idx < nb; ++sb_idx) m = std::max(m, row[sb_idx]);
    double denom = 0.0;
    for (std::size_t sb_idx = 0; sb_idx < nb; ++sb_idx) denom += std::exp(row[sb_idx] - m);
    double* orow = s.sB.values().data() + sa * nb;
    for (std::size_t sb_idx = 0; sb_idx < nb; ++sb_idx) {
      orow[sb_idx] = std::exp(row[sb_idx] - m) / denom;
    }
  }
  return s;
}

double pair_loss(const ScoreTensors& s, PairLabel label) {
  if (label.y != 0 && label.y != 1) throw ContractViolation("pair label must be 0 or 1");
  if (label.y == 0) return 0.0;
  double mean_a = 0.0, mean_b = 0.0;
  for (double v : s.sA.values()) mean_a += v;
  for (double v : s.sB.values()) mean_b += v;
  mean_a /= static_cast<double>(s.sA.size());
  mean_b /= static_cast<double>(s.sB.size());
  return -(mean_a + mean_b);
}

void save_descriptor_map(const std::string& path, const DescriptorMap& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open descriptor map for writing: " + path);
  os.write("DMAP", 4);
  auto write_u32 = [&os](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  write_u32(static_cast<std::uint32_t>(map.h()));
  write_u32(static_cast<std::uint32_t>(map.w()));
  write_u32(static_cast<std::uint32_t>(map.dim()));
  for (double v : map.values()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(bits);
  }
  if (!os) throw IoError("failed writing descriptor map: " + path);
}

DescriptorMap load_descriptor_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open descriptor map: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "DMAP", 4) != 0) {
    throw IoError("bad magic in descriptor map: " + path);
  }
  auto read_u32 = [&is](std::uint32_t* v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    *v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
  };
  std::uint32_t h, w, dim;
  if (!read_u32(&h) || !read_u32(&w) || !read_u32(&dim)) {
    throw IoError("truncated header in descriptor map: " + path);
  }
  if (h == 0 || w == 0 || dim == 0 || h > 1u << 16 || w > 1u << 16 || dim > 1u << 16) {
    throw IoError("implausible descriptor map shape: " + path);
  }
  const std::size_t n = static_cast<std::size_t>(h) * w * dim;
  if (n > kDefaultElementCap) throw CapacityError("descriptor map too large: " + path);
  std::vector<double> values(n);
  for (auto& v : values) {
    std::uint32_t bits;
    if (!read_u32(&bits)) throw IoError("truncated data in descriptor map: " + path);
    float f;
    std::memcpy(&f, &bits, 4);
    if (!std::isfinite(f)) throw IoError("non-finite descriptor value in: " + path);
    v = f;
  }
  return DescriptorMap::from_raw(static_cast<int>(h), static_cast<int>(w),
                                 static_cast<int>(dim), std::move(values));
}

}  // namespace ncmatch
