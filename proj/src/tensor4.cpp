#include "ncmatch/tensor4.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "ncmatch/parallel.h"
#include "ncmatch/rng.h"

namespace ncmatch {

namespace {

bool mul_overflows(std::size_t a, std::size_t b, std::size_t* out) {
  if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) return true;
  *out = a * b;
  return false;
}

}  // namespace

std::size_t Tensor4::checked_element_count(std::array<int, 4> dims, int channels,
                                           std::size_t element_cap) {
  for (int d : dims) {
    if (d <= 0) throw ContractViolation("tensor dims must be positive");
  }
  if (channels <= 0) throw ContractViolation("tensor channels must be positive");
  std::size_t n = 1;
  for (int d : dims) {
    if (mul_overflows(n, static_cast<std::size_t>(d), &n)) {
      throw CapacityError("tensor element count overflows size_t");
    }
  }
  if (mul_overflows(n, static_cast<std::size_t>(channels), &n)) {
    throw CapacityError("tensor element count overflows size_t");
  }
  if (n > element_cap) {
    throw CapacityError("tensor of " + std::to_string(n) +
                        " values exceeds element cap " + std::to_string(element_cap));
  }
  return n;
}

Tensor4::Tensor4(std::array<int, 4> dims, int channels, std::size_t element_cap)
    : dims_(dims), channels_(channels) {
  values_.assign(checked_element_count(dims, channels, element_cap), 0.0);
}

bool Tensor4::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor4::sum_of_squares() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

void Conv4Kernel::validate() const {
  if (k <= 0 || k % 2 == 0) throw ContractViolation("kernel size must be odd positive");
  if (in_channels <= 0 || out_channels <= 0) {
    throw ContractViolation("kernel channels must be positive");
  }
  const std::size_t k4 = static_cast<std::size_t>(k) * k * k * k;
  if (weights.size() != static_cast<std::size_t>(out_channels) * in_channels * k4) {
    throw ContractViolation("kernel weight count does not match out*in*k^4");
  }
  if (bias.size() != static_cast<std::size_t>(out_channels)) {
    throw ContractViolation("kernel bias count does not match out_channels");
  }
}

Conv4Kernel Conv4Kernel::delta(int k, int channels) {
  Conv4Kernel kernel;
  kernel.k = k;
  kernel.in_channels = channels;
  kernel.out_channels = channels;
  const std::size_t k4 = static_cast<std::size_t>(k) * k * k * k;
  kernel.weights.assign(static_cast<std::size_t>(channels) * channels * k4, 0.0);
  kernel.bias.assign(channels, 0.0);
  const int c = k / 2;
  for (int q = 0; q < channels; ++q) {
    kernel.weights[kernel.weight_index(q, q, c, c, c, c)] = 1.0;
  }
  return kernel;
}

void Conv4Stack::validate() const {
  if (layers.empty()) throw ContractViolation("conv stack must have at least one layer");
  for (const auto& layer : layers) layer.validate();
  if (layers.front().in_channels != 1) {
    throw ContractViolation("conv stack must start with in_channels == 1");
  }
  if (layers.back().out_channels != 1) {
    throw ContractViolation("conv stack must end with out_channels == 1");
  }
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    if (layers[i].out_channels != layers[i + 1].in_channels) {
      throw ContractViolation("conv stack channel chain mismatch at layer " +
                              std::to_string(i + 1));
    }
  }
}

int Conv4Stack::max_channels() const {
  int m = 1;
  for (const auto& layer : layers) {
    m = std::max(m, std::max(layer.in_channels, layer.out_channels));
  }
  return m;
}

Conv4Stack Conv4Stack::delta(int k) {
  Conv4Stack stack;
  stack.layers.push_back(Conv4Kernel::delta(k, 1));
  return stack;
}

Conv4Stack Conv4Stack::seeded_random(std::uint64_t seed, const std::vector<int>& channels,
                                     int k) {
  if (channels.size() < 2) throw ContractViolation("need at least two channel counts");
  Conv4Stack stack;
  SeededRng rng(seed);
  const std::size_t k4 = static_cast<std::size_t>(k) * k * k * k;
  const int center = (k / 2) * (k * k * k + k * k + k + 1);
  for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
    Conv4Kernel layer;
    layer.k = k;
    layer.in_channels = channels[i];
    layer.out_channels = channels[i + 1];
    layer.weights.resize(static_cast<std::size_t>(layer.out_channels) *
                         layer.in_channels * k4);
    // Center-dominant smoothing with unit mass per output channel: roughly
    // three quarters of the weight stays on the center tap, so the untrained
    // stack blends neighbourhood scores without flattening score peaks.
    const double off_scale = k4 > 1 ? 0.5 / (static_cast<double>(k4) - 1.0) : 0.0;
    for (int o = 0; o < layer.out_channels; ++o) {
      double sum = 0.0;
      for (int in = 0; in < layer.in_channels; ++in) {
        const std::size_t base = (static_cast<std::size_t>(o) * layer.in_channels + in) * k4;
        for (std::size_t off = 0; off < k4; ++off) {
          const double w = off == static_cast<std::size_t>(center)
                               ? rng.uniform(0.6, 1.0)
                               : rng.uniform(0.0, off_scale);
          layer.weights[base + off] = w;
          sum += w;
        }
      }
      const std::size_t row = static_cast<std::size_t>(layer.in_channels) * k4;
      for (std::size_t w = 0; w < row; ++w) {
        layer.weights[static_cast<std::size_t>(o) * row + w] /= sum;
      }
    }
    layer.bias.assign(layer.out_channels, 0.0);
    stack.layers.push_back(std::move(layer));
  }
  stack.validate();
  return stack;
}

Conv4Stack Conv4Stack::seeded_default(std::uint64_t seed) {
  return seeded_random(seed, {1, 16, 16, 1}, 3);
}

Tensor4 conv4d(const Tensor4& input, const Conv4Kernel& kernel, int threads,
               std::size_t element_cap) {
  kernel.validate();
  if (input.channels() != kernel.in_channels) {
    throw ContractViolation("conv4d input channels " + std::to_string(input.channels()) +
                            " do not match kernel in_channels " +
                            std::to_string(kernel.in_channels));
  }
  const auto& d = input.dims();
  Tensor4 out(d, kernel.out_channels, element_cap);

  const int A = d[0], B = d[1], C = d[2], D = d[3];
  const int qin = kernel.in_channels;
  const int qout = kernel.out_channels;
  const int k = kernel.k;
  const int r = k / 2;
  const std::size_t k4 = static_cast<std::size_t>(k) * k * k * k;
  const double* in = input.values().data();
  double* dst = out.values().data();

  // Repack weights offset-major, (offset, in, out), so the hot loop is an
  // elementwise multiply-add over contiguous output channels; per-channel
  // accumulation order stays fixed, keeping results bit-identical.
  std::vector<double> wt(k4 * qout * qin);
  for (int q = 0; q < qout; ++q) {
    for (int p = 0; p < qin; ++p) {
      for (std::size_t off = 0; off < k4; ++off) {
        wt[(off * qin + p) * qout + q] =
            kernel.weights[(static_cast<std::size_t>(q) * qin + p) * k4 + off];
      }
    }
  }

  // One (a, b) slice per task; each output cell is accumulated by a single
  // worker in a fixed order, which keeps results bit-identical for any
  // thread count.
  const std::size_t slices = static_cast<std::size_t>(A) * B;
  parallel_for(slices, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> acc(qout);
    for (std::size_t s = begin; s < end; ++s) {
      const int a = static_cast<int>(s) / B;
      const int b = static_cast<int>(s) % B;
      const int a0 = std::max(0, a - r), a1 = std::min(A - 1, a + r);
      const int b0 = std::max(0, b - r), b1 = std::min(B - 1, b + r);
      for (int c = 0; c < C; ++c) {
        const int c0 = std::max(0, c - r), c1 = std::min(C - 1, c + r);
        for (int e = 0; e < D; ++e) {
          const int e0 = std::max(0, e - r), e1 = std::min(D - 1, e + r);
          for (int q = 0; q < qout; ++q) acc[q] = kernel.bias[q];
          for (int ia = a0; ia <= a1; ++ia) {
            const int ka = ia - a + r;
            for (int ib = b0; ib <= b1; ++ib) {
              const int kb = ib - b + r;
              for (int ic = c0; ic <= c1; ++ic) {
                const int kc = ic - c + r;
                const double* in_row = in + input.index(ia, ib, ic, e0, 0);
                const std::size_t off_base =
                    ((static_cast<std::size_t>(ka) * k + kb) * k + kc) * k;
                for (int ie = e0; ie <= e1; ++ie) {
                  const std::size_t off = off_base + (ie - e + r);
                  const double* x = in_row + static_cast<std::size_t>(ie - e0) * qin;
                  const double* wrow = wt.data() + off * qin * qout;
                  for (int p = 0; p < qin; ++p) {
                    const double s = x[p];
                    const double* wq = wrow + static_cast<std::size_t>(p) * qout;
                    for (int q = 0; q < qout; ++q) acc[q] += s * wq[q];
                  }
                }
              }
            }
          }
          double* o = dst + out.index(a, b, c, e, 0);
          for (int q = 0; q < qout; ++q) o[q] = acc[q];
        }
      }
    }
  });
  return out;
}

Tensor4 conv4d_stack(const Tensor4& input, const Conv4Stack& stack, int threads,
                     std::size_t element_cap) {
  stack.validate();
  if (input.channels() != 1) {
    throw ContractViolation("conv4d_stack input must be single channel");
  }
  Tensor4 current = conv4d(input, stack.layers.front(), threads, element_cap);
  for (std::size_t i = 1; i < stack.layers.size(); ++i) {
    for (auto& v : current.values()) v = std::max(0.0, v);
    current = conv4d(current, stack.layers[i], threads, element_cap);
  }
  return current;
}

Tensor4 transpose_pairs(const Tensor4& input) {
  const auto& d = input.dims();
  Tensor4 out({d[2], d[3], d[0], d[1]}, input.channels());
  const int ch = input.channels();
  for (int i = 0; i < d[0]; ++i) {
    for (int j = 0; j < d[1]; ++j) {
      for (int k = 0; k < d[2]; ++k) {
        for (int l = 0; l < d[3]; ++l) {
          const std::size_t src = input.index(i, j, k, l, 0);
          const std::size_t dst = out.index(k, l, i, j, 0);
          for (int q = 0; q < ch; ++q) out.values()[dst + q] = input.values()[src + q];
        }
      }
    }
  }
  return out;
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

bool read_u32(std::istream& is, std::uint32_t* v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  *v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
       (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

void write_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  write_u32(os, v);
}

bool read_f32(std::istream& is, float* f) {
  std::uint32_t v;
  if (!read_u32(is, &v)) return false;
  std::memcpy(f, &v, 4);
  return true;
}

}  // namespace

void save_conv4_stack(const std::string& path, const Conv4Stack& stack) {
  stack.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open weight file for writing: " + path);
  os.write("NCNW", 4);
  for (const auto& layer : stack.layers) {
    write_u32(os, static_cast<std::uint32_t>(layer.k));
    write_u32(os, static_cast<std::uint32_t>(layer.in_channels));
    write_u32(os, static_cast<std::uint32_t>(layer.out_channels));
    for (double w : layer.weights) write_f32(os, static_cast<float>(w));
    for (double b : layer.bias) write_f32(os, static_cast<float>(b));
  }
  if (!os) throw IoError("failed writing weight file: " + path);
}

Conv4Stack load_conv4_stack(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weight file: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "NCNW", 4) != 0) {
    throw IoError("bad magic in weight file: " + path);
  }
  Conv4Stack stack;
  while (true) {
    std::uint32_t k;
    if (!read_u32(is, &k)) break;  // clean EOF between layers
    std::uint32_t in, out;
    if (!read_u32(is, &in) || !read_u32(is, &out)) {
      throw IoError("truncated layer header in weight file: " + path);
    }
    if (k == 0 || k % 2 == 0 || k > 31 || in == 0 || out == 0 || in > 4096 ||
        out > 4096) {
      throw IoError("implausible layer shape in weight file: " + path);
    }
    Conv4Kernel layer;
    layer.k = static_cast<int>(k);
    layer.in_channels = static_cast<int>(in);
    layer.out_channels = static_cast<int>(out);
    const std::size_t k4 = static_cast<std::size_t>(k) * k * k * k;
    layer.weights.resize(static_cast<std::size_t>(out) * in * k4);
    layer.bias.resize(out);
    for (auto& w : layer.weights) {
      float f;
      if (!read_f32(is, &f)) throw IoError("truncated weights in weight file: " + path);
      w = f;
    }
    for (auto& b : layer.bias) {
      float f;
      if (!read_f32(is, &f)) throw IoError("truncated bias in weight file: " + path);
      b = f;
    }
    stack.layers.push_back(std::move(layer));
  }
  if (stack.layers.empty()) throw IoError("weight file has no layers: " + path);
  stack.validate();
  return stack;
}

}  // namespace ncmatch
