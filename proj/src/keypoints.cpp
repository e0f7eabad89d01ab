#include "ncmatch/keypoints.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "ncmatch/parallel.h"

namespace ncmatch {

CellKeypointTensor::CellKeypointTensor(int h8_, int w8_) : h8(h8_), w8(w8_) {
  if (h8 <= 0 || w8 <= 0) throw ContractViolation("cell tensor dims must be positive");
  logits.assign(static_cast<std::size_t>(h8) * w8 * kChannels, 0.0);
}

void CellKeypointTensor::validate() const {
  if (h8 <= 0 || w8 <= 0) throw ContractViolation("cell tensor dims must be positive");
  if (logits.size() != static_cast<std::size_t>(h8) * w8 * kChannels) {
    throw ContractViolation("cell tensor logit count does not match h8*w8*65");
  }
}

KeypointResponseMap decode_response(const CellKeypointTensor& t, int threads) {
  t.validate();
  KeypointResponseMap map;
  map.height = t.h8 * CellKeypointTensor::kCell;
  map.width = t.w8 * CellKeypointTensor::kCell;
  map.values.assign(static_cast<std::size_t>(map.height) * map.width, 0.0);

  const std::size_t cells = static_cast<std::size_t>(t.h8) * t.w8;
  parallel_for(cells, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const int ci = static_cast<int>(s) / t.w8;
      const int cj = static_cast<int>(s) % t.w8;
      const double* logits = t.logits.data() + s * CellKeypointTensor::kChannels;
      double m = -std::numeric_limits<double>::infinity();
      for (int ch = 0; ch < CellKeypointTensor::kChannels; ++ch) {
        m = std::max(m, logits[ch]);
      }
      double denom = 0.0;
      for (int ch = 0; ch < CellKeypointTensor::kChannels; ++ch) {
        denom += std::exp(logits[ch] - m);
      }
      for (int ch = 0; ch < 64; ++ch) {
        const int dy = ch / 8;
        const int dx = ch % 8;
        const int y = ci * 8 + dy;
        const int x = cj * 8 + dx;
        map.at(y, x) = std::exp(logits[ch] - m) / denom;
      }
    }
  });
  return map;
}

std::vector<Keypoint> nms(const KeypointResponseMap& map, int radius, double threshold) {
  if (radius < 1) throw ContractViolation("nms radius must be >= 1");
  if (threshold < 0.0 || threshold > 1.0) {
    throw ContractViolation("nms threshold must be in [0, 1]");
  }

  // Candidates sorted by the greedy pick order. Suppression only removes
  // values, so a single sorted sweep with a suppression mask is equivalent to
  // repeated global argmax.
  std::vector<Keypoint> candidates;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double r = map.at(y, x);
      if (r >= threshold && r > 0.0) candidates.push_back({x, y, r});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.response != b.response) return a.response > b.response;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });

  std::vector<char> suppressed(static_cast<std::size_t>(map.height) * map.width, 0);
  std::vector<Keypoint> out;
  for (const auto& kp : candidates) {
    if (suppressed[static_cast<std::size_t>(kp.y) * map.width + kp.x]) continue;
    out.push_back(kp);
    const int y0 = std::max(0, kp.y - radius), y1 = std::min(map.height - 1, kp.y + radius);
    const int x0 = std::max(0, kp.x - radius), x1 = std::min(map.width - 1, kp.x + radius);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        suppressed[static_cast<std::size_t>(y) * map.width + x] = 1;
      }
    }
  }
  return out;
}

BlockKeypoints top_k_per_block(const KeypointResponseMap& map,
                               const std::vector<Keypoint>& keypoints, int block, int k) {
  if (block <= 0 || k <= 0) throw ContractViolation("block and k must be positive");
  BlockKeypoints out;
  out.block = block;
  out.rows = (map.height + block - 1) / block;
  out.cols = (map.width + block - 1) / block;
  out.cells.assign(static_cast<std::size_t>(out.rows) * out.cols, {});
  for (const auto& kp : keypoints) {
    if (kp.x < 0 || kp.x >= map.width || kp.y < 0 || kp.y >= map.height) {
      throw ContractViolation("keypoint outside map bounds");
    }
    const int bi = kp.y / block;
    const int bj = kp.x / block;
    out.cells[static_cast<std::size_t>(bi) * out.cols + bj].push_back(kp);
  }
  for (auto& cell : out.cells) {
    std::sort(cell.begin(), cell.end(), [](const Keypoint& a, const Keypoint& b) {
      if (a.response != b.response) return a.response > b.response;
      if (a.y != b.y) return a.y < b.y;
      return a.x < b.x;
    });
    if (static_cast<int>(cell.size()) > k) cell.resize(k);
  }
  return out;
}

void save_cell_keypoint_tensor(const std::string& path, const CellKeypointTensor& t) {
  t.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open keypoint tensor for writing: " + path);
  os.write("KPT6", 4);
  auto write_u32 = [&os](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  write_u32(static_cast<std::uint32_t>(t.h8));
  write_u32(static_cast<std::uint32_t>(t.w8));
  for (double v : t.logits) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(bits);
  }
  if (!os) throw IoError("failed writing keypoint tensor: " + path);
}

CellKeypointTensor load_cell_keypoint_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open keypoint tensor: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "KPT6", 4) != 0) {
    throw IoError("bad magic in keypoint tensor: " + path);
  }
  auto read_u32 = [&is](std::uint32_t* v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    *v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
  };
  std::uint32_t h8, w8;
  if (!read_u32(&h8) || !read_u32(&w8)) {
    throw IoError("truncated header in keypoint tensor: " + path);
  }
  if (h8 == 0 || w8 == 0 || h8 > 1u << 14 || w8 > 1u << 14) {
    throw IoError("implausible keypoint tensor shape: " + path);
  }
  CellKeypointTensor t(static_cast<int>(h8), static_cast<int>(w8));
  for (auto& v : t.logits) {
    std::uint32_t bits;
    if (!read_u32(&bits)) throw IoError("truncated data in keypoint tensor: " + path);
    float f;
    std::memcpy(&f, &bits, 4);
    if (!std::isfinite(f)) throw IoError("non-finite logit in keypoint tensor: " + path);
    v = f;
  }
  return t;
}

}  // namespace ncmatch
