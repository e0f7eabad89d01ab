#pragma once

#include <string>
#include <vector>

#include "ncmatch/errors.h"

namespace ncmatch {

// Per-cell keypoint logits: 64 channels for the pixels of an 8x8 cell in
// row-major order (channel = 8*dy + dx) plus a trailing no-keypoint dustbin.
struct CellKeypointTensor {
  int h8 = 0;
  int w8 = 0;
  std::vector<double> logits;  // (h8, w8, 65)

  static constexpr int kChannels = 65;
  static constexpr int kCell = 8;

  CellKeypointTensor() = default;
  CellKeypointTensor(int h8_, int w8_);

  std::size_t index(int ci, int cj, int ch) const {
    return (static_cast<std::size_t>(ci) * w8 + cj) * kChannels + ch;
  }
  void validate() const;
};

// Full-resolution keypoint probability map.
struct KeypointResponseMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // (height, width), each in [0, 1]

  double at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct Keypoint {
  int x = 0;
  int y = 0;
  double response = 0.0;
};

// Keypoints bucketed by the 16x16 blocks of the descriptor grid.
struct BlockKeypoints {
  int rows = 0;
  int cols = 0;
  int block = 16;
  std::vector<std::vector<Keypoint>> cells;

  const std::vector<Keypoint>& at(int bi, int bj) const {
    return cells[static_cast<std::size_t>(bi) * cols + bj];
  }
};

// Softmax over the 65 logits of each cell, dustbin dropped, the remaining 64
// probabilities scattered into the cell's 8x8 pixel block (pixel shuffle).
KeypointResponseMap decode_response(const CellKeypointTensor& t, int threads = 1);

// Greedy non-maximum suppression with Chebyshev radius. Deterministic order:
// highest response first, ties by (y, x) ascending; output sorted the same way.
std::vector<Keypoint> nms(const KeypointResponseMap& map, int radius, double threshold);

// Up to k strongest keypoints per 16x16 block, response-descending within a
// block with (y, x) tie-break.
BlockKeypoints top_k_per_block(const KeypointResponseMap& map,
                               const std::vector<Keypoint>& keypoints, int block = 16,
                               int k = 4);

// Binary cell tensor file, magic "KPT6": h8, w8 as u32 LE then 65-channel f32
// LE logits row-major (h8, w8, channel).
void save_cell_keypoint_tensor(const std::string& path, const CellKeypointTensor& t);
CellKeypointTensor load_cell_keypoint_tensor(const std::string& path);

}  // namespace ncmatch
