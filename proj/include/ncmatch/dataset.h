#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ncmatch/consensus.h"
#include "ncmatch/geometry.h"
#include "ncmatch/keypoints.h"

namespace ncmatch {

// Grayscale image with values in [0, 1]; the loader pads right and bottom
// with zeros so both dims are multiples of 16.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  double at(int y, int x) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  void validate() const;
};

struct PosedImage {
  std::string id;
  std::string traversal;
  Pose pose;  // world to camera
  CameraIntrinsics intrinsics;
};

struct ImagePair {
  PosedImage ref;
  PosedImage query;
  Pose gt_relative;  // ref camera frame to query camera frame
  double baseline = 0.0;
};

// C = -R^T t.
Eigen::Vector3d camera_center(const Pose& p);

// Pose mapping ref camera coordinates to query camera coordinates:
// R_rel = R_q R_r^T, t_rel = t_q - R_rel t_r.
Pose relative_pose(const Pose& ref, const Pose& query);

// All (reference, query) cross pairs with camera centres closer than d_max
// and optical axes (third rows of R) within a_max radians. Reference-major
// output order.
std::vector<ImagePair> select_close_pairs(const std::vector<PosedImage>& reference,
                                          const std::vector<PosedImage>& query,
                                          double d_max = 10.0,
                                          double a_max = 3.14159265358979323846 / 4.0);

// y = 1 iff baseline < d_thr and relative rotation angle < r_thr.
PairLabel label_pair(const PosedImage& a, const PosedImage& b, double d_thr = 5.0,
                     double r_thr = 30.0 * 3.14159265358979323846 / 180.0);

// Dense hand-crafted descriptor: per 16x16 block an 8-bin gradient
// orientation histogram over a 4x4 subcell grid, duplicated with coarse
// (sigma 12 px) and fine (sigma 4 px) Gaussian centre weighting, 256 values,
// L2-normalized with 0.2 clamping and renormalization.
DescriptorMap handcrafted_descriptor_map(const GrayImage& img);

// Keypoint logits from a Harris corner response normalized to [0, 1]:
// pixel logit = 8 * response, dustbin logit fixed at 2 so featureless cells
// stay below the detection threshold.
CellKeypointTensor handcrafted_keypoint_tensor(const GrayImage& img);

struct PlantedCorrespondence {
  double xa = 0.0, ya = 0.0;
  double xb = 0.0, yb = 0.0;
  bool outlier = false;
};

struct SynthScene {
  ImagePair pair;
  std::vector<PlantedCorrespondence> correspondences;
};

// Seeded two-view scene: 3D points in the shared frustum of two random poses
// (baseline 0.5 to 9.5 m, relative rotation at most 25 degrees), exact pixel
// projections with optional Gaussian noise on both images, and a trailing
// outlier_frac share of correspondences whose query-side pixel is replaced
// with a uniform random position. Intrinsics fx = fy = 160, c = (128, 128)
// for a nominal 256x256 image.
SynthScene synth_scene(std::uint64_t seed, int n_points, double noise_px,
                       double outlier_frac = 0.0);

// Binary 8-bit PGM (P5). Loading scales to [0, 1] and zero-pads to multiples
// of 16; saving writes maxval 255.
GrayImage load_pgm(const std::string& path);
void save_pgm(const std::string& path, const GrayImage& img);

// Pose CSV with header id,traversal,qw,qx,qy,qz,tx,ty,tz,fx,fy,cx,cy; unit
// world-to-camera quaternion (rejected beyond 1e-6), %.17g round-trip
// formatting.
void save_pose_csv(const std::string& path, const std::vector<PosedImage>& images);
std::vector<PosedImage> load_pose_csv(const std::string& path);

}  // namespace ncmatch
