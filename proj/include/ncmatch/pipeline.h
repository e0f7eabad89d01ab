#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ncmatch/dataset.h"
#include "ncmatch/matching.h"

namespace ncmatch {

enum class DescriptorSource { kHandcrafted, kFile };

enum class NcnSource { kSeededDefault, kSeed, kFile, kDelta };

struct RunConfig {
  DescriptorSource descriptors = DescriptorSource::kHandcrafted;
  std::string descriptor_dir;
  // kSeededDefault is the untouched default; the synthetic evaluate path
  // swaps it for the delta stack, an explicit seed or file is always honored.
  NcnSource ncn = NcnSource::kSeededDefault;
  std::uint64_t ncn_seed = 1;
  std::string ncn_path;
  int nms_radius = 4;
  double nms_threshold = 0.015;
  int n_keypoints = 1000;
  double ratio = 0.75;
  std::uint64_t ransac_seed = 1;
  // Squared first-order Sampson distance in normalized coordinates; 1e-3
  // keeps roughly a five-pixel epipolar band at focal lengths near 160.
  double ransac_threshold = 1e-3;
  double ransac_confidence = 0.999;
  int ransac_max_iter = 1000;
  double theta_r = 5.0 * 3.14159265358979323846 / 180.0;
  double theta_t = 0.1;
  std::vector<double> bins = {0.0, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0};
  int threads = 1;
  bool mutual_refine = true;
  std::string reference_traversal = "reference";
  std::size_t element_cap = kDefaultElementCap;

  void validate() const;
};

// Flat key=value file mirroring the CLI flags; unknown keys are rejected.
void save_run_config(const std::string& path, const RunConfig& config);
RunConfig load_run_config(const std::string& path);

// Conv stack per the config; synthetic_delta_default substitutes the delta
// stack when the source was left at its default.
Conv4Stack build_conv_stack(const RunConfig& config, bool synthetic_delta_default = false);

struct MatchSummary {
  int grid_a_h = 0, grid_a_w = 0;
  int grid_b_h = 0, grid_b_w = 0;
  int n_coarse = 0;
  int n_identity_coarse = 0;  // coarse matches mapping a cell to itself
  int n_keypoints_a = 0, n_keypoints_b = 0;
  int n_correspondences = 0;
};

struct MatchResult {
  std::vector<CoarseMatch> coarse;
  std::vector<Correspondence> correspondences;
  MatchSummary summary;
};

// Full matching pipeline: descriptors, correlation, consensus filtering,
// coarse matches, keypoints, pixel refinement. Null descriptor pointers fall
// back to the hand-crafted maps. Throws CapacityError before allocating when
// the 4D volume would exceed the element cap.
MatchResult match_images(const GrayImage& a, const GrayImage& b, const Conv4Stack& stack,
                         const RunConfig& config, const DescriptorMap* da = nullptr,
                         const DescriptorMap* db = nullptr);

struct EvalRow {
  std::string pair_id;  // "<ref_id>:<query_id>"
  double distance = 0.0;
  bool estimated = false;
  PoseErrors errors;
  int n_matches = 0;
  int n_inliers = 0;
  std::string status;  // ok, degenerate or failed
};

struct EvalResult {
  std::vector<EvalRow> rows;  // sorted by pair_id
  std::vector<BinRatio> bins;
};

// Close-pair selection (d_max from the last bin edge, a_max pi/4) followed by
// per-pair matching and pose estimation. A directory with a
// correspondences.jsonl file is treated as a synthetic dump and matched on
// the planted correspondences; otherwise <id>.pgm images are loaded. Pairs
// run in parallel; rows are keyed and ordered by pair_id so output does not
// depend on the thread count. Throws EmptySelection when no close pair
// exists.
EvalResult evaluate_dataset(const std::string& dir, const std::string& method,
                            const RunConfig& config);

// n_pairs seeded scenes written as poses.csv + correspondences.jsonl; each
// pair's world frame is offset 50 m from the previous one so selection never
// crosses pairs.
void synth_dataset(const std::string& out_dir, std::uint64_t seed, int n_pairs,
                   int n_points, double noise_px, double outlier_frac);

struct PlantedEntry {
  std::string ref_id;
  std::string query_id;
  PlantedCorrespondence c;
};

std::vector<PlantedEntry> load_planted_jsonl(const std::string& path);

// One JSON object per line: {"xA":..,"yA":..,"xB":..,"yB":..,"score":..}.
void write_correspondences_jsonl(const std::string& path,
                                 const std::vector<Correspondence>& list);

void write_pairs_csv(const std::string& path, const std::vector<EvalRow>& rows);
void write_bins_csv(const std::string& path, const std::vector<BinRatio>& bins);

}  // namespace ncmatch
