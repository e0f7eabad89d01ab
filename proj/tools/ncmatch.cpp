#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ncmatch/pipeline.h"

namespace {

constexpr double kPi = 3.14159265358979323846;

void parse_descriptor_source(const std::string& value, ncmatch::RunConfig& config) {
  if (value == "handcrafted") {
    config.descriptors = ncmatch::DescriptorSource::kHandcrafted;
    config.descriptor_dir.clear();
  } else if (value.rfind("file:", 0) == 0 && value.size() > 5) {
    config.descriptors = ncmatch::DescriptorSource::kFile;
    config.descriptor_dir = value.substr(5);
  } else {
    throw CLI::ValidationError("--descriptors", "expected handcrafted or file:PATH");
  }
}

void parse_ncn_source(const std::string& value, ncmatch::RunConfig& config) {
  if (value == "default") {
    config.ncn = ncmatch::NcnSource::kSeededDefault;
  } else if (value == "delta") {
    config.ncn = ncmatch::NcnSource::kDelta;
  } else if (value.rfind("seed:", 0) == 0) {
    try {
      config.ncn_seed = std::stoull(value.substr(5));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--ncn-weights", "bad seed in '" + value + "'");
    }
    config.ncn = ncmatch::NcnSource::kSeed;
  } else if (value.rfind("file:", 0) == 0 && value.size() > 5) {
    config.ncn = ncmatch::NcnSource::kFile;
    config.ncn_path = value.substr(5);
  } else {
    throw CLI::ValidationError("--ncn-weights",
                               "expected default, delta, seed:N or file:PATH");
  }
}

// Shared RunConfig flags. Values are captured as strings/numbers and applied
// after an optional config file so explicit flags always win.
struct ConfigFlags {
  std::string config_path;
  std::string descriptors;
  std::string ncn_weights;
  int nms_radius = 0;
  double nms_threshold = 0.0;
  int n_keypoints = 0;
  double ratio = 0.0;
  std::uint64_t ransac_seed = 0;
  double ransac_threshold = 0.0;
  double ransac_confidence = 0.0;
  int ransac_max_iter = 0;
  double theta_r_deg = 0.0;
  double theta_t = 0.0;
  std::vector<double> bins;
  int threads = 0;
  bool mutual_refine = true;
  std::string reference_traversal;
  std::size_t element_cap = 0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file; flags override it");
    cmd->add_option("--descriptors", descriptors, "handcrafted or file:PATH");
    cmd->add_option("--ncn-weights", ncn_weights, "default, delta, seed:N or file:PATH");
    cmd->add_option("--nms-radius", nms_radius, "keypoint NMS Chebyshev radius");
    cmd->add_option("--nms-threshold", nms_threshold, "keypoint probability cutoff");
    cmd->add_option("--n-keypoints", n_keypoints, "strongest keypoints kept per image");
    cmd->add_option("--ratio", ratio, "Lowe ratio for the knn baseline");
    cmd->add_option("--ransac-seed", ransac_seed, "RANSAC sampling seed");
    cmd->add_option("--ransac-threshold", ransac_threshold,
                    "Sampson inlier threshold (normalized coords)");
    cmd->add_option("--ransac-confidence", ransac_confidence, "adaptive stop confidence");
    cmd->add_option("--ransac-max-iter", ransac_max_iter, "RANSAC iteration cap");
    cmd->add_option("--theta-r-deg", theta_r_deg, "rotation success threshold, degrees");
    cmd->add_option("--theta-t", theta_t,
                    "translation success threshold, fraction of pair distance");
    cmd->add_option("--bins", bins, "distance bin edges, meters")->delimiter(',');
    cmd->add_option("--threads", threads, "worker threads");
    cmd->add_option("--mutual-refine", mutual_refine,
                    "require mutual nearest neighbours in refinement");
    cmd->add_option("--reference-traversal", reference_traversal,
                    "traversal name used as the reference side");
    cmd->add_option("--element-cap", element_cap, "max tensor elements before refusing");
  }

  ncmatch::RunConfig resolve(const CLI::App* cmd) const {
    ncmatch::RunConfig config;
    if (cmd->count("--config")) config = ncmatch::load_run_config(config_path);
    if (cmd->count("--descriptors")) parse_descriptor_source(descriptors, config);
    if (cmd->count("--ncn-weights")) parse_ncn_source(ncn_weights, config);
    if (cmd->count("--nms-radius")) config.nms_radius = nms_radius;
    if (cmd->count("--nms-threshold")) config.nms_threshold = nms_threshold;
    if (cmd->count("--n-keypoints")) config.n_keypoints = n_keypoints;
    if (cmd->count("--ratio")) config.ratio = ratio;
    if (cmd->count("--ransac-seed")) config.ransac_seed = ransac_seed;
    if (cmd->count("--ransac-threshold")) config.ransac_threshold = ransac_threshold;
    if (cmd->count("--ransac-confidence")) config.ransac_confidence = ransac_confidence;
    if (cmd->count("--ransac-max-iter")) config.ransac_max_iter = ransac_max_iter;
    if (cmd->count("--theta-r-deg")) config.theta_r = theta_r_deg * kPi / 180.0;
    if (cmd->count("--theta-t")) config.theta_t = theta_t;
    if (cmd->count("--bins")) config.bins = bins;
    if (cmd->count("--threads")) config.threads = threads;
    if (cmd->count("--mutual-refine")) config.mutual_refine = mutual_refine;
    if (cmd->count("--reference-traversal")) {
      config.reference_traversal = reference_traversal;
    }
    if (cmd->count("--element-cap")) config.element_cap = element_cap;
    config.validate();
    return config;
  }
};

int run_match(const std::string& img_a, const std::string& img_b, const std::string& out,
              const ncmatch::RunConfig& config) {
  const ncmatch::GrayImage a = ncmatch::load_pgm(img_a);
  const ncmatch::GrayImage b = ncmatch::load_pgm(img_b);
  const ncmatch::Conv4Stack stack = ncmatch::build_conv_stack(config);

  ncmatch::MatchResult result;
  if (config.descriptors == ncmatch::DescriptorSource::kFile) {
    const auto stem = [](const std::string& p) {
      return std::filesystem::path(p).stem().string();
    };
    const ncmatch::DescriptorMap da =
        ncmatch::load_descriptor_map(config.descriptor_dir + "/" + stem(img_a) + ".dmap");
    const ncmatch::DescriptorMap db =
        ncmatch::load_descriptor_map(config.descriptor_dir + "/" + stem(img_b) + ".dmap");
    result = ncmatch::match_images(a, b, stack, config, &da, &db);
  } else {
    result = ncmatch::match_images(a, b, stack, config);
  }
  ncmatch::write_correspondences_jsonl(out, result.correspondences);

  const ncmatch::MatchSummary& s = result.summary;
  std::printf("cells: A %dx%d, B %dx%d\n", s.grid_a_h, s.grid_a_w, s.grid_b_h, s.grid_b_w);
  std::printf("coarse matches: %d (identity %d)\n", s.n_coarse, s.n_identity_coarse);
  std::printf("keypoints: A %d, B %d\n", s.n_keypoints_a, s.n_keypoints_b);
  std::printf("correspondences: %d -> %s\n", s.n_correspondences, out.c_str());
  return 0;
}

int run_evaluate(const std::string& dir, const std::string& method,
                 const std::string& out_dir, const ncmatch::RunConfig& config) {
  const ncmatch::EvalResult result = ncmatch::evaluate_dataset(dir, method, config);
  std::filesystem::create_directories(out_dir);
  ncmatch::write_pairs_csv(out_dir + "/pairs.csv", result.rows);
  ncmatch::write_bins_csv(out_dir + "/bins.csv", result.bins);

  int ok = 0;
  for (const auto& row : result.rows) ok += row.status == "ok" ? 1 : 0;
  std::printf("pairs: %zu evaluated, %d with a pose\n", result.rows.size(), ok);
  for (const auto& bin : result.bins) {
    if (bin.populated) {
      std::printf("bin [%g, %g): %d pairs, rot %.3f, trans %.3f\n", bin.lo, bin.hi,
                  bin.n_pairs, bin.rot_success, bin.trans_success);
    } else {
      std::printf("bin [%g, %g): empty\n", bin.lo, bin.hi);
    }
  }
  std::printf("wrote %s/pairs.csv and %s/bins.csv\n", out_dir.c_str(), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coarse-to-fine image matching and relative pose evaluation"};
  app.require_subcommand(1);

  // match
  std::string img_a, img_b, match_out = "matches.jsonl";
  ConfigFlags match_flags;
  CLI::App* match_cmd = app.add_subcommand("match", "match two images");
  match_cmd->add_option("img_a", img_a, "reference image (PGM)")->required();
  match_cmd->add_option("img_b", img_b, "query image (PGM)")->required();
  match_cmd->add_option("--out", match_out, "correspondence JSONL path");
  match_flags.add_to(match_cmd);

  // evaluate
  std::string dataset_dir, method = "superncn", eval_out = "eval";
  ConfigFlags eval_flags;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate relative pose on a dataset");
  eval_cmd->add_option("dataset_dir", dataset_dir, "directory with poses.csv")->required();
  eval_cmd->add_option("--method", method, "superncn or knn")
      ->check(CLI::IsMember({"superncn", "knn"}));
  eval_cmd->add_option("--out-dir", eval_out, "output directory for the CSV reports");
  eval_flags.add_to(eval_cmd);

  // synth
  std::string synth_out;
  std::uint64_t synth_seed = 1;
  int synth_pairs = 10;
  int synth_points = 60;
  double synth_noise = 0.0;
  double synth_outliers = 0.0;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("out_dir", synth_out, "output directory")->required();
  synth_cmd->add_option("--seed", synth_seed, "scene seed");
  synth_cmd->add_option("--pairs", synth_pairs, "number of image pairs")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--points", synth_points, "planted correspondences per pair")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--noise", synth_noise, "pixel noise sigma")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--outlier-frac", synth_outliers, "fraction of planted outliers")
      ->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
    if (match_cmd->parsed()) {
      return run_match(img_a, img_b, match_out, match_flags.resolve(match_cmd));
    }
    if (eval_cmd->parsed()) {
      return run_evaluate(dataset_dir, method, eval_out, eval_flags.resolve(eval_cmd));
    }
    ncmatch::synth_dataset(synth_out, synth_seed, synth_pairs, synth_points, synth_noise,
                           synth_outliers);
    std::printf("wrote %d pairs to %s\n", synth_pairs, synth_out.c_str());
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ncmatch::CapacityError& e) {
    std::fprintf(stderr, "error: %s\nhint: downsample the images or raise --element-cap\n",
                 e.what());
    return 3;
  } catch (const ncmatch::EmptySelection& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const ncmatch::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ncmatch::ContractViolation& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
