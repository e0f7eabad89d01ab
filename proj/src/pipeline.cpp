#include "ncmatch/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ncmatch/parallel.h"
#include "ncmatch/rng.h"

namespace ncmatch {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Synthetic evaluation cell grid for the nominal 256x256 image.
constexpr int kSynthCells = 16;
constexpr int kSynthDim = 32;
constexpr std::uint64_t kPlantStreamSalt = 0x9e3779b97f4a7c15ull;
constexpr std::uint64_t kKnnStreamSalt = 0xd1b54a32d192ed03ull;

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_g9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

double parse_config_double(const std::string& value, const std::string& key) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(v)) {
    throw IoError("config key " + key + ": bad number '" + value + "'");
  }
  return v;
}

long long parse_config_int(const std::string& value, const std::string& key) {
  char* end = nullptr;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (value.empty() || end != value.c_str() + value.size()) {
    throw IoError("config key " + key + ": bad integer '" + value + "'");
  }
  return v;
}

std::vector<double> parse_bins(const std::string& value, const std::string& context) {
  std::vector<double> bins;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    bins.push_back(parse_config_double(item, context));
  }
  return bins;
}

std::vector<double> random_unit_descriptor(SeededRng& rng, int dim) {
  std::vector<double> d(static_cast<std::size_t>(dim));
  while (true) {
    double norm2 = 0.0;
    for (auto& v : d) {
      v = rng.normal();
      norm2 += v * v;
    }
    if (norm2 > 1e-12) {
      const double inv = 1.0 / std::sqrt(norm2);
      for (auto& v : d) v *= inv;
      return d;
    }
  }
}

std::vector<Keypoint> detect_keypoints(const GrayImage& img, const RunConfig& config,
                                       int threads) {
  const CellKeypointTensor tensor = handcrafted_keypoint_tensor(img);
  const KeypointResponseMap response = decode_response(tensor, threads);
  std::vector<Keypoint> kps = nms(response, config.nms_radius, config.nms_threshold);
  if (static_cast<int>(kps.size()) > config.n_keypoints) {
    kps.resize(static_cast<std::size_t>(config.n_keypoints));
  }
  return kps;
}

void check_pipeline_capacity(const DescriptorMap& a, const DescriptorMap& b,
                             const Conv4Stack& stack, std::size_t cap) {
  // The widest tensor in the pipeline is the conv stack's fattest
  // intermediate over the full 4D grid; reject it before correlate allocates.
  Tensor4::checked_element_count({a.h(), a.w(), b.h(), b.w()},
                                 std::max(1, stack.max_channels()), cap);
}

struct PairTask {
  std::string pair_id;
  std::size_t pair_index = 0;  // position in the sorted order, seeds RANSAC
  const ImagePair* pair = nullptr;
};

std::vector<Correspondence> planted_superncn_matches(
    const std::vector<PlantedCorrespondence>& planted, std::size_t pair_index,
    const Conv4Stack& stack, const RunConfig& config) {
  if (planted.empty()) return {};
  SeededRng rng(mix_seed(config.ransac_seed ^ kPlantStreamSalt, pair_index));
  DescriptorMap da(kSynthCells, kSynthCells, kSynthDim);
  DescriptorMap db(kSynthCells, kSynthCells, kSynthDim);
  for (int i = 0; i < kSynthCells; ++i) {
    for (int j = 0; j < kSynthCells; ++j) da.set_cell(i, j, random_unit_descriptor(rng, kSynthDim));
  }
  for (int i = 0; i < kSynthCells; ++i) {
    for (int j = 0; j < kSynthCells; ++j) db.set_cell(i, j, random_unit_descriptor(rng, kSynthDim));
  }

  auto cell_of = [](double x, double y) {
    const int ci = std::clamp(static_cast<int>(y / 16.0), 0, kSynthCells - 1);
    const int cj = std::clamp(static_cast<int>(x / 16.0), 0, kSynthCells - 1);
    return std::array<int, 2>{ci, cj};
  };

  // Copy each planted A cell's descriptor into its planted B cell, first
  // writer wins, so the correlation peaks exactly on the planted mapping.
  std::vector<std::array<int, 2>> cell_a(planted.size()), cell_b(planted.size());
  std::vector<char> taken(static_cast<std::size_t>(kSynthCells) * kSynthCells, 0);
  for (std::size_t i = 0; i < planted.size(); ++i) {
    cell_a[i] = cell_of(planted[i].xa, planted[i].ya);
    cell_b[i] = cell_of(planted[i].xb, planted[i].yb);
    const std::size_t key =
        static_cast<std::size_t>(cell_b[i][0]) * kSynthCells + cell_b[i][1];
    if (!taken[key]) {
      taken[key] = 1;
      std::vector<double> d(da.cell(cell_a[i][0], cell_a[i][1]),
                            da.cell(cell_a[i][0], cell_a[i][1]) + kSynthDim);
      db.set_cell(cell_b[i][0], cell_b[i][1], d);
    }
  }

  const Tensor4 c = correlate(da, db, 1, config.element_cap);
  const Tensor4 filtered = ncn_filter(c, stack, 1, config.element_cap);
  const std::vector<CoarseMatch> coarse = coarse_matches(filtered, 0.0, 1);
  std::vector<std::array<int, 2>> argmax(static_cast<std::size_t>(kSynthCells) * kSynthCells,
                                         {-1, -1});
  std::vector<double> score(argmax.size(), 0.0);
  for (const auto& cm : coarse) {
    const std::size_t key = static_cast<std::size_t>(cm.ai) * kSynthCells + cm.aj;
    argmax[key] = {cm.bi, cm.bj};
    score[key] = cm.score;
  }

  // A planted correspondence survives iff the filtered tensor still sends its
  // A cell to its B cell.
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < planted.size(); ++i) {
    const std::size_t key = static_cast<std::size_t>(cell_a[i][0]) * kSynthCells + cell_a[i][1];
    if (argmax[key][0] == cell_b[i][0] && argmax[key][1] == cell_b[i][1]) {
      out.push_back({planted[i].xa, planted[i].ya, planted[i].xb, planted[i].yb, score[key]});
    }
  }
  return out;
}

std::vector<Correspondence> planted_knn_matches(
    const std::vector<PlantedCorrespondence>& planted, std::size_t pair_index,
    const RunConfig& config) {
  if (planted.empty()) return {};
  SeededRng rng(mix_seed(config.ransac_seed ^ kKnnStreamSalt, pair_index));
  std::vector<std::vector<double>> desc_a(planted.size());
  for (auto& d : desc_a) d = random_unit_descriptor(rng, kSynthDim);
  const std::vector<std::vector<double>> desc_b = desc_a;
  const auto matches = knn_ratio_match(desc_a, desc_b, config.ratio, 1);
  std::vector<Correspondence> out;
  out.reserve(matches.size());
  for (const auto& [i, j] : matches) {
    out.push_back({planted[static_cast<std::size_t>(i)].xa,
                   planted[static_cast<std::size_t>(i)].ya,
                   planted[static_cast<std::size_t>(j)].xb,
                   planted[static_cast<std::size_t>(j)].yb, 1.0});
  }
  return out;
}

DescriptorMap image_descriptors(const GrayImage& img, const std::string& id,
                                const RunConfig& config) {
  if (config.descriptors == DescriptorSource::kHandcrafted) {
    return handcrafted_descriptor_map(img);
  }
  const std::string path = config.descriptor_dir + "/" + id + ".dmap";
  DescriptorMap map = load_descriptor_map(path);
  if (map.h() != img.height / 16 || map.w() != img.width / 16) {
    throw IoError("descriptor map " + path + " does not match the image cell grid");
  }
  return map;
}

std::vector<Correspondence> image_knn_matches(const GrayImage& a, const GrayImage& b,
                                              const DescriptorMap& da, const DescriptorMap& db,
                                              const RunConfig& config, int threads) {
  const std::vector<Keypoint> kps_a = detect_keypoints(a, config, threads);
  const std::vector<Keypoint> kps_b = detect_keypoints(b, config, threads);
  if (kps_a.empty() || kps_b.empty()) return {};
  std::vector<std::vector<double>> desc_a(kps_a.size()), desc_b(kps_b.size());
  for (std::size_t i = 0; i < kps_a.size(); ++i) {
    desc_a[i] = interpolate_descriptor(da, kps_a[i].x, kps_a[i].y);
  }
  for (std::size_t i = 0; i < kps_b.size(); ++i) {
    desc_b[i] = interpolate_descriptor(db, kps_b[i].x, kps_b[i].y);
  }
  const auto matches = knn_ratio_match(desc_a, desc_b, config.ratio, threads);
  std::vector<Correspondence> out;
  out.reserve(matches.size());
  for (const auto& [i, j] : matches) {
    double sim = 0.0;
    for (std::size_t q = 0; q < desc_a[static_cast<std::size_t>(i)].size(); ++q) {
      sim += desc_a[static_cast<std::size_t>(i)][q] * desc_b[static_cast<std::size_t>(j)][q];
    }
    out.push_back({static_cast<double>(kps_a[static_cast<std::size_t>(i)].x),
                   static_cast<double>(kps_a[static_cast<std::size_t>(i)].y),
                   static_cast<double>(kps_b[static_cast<std::size_t>(j)].x),
                   static_cast<double>(kps_b[static_cast<std::size_t>(j)].y), sim});
  }
  return out;
}

EvalRow estimate_pair(const ImagePair& pair, const std::string& pair_id,
                      std::size_t pair_index, std::vector<Correspondence> corrs,
                      const RunConfig& config) {
  EvalRow row;
  row.pair_id = pair_id;
  row.distance = pair.baseline;
  row.n_matches = static_cast<int>(corrs.size());
  if (row.n_matches < 5) {
    row.status = "failed";
    return row;
  }

  std::vector<PointPair> npairs(corrs.size());
  const CameraIntrinsics& ka = pair.ref.intrinsics;
  const CameraIntrinsics& kb = pair.query.intrinsics;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    npairs[i] = {(corrs[i].xa - ka.cx) / ka.fx, (corrs[i].ya - ka.cy) / ka.fy,
                 (corrs[i].xb - kb.cx) / kb.fx, (corrs[i].yb - kb.cy) / kb.fy};
  }

  try {
    const RansacResult rr =
        ransac_essential(npairs, config.ransac_threshold, config.ransac_confidence,
                         config.ransac_max_iter, mix_seed(config.ransac_seed, pair_index));
    row.n_inliers = rr.n_inliers;
    std::vector<PointPair> inliers;
    inliers.reserve(static_cast<std::size_t>(rr.n_inliers));
    for (std::size_t i = 0; i < npairs.size(); ++i) {
      if (rr.inlier_mask[i]) inliers.push_back(npairs[i]);
    }
    const Pose rel = decompose_essential(rr.e, inliers);
    row.errors.r_err = rotation_error(pair.gt_relative.R, rel.R);
    row.errors.t_err = translation_error(pair.gt_relative.t, rel.t);
    row.estimated = true;
    row.status = "ok";
  } catch (const DegeneracyError&) {
    row.status = "degenerate";
  } catch (const EstimationFailed&) {
    row.status = "failed";
  } catch (const AmbiguityError&) {
    row.status = "failed";
  }
  return row;
}

}  // namespace

void RunConfig::validate() const {
  if (descriptors == DescriptorSource::kFile && descriptor_dir.empty()) {
    throw ContractViolation("descriptor source file needs a directory path");
  }
  if (ncn == NcnSource::kFile && ncn_path.empty()) {
    throw ContractViolation("ncn weight source file needs a path");
  }
  if (nms_radius < 1) throw ContractViolation("nms_radius must be at least 1");
  if (!(nms_threshold >= 0.0 && nms_threshold <= 1.0)) {
    throw ContractViolation("nms_threshold must be in [0, 1]");
  }
  if (n_keypoints < 1) throw ContractViolation("n_keypoints must be positive");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ContractViolation("ratio must be in (0, 1]");
  if (!(ransac_threshold > 0.0)) throw ContractViolation("ransac_threshold must be positive");
  if (!(ransac_confidence > 0.0 && ransac_confidence < 1.0)) {
    throw ContractViolation("ransac_confidence must be in (0, 1)");
  }
  if (ransac_max_iter < 1) throw ContractViolation("ransac_max_iter must be positive");
  if (!(theta_r > 0.0)) throw ContractViolation("theta_r must be positive");
  if (!(theta_t > 0.0)) throw ContractViolation("theta_t must be positive");
  if (bins.size() < 2) throw ContractViolation("bins needs at least two edges");
  for (std::size_t i = 0; i + 1 < bins.size(); ++i) {
    if (!(bins[i] < bins[i + 1])) throw ContractViolation("bins must be strictly increasing");
  }
  if (!(bins.front() >= 0.0)) throw ContractViolation("bins must start at or above 0");
  if (threads < 1) throw ContractViolation("threads must be positive");
  if (element_cap < 1) throw ContractViolation("element_cap must be positive");
  if (reference_traversal.empty()) throw ContractViolation("reference_traversal is empty");
}

void save_run_config(const std::string& path, const RunConfig& config) {
  config.validate();
  std::ofstream os(path);
  if (!os) throw IoError("cannot open config for writing: " + path);
  os << "descriptors="
     << (config.descriptors == DescriptorSource::kHandcrafted
             ? "handcrafted"
             : "file:" + config.descriptor_dir)
     << "\n";
  switch (config.ncn) {
    case NcnSource::kSeededDefault:
      os << "ncn_weights=default\n";
      break;
    case NcnSource::kSeed:
      os << "ncn_weights=seed:" << config.ncn_seed << "\n";
      break;
    case NcnSource::kFile:
      os << "ncn_weights=file:" << config.ncn_path << "\n";
      break;
    case NcnSource::kDelta:
      os << "ncn_weights=delta\n";
      break;
  }
  os << "nms_radius=" << config.nms_radius << "\n";
  os << "nms_threshold=" << fmt_g17(config.nms_threshold) << "\n";
  os << "n_keypoints=" << config.n_keypoints << "\n";
  os << "ratio=" << fmt_g17(config.ratio) << "\n";
  os << "ransac_seed=" << config.ransac_seed << "\n";
  os << "ransac_threshold=" << fmt_g17(config.ransac_threshold) << "\n";
  os << "ransac_confidence=" << fmt_g17(config.ransac_confidence) << "\n";
  os << "ransac_max_iter=" << config.ransac_max_iter << "\n";
  os << "theta_r_deg=" << fmt_g17(config.theta_r * 180.0 / kPi) << "\n";
  os << "theta_t=" << fmt_g17(config.theta_t) << "\n";
  os << "bins=";
  for (std::size_t i = 0; i < config.bins.size(); ++i) {
    os << (i ? "," : "") << fmt_g17(config.bins[i]);
  }
  os << "\n";
  os << "threads=" << config.threads << "\n";
  os << "mutual_refine=" << (config.mutual_refine ? 1 : 0) << "\n";
  os << "reference_traversal=" << config.reference_traversal << "\n";
  os << "element_cap=" << config.element_cap << "\n";
  if (!os) throw IoError("failed writing config: " + path);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  RunConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw IoError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "descriptors") {
      if (value == "handcrafted") {
        config.descriptors = DescriptorSource::kHandcrafted;
        config.descriptor_dir.clear();
      } else if (value.rfind("file:", 0) == 0) {
        config.descriptors = DescriptorSource::kFile;
        config.descriptor_dir = value.substr(5);
      } else {
        throw IoError(path + ": descriptors must be handcrafted or file:PATH");
      }
    } else if (key == "ncn_weights") {
      if (value == "default") {
        config.ncn = NcnSource::kSeededDefault;
      } else if (value == "delta") {
        config.ncn = NcnSource::kDelta;
      } else if (value.rfind("seed:", 0) == 0) {
        config.ncn = NcnSource::kSeed;
        config.ncn_seed = static_cast<std::uint64_t>(
            parse_config_int(value.substr(5), "ncn_weights seed"));
      } else if (value.rfind("file:", 0) == 0) {
        config.ncn = NcnSource::kFile;
        config.ncn_path = value.substr(5);
      } else {
        throw IoError(path + ": ncn_weights must be default, delta, seed:N or file:PATH");
      }
    } else if (key == "nms_radius") {
      config.nms_radius = static_cast<int>(parse_config_int(value, key));
    } else if (key == "nms_threshold") {
      config.nms_threshold = parse_config_double(value, key);
    } else if (key == "n_keypoints") {
      config.n_keypoints = static_cast<int>(parse_config_int(value, key));
    } else if (key == "ratio") {
      config.ratio = parse_config_double(value, key);
    } else if (key == "ransac_seed") {
      config.ransac_seed = static_cast<std::uint64_t>(parse_config_int(value, key));
    } else if (key == "ransac_threshold") {
      config.ransac_threshold = parse_config_double(value, key);
    } else if (key == "ransac_confidence") {
      config.ransac_confidence = parse_config_double(value, key);
    } else if (key == "ransac_max_iter") {
      config.ransac_max_iter = static_cast<int>(parse_config_int(value, key));
    } else if (key == "theta_r_deg") {
      config.theta_r = parse_config_double(value, key) * kPi / 180.0;
    } else if (key == "theta_t") {
      config.theta_t = parse_config_double(value, key);
    } else if (key == "bins") {
      config.bins = parse_bins(value, key);
    } else if (key == "threads") {
      config.threads = static_cast<int>(parse_config_int(value, key));
    } else if (key == "mutual_refine") {
      config.mutual_refine = parse_config_int(value, key) != 0;
    } else if (key == "reference_traversal") {
      config.reference_traversal = value;
    } else if (key == "element_cap") {
      const long long cap = parse_config_int(value, key);
      if (cap < 1) throw IoError(path + ": element_cap must be positive");
      config.element_cap = static_cast<std::size_t>(cap);
    } else {
      throw IoError(path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  config.validate();
  return config;
}

Conv4Stack build_conv_stack(const RunConfig& config, bool synthetic_delta_default) {
  switch (config.ncn) {
    case NcnSource::kSeededDefault:
      return synthetic_delta_default ? Conv4Stack::delta()
                                     : Conv4Stack::seeded_default(config.ncn_seed);
    case NcnSource::kSeed:
      return Conv4Stack::seeded_default(config.ncn_seed);
    case NcnSource::kFile:
      return load_conv4_stack(config.ncn_path);
    case NcnSource::kDelta:
      return Conv4Stack::delta();
  }
  throw ContractViolation("unhandled ncn source");
}

MatchResult match_images(const GrayImage& a, const GrayImage& b, const Conv4Stack& stack,
                         const RunConfig& config, const DescriptorMap* da,
                         const DescriptorMap* db) {
  config.validate();
  a.validate();
  b.validate();

  const DescriptorMap fa = da ? *da : handcrafted_descriptor_map(a);
  const DescriptorMap fb = db ? *db : handcrafted_descriptor_map(b);
  check_pipeline_capacity(fa, fb, stack, config.element_cap);

  MatchResult result;
  result.summary.grid_a_h = fa.h();
  result.summary.grid_a_w = fa.w();
  result.summary.grid_b_h = fb.h();
  result.summary.grid_b_w = fb.w();

  const Tensor4 c = correlate(fa, fb, config.threads, config.element_cap);
  const Tensor4 filtered = ncn_filter(c, stack, config.threads, config.element_cap);
  result.coarse = coarse_matches(filtered, 0.0, config.threads);
  const std::vector<CoarseMatch>& coarse = result.coarse;
  result.summary.n_coarse = static_cast<int>(coarse.size());
  for (const auto& cm : coarse) {
    if (cm.ai == cm.bi && cm.aj == cm.bj) ++result.summary.n_identity_coarse;
  }

  const std::vector<Keypoint> kps_a = detect_keypoints(a, config, config.threads);
  const std::vector<Keypoint> kps_b = detect_keypoints(b, config, config.threads);
  result.summary.n_keypoints_a = static_cast<int>(kps_a.size());
  result.summary.n_keypoints_b = static_cast<int>(kps_b.size());

  const BlockKeypoints blocks_a = top_k_per_block({a.height, a.width, {}}, kps_a);
  const BlockKeypoints blocks_b = top_k_per_block({b.height, b.width, {}}, kps_b);

  result.correspondences = refine_matches(coarse, blocks_a, blocks_b, fa, fb,
                                          config.mutual_refine, config.threads);
  result.summary.n_correspondences = static_cast<int>(result.correspondences.size());
  return result;
}

EvalResult evaluate_dataset(const std::string& dir, const std::string& method,
                            const RunConfig& config) {
  config.validate();
  if (method != "superncn" && method != "knn") {
    throw ContractViolation("method must be superncn or knn, got '" + method + "'");
  }

  const std::vector<PosedImage> images = load_pose_csv(dir + "/poses.csv");
  std::vector<PosedImage> reference, query;
  for (const auto& img : images) {
    (img.traversal == config.reference_traversal ? reference : query).push_back(img);
  }
  const std::vector<ImagePair> pairs =
      select_close_pairs(reference, query, config.bins.back(), kPi / 4.0);
  if (pairs.empty()) throw EmptySelection("no close pairs found in " + dir);

  std::vector<PairTask> tasks(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    tasks[i].pair_id = pairs[i].ref.id + ":" + pairs[i].query.id;
    tasks[i].pair = &pairs[i];
  }
  std::sort(tasks.begin(), tasks.end(),
            [](const PairTask& a, const PairTask& b) { return a.pair_id < b.pair_id; });
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    tasks[i].pair_index = i;
    if (i > 0 && tasks[i].pair_id == tasks[i - 1].pair_id) {
      throw IoError("duplicate pair id " + tasks[i].pair_id + " in " + dir);
    }
  }

  const bool synthetic = std::filesystem::exists(dir + "/correspondences.jsonl");
  std::map<std::string, std::vector<PlantedCorrespondence>> planted;
  if (synthetic) {
    for (auto& entry : load_planted_jsonl(dir + "/correspondences.jsonl")) {
      planted[entry.ref_id + ":" + entry.query_id].push_back(entry.c);
    }
  }
  const Conv4Stack stack = build_conv_stack(config, synthetic);

  RunConfig inner = config;
  inner.threads = 1;

  EvalResult result;
  result.rows.assign(tasks.size(), {});
  parallel_for(tasks.size(), config.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const PairTask& task = tasks[i];
      std::vector<Correspondence> corrs;
      if (synthetic) {
        const auto it = planted.find(task.pair_id);
        const std::vector<PlantedCorrespondence> none;
        const auto& pc = it == planted.end() ? none : it->second;
        corrs = method == "superncn"
                    ? planted_superncn_matches(pc, task.pair_index, stack, inner)
                    : planted_knn_matches(pc, task.pair_index, inner);
      } else {
        const GrayImage ia = load_pgm(dir + "/" + task.pair->ref.id + ".pgm");
        const GrayImage ib = load_pgm(dir + "/" + task.pair->query.id + ".pgm");
        const DescriptorMap fa = image_descriptors(ia, task.pair->ref.id, inner);
        const DescriptorMap fb = image_descriptors(ib, task.pair->query.id, inner);
        if (method == "superncn") {
          corrs = match_images(ia, ib, stack, inner, &fa, &fb).correspondences;
        } else {
          corrs = image_knn_matches(ia, ib, fa, fb, inner, 1);
        }
      }
      result.rows[i] = estimate_pair(*task.pair, task.pair_id, task.pair_index,
                                     std::move(corrs), inner);
    }
  });

  std::vector<PairOutcome> outcomes(result.rows.size());
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    outcomes[i] = {result.rows[i].distance, result.rows[i].estimated, result.rows[i].errors};
  }
  result.bins = success_ratios(outcomes, config.theta_r, config.theta_t, config.bins);
  return result;
}

void synth_dataset(const std::string& out_dir, std::uint64_t seed, int n_pairs,
                   int n_points, double noise_px, double outlier_frac) {
  if (n_pairs < 0) throw ContractViolation("n_pairs must be non-negative");
  std::filesystem::create_directories(out_dir);
  std::ofstream jsonl(out_dir + "/correspondences.jsonl");
  if (!jsonl) throw IoError("cannot open correspondences for writing in " + out_dir);

  std::vector<PosedImage> images;
  images.reserve(static_cast<std::size_t>(n_pairs) * 2);
  for (int i = 0; i < n_pairs; ++i) {
    SynthScene scene;
    try {
      scene = synth_scene(mix_seed(seed, static_cast<std::uint64_t>(i)), n_points, noise_px,
                          outlier_frac);
    } catch (const GenerationError& e) {
      throw GenerationError("pair " + std::to_string(i) + ": " + e.what());
    }
    char tag[16];
    std::snprintf(tag, sizeof(tag), "p%04d", i);
    // Shift each pair's world frame along x so selection never crosses pairs;
    // relative geometry and planted pixels are unaffected.
    const Eigen::Vector3d shift(50.0 * i, 0.0, 0.0);
    scene.pair.ref.id = std::string(tag) + "_r";
    scene.pair.ref.traversal = "reference";
    scene.pair.ref.pose.t -= scene.pair.ref.pose.R * shift;
    scene.pair.query.id = std::string(tag) + "_q";
    scene.pair.query.traversal = "query";
    scene.pair.query.pose.t -= scene.pair.query.pose.R * shift;
    images.push_back(scene.pair.ref);
    images.push_back(scene.pair.query);

    for (const auto& c : scene.correspondences) {
      jsonl << "{\"ref_id\":\"" << scene.pair.ref.id << "\",\"query_id\":\""
            << scene.pair.query.id << "\",\"xA\":" << fmt_g17(c.xa)
            << ",\"yA\":" << fmt_g17(c.ya) << ",\"xB\":" << fmt_g17(c.xb)
            << ",\"yB\":" << fmt_g17(c.yb)
            << ",\"outlier\":" << (c.outlier ? "true" : "false") << "}\n";
    }
  }
  if (!jsonl) throw IoError("failed writing correspondences in " + out_dir);
  save_pose_csv(out_dir + "/poses.csv", images);
}

std::vector<PlantedEntry> load_planted_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open correspondences: " + path);
  std::vector<PlantedEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string context = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(context + ": " + e.what());
    }
    PlantedEntry entry;
    try {
      entry.ref_id = j.at("ref_id").get<std::string>();
      entry.query_id = j.at("query_id").get<std::string>();
      entry.c.xa = j.at("xA").get<double>();
      entry.c.ya = j.at("yA").get<double>();
      entry.c.xb = j.at("xB").get<double>();
      entry.c.yb = j.at("yB").get<double>();
      entry.c.outlier = j.value("outlier", false);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(context + ": " + e.what());
    }
    out.push_back(std::move(entry));
  }
  return out;
}

void write_correspondences_jsonl(const std::string& path,
                                 const std::vector<Correspondence>& list) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open correspondences for writing: " + path);
  for (const auto& c : list) {
    os << "{\"xA\":" << fmt_g17(c.xa) << ",\"yA\":" << fmt_g17(c.ya)
       << ",\"xB\":" << fmt_g17(c.xb) << ",\"yB\":" << fmt_g17(c.yb)
       << ",\"score\":" << fmt_g17(c.score) << "}\n";
  }
  if (!os) throw IoError("failed writing correspondences: " + path);
}

void write_pairs_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open pair report for writing: " + path);
  os << "pair_id,distance_m,r_err_deg,t_err_m,n_matches,n_inliers,status\n";
  for (const auto& row : rows) {
    os << row.pair_id << ',' << fmt_g9(row.distance) << ',';
    if (row.estimated) {
      os << fmt_g9(row.errors.r_err * 180.0 / kPi) << ',' << fmt_g9(row.errors.t_err);
    } else {
      os << "na,na";
    }
    os << ',' << row.n_matches << ',' << row.n_inliers << ',' << row.status << '\n';
  }
  if (!os) throw IoError("failed writing pair report: " + path);
}

void write_bins_csv(const std::string& path, const std::vector<BinRatio>& bins) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open bin report for writing: " + path);
  os << "bin_lo,bin_hi,n_pairs,rot_success,trans_success\n";
  for (const auto& b : bins) {
    os << fmt_g9(b.lo) << ',' << fmt_g9(b.hi) << ',' << b.n_pairs << ',';
    if (b.populated) {
      os << fmt_g9(b.rot_success) << ',' << fmt_g9(b.trans_success);
    } else {
      os << "na,na";
    }
    os << '\n';
  }
  if (!os) throw IoError("failed writing bin report: " + path);
}

}  // namespace ncmatch
