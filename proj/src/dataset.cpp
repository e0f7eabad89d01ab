#include "ncmatch/dataset.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ncmatch/rng.h"

namespace ncmatch {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& field, const std::string& context) {
  if (field.empty()) throw IoError(context + ": empty numeric field");
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size() || !std::isfinite(v)) {
    throw IoError(context + ": bad numeric field '" + field + "'");
  }
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

void GrayImage::validate() const {
  if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0) {
    throw ContractViolation("image dims must be positive multiples of 16");
  }
  if (pixels.size() != static_cast<std::size_t>(height) * width) {
    throw ContractViolation("pixel count does not match dims");
  }
  for (double p : pixels) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractViolation("pixel outside [0, 1]");
  }
}

Eigen::Vector3d camera_center(const Pose& p) {
  p.validate();
  return -p.R.transpose() * p.t;
}

Pose relative_pose(const Pose& ref, const Pose& query) {
  ref.validate();
  query.validate();
  Pose rel;
  rel.R = query.R * ref.R.transpose();
  rel.t = query.t - rel.R * ref.t;
  return rel;
}

std::vector<ImagePair> select_close_pairs(const std::vector<PosedImage>& reference,
                                          const std::vector<PosedImage>& query,
                                          double d_max, double a_max) {
  if (!(d_max > 0.0) || !(a_max > 0.0)) {
    throw ContractViolation("pair selection thresholds must be positive");
  }
  std::vector<ImagePair> out;
  for (const auto& r : reference) {
    const Eigen::Vector3d cr = camera_center(r.pose);
    const Eigen::Vector3d ar = r.pose.R.row(2).transpose();
    for (const auto& q : query) {
      const Eigen::Vector3d cq = camera_center(q.pose);
      const double dist = (cq - cr).norm();
      if (dist >= d_max) continue;
      const Eigen::Vector3d aq = q.pose.R.row(2).transpose();
      const double angle = std::acos(std::clamp(ar.dot(aq), -1.0, 1.0));
      if (angle >= a_max) continue;
      ImagePair pair;
      pair.ref = r;
      pair.query = q;
      pair.gt_relative = relative_pose(r.pose, q.pose);
      pair.baseline = pair.gt_relative.t.norm();
      out.push_back(std::move(pair));
    }
  }
  return out;
}

PairLabel label_pair(const PosedImage& a, const PosedImage& b, double d_thr, double r_thr) {
  const Pose rel = relative_pose(a.pose, b.pose);
  const double angle =
      std::acos(std::clamp((rel.R.trace() - 1.0) / 2.0, -1.0, 1.0));
  return {rel.t.norm() < d_thr && angle < r_thr ? 1 : 0};
}

DescriptorMap handcrafted_descriptor_map(const GrayImage& img) {
  img.validate();
  const int h = img.height / 16;
  const int w = img.width / 16;
  DescriptorMap map(h, w, 256);

  // Centre weights shared by every block; sigma 12 coarse, sigma 4 fine.
  double coarse[16][16], fine[16][16];
  for (int dy = 0; dy < 16; ++dy) {
    for (int dx = 0; dx < 16; ++dx) {
      const double r2 = (dy - 7.5) * (dy - 7.5) + (dx - 7.5) * (dx - 7.5);
      coarse[dy][dx] = std::exp(-r2 / (2.0 * 12.0 * 12.0));
      fine[dy][dx] = std::exp(-r2 / (2.0 * 4.0 * 4.0));
    }
  }

  std::vector<double> desc(256);
  for (int bi = 0; bi < h; ++bi) {
    for (int bj = 0; bj < w; ++bj) {
      std::fill(desc.begin(), desc.end(), 0.0);
      for (int dy = 0; dy < 16; ++dy) {
        for (int dx = 0; dx < 16; ++dx) {
          const int y = bi * 16 + dy;
          const int x = bj * 16 + dx;
          const double gx = 0.5 * (img.at(y, std::min(x + 1, img.width - 1)) -
                                   img.at(y, std::max(x - 1, 0)));
          const double gy = 0.5 * (img.at(std::min(y + 1, img.height - 1), x) -
                                   img.at(std::max(y - 1, 0), x));
          const double mag = std::hypot(gx, gy);
          if (mag == 0.0) continue;
          int bin = static_cast<int>((std::atan2(gy, gx) + kPi) / (kPi / 4.0));
          if (bin > 7) bin = 7;
          const int sub = (dy / 4) * 4 + dx / 4;
          desc[static_cast<std::size_t>(sub * 8 + bin)] += mag * coarse[dy][dx];
          desc[static_cast<std::size_t>(128 + sub * 8 + bin)] += mag * fine[dy][dx];
        }
      }
      double norm2 = 0.0;
      for (double v : desc) norm2 += v * v;
      if (norm2 > 0.0) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& v : desc) v = std::min(v * inv, 0.2);
      }
      // Zero gradients leave desc zero; set_cell's renormalization then falls
      // back to the uniform unit vector.
      map.set_cell(bi, bj, desc);
    }
  }
  return map;
}

CellKeypointTensor handcrafted_keypoint_tensor(const GrayImage& img) {
  img.validate();
  const int hh = img.height;
  const int ww = img.width;
  std::vector<double> ix(static_cast<std::size_t>(hh) * ww);
  std::vector<double> iy(ix.size());
  for (int y = 0; y < hh; ++y) {
    for (int x = 0; x < ww; ++x) {
      ix[static_cast<std::size_t>(y) * ww + x] =
          0.5 * (img.at(y, std::min(x + 1, ww - 1)) - img.at(y, std::max(x - 1, 0)));
      iy[static_cast<std::size_t>(y) * ww + x] =
          0.5 * (img.at(std::min(y + 1, hh - 1), x) - img.at(std::max(y - 1, 0), x));
    }
  }

  std::vector<double> response(ix.size(), 0.0);
  double peak = 0.0;
  for (int y = 0; y < hh; ++y) {
    for (int x = 0; x < ww; ++x) {
      double sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (int oy = -1; oy <= 1; ++oy) {
        const int yy = std::clamp(y + oy, 0, hh - 1);
        for (int ox = -1; ox <= 1; ++ox) {
          const int xx = std::clamp(x + ox, 0, ww - 1);
          const double gx = ix[static_cast<std::size_t>(yy) * ww + xx];
          const double gy = iy[static_cast<std::size_t>(yy) * ww + xx];
          sxx += gx * gx;
          syy += gy * gy;
          sxy += gx * gy;
        }
      }
      const double r = sxx * syy - sxy * sxy - 0.06 * (sxx + syy) * (sxx + syy);
      const double v = std::max(0.0, r);
      response[static_cast<std::size_t>(y) * ww + x] = v;
      peak = std::max(peak, v);
    }
  }

  CellKeypointTensor t(hh / 8, ww / 8);
  for (int ci = 0; ci < t.h8; ++ci) {
    for (int cj = 0; cj < t.w8; ++cj) {
      for (int ch = 0; ch < 64; ++ch) {
        const int y = ci * 8 + ch / 8;
        const int x = cj * 8 + ch % 8;
        const double v = peak > 0.0 ? response[static_cast<std::size_t>(y) * ww + x] / peak : 0.0;
        t.logits[t.index(ci, cj, ch)] = 8.0 * v;
      }
      t.logits[t.index(ci, cj, 64)] = 2.0;
    }
  }
  return t;
}

SynthScene synth_scene(std::uint64_t seed, int n_points, double noise_px,
                       double outlier_frac) {
  if (n_points < 8) throw ContractViolation("synth_scene needs at least 8 points");
  if (!(noise_px >= 0.0) || !std::isfinite(noise_px)) {
    throw ContractViolation("noise_px must be non-negative");
  }
  if (!(outlier_frac >= 0.0 && outlier_frac < 1.0)) {
    throw ContractViolation("outlier_frac must be in [0, 1)");
  }

  SeededRng rng(seed);
  const CameraIntrinsics k{160.0, 160.0, 128.0, 128.0};

  auto random_unit = [&rng]() {
    while (true) {
      Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
      const double n = v.norm();
      if (n > 1e-6) return Eigen::Vector3d(v / n);
    }
  };

  const Eigen::Matrix3d r_a =
      Eigen::AngleAxisd(rng.uniform(0.0, 0.1), random_unit()).toRotationMatrix();
  const Eigen::Vector3d c_a(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                            rng.uniform(-1.0, 1.0));
  const double baseline = rng.uniform(0.5, 9.5);
  const Eigen::Vector3d c_b = c_a + baseline * random_unit();

  // Query camera looks at the centre of the point box (in A's frame at depth
  // 18.5), roll stabilized against A's vertical axis, relative rotation
  // clamped to 25 degrees so the pair always passes selection and labeling.
  const Eigen::Vector3d g = r_a.transpose() * Eigen::Vector3d(0.0, 0.0, 18.5) + c_a;
  const Eigen::Vector3d z_b = (g - c_b).normalized();
  Eigen::Vector3d up = r_a.row(1).transpose();
  if (up.cross(z_b).norm() < 1e-6) up = r_a.row(0).transpose();
  const Eigen::Vector3d x_b = up.cross(z_b).normalized();
  const Eigen::Vector3d y_b = z_b.cross(x_b);
  Eigen::Matrix3d r_b;
  r_b.row(0) = x_b;
  r_b.row(1) = y_b;
  r_b.row(2) = z_b;
  const Eigen::AngleAxisd rel_aa(r_b * r_a.transpose());
  const double max_rel = 25.0 * kPi / 180.0;
  if (rel_aa.angle() > max_rel) {
    r_b = Eigen::AngleAxisd(max_rel, rel_aa.axis()).toRotationMatrix() * r_a;
  }

  const Pose pose_a{r_a, -r_a * c_a};
  const Pose pose_b{r_b, -r_b * c_b};

  const double margin = 8.0;
  std::vector<PlantedCorrespondence> corrs;
  corrs.reserve(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    bool placed = false;
    // Points are sampled angularly (uniform image direction in A, uniform
    // depth 7 to 30 m) so every depth covers the full frame: near points
    // carry the parallax that pins the translation direction, far points
    // anchor the rotation.
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double z = rng.uniform(7.0, 30.0);
      const Eigen::Vector3d xc(rng.uniform(-0.65, 0.65) * z, rng.uniform(-0.5, 0.5) * z, z);
      const Eigen::Vector3d xw = r_a.transpose() * xc + c_a;
      const Eigen::Vector3d xq = r_b * (xw - c_b);
      if (xq.z() < 0.5) continue;
      const double ub = k.fx * xq.x() / xq.z() + k.cx;
      const double vb = k.fy * xq.y() / xq.z() + k.cy;
      if (ub < margin || ub > 256.0 - margin || vb < margin || vb > 256.0 - margin) {
        continue;
      }
      corrs.push_back({k.fx * xc.x() / xc.z() + k.cx, k.fy * xc.y() / xc.z() + k.cy,
                       ub, vb, false});
      placed = true;
    }
    if (!placed) {
      throw GenerationError("synth point " + std::to_string(i) +
                            " left the shared frustum after 100 attempts");
    }
  }

  if (noise_px > 0.0) {
    for (auto& c : corrs) {
      c.xa += noise_px * rng.normal();
      c.ya += noise_px * rng.normal();
      c.xb += noise_px * rng.normal();
      c.yb += noise_px * rng.normal();
    }
  }
  const int n_out = static_cast<int>(outlier_frac * n_points);
  for (int i = n_points - n_out; i < n_points; ++i) {
    auto& c = corrs[static_cast<std::size_t>(i)];
    c.xb = rng.uniform(margin, 256.0 - margin);
    c.yb = rng.uniform(margin, 256.0 - margin);
    c.outlier = true;
  }

  SynthScene out;
  out.pair.ref = {"ref", "reference", pose_a, k};
  out.pair.query = {"query", "query", pose_b, k};
  out.pair.gt_relative = relative_pose(pose_a, pose_b);
  out.pair.baseline = out.pair.gt_relative.t.norm();
  out.correspondences = std::move(corrs);
  return out;
}

GrayImage load_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path);
  auto next_token = [&is, &path]() {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
      if (c == '#') {
        while ((c = is.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (!std::isspace(c)) break;
    }
    if (c == EOF) throw IoError("truncated PGM header: " + path);
    tok.push_back(static_cast<char>(c));
    while ((c = is.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
    return tok;
  };

  if (next_token() != "P5") throw IoError("not a binary PGM (P5): " + path);
  auto parse_dim = [&path](const std::string& tok, const char* what) {
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (end != tok.c_str() + tok.size() || v <= 0 || v > (1 << 15)) {
      throw IoError(std::string("bad PGM ") + what + ": " + path);
    }
    return static_cast<int>(v);
  };
  const int w = parse_dim(next_token(), "width");
  const int h = parse_dim(next_token(), "height");
  const int maxval = parse_dim(next_token(), "maxval");
  if (maxval > 255) throw IoError("PGM maxval above 255 unsupported: " + path);

  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw IoError("truncated PGM data: " + path);
  }

  GrayImage img;
  img.height = (h + 15) / 16 * 16;
  img.width = (w + 15) / 16 * 16;
  img.pixels.assign(static_cast<std::size_t>(img.height) * img.width, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(y, x) = raw[static_cast<std::size_t>(y) * w + x] / static_cast<double>(maxval);
    }
  }
  return img;
}

void save_pgm(const std::string& path, const GrayImage& img) {
  img.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open image for writing: " + path);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (double p : img.pixels) {
    os.put(static_cast<char>(static_cast<int>(std::lround(p * 255.0))));
  }
  if (!os) throw IoError("failed writing image: " + path);
}

void save_pose_csv(const std::string& path, const std::vector<PosedImage>& images) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open pose file for writing: " + path);
  os << "id,traversal,qw,qx,qy,qz,tx,ty,tz,fx,fy,cx,cy\n";
  for (const auto& img : images) {
    img.pose.validate();
    img.intrinsics.validate();
    if (img.id.find_first_of(",\n\r") != std::string::npos ||
        img.traversal.find_first_of(",\n\r") != std::string::npos) {
      throw ContractViolation("pose id and traversal must not contain commas or newlines");
    }
    Eigen::Quaterniond q(img.pose.R);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    os << img.id << ',' << img.traversal << ',' << fmt_g17(q.w()) << ',' << fmt_g17(q.x())
       << ',' << fmt_g17(q.y()) << ',' << fmt_g17(q.z()) << ',' << fmt_g17(img.pose.t(0))
       << ',' << fmt_g17(img.pose.t(1)) << ',' << fmt_g17(img.pose.t(2)) << ','
       << fmt_g17(img.intrinsics.fx) << ',' << fmt_g17(img.intrinsics.fy) << ','
       << fmt_g17(img.intrinsics.cx) << ',' << fmt_g17(img.intrinsics.cy) << '\n';
  }
  if (!os) throw IoError("failed writing pose file: " + path);
}

std::vector<PosedImage> load_pose_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open pose file: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty pose file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,traversal,qw,qx,qy,qz,tx,ty,tz,fx,fy,cx,cy") {
    throw IoError("unexpected pose file header: " + path);
  }

  std::vector<PosedImage> out;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string context = path + ":" + std::to_string(line_no);
    const auto fields = split_csv(line);
    if (fields.size() != 13) {
      throw IoError(context + ": expected 13 fields, found " +
                    std::to_string(fields.size()));
    }
    PosedImage img;
    img.id = fields[0];
    img.traversal = fields[1];
    if (img.id.empty()) throw IoError(context + ": empty image id");
    double q[4];
    for (int i = 0; i < 4; ++i) q[i] = parse_double(fields[static_cast<std::size_t>(2 + i)], context);
    const double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (std::abs(norm - 1.0) > 1e-6) {
      throw IoError(context + ": quaternion norm deviates from 1 by more than 1e-6");
    }
    Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    quat.normalize();
    img.pose.R = quat.toRotationMatrix();
    for (int i = 0; i < 3; ++i) img.pose.t(i) = parse_double(fields[static_cast<std::size_t>(6 + i)], context);
    img.intrinsics.fx = parse_double(fields[9], context);
    img.intrinsics.fy = parse_double(fields[10], context);
    img.intrinsics.cx = parse_double(fields[11], context);
    img.intrinsics.cy = parse_double(fields[12], context);
    if (!(img.intrinsics.fx > 0.0) || !(img.intrinsics.fy > 0.0)) {
      throw IoError(context + ": focal lengths must be positive");
    }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace ncmatch
