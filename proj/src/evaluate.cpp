#include "perfcap/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <Eigen/SVD>

#include "perfcap/detections.hpp"
#include "perfcap/error.hpp"
#include "perfcap/io.hpp"
#include "perfcap/raster.hpp"

namespace perfcap {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fixed6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

double mean_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]).norm();
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

// Deterministic per-pixel texture in [-1, 1].
double texture(int x, int y, int frame, unsigned salt) {
  uint32_t h = static_cast<uint32_t>(x) * 73856093u ^ static_cast<uint32_t>(y) * 19349663u ^
               static_cast<uint32_t>(frame) * 83492791u ^ salt;
  h ^= h >> 13;
  h *= 0x5bd1e995u;
  h ^= h >> 15;
  return static_cast<double>(h & 0xffff) / 32767.5 - 1.0;
}

}  // namespace

std::optional<Similarity> align_points(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                                       bool with_scale) {
  if (source.size() != target.size()) throw InputError("align_points: point counts differ");
  const auto n = static_cast<Eigen::Index>(source.size());
  if (n < 3) return std::nullopt;
  Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    cs += source[static_cast<size_t>(i)];
    ct += target[static_cast<size_t>(i)];
  }
  cs /= static_cast<double>(n);
  ct /= static_cast<double>(n);
  MatX S(3, n), T(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    S.col(i) = source[static_cast<size_t>(i)] - cs;
    T.col(i) = target[static_cast<size_t>(i)] - ct;
  }
  const Eigen::JacobiSVD<MatX> rank_svd(S);
  const auto sv = rank_svd.singularValues();
  if (!(sv[0] > 0.0) || sv[2] <= 1e-9 * sv[0]) return std::nullopt;

  const Mat3 H = T * S.transpose();
  const Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) D(2, 2) = -1.0;
  Similarity sim;
  sim.rotation = svd.matrixU() * D * svd.matrixV().transpose();
  if (with_scale) sim.scale = (svd.singularValues().asDiagonal() * D).trace() / S.squaredNorm();
  sim.translation = ct - sim.scale * (sim.rotation * cs);
  return sim;
}

double MetricsReport::mean(double FrameMetrics::*field) const {
  double s = 0.0;
  int n = 0;
  for (const auto& f : frames) {
    const double v = f.*field;
    if (!f.aligned || std::isnan(v)) continue;
    s += v;
    ++n;
  }
  return n > 0 ? s / n : kNaN;
}

FrameMetrics joint_metrics(const std::vector<Vec3>& jp, const std::vector<Vec3>& jt) {
  if (jp.size() != jt.size()) throw InputError("joint_metrics: joint counts differ");
  FrameMetrics m;
  m.joint_error_raw = 1000.0 * mean_distance(jp, jt);
  const auto sim = align_points(jp, jt, true);
  const auto rigid = align_points(jp, jt, false);
  if (sim && rigid) {
    std::vector<Vec3> a(jp.size()), b(jp.size());
    for (size_t j = 0; j < jp.size(); ++j) {
      a[j] = sim->apply(jp[j]);
      b[j] = rigid->apply(jp[j]);
    }
    m.joint_error_similarity = 1000.0 * mean_distance(a, jt);
    m.joint_error_procrustes = 1000.0 * mean_distance(b, jt);
  } else {
    m.aligned = false;
    m.joint_error_similarity = m.joint_error_procrustes = kNaN;
  }
  return m;
}

MetricsReport evaluate(const EvaluationInputs& in) {
  if (!in.rig || !in.predicted_poses || !in.true_poses) throw InputError("evaluate: poses and rig are required");
  const auto& pred = *in.predicted_poses;
  const auto& truth = *in.true_poses;
  if (pred.size() != truth.size())
    throw InputError("evaluate: " + std::to_string(pred.size()) + " predicted frames vs " +
                     std::to_string(truth.size()) + " ground-truth frames");
  const bool meshes = in.predicted_meshes && in.true_meshes;
  if (meshes && (in.predicted_meshes->size() != pred.size() || in.true_meshes->size() != pred.size()))
    throw InputError("evaluate: mesh sequences do not match the frame count");
  const bool masks = in.true_masks && in.triangles && in.camera && in.predicted_meshes;
  if (masks && in.true_masks->size() != pred.size()) throw InputError("evaluate: mask count does not match the frame count");

  MetricsReport report;
  for (size_t f = 0; f < pred.size(); ++f) {
    FrameMetrics m;
    m.frame = static_cast<int>(f);
    m = joint_metrics(joint_positions(*in.rig, pred[f]), joint_positions(*in.rig, truth[f]));
    m.frame = static_cast<int>(f);
    m.vertex_error = kNaN;
    if (meshes) {
      const auto& vp = (*in.predicted_meshes)[f];
      const auto& vt = (*in.true_meshes)[f];
      if (vp.size() != vt.size()) throw InputError("evaluate: mesh topology differs in frame " + std::to_string(f));
      Vec3 shift = Vec3::Zero();
      for (size_t i = 0; i < vp.size(); ++i) shift += vt[i] - vp[i];
      if (!vp.empty()) shift /= static_cast<double>(vp.size());
      double s = 0.0;
      for (size_t i = 0; i < vp.size(); ++i) s += (vp[i] + shift - vt[i]).norm();
      m.vertex_error = vp.empty() ? 0.0 : 1000.0 * s / static_cast<double>(vp.size());
    }
    m.iou = kNaN;
    if (masks) m.iou = mask_iou(render_mask((*in.predicted_meshes)[f], *in.triangles, *in.camera), (*in.true_masks)[f]);
    report.frames.push_back(m);
  }
  return report;
}

std::string metrics_to_csv(const MetricsReport& report) {
  std::string out = "frame,aligned,joint_error_raw_mm,joint_error_similarity_mm,joint_error_procrustes_mm,"
                    "vertex_error_mm,iou\n";
  for (const auto& f : report.frames) {
    out += std::to_string(f.frame) + "," + (f.aligned ? "1" : "0") + "," + fixed6(f.joint_error_raw) + "," +
           fixed6(f.joint_error_similarity) + "," + fixed6(f.joint_error_procrustes) + "," + fixed6(f.vertex_error) +
           "," + fixed6(f.iou) + "\n";
  }
  return out;
}

MetricsReport metrics_from_csv(const std::string& text) {
  MetricsReport report;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.rfind("frame,", 0) == 0) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw InputError("metrics CSV line " + std::to_string(line_no) + ": expected 7 columns");
    auto num = [&](const std::string& s) {
      if (s == "nan") return kNaN;
      try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        throw InputError("metrics CSV line " + std::to_string(line_no) + ": bad number '" + s + "'");
      }
    };
    FrameMetrics f;
    f.frame = static_cast<int>(num(cells[0]));
    f.aligned = cells[1] == "1";
    f.joint_error_raw = num(cells[2]);
    f.joint_error_similarity = num(cells[3]);
    f.joint_error_procrustes = num(cells[4]);
    f.vertex_error = num(cells[5]);
    f.iou = num(cells[6]);
    report.frames.push_back(f);
  }
  return report;
}

std::string svg_plot(const std::string& title, const std::string& y_label,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  constexpr double W = 640, H = 360, L = 70, R = 20, T = 40, B = 50;
  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e"};
  size_t n = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [name, v] : series) {
    n = std::max(n, v.size());
    for (double x : v)
      if (std::isfinite(x)) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  if (hi - lo < 1e-12) {
    const double pad = std::max(1e-6, std::abs(hi) * 0.1);
    lo -= pad;
    hi += pad;
  }
  auto px = [&](size_t i) { return n > 1 ? L + (W - L - R) * static_cast<double>(i) / static_cast<double>(n - 1) : L + (W - L - R) / 2; };
  auto py = [&](double v) { return T + (H - T - B) * (hi - v) / (hi - lo); };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"640\" height=\"360\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + title + "</text>\n";
  s += "<line x1=\"" + fixed6(L) + "\" y1=\"" + fixed6(H - B) + "\" x2=\"" + fixed6(W - R) + "\" y2=\"" + fixed6(H - B) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fixed6(L) + "\" y1=\"" + fixed6(T) + "\" x2=\"" + fixed6(L) + "\" y2=\"" + fixed6(H - B) + "\" stroke=\"black\"/>\n";
  s += "<text x=\"" + fixed6(L - 6) + "\" y=\"" + fixed6(T + 4) + "\" text-anchor=\"end\">" + fixed6(hi) + "</text>\n";
  s += "<text x=\"" + fixed6(L - 6) + "\" y=\"" + fixed6(H - B + 4) + "\" text-anchor=\"end\">" + fixed6(lo) + "</text>\n";
  s += "<text x=\"" + fixed6((L + W - R) / 2) + "\" y=\"" + fixed6(H - 12) + "\" text-anchor=\"middle\">frame</text>\n";
  s += "<text x=\"16\" y=\"" + fixed6((T + H - B) / 2) + "\" transform=\"rotate(-90 16 " + fixed6((T + H - B) / 2) +
       ")\" text-anchor=\"middle\">" + y_label + "</text>\n";
  for (size_t k = 0; k < series.size(); ++k) {
    const auto& [name, v] = series[k];
    const char* color = colors[k % 4];
    std::string pts;
    double sum = 0.0;
    int cnt = 0;
    for (size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) continue;
      pts += fixed6(px(i)) + "," + fixed6(py(v[i])) + " ";
      sum += v[i];
      ++cnt;
    }
    if (cnt == 1) {
      const size_t i = static_cast<size_t>(std::find_if(v.begin(), v.end(), [](double x) { return std::isfinite(x); }) - v.begin());
      s += "<circle cx=\"" + fixed6(px(i)) + "\" cy=\"" + fixed6(py(v[i])) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    } else if (cnt > 1) {
      s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    }
    const double y = T + 16.0 * static_cast<double>(k);
    s += "<line x1=\"" + fixed6(W - R - 190) + "\" y1=\"" + fixed6(y) + "\" x2=\"" + fixed6(W - R - 170) + "\" y2=\"" +
         fixed6(y) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fixed6(W - R - 165) + "\" y=\"" + fixed6(y + 4) + "\">" + name +
         " (mean " + fixed6(cnt > 0 ? sum / cnt : kNaN) + ")</text>\n";
  }
  s += "</svg>\n";
  return s;
}

void render_report(const MetricsReport& report, const std::filesystem::path& out_dir) {
  if (report.frames.empty()) throw InputError("render_report: the report has no frames");
  std::filesystem::create_directories(out_dir);
  io::write_text(out_dir / "metrics.csv", metrics_to_csv(report));
  auto column = [&](double FrameMetrics::*field) {
    std::vector<double> v;
    for (const auto& f : report.frames) v.push_back(f.aligned || field == &FrameMetrics::joint_error_raw ? f.*field : kNaN);
    return v;
  };
  std::string summary = "metric,mean\n";
  const std::pair<const char*, double FrameMetrics::*> fields[] = {
      {"joint_error_raw_mm", &FrameMetrics::joint_error_raw},
      {"joint_error_similarity_mm", &FrameMetrics::joint_error_similarity},
      {"joint_error_procrustes_mm", &FrameMetrics::joint_error_procrustes},
      {"vertex_error_mm", &FrameMetrics::vertex_error},
      {"iou", &FrameMetrics::iou}};
  for (const auto& [name, field] : fields) summary += std::string(name) + "," + fixed6(report.mean(field)) + "\n";
  io::write_text(out_dir / "summary.csv", summary);
  io::write_text(out_dir / "joint_error.svg",
                 svg_plot("Per-joint 3D error", "mm",
                          {{"raw", column(&FrameMetrics::joint_error_raw)},
                           {"similarity", column(&FrameMetrics::joint_error_similarity)},
                           {"procrustes", column(&FrameMetrics::joint_error_procrustes)}}));
  io::write_text(out_dir / "vertex_error.svg",
                 svg_plot("Vertex error after translation alignment", "mm", {{"vertex", column(&FrameMetrics::vertex_error)}}));
  io::write_text(out_dir / "iou.svg", svg_plot("Silhouette IoU", "IoU", {{"IoU", column(&FrameMetrics::iou)}}));
}

std::string frame_name(const std::string& prefix, int frame, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d", frame);
  return prefix + buf + ext;
}

RgbImage composite_frame(const BinaryMask& mask, int frame) {
  RgbImage img(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const bool fg = mask.at(x, y);
      const double t = texture(x, y, frame, fg ? 0x9e3779b9u : 0x7f4a7c15u);
      const double base[3] = {fg ? 200.0 : 50.0, fg ? 60.0 : 150.0, fg ? 50.0 : 70.0};
      uint8_t* p = img.pixel(x, y);
      for (int k = 0; k < 3; ++k) p[k] = static_cast<uint8_t>(std::clamp(base[k] + 12.0 * t, 0.0, 255.0));
    }
  }
  return img;
}

SynthDataset synth_generate(const SynthDatasetSpec& spec) {
  SynthDataset d;
  d.rig = default_rig();
  d.actor = capsule_template(d.rig);
  d.camera = synth_camera();
  std::mt19937 rng(spec.seed);
  const auto motion = random_motion(d.rig, spec.frames, spec.dct_k, rng, spec.amplitude, spec.depth);
  d.poses = generate_motion(d.rig, motion);
  d.detections = synth_detections(d.rig, d.camera, d.poses, spec.noise, rng);
  for (size_t f = 0; f < d.poses.size(); ++f) {
    d.meshes.push_back(skin_mesh(d.actor, d.rig, d.poses[f]));
    d.masks.push_back(render_mask(d.meshes.back(), d.actor.triangles, d.camera));
    if (spec.write_frames) d.frames.push_back(composite_frame(d.masks.back(), static_cast<int>(f)));
  }
  return d;
}

void save_dataset(const SynthDataset& data, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "gt_meshes");
  fs::create_directories(dir / "masks");
  io::save_obj(dir / "template.obj", data.actor.vertices, data.actor.triangles);
  io::save_rig(dir / "rig.json", data.rig, &data.actor.skin_weights);
  io::save_camera(dir / "camera.json", data.camera);
  save_detections(dir / "detections.json", data.detections, data.rig.joint_names());
  io::save_poses(dir / "gt_poses.json", data.poses);
  for (size_t f = 0; f < data.meshes.size(); ++f) {
    io::save_obj_vertices(dir / "gt_meshes" / frame_name("frame_", static_cast<int>(f), ".obj"), data.meshes[f]);
    io::save_mask(dir / "masks" / frame_name("mask_", static_cast<int>(f), ".png"), data.masks[f]);
  }
  if (!data.frames.empty()) {
    fs::create_directories(dir / "frames");
    for (size_t f = 0; f < data.frames.size(); ++f)
      io::save_png(dir / "frames" / frame_name("frame_", static_cast<int>(f), ".png"), data.frames[f]);
  }
  std::string cfg =
      "# Synthetic dataset run configuration.\n"
      "parallelism = 1\n\n"
      "[paths]\n"
      "template = \"template.obj\"\n"
      "rig = \"rig.json\"\n"
      "camera = \"camera.json\"\n"
      "detections = \"detections.json\"\n";
  cfg += data.frames.empty() ? "masks = \"masks\"\n" : "frames = \"frames\"\n";
  cfg += "ground_truth = \".\"\n"
         "output = \"out\"\n\n"
         "[batch]\n"
         "w_3d = 0.1            # w_3d, 3D detection term\n"
         "w_d = 50.0            # w_d, DCT smoothness term\n"
         "lambda = [1.0, 600.0, 600.0]  # lambda_t, lambda_R, lambda_Theta\n"
         "K = 8                 # DCT basis size\n"
         "size = 50             # frames per batch\n"
         "overlap = 10          # frames shared by consecutive batches\n\n"
         "[gate]\n"
         "enabled = true\n"
         "thres_pck = 0.4       # thres_PCK\n"
         "alpha = 0.2           # PCK radius as a fraction of the torso length\n\n"
         "[segmentation]\n";
  cfg += data.frames.empty() ? "enabled = false       # silhouettes from paths.masks\n" : "enabled = true\n";
  cfg += "gamma = 50.0          # GrabCut pairwise weight\n\n"
         "[refinement]\n"
         "enabled = true\n"
         "w_stab = 0.06         # w_stab\n"
         "iterations = 3        # pose ICP iterations\n\n"
         "[surface]\n"
         "enabled = true\n"
         "w_arap = [0.6, 0.2]   # w_arap per surface ICP iteration\n"
         "M = 1000              # deformation graph nodes\n"
         "window = 5            # temporal smoothing window\n"
         "graph_per_frame = true\n";
  io::write_text(dir / "config.toml", cfg);
}

GroundTruth load_ground_truth(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  GroundTruth gt;
  gt.poses = io::load_poses(dir / "gt_poses.json");
  const int n = static_cast<int>(gt.poses.size());
  if (fs::is_directory(dir / "gt_meshes")) {
    for (int f = 0; f < n; ++f) gt.meshes.push_back(io::load_obj_vertices(dir / "gt_meshes" / frame_name("frame_", f, ".obj")));
  }
  if (fs::is_directory(dir / "masks")) {
    for (int f = 0; f < n; ++f) gt.masks.push_back(io::load_mask(dir / "masks" / frame_name("mask_", f, ".png")));
  }
  return gt;
}

}  // namespace perfcap
