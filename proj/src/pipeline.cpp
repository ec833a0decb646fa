#include "perfcap/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "json_util.hpp"
#include "perfcap/error.hpp"
#include "perfcap/evaluate.hpp"
#include "perfcap/io.hpp"
#include "perfcap/parallel.hpp"
#include "perfcap/raster.hpp"

namespace perfcap {
namespace {

using json = nlohmann::json;

// ---- TOML-style reader --------------------------------------------------

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

json parse_toml_value(const std::string& raw, int line_no) {
  const std::string v = trim(raw);
  auto fail = [&](const std::string& why) -> json {
    throw InputError("config line " + std::to_string(line_no) + ": " + why);
  };
  if (v.empty()) return fail("missing value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') return fail("unterminated string");
    std::string out;
    for (size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        ++i;
        out += v[i] == 'n' ? '\n' : v[i] == 't' ? '\t' : v[i];
      } else {
        out += v[i];
      }
    }
    return out;
  }
  if (v.front() == '[') {
    if (v.back() != ']') return fail("unterminated array");
    json arr = json::array();
    const std::string body = trim(v.substr(1, v.size() - 2));
    if (body.empty()) return arr;
    std::string item;
    bool quoted = false;
    for (char c : body + ",") {
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        arr.push_back(parse_toml_value(item, line_no));
        item.clear();
      } else {
        item += c;
      }
    }
    return arr;
  }
  if (v == "true") return true;
  if (v == "false") return false;
  try {
    size_t used = 0;
    if (v.find_first_of(".eE") == std::string::npos) {
      const long long i = std::stoll(v, &used);
      if (used == v.size()) return i;
    }
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  return fail("cannot parse value '" + v + "'");
}

json parse_toml(const std::string& text) {
  json root = json::object();
  json* section = &root;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw InputError("config line " + std::to_string(line_no) + ": malformed section header");
      const std::string name = trim(s.substr(1, s.size() - 2));
      if (name.empty()) throw InputError("config line " + std::to_string(line_no) + ": empty section name");
      if (!root.contains(name)) root[name] = json::object();
      section = &root[name];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) throw InputError("config line " + std::to_string(line_no) + ": empty key");
    if (section->contains(key)) throw InputError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    (*section)[key] = parse_toml_value(s.substr(eq + 1), line_no);
  }
  return root;
}

// ---- config decoding ----------------------------------------------------

template <class T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument("bool");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw std::invalid_argument("string");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw std::invalid_argument("integer");
    } else {
      if (!v.is_number()) throw std::invalid_argument("number");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw InputError("config key '" + key + "' has the wrong type");
  }
}

std::vector<double> get_doubles(const json& v, const std::string& key) {
  if (!v.is_array()) throw InputError("config key '" + key + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) out.push_back(get_as<double>(e, key));
  return out;
}

fs::path resolve(const std::string& p, const fs::path& base) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void decode(const json& root, PipelineConfig& cfg, const fs::path& base) {
  if (!root.is_object()) throw InputError("config must be an object of sections");
  for (const auto& [section, body] : root.items()) {
    if (section == "parallelism") {
      cfg.parallelism = get_as<int>(body, section);
      continue;
    }
    if (!body.is_object()) throw InputError("config section '" + section + "' must be a table");
    for (const auto& [key, v] : body.items()) {
      const std::string name = section + "." + key;
      bool known = true;
      if (section == "paths") {
        const fs::path p = resolve(get_as<std::string>(v, name), base);
        if (key == "template") cfg.paths.template_obj = p;
        else if (key == "rig") cfg.paths.rig = p;
        else if (key == "camera") cfg.paths.camera = p;
        else if (key == "detections") cfg.paths.detections = p;
        else if (key == "frames") cfg.paths.frames = p;
        else if (key == "masks") cfg.paths.masks = p;
        else if (key == "ground_truth") cfg.paths.ground_truth = p;
        else if (key == "output") cfg.paths.output = p;
        else known = false;
      } else if (section == "batch") {
        if (key == "w_3d") cfg.batch.w_3d = get_as<double>(v, name);
        else if (key == "w_d") cfg.batch.w_d = get_as<double>(v, name);
        else if (key == "lambda") {
          const auto l = get_doubles(v, name);
          if (l.size() != 3) throw InputError("config key 'batch.lambda' needs three values (t, R, theta)");
          cfg.batch.lambda = {l[0], l[1], l[2]};
        } else if (key == "K") cfg.batch.dct_k = get_as<int>(v, name);
        else if (key == "size") cfg.batch_size = get_as<int>(v, name);
        else if (key == "overlap") cfg.overlap = get_as<int>(v, name);
        else if (key == "length_unit") cfg.batch.length_unit = get_as<double>(v, name);
        else if (key == "max_iterations") cfg.batch.solver.max_iters = get_as<int>(v, name);
        else known = false;
      } else if (section == "gate") {
        if (key == "enabled") cfg.gating = get_as<bool>(v, name);
        else if (key == "thres_pck") cfg.pck.threshold = get_as<double>(v, name);
        else if (key == "alpha") cfg.pck.alpha = get_as<double>(v, name);
        else known = false;
      } else if (section == "segmentation") {
        if (key == "enabled") cfg.segmentation = get_as<bool>(v, name);
        else if (key == "iterations") cfg.grabcut.iterations = get_as<int>(v, name);
        else if (key == "components") cfg.grabcut.components = get_as<int>(v, name);
        else if (key == "gamma") cfg.grabcut.gamma = get_as<double>(v, name);
        else if (key == "motion_mu") cfg.grabcut.motion_mu = get_as<double>(v, name);
        else if (key == "motion_sigma") cfg.grabcut.motion_sigma = get_as<double>(v, name);
        else if (key == "erosion") cfg.erosion_frac = get_as<double>(v, name);
        else if (key == "dilation") cfg.dilation_frac = get_as<double>(v, name);
        else known = false;
      } else if (section == "refinement") {
        if (key == "enabled") cfg.refinement = get_as<bool>(v, name);
        else if (key == "w_stab") cfg.refine.w_stab = get_as<double>(v, name);
        else if (key == "iterations") cfg.refine.pose_iterations = get_as<int>(v, name);
        else if (key == "max_dist") cfg.refine.max_dist = get_as<double>(v, name);
        else if (key == "max_angle") cfg.refine.max_angle_deg = get_as<double>(v, name);
        else if (key == "stab_unit") cfg.refine.stab_unit = get_as<double>(v, name);
        else if (key == "max_solver_iterations") cfg.refine.pose_solver.max_iters = get_as<int>(v, name);
        else known = false;
      } else if (section == "surface") {
        if (key == "enabled") cfg.surface_refinement = get_as<bool>(v, name);
        else if (key == "w_arap") cfg.refine.w_arap = get_doubles(v, name);
        else if (key == "M") cfg.refine.graph_nodes = get_as<int>(v, name);
        else if (key == "window") cfg.refine.smooth_window = get_as<int>(v, name);
        else if (key == "arap_unit") cfg.refine.arap_unit = get_as<double>(v, name);
        else if (key == "graph_per_frame") cfg.graph_per_frame = get_as<bool>(v, name);
        else if (key == "max_solver_iterations") cfg.refine.surface_solver.max_iters = get_as<int>(v, name);
        else known = false;
      } else {
        throw InputError("unknown config section '" + section + "'");
      }
      if (!known) throw InputError("unknown config key '" + name + "'");
    }
  }
}

// ---- output helpers -----------------------------------------------------

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw InputError(what + " path is not set");
  if (!fs::exists(p)) throw InputError(what + " not found: " + p.string());
}

std::vector<fs::path> list_images(const fs::path& dir, bool allow_ppm) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".png" || (allow_ppm && ext == ".ppm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

using Clock = std::chrono::steady_clock;

class StageRunner {
 public:
  StageRunner(PipelineResult& res, const std::optional<fs::path>& out) : res_(res), out_(out) {}

  template <class F>
  void operator()(const std::string& name, F&& body) {
    const auto t0 = Clock::now();
    try {
      body();
    } catch (const InputError& e) {
      fail(name, e.what(), 1);
      throw;
    } catch (const std::exception& e) {
      fail(name, e.what(), 2);
      throw;
    }
    res_.timings.push_back({name, std::chrono::duration<double>(Clock::now() - t0).count()});
    if (out_) write_timings();
  }

 private:
  void fail(const std::string& stage, const std::string& msg, int code) {
    if (out_) {
      write_error_report(*out_, {stage, msg, code});
      write_timings();
    }
  }
  void write_timings() const {
    json j = json::array();
    for (const auto& t : res_.timings) j.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
    io::write_text(*out_ / "timings.json", j.dump(2) + "\n");
  }

  PipelineResult& res_;
  std::optional<fs::path> out_;
};

// Re-anchors a graph built on one frame's mesh to another frame's mesh of
// the same topology.
DeformGraph rebase_graph(const DeformGraph& g, const std::vector<Vec3>& canonical) {
  DeformGraph out = g;
  for (int k = 0; k < out.size(); ++k) out.nodes[static_cast<size_t>(k)] = canonical[static_cast<size_t>(out.node_vertex[static_cast<size_t>(k)])];
  out.reset();
  return out;
}

// Gated frames were initialized against their rejected 3D detections; restart
// them from the nearest trusted frames (interpolated between two).
void reseed_gated(std::vector<SkeletonPose>& poses, const std::vector<int>& gates, std::vector<std::string>& flags) {
  const int n = static_cast<int>(poses.size());
  const auto trusted = poses;
  for (int f = 0; f < n; ++f) {
    if (gates[static_cast<size_t>(f)] != 0) continue;
    int a = f - 1, b = f + 1;
    while (a >= 0 && gates[static_cast<size_t>(a)] == 0) --a;
    while (b < n && gates[static_cast<size_t>(b)] == 0) ++b;
    if (a < 0 && b >= n) return;
    auto& p = poses[static_cast<size_t>(f)];
    if (a < 0 || b >= n) {
      p = trusted[static_cast<size_t>(a < 0 ? b : a)];
    } else {
      const auto& pa = trusted[static_cast<size_t>(a)];
      const auto& pb = trusted[static_cast<size_t>(b)];
      const double t = static_cast<double>(f - a) / static_cast<double>(b - a);
      p.translation = pa.translation + t * (pb.translation - pa.translation);
      p.rotation = blend_rotation(pa.rotation, pb.rotation, t);
      p.angles = pa.angles + t * (pb.angles - pa.angles);
    }
    flags.push_back("frame " + std::to_string(f) + ": 3D detections gated out, initialized from neighbouring frames");
  }
}

void write_masks(const fs::path& dir, const std::string& prefix, const std::vector<BinaryMask>& masks) {
  fs::create_directories(dir);
  for (size_t f = 0; f < masks.size(); ++f) io::save_mask(dir / frame_name(prefix, static_cast<int>(f), ".png"), masks[f]);
}

void write_meshes(const fs::path& dir, const ActorTemplate& actor, const std::vector<std::vector<Vec3>>& meshes) {
  fs::create_directories(dir);
  io::save_obj(dir / "faces.obj", actor.vertices, actor.triangles);
  json files = json::array();
  for (size_t f = 0; f < meshes.size(); ++f) {
    const std::string name = frame_name("frame_", static_cast<int>(f), ".obj");
    io::save_obj_vertices(dir / name, meshes[f]);
    files.push_back(name);
  }
  const json manifest = {{"frames", meshes.size()},
                         {"vertices", actor.vertices.size()},
                         {"faces", "faces.obj"},
                         {"vertex_files", files}};
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

void write_flags(const fs::path& out, const std::vector<std::string>& flags) {
  io::write_text(out / "flags.json", json(flags).dump(2) + "\n");
}

}  // namespace

void PipelineConfig::validate(bool check_files) const {
  if (!(batch.w_3d >= 0.0) || !(batch.w_d >= 0.0)) throw InputError("w_3d and w_d must be non-negative");
  if (!(batch.lambda.translation > 0.0) || !(batch.lambda.rotation > 0.0) || !(batch.lambda.angles > 0.0))
    throw InputError("lambda weights must be positive");
  if (batch.dct_k < 1) throw InputError("K must be positive");
  if (batch_size < batch.dct_k) throw InputError("batch size must be at least K");
  if (overlap < 1 || 2 * overlap > batch_size) throw InputError("batch overlap must be in [1, size/2]");
  if (!(batch.length_unit > 0.0)) throw InputError("batch length unit must be positive");
  if (batch.solver.max_iters < 0) throw InputError("solver iteration limits must be non-negative");
  if (!(pck.threshold > 0.0 && pck.threshold <= 1.0)) throw InputError("thres_pck must be in (0, 1]");
  if (!(pck.alpha > 0.0)) throw InputError("PCK alpha must be positive");
  if (grabcut.iterations < 0 || grabcut.components < 1 || !(grabcut.gamma >= 0.0) || !(grabcut.motion_mu >= 0.0) ||
      !(grabcut.motion_sigma > 0.0))
    throw InputError("invalid segmentation parameters");
  if (!(erosion_frac >= 0.0) || !(dilation_frac >= 0.0)) throw InputError("trimap radii must be non-negative");
  if (parallelism < 1) throw InputError("parallelism must be at least 1");
  refine.validate();
  if (refine.w_arap.empty()) throw InputError("w_arap needs at least one entry");
  if (!check_files) return;
  require_file(paths.template_obj, "template mesh");
  require_file(paths.rig, "rig");
  require_file(paths.camera, "camera");
  require_file(paths.detections, "detections");
  if (refinement) {
    if (segmentation) require_file(paths.frames, "frames directory");
    else require_file(paths.masks, "masks directory");
  }
  if (!paths.ground_truth.empty()) require_file(paths.ground_truth / "gt_poses.json", "ground-truth poses");
  if (paths.output.empty()) throw InputError("output directory is not set");
}

PipelineConfig parse_config(const std::string& text, const fs::path& base_dir) {
  const auto first = text.find_first_not_of(" \t\r\n");
  const json root = first != std::string::npos && text[first] == '{' ? parse_json(text, "config") : parse_toml(text);
  PipelineConfig cfg;
  cfg.paths.output = resolve("out", base_dir);
  decode(root, cfg, base_dir);
  cfg.validate(false);
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  return parse_config(io::read_text(path), path.parent_path());
}

std::string config_to_json(const PipelineConfig& c) {
  const json j = {
      {"paths",
       {{"template", c.paths.template_obj.string()},
        {"rig", c.paths.rig.string()},
        {"camera", c.paths.camera.string()},
        {"detections", c.paths.detections.string()},
        {"frames", c.paths.frames.string()},
        {"masks", c.paths.masks.string()},
        {"ground_truth", c.paths.ground_truth.string()},
        {"output", c.paths.output.string()}}},
      {"batch",
       {{"w_3d", c.batch.w_3d},
        {"w_d", c.batch.w_d},
        {"lambda", {c.batch.lambda.translation, c.batch.lambda.rotation, c.batch.lambda.angles}},
        {"K", c.batch.dct_k},
        {"size", c.batch_size},
        {"overlap", c.overlap},
        {"length_unit", c.batch.length_unit},
        {"max_iterations", c.batch.solver.max_iters}}},
      {"gate", {{"enabled", c.gating}, {"thres_pck", c.pck.threshold}, {"alpha", c.pck.alpha}}},
      {"segmentation",
       {{"enabled", c.segmentation},
        {"iterations", c.grabcut.iterations},
        {"components", c.grabcut.components},
        {"gamma", c.grabcut.gamma},
        {"motion_mu", c.grabcut.motion_mu},
        {"motion_sigma", c.grabcut.motion_sigma},
        {"erosion", c.erosion_frac},
        {"dilation", c.dilation_frac}}},
      {"refinement",
       {{"enabled", c.refinement},
        {"w_stab", c.refine.w_stab},
        {"iterations", c.refine.pose_iterations},
        {"max_dist", c.refine.max_dist},
        {"max_angle", c.refine.max_angle_deg},
        {"stab_unit", c.refine.stab_unit},
        {"max_solver_iterations", c.refine.pose_solver.max_iters}}},
      {"surface",
       {{"enabled", c.surface_refinement},
        {"w_arap", c.refine.w_arap},
        {"M", c.refine.graph_nodes},
        {"window", c.refine.smooth_window},
        {"arap_unit", c.refine.arap_unit},
        {"graph_per_frame", c.graph_per_frame},
        {"max_solver_iterations", c.refine.surface_solver.max_iters}}},
      {"parallelism", c.parallelism}};
  return j.dump(2) + "\n";
}

PipelineInputs load_inputs(const PipelineConfig& cfg) {
  PipelineInputs in;
  auto loaded = io::load_actor(cfg.paths.template_obj, cfg.paths.rig);
  in.rig = std::move(loaded.rig);
  in.actor = std::move(loaded.actor);
  in.camera = io::load_camera(cfg.paths.camera);
  in.detections = load_detections(cfg.paths.detections, in.rig.joint_names());
  const size_t n = in.detections.size();
  if (cfg.refinement && cfg.segmentation) {
    const auto files = list_images(cfg.paths.frames, true);
    if (files.size() != n)
      throw InputError("found " + std::to_string(files.size()) + " frames for " + std::to_string(n) + " detection frames");
    for (const auto& f : files) {
      in.frames.push_back(io::load_image(f));
      if (in.frames.back().width != in.camera.width || in.frames.back().height != in.camera.height)
        throw InputError("frame size does not match the camera: " + f.string());
    }
  }
  if (cfg.refinement && !cfg.segmentation) {
    const auto files = list_images(cfg.paths.masks, false);
    if (files.size() != n)
      throw InputError("found " + std::to_string(files.size()) + " masks for " + std::to_string(n) + " detection frames");
    for (const auto& f : files) {
      in.masks.push_back(io::load_mask(f));
      if (in.masks.back().width != in.camera.width || in.masks.back().height != in.camera.height)
        throw InputError("mask size does not match the camera: " + f.string());
    }
  }
  return in;
}

void write_error_report(const fs::path& out_dir, const StageError& err) {
  fs::create_directories(out_dir);
  const json j = {{"stage", err.stage}, {"message", err.message}, {"exit_code", err.exit_code}};
  io::write_text(out_dir / "error.json", j.dump(2) + "\n");
}

PipelineResult run_pipeline(const PipelineInputs& in, const PipelineConfig& cfg, const std::optional<fs::path>& out_dir) {
  cfg.validate(false);
  PipelineResult res;
  StageRunner stage(res, out_dir);
  const int n = static_cast<int>(in.detections.size());
  const auto& rig = in.rig;
  const auto& cam = in.camera;
  const auto& tris = in.actor.triangles;
  if (out_dir) {
    fs::create_directories(*out_dir);
    fs::remove(*out_dir / "error.json");
  }

  std::vector<FrameDetections> dets;
  stage("init", [&] {
    if (n == 0) throw InputError("no detection frames");
    std::vector<std::string> scale_flags;
    for (const auto& d : in.detections) {
      if (d.joint_count() != rig.joint_count()) throw InputError("frame " + std::to_string(d.frame) + ": detection joint count does not match the rig");
      try {
        dets.push_back(rescale_d3d(d, rig));
      } catch (const InputError&) {
        dets.push_back(d);
        std::fill(dets.back().c3d.begin(), dets.back().c3d.end(), 0.0);
        scale_flags.push_back("frame " + std::to_string(d.frame) + ": degenerate 3D detections ignored");
      }
    }
    auto init = init_poses(dets, rig, cam, cfg.batch);
    res.init_poses = std::move(init.poses);
    res.flags = std::move(init.flags);
    res.flags.insert(res.flags.end(), scale_flags.begin(), scale_flags.end());
    if (out_dir) io::save_poses(*out_dir / "poses_init.json", res.init_poses);
  });

  stage("gate", [&] {
    json pck = json::array();
    for (int f = 0; f < n; ++f) {
      const auto g = pck_gate(dets[static_cast<size_t>(f)], rig, cam, res.init_poses[static_cast<size_t>(f)].translation, cfg.pck);
      res.gates.push_back(cfg.gating ? g.weight : 1);
      if (g.torso_missing) res.flags.push_back("frame " + std::to_string(f) + ": torso joints missing, 3D detections gated out");
      pck.push_back(g.pck_error);
    }
    if (cfg.gating) reseed_gated(res.init_poses, res.gates, res.flags);
    if (out_dir) io::write_text(*out_dir / "gates.json", json{{"gates", res.gates}, {"pck_error", pck}}.dump(2) + "\n");
  });

  stage("batch", [&] {
    const auto ranges = plan_batches(n, cfg.batch_size, cfg.overlap, cfg.batch.dct_k);
    std::vector<Batch> solved(ranges.size());
    parallel_for(static_cast<int>(ranges.size()), cfg.parallelism, [&](int b) {
      Batch batch;
      batch.f_start = ranges[static_cast<size_t>(b)].start;
      batch.f_end = ranges[static_cast<size_t>(b)].end;
      for (int f = batch.f_start; f <= batch.f_end; ++f) {
        batch.poses.push_back(res.init_poses[static_cast<size_t>(f)]);
        batch.gates.push_back(res.gates[static_cast<size_t>(f)]);
      }
      solved[static_cast<size_t>(b)] = optimize_batch(batch, dets, rig, cam, cfg.batch).batch;
    });
    res.batch_poses = partition_and_blend(n, solved);
    if (out_dir) io::save_poses(*out_dir / "poses_batch.json", res.batch_poses);
  });

  if (!cfg.refinement) {
    stage("skin", [&] {
      res.meshes.resize(static_cast<size_t>(n));
      parallel_for(n, cfg.parallelism, [&](int f) { res.meshes[static_cast<size_t>(f)] = skin_mesh(in.actor, rig, res.batch_poses[static_cast<size_t>(f)]); });
      if (out_dir) {
        io::save_poses(*out_dir / "poses_final.json", res.batch_poses);
        write_meshes(*out_dir / "meshes", in.actor, res.meshes);
        write_flags(*out_dir, res.flags);
      }
    });
    return res;
  }

  // Silhouettes for a pose sequence: GrabCut on the frames, or user masks.
  auto silhouettes = [&](const std::vector<SkeletonPose>& poses, std::vector<BinaryMask>& masks, std::vector<RgbImage>* trimaps) {
    masks.assign(static_cast<size_t>(n), {});
    if (trimaps) trimaps->assign(static_cast<size_t>(n), {});
    if (!cfg.segmentation) {
      if (static_cast<int>(in.masks.size()) != n)
        throw InputError(std::to_string(in.masks.size()) + " masks for " + std::to_string(n) + " frames");
      masks = in.masks;
      return;
    }
    if (static_cast<int>(in.frames.size()) != n)
      throw InputError(std::to_string(in.frames.size()) + " frames for " + std::to_string(n) + " detection frames");
    parallel_for(n, cfg.parallelism, [&](int f) {
      const auto s = static_cast<size_t>(f);
      const auto verts = skin_mesh(in.actor, rig, poses[s]);
      const auto seg = segment_with_model(in.frames[s], f > 0 ? &in.frames[s - 1] : nullptr, rig, poses[s], verts, tris, cam,
                                          cfg.grabcut, cfg.erosion_frac, cfg.dilation_frac);
      masks[s] = seg.mask;
      if (trimaps) (*trimaps)[s] = trimap_image(seg.trimap);
    });
  };

  stage("segment_pass1", [&] {
    std::vector<RgbImage> trimaps;
    silhouettes(res.batch_poses, res.silhouettes_pass1, out_dir ? &trimaps : nullptr);
    if (out_dir) {
      write_masks(*out_dir / "silhouettes_pass1", "mask_", res.silhouettes_pass1);
      if (cfg.segmentation) {
        fs::create_directories(*out_dir / "trimaps_pass1");
        for (int f = 0; f < n; ++f) io::save_png(*out_dir / "trimaps_pass1" / frame_name("trimap_", f, ".png"), trimaps[static_cast<size_t>(f)]);
      }
    }
  });

  stage("pose_refine", [&] {
    res.refined_poses.resize(static_cast<size_t>(n));
    std::vector<uint8_t> flagged(static_cast<size_t>(n), 0);
    parallel_for(n, cfg.parallelism, [&](int f) {
      const auto s = static_cast<size_t>(f);
      const auto r = refine_pose(res.batch_poses[s], in.actor, rig, cam, extract_contour(res.silhouettes_pass1[s]), cfg.refine);
      res.refined_poses[s] = r.pose;
      flagged[s] = r.flagged;
    });
    for (int f = 0; f < n; ++f)
      if (flagged[static_cast<size_t>(f)]) res.flags.push_back("frame " + std::to_string(f) + ": no silhouette correspondences, pose not refined");
    if (out_dir) io::save_poses(*out_dir / "poses_refined.json", res.refined_poses);
  });

  stage("segment_pass2", [&] {
    std::vector<RgbImage> trimaps;
    silhouettes(res.refined_poses, res.silhouettes_pass2, out_dir ? &trimaps : nullptr);
    if (out_dir) {
      write_masks(*out_dir / "silhouettes_pass2", "mask_", res.silhouettes_pass2);
      if (cfg.segmentation) {
        fs::create_directories(*out_dir / "trimaps_pass2");
        for (int f = 0; f < n; ++f) io::save_png(*out_dir / "trimaps_pass2" / frame_name("trimap_", f, ".png"), trimaps[static_cast<size_t>(f)]);
      }
    }
  });

  std::vector<std::vector<Vec3>> skinned(static_cast<size_t>(n));
  stage("surface_refine", [&] {
    res.meshes.resize(static_cast<size_t>(n));
    if (!cfg.surface_refinement) {
      parallel_for(n, cfg.parallelism, [&](int f) { res.meshes[static_cast<size_t>(f)] = skin_mesh(in.actor, rig, res.refined_poses[static_cast<size_t>(f)]); });
      return;
    }
    std::optional<DeformGraph> shared;
    if (!cfg.graph_per_frame) shared = build_graph(skin_mesh(in.actor, rig, res.refined_poses[0]), tris, cfg.refine.graph_nodes);
    std::vector<uint8_t> flagged(static_cast<size_t>(n), 0);
    parallel_for(n, cfg.parallelism, [&](int f) {
      const auto s = static_cast<size_t>(f);
      skinned[s] = skin_mesh(in.actor, rig, res.refined_poses[s]);
      const auto& canonical = skinned[s];
      DeformGraph g = shared ? rebase_graph(*shared, canonical) : build_graph(canonical, tris, cfg.refine.graph_nodes);
      const auto r = refine_surface(std::move(g), canonical, tris, extract_contour(res.silhouettes_pass2[s]), cam, cfg.refine);
      res.meshes[s] = r.vertices;
      flagged[s] = r.flagged;
    });
    for (int f = 0; f < n; ++f)
      if (flagged[static_cast<size_t>(f)]) res.flags.push_back("frame " + std::to_string(f) + ": no silhouette correspondences, surface not refined");
  });

  stage("smooth", [&] {
    // Smooth the refinement displacement, not the articulated motion.
    if (cfg.surface_refinement) {
      std::vector<std::vector<Vec3>> offsets(static_cast<size_t>(n));
      for (size_t f = 0; f < offsets.size(); ++f) {
        offsets[f].resize(skinned[f].size());
        for (size_t v = 0; v < skinned[f].size(); ++v) offsets[f][v] = res.meshes[f][v] - skinned[f][v];
      }
      offsets = temporal_smooth(offsets, cfg.refine.smooth_window);
      for (size_t f = 0; f < offsets.size(); ++f)
        for (size_t v = 0; v < skinned[f].size(); ++v) res.meshes[f][v] = skinned[f][v] + offsets[f][v];
    }
    if (out_dir) {
      io::save_poses(*out_dir / "poses_final.json", res.refined_poses);
      write_meshes(*out_dir / "meshes", in.actor, res.meshes);
      write_flags(*out_dir, res.flags);
    }
  });
  return res;
}

PipelineResult run_from_config(const PipelineConfig& cfg) {
  const fs::path out = cfg.paths.output;
  PipelineResult res;
  PipelineInputs in;
  StageRunner stage(res, std::optional<fs::path>(out));
  fs::create_directories(out);
  stage("load", [&] {
    cfg.validate(true);
    io::write_text(out / "config.json", config_to_json(cfg));
    in = load_inputs(cfg);
  });
  const auto timings = res.timings;
  res = run_pipeline(in, cfg, out);
  res.timings.insert(res.timings.begin(), timings.begin(), timings.end());
  if (!cfg.paths.ground_truth.empty()) {
    stage("evaluate", [&] {
      const auto gt = load_ground_truth(cfg.paths.ground_truth);
      EvaluationInputs e;
      e.rig = &in.rig;
      e.predicted_poses = &res.final_poses();
      e.true_poses = &gt.poses;
      if (!gt.meshes.empty()) {
        e.predicted_meshes = &res.meshes;
        e.true_meshes = &gt.meshes;
      }
      if (!gt.masks.empty()) {
        e.predicted_meshes = &res.meshes;
        e.true_masks = &gt.masks;
        e.triangles = &in.actor.triangles;
        e.camera = &in.camera;
      }
      render_report(evaluate(e), out / "report");
      io::write_text(out / "metrics.csv", io::read_text(out / "report" / "metrics.csv"));
    });
  }
  return res;
}

}  // namespace perfcap
