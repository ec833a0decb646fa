#include "perfcap/detections.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "json_util.hpp"
#include "perfcap/error.hpp"
#include "perfcap/io.hpp"

namespace perfcap {

using nlohmann::json;

FrameDetections FrameDetections::empty(int frame, int joint_count) {
  FrameDetections d;
  d.frame = frame;
  const auto n = static_cast<size_t>(joint_count);
  d.d2d.assign(n, Vec2::Zero());
  d.c2d.assign(n, 0.0);
  d.d3d.assign(n, Vec3::Zero());
  d.c3d.assign(n, 0.0);
  return d;
}

namespace {

// Maps file slot -> rig joint index.
std::vector<int> slot_map(const json& doc, const std::vector<std::string>& rig_names) {
  std::vector<int> map(rig_names.size());
  if (!doc.contains("joint_names")) {
    for (size_t i = 0; i < map.size(); ++i) map[i] = static_cast<int>(i);
    return map;
  }
  const auto names = doc.at("joint_names").get<std::vector<std::string>>();
  if (names.size() != rig_names.size()) {
    throw InputError("detection file lists " + std::to_string(names.size()) + " joints, rig has " +
                     std::to_string(rig_names.size()));
  }
  for (size_t s = 0; s < names.size(); ++s) {
    auto it = std::find(rig_names.begin(), rig_names.end(), names[s]);
    if (it == rig_names.end()) throw InputError("detection joint '" + names[s] + "' is not in the rig");
    map[s] = static_cast<int>(it - rig_names.begin());
  }
  return map;
}

void check_contiguous(std::vector<FrameDetections>& frames) {
  std::sort(frames.begin(), frames.end(), [](const auto& a, const auto& b) { return a.frame < b.frame; });
  for (size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].frame == frames[i - 1].frame) throw InputError("duplicate frame " + std::to_string(frames[i].frame));
  }
  std::vector<int> gaps;
  int expected = 0;
  for (const auto& f : frames) {
    if (f.frame < 0) throw InputError("negative frame index");
    while (expected < f.frame) gaps.push_back(expected++);
    expected = f.frame + 1;
  }
  if (!gaps.empty()) {
    std::ostringstream msg;
    msg << "gap at frame " << gaps[0];
    for (size_t i = 1; i < gaps.size(); ++i) msg << ", " << gaps[i];
    throw InputError(msg.str());
  }
}

}  // namespace

std::vector<FrameDetections> parse_detections(const std::string& text, const std::vector<std::string>& rig_joint_names) {
  const json doc = parse_json(text, "detections");
  const int n = static_cast<int>(rig_joint_names.size());
  std::vector<FrameDetections> frames;
  try {
    const auto map = slot_map(doc, rig_joint_names);
    for (const auto& jf : doc.at("frames")) {
      auto rec = FrameDetections::empty(jf.at("frame").get<int>(), n);
      const auto& j2 = jf.at("joints2d");
      const auto& j3 = jf.at("joints3d");
      if (static_cast<int>(j2.size()) != n || static_cast<int>(j3.size()) != n) {
        throw InputError("frame " + std::to_string(rec.frame) + ": expected " + std::to_string(n) + " joints");
      }
      for (int s = 0; s < n; ++s) {
        const auto j = static_cast<size_t>(map[static_cast<size_t>(s)]);
        const auto& e2 = j2[static_cast<size_t>(s)];
        if (!e2.is_null()) {
          if (e2.size() != 3) throw InputError("frame " + std::to_string(rec.frame) + ": joints2d entry needs [x,y,c]");
          rec.d2d[j] = {e2[0].get<double>(), e2[1].get<double>()};
          rec.c2d[j] = e2[2].get<double>();
        }
        const auto& e3 = j3[static_cast<size_t>(s)];
        if (!e3.is_null()) {
          if (e3.size() != 4) throw InputError("frame " + std::to_string(rec.frame) + ": joints3d entry needs [x,y,z,c]");
          rec.d3d[j] = {e3[0].get<double>(), e3[1].get<double>(), e3[2].get<double>()};
          rec.c3d[j] = e3[3].get<double>();
        }
        if (!std::isfinite(rec.d2d[j].sum()) || !std::isfinite(rec.d3d[j].sum())) {
          throw InputError("frame " + std::to_string(rec.frame) + ": non-finite detection");
        }
        if (rec.c2d[j] < 0.0 || rec.c2d[j] > 1.0 || rec.c3d[j] < 0.0 || rec.c3d[j] > 1.0) {
          throw InputError("frame " + std::to_string(rec.frame) + ": confidence outside [0,1]");
        }
      }
      frames.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed detections: ") + e.what());
  }
  check_contiguous(frames);
  return frames;
}

std::vector<FrameDetections> load_detections(const std::filesystem::path& path,
                                             const std::vector<std::string>& rig_joint_names) {
  try {
    return parse_detections(io::read_text(path), rig_joint_names);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string detections_to_json(const std::vector<FrameDetections>& dets, const std::vector<std::string>& joint_names) {
  // One frame per line so files diff well and re-serialize byte-identically.
  std::string out = "{\n\"joint_names\": " + json(joint_names).dump() + ",\n\"frames\": [";
  for (size_t f = 0; f < dets.size(); ++f) {
    const auto& d = dets[f];
    json j2 = json::array(), j3 = json::array();
    for (int j = 0; j < d.joint_count(); ++j) {
      const auto s = static_cast<size_t>(j);
      if (d.c2d[s] == 0.0 && d.d2d[s].isZero(0.0)) {
        j2.push_back(nullptr);
      } else {
        j2.push_back(json::array({d.d2d[s].x(), d.d2d[s].y(), d.c2d[s]}));
      }
      if (d.c3d[s] == 0.0 && d.d3d[s].isZero(0.0)) {
        j3.push_back(nullptr);
      } else {
        j3.push_back(json::array({d.d3d[s].x(), d.d3d[s].y(), d.d3d[s].z(), d.c3d[s]}));
      }
    }
    json frame;
    frame["frame"] = d.frame;
    frame["joints2d"] = j2;
    frame["joints3d"] = j3;
    out += (f ? ",\n" : "\n") + frame.dump();
  }
  out += "\n]\n}\n";
  return out;
}

void save_detections(const std::filesystem::path& path, const std::vector<FrameDetections>& dets,
                     const std::vector<std::string>& joint_names) {
  io::write_text(path, detections_to_json(dets, joint_names));
}

std::vector<FrameDetections> detections_from_csv(const std::string& text, const std::vector<std::string>& joint_names) {
  const int n = static_cast<int>(joint_names.size());
  std::map<int, FrameDetections> frames;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cols.push_back(cell);
    const auto where = "CSV line " + std::to_string(lineno);
    if (cols.size() != 9) throw InputError(where + ": expected 9 columns, got " + std::to_string(cols.size()));
    if (lineno == 1 && cols[0].find_first_not_of("0123456789 ") != std::string::npos) continue;  // header
    try {
      const int frame = std::stoi(cols[0]);
      int joint;
      auto it = std::find(joint_names.begin(), joint_names.end(), cols[1]);
      if (it != joint_names.end()) {
        joint = static_cast<int>(it - joint_names.begin());
      } else {
        joint = std::stoi(cols[1]);
      }
      if (joint < 0 || joint >= n) throw InputError(where + ": unknown joint " + cols[1]);
      auto [pos, inserted] = frames.try_emplace(frame, FrameDetections::empty(frame, n));
      auto& rec = pos->second;
      const auto s = static_cast<size_t>(joint);
      rec.d2d[s] = {std::stod(cols[2]), std::stod(cols[3])};
      rec.c2d[s] = std::stod(cols[4]);
      rec.d3d[s] = {std::stod(cols[5]), std::stod(cols[6]), std::stod(cols[7])};
      rec.c3d[s] = std::stod(cols[8]);
    } catch (const std::logic_error&) {
      throw InputError(where + ": cannot parse number");
    }
  }
  std::vector<FrameDetections> out;
  for (auto& [f, rec] : frames) out.push_back(std::move(rec));
  check_contiguous(out);
  return out;
}

double detection_bone_length(const FrameDetections& dets, const SkeletonRig& rig) {
  double total = 0.0;
  for (int j = 1; j < rig.joint_count(); ++j) {
    const auto p = static_cast<size_t>(rig.joint(j).parent);
    total += (dets.d3d[static_cast<size_t>(j)] - dets.d3d[p]).norm();
  }
  return total;
}

FrameDetections rescale_d3d(const FrameDetections& dets, const SkeletonRig& rig, double* scale_out) {
  if (dets.joint_count() != rig.joint_count()) throw InputError("detection joint count does not match the rig");
  const double det_len = detection_bone_length(dets, rig);
  if (det_len < 1e-6) throw InputError("frame " + std::to_string(dets.frame) + ": 3D detection skeleton is degenerate");
  const double scale = rig.total_bone_length() / det_len;
  FrameDetections out = dets;
  for (auto& p : out.d3d) p *= scale;
  if (scale_out) *scale_out = scale;
  return out;
}

PckResult pck_gate(const FrameDetections& dets, const SkeletonRig& rig, const Camera& cam, const Vec3& root_t,
                   const PckOptions& opts) {
  PckResult res;
  const int a = rig.find_joint(opts.torso_a);
  const int b = rig.find_joint(opts.torso_b);
  if (a < 0 || b < 0 || dets.c2d[static_cast<size_t>(a)] <= 0.0 || dets.c2d[static_cast<size_t>(b)] <= 0.0) {
    res.torso_missing = true;
    return res;
  }
  const double torso = (dets.d2d[static_cast<size_t>(a)] - dets.d2d[static_cast<size_t>(b)]).norm();
  if (!(torso > 0.0)) {
    res.torso_missing = true;
    return res;
  }
  const double limit = opts.alpha * torso;
  int counted = 0, wrong = 0;
  for (int j = 0; j < dets.joint_count(); ++j) {
    const auto s = static_cast<size_t>(j);
    if (dets.c2d[s] <= 0.0 || dets.c3d[s] <= 0.0) continue;
    ++counted;
    const Vec3 p = dets.d3d[s] + root_t;
    if (!(p.z() > kMinDepth)) {
      ++wrong;
      continue;
    }
    if ((project(cam, p) - dets.d2d[s]).norm() > limit) ++wrong;
  }
  if (counted == 0) return res;
  res.pck_error = static_cast<double>(wrong) / counted;
  res.weight = res.pck_error < opts.threshold ? 1 : 0;
  return res;
}

}  // namespace perfcap
