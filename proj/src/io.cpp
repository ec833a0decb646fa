#include "perfcap/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json_util.hpp"
#include "perfcap/error.hpp"

namespace perfcap::io {

using nlohmann::json;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
}

namespace {

Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw InputError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

RigDocument load_rig(const fs::path& path) {
  const json doc = parse_json(read_text(path), path.string());
  try {
    std::vector<JointRecord> joints;
    std::vector<AngleBounds> bounds;
    for (const auto& jj : doc.at("joints")) {
      JointRecord rec;
      rec.name = jj.at("name").get<std::string>();
      rec.parent = jj.at("parent").get<int>();
      rec.offset = vec3_from(jj.at("offset"));
      const auto& axes = jj.value("axes", json::array());
      const auto& bnds = jj.value("bounds", json::array());
      if (axes.size() != bnds.size()) throw InputError("joint " + rec.name + ": axes and bounds differ in length");
      for (size_t a = 0; a < axes.size(); ++a) {
        rec.axes.push_back(vec3_from(axes[a]));
        bounds.push_back({bnds[a].at(0).get<double>(), bnds[a].at(1).get<double>()});
      }
      joints.push_back(std::move(rec));
    }
    RigDocument out{SkeletonRig(std::move(joints), std::move(bounds)), {}};
    if (doc.contains("weights")) {
      for (const auto& vw : doc.at("weights")) {
        std::vector<SkinInfluence> infl;
        for (const auto& pair : vw) {
          const int joint = pair.at(0).get<int>();
          if (joint < 0 || joint >= out.rig.joint_count()) {
            throw InputError("skinning weight references unknown joint " + std::to_string(joint));
          }
          infl.push_back({joint, pair.at(1).get<double>()});
        }
        out.weights.push_back(std::move(infl));
      }
    }
    return out;
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": malformed rig document: " + e.what());
  }
}

std::string rig_to_json(const SkeletonRig& rig, const std::vector<std::vector<SkinInfluence>>* weights) {
  json doc;
  json joints = json::array();
  const auto bounds = rig.angle_bounds();
  for (int j = 0; j < rig.joint_count(); ++j) {
    const auto& rec = rig.joint(j);
    json jj;
    jj["name"] = rec.name;
    jj["parent"] = rec.parent;
    jj["offset"] = vec3_to(rec.offset);
    json axes = json::array(), bnds = json::array();
    for (size_t a = 0; a < rec.axes.size(); ++a) {
      axes.push_back(vec3_to(rec.axes[a]));
      const auto& b = bounds[static_cast<size_t>(rig.first_angle(j)) + a];
      bnds.push_back(json::array({b.lower, b.upper}));
    }
    jj["axes"] = axes;
    jj["bounds"] = bnds;
    joints.push_back(jj);
  }
  doc["joints"] = joints;
  if (weights) {
    json w = json::array();
    for (const auto& vw : *weights) {
      json v = json::array();
      for (const auto& inf : vw) v.push_back(json::array({inf.joint, inf.weight}));
      w.push_back(v);
    }
    doc["weights"] = w;
  }
  return doc.dump(1) + "\n";
}

void save_rig(const fs::path& path, const SkeletonRig& rig, const std::vector<std::vector<SkinInfluence>>* weights) {
  write_text(path, rig_to_json(rig, weights));
}

ObjMesh load_obj(const fs::path& path) {
  std::istringstream in(read_text(path));
  ObjMesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw InputError(path.string() + ":" + std::to_string(lineno) + ": bad vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const int k = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(k > 0 ? k - 1 : static_cast<int>(mesh.vertices.size()) + k);
      }
      if (idx.size() < 3) throw InputError(path.string() + ":" + std::to_string(lineno) + ": face with < 3 vertices");
      for (size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  return mesh;
}

namespace {
void append_vertices(std::ostringstream& out, const std::vector<Vec3>& vertices) {
  out.precision(17);
  for (const auto& v : vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
}
}  // namespace

void save_obj(const fs::path& path, const std::vector<Vec3>& vertices, const std::vector<std::array<int, 3>>& triangles) {
  std::ostringstream out;
  append_vertices(out, vertices);
  for (const auto& t : triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  write_text(path, out.str());
}

void save_obj_vertices(const fs::path& path, const std::vector<Vec3>& vertices) {
  std::ostringstream out;
  append_vertices(out, vertices);
  write_text(path, out.str());
}

std::vector<Vec3> load_obj_vertices(const fs::path& path) { return load_obj(path).vertices; }

LoadedActor load_actor(const fs::path& obj_path, const fs::path& rig_path) {
  auto doc = load_rig(rig_path);
  auto mesh = load_obj(obj_path);
  LoadedActor out{std::move(doc.rig), {}};
  out.actor.vertices = std::move(mesh.vertices);
  out.actor.triangles = std::move(mesh.triangles);
  out.actor.skin_weights = std::move(doc.weights);
  out.actor.validate(out.rig);
  return out;
}

Camera load_camera(const fs::path& path) {
  const json j = parse_json(read_text(path), path.string());
  Camera cam;
  try {
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": malformed camera: " + e.what());
  }
  cam.validate();
  return cam;
}

void save_camera(const fs::path& path, const Camera& cam) {
  json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  write_text(path, j.dump(1) + "\n");
}

std::string poses_to_json(const std::vector<SkeletonPose>& poses) {
  json arr = json::array();
  for (const auto& p : poses) {
    const VecX v = p.flatten();
    arr.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  }
  return arr.dump() + "\n";
}

std::vector<SkeletonPose> poses_from_json(const std::string& text) {
  const json arr = parse_json(text, "pose sequence");
  std::vector<SkeletonPose> poses;
  try {
    for (const auto& row : arr) {
      const auto v = row.get<std::vector<double>>();
      poses.push_back(SkeletonPose::from_flat(std::span<const double>(v)));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed pose sequence: ") + e.what());
  }
  return poses;
}

namespace {
void put_le64(std::string& out, double value) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}
double get_le64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}
}  // namespace

void save_poses(const fs::path& json_path, const std::vector<SkeletonPose>& poses) {
  write_text(json_path, poses_to_json(poses));
  std::string bin;
  for (const auto& p : poses) {
    const VecX v = p.flatten();
    for (Eigen::Index i = 0; i < v.size(); ++i) put_le64(bin, v[i]);
  }
  fs::path bin_path = json_path;
  bin_path.replace_extension(".bin");
  write_text(bin_path, bin);
}

std::vector<SkeletonPose> load_poses(const fs::path& json_path) { return poses_from_json(read_text(json_path)); }

std::vector<SkeletonPose> load_poses_binary(const fs::path& bin_path, int dof) {
  const std::string raw = read_text(bin_path);
  const size_t row_bytes = static_cast<size_t>(dof) * 8;
  if (dof <= 0 || raw.size() % row_bytes != 0) throw InputError(bin_path.string() + ": size is not a multiple of the pose length");
  std::vector<SkeletonPose> poses;
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  std::vector<double> row(static_cast<size_t>(dof));
  for (size_t off = 0; off < raw.size(); off += row_bytes) {
    for (int i = 0; i < dof; ++i) row[static_cast<size_t>(i)] = get_le64(p + off + static_cast<size_t>(i) * 8);
    poses.push_back(SkeletonPose::from_flat(std::span<const double>(row)));
  }
  return poses;
}

}  // namespace perfcap::io
