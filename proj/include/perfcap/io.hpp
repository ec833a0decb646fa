#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "perfcap/kinematics.hpp"

namespace perfcap::io {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

/// Rig + skinning document:
/// {
///   "joints": [{"name": str, "parent": int, "offset": [x,y,z],
///               "axes": [[x,y,z], ...], "bounds": [[lo,hi], ...]}, ...],
///   "weights": [[[joint, w], ...], ...]      // optional, one list per vertex
/// }
/// Joint "parent" is -1 for the root; parents precede children.
struct RigDocument {
  SkeletonRig rig;
  std::vector<std::vector<SkinInfluence>> weights;
};
RigDocument load_rig(const fs::path& path);
std::string rig_to_json(const SkeletonRig& rig, const std::vector<std::vector<SkinInfluence>>* weights);
void save_rig(const fs::path& path, const SkeletonRig& rig, const std::vector<std::vector<SkinInfluence>>* weights);

/// Triangle OBJ (v / f lines; polygon faces are fanned, texture and normal
/// indices are ignored).
struct ObjMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
};
ObjMesh load_obj(const fs::path& path);
void save_obj(const fs::path& path, const std::vector<Vec3>& vertices, const std::vector<std::array<int, 3>>& triangles);
/// Vertex-only OBJ (v lines), used for per-frame mesh sequences.
void save_obj_vertices(const fs::path& path, const std::vector<Vec3>& vertices);
std::vector<Vec3> load_obj_vertices(const fs::path& path);

/// OBJ geometry + rig document carrying the weights.
struct LoadedActor {
  SkeletonRig rig;
  ActorTemplate actor;
};
LoadedActor load_actor(const fs::path& obj_path, const fs::path& rig_path);

/// {"fx":..,"fy":..,"cx":..,"cy":..,"width":..,"height":..}
Camera load_camera(const fs::path& path);
void save_camera(const fs::path& path, const Camera& cam);

/// Pose sequence: JSON array of flattened pose vectors, one per frame.
std::string poses_to_json(const std::vector<SkeletonPose>& poses);
std::vector<SkeletonPose> poses_from_json(const std::string& text);
/// Writes `<stem>.json` and the `<stem>.bin` sidecar (little-endian float64,
/// row-major frames x dof, no header).
void save_poses(const fs::path& json_path, const std::vector<SkeletonPose>& poses);
std::vector<SkeletonPose> load_poses(const fs::path& json_path);
std::vector<SkeletonPose> load_poses_binary(const fs::path& bin_path, int dof);

}  // namespace perfcap::io
