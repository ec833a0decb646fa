#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "perfcap/kinematics.hpp"

namespace perfcap {

/// Detected joints of one frame. Slots follow the rig's joint order; a
/// missing joint has confidence 0 and a zero position.
struct FrameDetections {
  int frame = 0;
  std::vector<Vec2> d2d;
  std::vector<double> c2d;
  std::vector<Vec3> d3d;  // root-relative, meters
  std::vector<double> c3d;

  static FrameDetections empty(int frame, int joint_count);
  int joint_count() const { return static_cast<int>(d2d.size()); }
};

/// Detection file:
/// {
///   "joint_names": [..],            // optional; permutes slots into rig order
///   "frames": [{"frame": f, "joints2d": [[x,y,c] | null, ..],
///                           "joints3d": [[x,y,z,c] | null, ..]}, ..]
/// }
/// Frames must cover 0..N-1 (any order in the file).
std::vector<FrameDetections> parse_detections(const std::string& text, const std::vector<std::string>& rig_joint_names);
std::vector<FrameDetections> load_detections(const std::filesystem::path& path,
                                             const std::vector<std::string>& rig_joint_names);
std::string detections_to_json(const std::vector<FrameDetections>& dets, const std::vector<std::string>& joint_names);
void save_detections(const std::filesystem::path& path, const std::vector<FrameDetections>& dets,
                     const std::vector<std::string>& joint_names);

/// CSV rows `frame,joint,x,y,c,X,Y,Z,c3d` (header optional, joint is an index
/// or a name) to detection records.
std::vector<FrameDetections> detections_from_csv(const std::string& text, const std::vector<std::string>& joint_names);

/// Total length of the detected skeleton over the rig's parent/child pairs.
double detection_bone_length(const FrameDetections& dets, const SkeletonRig& rig);

/// Uniformly scales d3d so its total bone length equals the rig's.
FrameDetections rescale_d3d(const FrameDetections& dets, const SkeletonRig& rig, double* scale_out = nullptr);

struct PckOptions {
  double alpha = 0.2;
  double threshold = 0.4;
  std::string torso_a = "l_shoulder";
  std::string torso_b = "r_hip";
};

struct PckResult {
  double pck_error = 1.0;  // fraction of joints misprojected
  int weight = 0;          // w_f
  bool torso_missing = false;
};

/// Per-frame 3D trust gate w_f: 1 when fewer than `threshold` of the joints
/// project further than alpha * torso diameter from their 2D detection.
PckResult pck_gate(const FrameDetections& dets, const SkeletonRig& rig, const Camera& cam, const Vec3& root_t,
                   const PckOptions& opts = {});

}  // namespace perfcap
