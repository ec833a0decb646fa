#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "perfcap/batchpose.hpp"
#include "perfcap/detections.hpp"
#include "perfcap/image.hpp"
#include "perfcap/kinematics.hpp"
#include "perfcap/refine.hpp"
#include "perfcap/segment.hpp"

namespace perfcap {

namespace fs = std::filesystem;

struct PipelineConfig {
  struct Paths {
    fs::path template_obj;  // OBJ mesh
    fs::path rig;           // rig + skinning JSON
    fs::path camera;
    fs::path detections;
    fs::path frames;        // directory of PNG/PPM frames
    fs::path masks;         // directory of PNG masks; bypasses segmentation
    fs::path ground_truth;  // optional synthetic dataset directory
    fs::path output = "out";
  } paths;

  BatchOptions batch;
  int batch_size = 50;
  int overlap = 10;
  PckOptions pck;
  bool gating = true;

  bool refinement = true;          // pose refinement and everything after it
  bool segmentation = true;        // off: silhouettes come from paths.masks
  bool surface_refinement = true;
  RefineConfig refine;
  bool graph_per_frame = true;     // off: one graph from the first frame's refined mesh
  GrabCutOptions grabcut;
  double erosion_frac = 0.03;
  double dilation_frac = 0.06;

  int parallelism = 1;

  /// Throws InputError for invalid values, and for missing files when
  /// `check_files` is set.
  void validate(bool check_files) const;
};

/// Reads a JSON document or a TOML-style file (`[section]` headers,
/// `key = value` lines, `#` comments). Both map onto the same nested keys;
/// unknown keys are errors. Relative paths resolve against `base_dir`.
PipelineConfig parse_config(const std::string& text, const fs::path& base_dir = {});
PipelineConfig load_config(const fs::path& path);
/// Canonical JSON form of a config (written next to the outputs).
std::string config_to_json(const PipelineConfig& cfg);

struct PipelineInputs {
  SkeletonRig rig;
  ActorTemplate actor;
  Camera camera;
  std::vector<FrameDetections> detections;
  std::vector<RgbImage> frames;
  std::vector<BinaryMask> masks;
};

/// Loads every input named in the config; frame and mask files are taken in
/// name order and must match the detection frame count.
PipelineInputs load_inputs(const PipelineConfig& cfg);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct PipelineResult {
  std::vector<SkeletonPose> init_poses;
  std::vector<int> gates;
  std::vector<SkeletonPose> batch_poses;  // blended
  std::vector<SkeletonPose> refined_poses;
  std::vector<BinaryMask> silhouettes_pass1, silhouettes_pass2;
  std::vector<std::vector<Vec3>> meshes;  // final per-frame vertices
  std::vector<std::string> flags;
  std::vector<StageTiming> timings;

  const std::vector<SkeletonPose>& final_poses() const { return refined_poses.empty() ? batch_poses : refined_poses; }
};

/// Stage failure: the stage name plus the original error.
struct StageError {
  std::string stage;
  std::string message;
  int exit_code = 2;
};

/// init -> gate -> batch solve -> blend, then (if enabled) segment pass 1 ->
/// pose refine -> segment pass 2 -> surface refine -> temporal smoothing.
/// With `out_dir` set every stage writes its outputs as it finishes.
PipelineResult run_pipeline(const PipelineInputs& in, const PipelineConfig& cfg,
                            const std::optional<fs::path>& out_dir = std::nullopt);

/// Loads inputs, runs, writes outputs and (with ground truth) metrics into
/// cfg.paths.output. On failure writes error.json there and rethrows.
PipelineResult run_from_config(const PipelineConfig& cfg);

/// Writes error.json: {"stage", "message", "exit_code"}.
void write_error_report(const fs::path& out_dir, const StageError& err);

}  // namespace perfcap
