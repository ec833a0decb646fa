#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "perfcap/image.hpp"
#include "perfcap/kinematics.hpp"
#include "perfcap/synth.hpp"

namespace perfcap {

/// x -> scale * R x + t.
struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

/// Closed-form least-squares alignment of `source` onto `target` (SVD of the
/// cross-covariance, reflection excluded). Returns nullopt when the centred
/// source has rank < 3.
std::optional<Similarity> align_points(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                                       bool with_scale);

struct FrameMetrics {
  int frame = 0;
  bool aligned = true;               // false: degenerate joints, skipped in means
  double joint_error_raw = 0.0;      // mm, camera space
  double joint_error_similarity = 0.0;  // mm, after scale + rotation + translation
  double joint_error_procrustes = 0.0;  // mm, after rotation + translation
  double vertex_error = 0.0;         // mm, after translation alignment; NaN without meshes
  double iou = 0.0;                  // NaN without masks
};

/// Raw, similarity-aligned and rigidly aligned mean joint distances (mm) of
/// one frame, predicted joints aligned onto the true ones.
FrameMetrics joint_metrics(const std::vector<Vec3>& predicted, const std::vector<Vec3>& truth);

struct MetricsReport {
  std::vector<FrameMetrics> frames;

  /// Mean of one field over aligned frames (and finite values).
  double mean(double FrameMetrics::*field) const;
};

struct EvaluationInputs {
  const SkeletonRig* rig = nullptr;
  const std::vector<SkeletonPose>* predicted_poses = nullptr;
  const std::vector<SkeletonPose>* true_poses = nullptr;
  const std::vector<std::vector<Vec3>>* predicted_meshes = nullptr;  // optional
  const std::vector<std::vector<Vec3>>* true_meshes = nullptr;       // optional
  const std::vector<std::array<int, 3>>* triangles = nullptr;        // for IoU
  const std::vector<BinaryMask>* true_masks = nullptr;               // optional
  const Camera* camera = nullptr;
};

MetricsReport evaluate(const EvaluationInputs& in);

/// CSV: header plus one row per frame, fixed 6-decimal formatting.
std::string metrics_to_csv(const MetricsReport& report);
MetricsReport metrics_from_csv(const std::string& text);

/// Writes metrics.csv, summary.csv (means) and one SVG line plot per metric
/// (joint errors, vertex error, IoU) with the mean in the legend. Throws
/// InputError for an empty report.
void render_report(const MetricsReport& report, const std::filesystem::path& out_dir);
/// SVG polyline plot of several named series over frames.
std::string svg_plot(const std::string& title, const std::string& y_label,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series);

struct SynthDatasetSpec {
  int frames = 50;
  int dct_k = 8;
  unsigned seed = 1;
  double amplitude = 0.25;
  double depth = 4.0;
  NoiseSpec noise;
  bool write_frames = true;  // flat-colour composites for segmentation
};

struct SynthDataset {
  SkeletonRig rig;
  ActorTemplate actor;
  Camera camera;
  std::vector<SkeletonPose> poses;
  std::vector<FrameDetections> detections;
  std::vector<std::vector<Vec3>> meshes;
  std::vector<BinaryMask> masks;
  std::vector<RgbImage> frames;
};

/// Ground truth from an in-subspace random motion of the default rig with the
/// capsule template. Frames composite a textured red figure over a textured
/// green background.
SynthDataset synth_generate(const SynthDatasetSpec& spec);
RgbImage composite_frame(const BinaryMask& mask, int frame);

/// Directory layout: template.obj, rig.json, camera.json, detections.json,
/// gt_poses.json (+ .bin), gt_meshes/frame_NNNN.obj, masks/mask_NNNN.png,
/// frames/frame_NNNN.png and a ready-to-run config.toml.
void save_dataset(const SynthDataset& data, const std::filesystem::path& dir);

struct GroundTruth {
  std::vector<SkeletonPose> poses;
  std::vector<std::vector<Vec3>> meshes;
  std::vector<BinaryMask> masks;
};
/// Reads the ground-truth part of a saved dataset; meshes and masks are
/// optional.
GroundTruth load_ground_truth(const std::filesystem::path& dir);

/// Zero-padded per-frame file name, e.g. frame_name("mask_", 3, ".png").
std::string frame_name(const std::string& prefix, int frame, const std::string& ext);

}  // namespace perfcap
