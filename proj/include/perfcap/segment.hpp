#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "perfcap/image.hpp"
#include "perfcap/kinematics.hpp"

namespace perfcap {

enum class TrimapLabel : uint8_t {
  kForeground = 0,          // T_f
  kProbableForeground = 1,  // T_uf
  kProbableBackground = 2,  // T_ub
  kBackground = 3,          // T_b
};

struct Trimap {
  int width = 0;
  int height = 0;
  std::vector<TrimapLabel> labels;
  bool empty_model = false;  // set when the model mask was empty

  TrimapLabel at(int x, int y) const { return labels[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)]; }
  long count(TrimapLabel l) const;
};

/// Morphology with the disc {dx^2 + dy^2 <= r^2}; pixels outside the image
/// do not take part.
BinaryMask erode(const BinaryMask& m, double radius);
BinaryMask dilate(const BinaryMask& m, double radius);

/// T_f = R u erode(M), T_b = not dilate(M), T_uf = M - T_f, T_ub = dilate(M) - M.
Trimap build_trimap(const BinaryMask& skeleton, const BinaryMask& model, double erosion_radius,
                    double dilation_radius);
/// Radii as fractions of the model mask's bounding-box diagonal.
Trimap build_trimap_auto(const BinaryMask& skeleton, const BinaryMask& model, double erosion_frac = 0.03,
                         double dilation_frac = 0.06);

/// Per-pixel RGB distance between consecutive frames (channels in [0, 1]),
/// divided by its 95th percentile (by the maximum when that percentile is 0)
/// and clipped to [0, 1]. An empty `previous` gives a zero map.
std::vector<double> motion_weights(const RgbImage& current, const RgbImage& previous);

/// Gaussian mixture over RGB in [0, 1]^3.
struct ColorModel {
  struct Component {
    double weight = 0.0;
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Matrix3d cov = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d inv = Eigen::Matrix3d::Identity();
    double log_norm = 0.0;  // log(weight) - 0.5 log det(2 pi cov)
  };
  std::vector<Component> components;

  /// -log(weight_k N(c | k)) for the best component k, and that k.
  double cost(const Eigen::Vector3d& c, int* best = nullptr) const;
  /// Fits one component per label in 0..k-1 (empty labels dropped);
  /// covariances get +1e-5 I.
  static ColorModel fit(const std::vector<Eigen::Vector3d>& colors, const std::vector<int>& assignment, int k);
  /// Orchard-Bouman principal-axis splitting into at most k clusters.
  static std::vector<int> split_clusters(const std::vector<Eigen::Vector3d>& colors, int k);
};

struct GrabCutOptions {
  int iterations = 5;
  int components = 5;
  double gamma = 50.0;
  double motion_mu = 1.0;
  double motion_sigma = 0.1;
};

struct GrabCutResult {
  BinaryMask mask;
  std::vector<double> energy;  // after each iteration
};

/// Iterated colour-model fitting and graph cuts, 8-connected. `motion` is
/// empty or one value per pixel.
GrabCutResult grabcut_segment(const RgbImage& image, const Trimap& trimap, const std::vector<double>& motion,
                              const GrabCutOptions& opts = {});

/// Energy of a labeling under fixed colour models (pairwise weights as in
/// grabcut_segment).
double grabcut_energy(const RgbImage& image, const std::vector<double>& motion, const BinaryMask& labels,
                      const ColorModel& fg, const ColorModel& bg, const GrabCutOptions& opts);

/// Colour-coded trimap: T_f red, T_uf blue, T_ub yellow, T_b green.
RgbImage trimap_image(const Trimap& t);

struct ModelSegmentation {
  Trimap trimap;
  BinaryMask mask;
  GrabCutResult grabcut;
};

/// Trimap from the posed skeleton and skinned mesh, then GrabCut. Falls back
/// to the model mask when the trimap has no known foreground or background.
ModelSegmentation segment_with_model(const RgbImage& image, const RgbImage* previous, const SkeletonRig& rig,
                                     const SkeletonPose& pose, const std::vector<Vec3>& mesh_vertices,
                                     const std::vector<std::array<int, 3>>& triangles, const Camera& cam,
                                     const GrabCutOptions& opts = {}, double erosion_frac = 0.03,
                                     double dilation_frac = 0.06);

}  // namespace perfcap
