#include "perfcap/segment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "perfcap/error.hpp"
#include "perfcap/maxflow.hpp"
#include "perfcap/raster.hpp"

namespace perfcap {
namespace {

constexpr double kCostCap = 1e5;      // unary costs above this act as hard constraints
constexpr double kFlowScale = 1e4;    // capacity units per energy unit

// Exact squared Euclidean distance transform (Felzenszwalb-Huttenlocher) to
// the pixels where `seed` is set; pixels outside the image are not seeds.
std::vector<double> squared_distance(const BinaryMask& m, bool seed) {
  const int w = m.width, h = m.height;
  const double inf = 1e20;
  std::vector<double> d(static_cast<size_t>(w) * static_cast<size_t>(h));
  for (size_t i = 0; i < d.size(); ++i) d[i] = (m.data[i] != 0) == seed ? 0.0 : inf;
  const int n = std::max(w, h);
  std::vector<double> f(static_cast<size_t>(n)), out(static_cast<size_t>(n)), z(static_cast<size_t>(n) + 1);
  std::vector<int> v(static_cast<size_t>(n));
  auto pass = [&](int len) {
    int k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for (int q = 1; q < len; ++q) {
      auto meet = [&](int p) {
        return ((f[static_cast<size_t>(q)] + q * q) - (f[static_cast<size_t>(p)] + p * p)) / (2.0 * q - 2.0 * p);
      };
      double s = meet(v[static_cast<size_t>(k)]);
      while (s <= z[static_cast<size_t>(k)]) {
        --k;
        s = meet(v[static_cast<size_t>(k)]);
      }
      ++k;
      v[static_cast<size_t>(k)] = q;
      z[static_cast<size_t>(k)] = s;
      z[static_cast<size_t>(k) + 1] = inf;
    }
    k = 0;
    for (int q = 0; q < len; ++q) {
      while (z[static_cast<size_t>(k) + 1] < q) ++k;
      const int p = v[static_cast<size_t>(k)];
      out[static_cast<size_t>(q)] = (q - p) * (q - p) + f[static_cast<size_t>(p)];
    }
  };
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[static_cast<size_t>(y)] = d[static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)];
    pass(h);
    for (int y = 0; y < h; ++y) d[static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)] = out[static_cast<size_t>(y)];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[static_cast<size_t>(x)] = d[static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)];
    pass(w);
    for (int x = 0; x < w; ++x) d[static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)] = out[static_cast<size_t>(x)];
  }
  return d;
}

Eigen::Vector3d color_at(const RgbImage& img, size_t i) {
  const uint8_t* p = &img.data[i * 3];
  return Eigen::Vector3d(p[0], p[1], p[2]) / 255.0;
}

struct PixelGraph {
  int width = 0, height = 0;
  // Forward neighbors: right, down, down-right, down-left.
  static constexpr std::array<std::array<int, 2>, 4> kDirs{{{1, 0}, {0, 1}, {1, 1}, {-1, 1}}};
  std::vector<std::array<double, 4>> weights;
};

PixelGraph pairwise_weights(const RgbImage& img, const std::vector<double>& motion, const GrabCutOptions& opts) {
  PixelGraph g;
  g.width = img.width;
  g.height = img.height;
  const size_t n = static_cast<size_t>(img.width) * static_cast<size_t>(img.height);
  g.weights.assign(n, {0, 0, 0, 0});
  double sum = 0.0;
  long count = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const size_t i = static_cast<size_t>(y) * static_cast<size_t>(img.width) + static_cast<size_t>(x);
      for (int d = 0; d < 4; ++d) {
        const int nx = x + PixelGraph::kDirs[static_cast<size_t>(d)][0], ny = y + PixelGraph::kDirs[static_cast<size_t>(d)][1];
        if (nx < 0 || ny < 0 || nx >= img.width || ny >= img.height) continue;
        const size_t j = static_cast<size_t>(ny) * static_cast<size_t>(img.width) + static_cast<size_t>(nx);
        sum += (color_at(img, i) - color_at(img, j)).squaredNorm();
        ++count;
      }
    }
  }
  const double beta = (count > 0 && sum > 0.0) ? 1.0 / (2.0 * sum / static_cast<double>(count)) : 0.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const size_t i = static_cast<size_t>(y) * static_cast<size_t>(img.width) + static_cast<size_t>(x);
      for (int d = 0; d < 4; ++d) {
        const int nx = x + PixelGraph::kDirs[static_cast<size_t>(d)][0], ny = y + PixelGraph::kDirs[static_cast<size_t>(d)][1];
        if (nx < 0 || ny < 0 || nx >= img.width || ny >= img.height) continue;
        const size_t j = static_cast<size_t>(ny) * static_cast<size_t>(img.width) + static_cast<size_t>(nx);
        const double dist = d >= 2 ? std::numbers::sqrt2 : 1.0;
        double w = opts.gamma / dist * std::exp(-beta * (color_at(img, i) - color_at(img, j)).squaredNorm());
        if (opts.motion_mu != 0.0) {
          const double m = motion.empty() ? 0.0 : std::max(motion[i], motion[j]);
          w *= 1.0 + opts.motion_mu * std::exp(-m / opts.motion_sigma);
        }
        g.weights[i][static_cast<size_t>(d)] = w;
      }
    }
  }
  return g;
}

double labeling_energy(const PixelGraph& g, const std::vector<double>& dfg, const std::vector<double>& dbg,
                       const std::vector<uint8_t>& fg) {
  double e = 0.0;
  for (size_t i = 0; i < fg.size(); ++i) e += fg[i] ? dfg[i] : dbg[i];
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const size_t i = static_cast<size_t>(y) * static_cast<size_t>(g.width) + static_cast<size_t>(x);
      for (int d = 0; d < 4; ++d) {
        const int nx = x + PixelGraph::kDirs[static_cast<size_t>(d)][0], ny = y + PixelGraph::kDirs[static_cast<size_t>(d)][1];
        if (nx < 0 || ny < 0 || nx >= g.width || ny >= g.height) continue;
        const size_t j = static_cast<size_t>(ny) * static_cast<size_t>(g.width) + static_cast<size_t>(nx);
        if (fg[i] != fg[j]) e += g.weights[i][static_cast<size_t>(d)];
      }
    }
  }
  return e;
}

void unary_costs(const std::vector<Eigen::Vector3d>& colors, const ColorModel& fg, const ColorModel& bg,
                 std::vector<double>& dfg, std::vector<double>& dbg) {
  dfg.resize(colors.size());
  dbg.resize(colors.size());
  for (size_t i = 0; i < colors.size(); ++i) {
    dfg[i] = fg.cost(colors[i]);
    dbg[i] = bg.cost(colors[i]);
  }
}

// Refits a label's mixture from hard component assignments under `model`.
ColorModel refit(const std::vector<Eigen::Vector3d>& colors, const ColorModel& model, int k) {
  std::vector<int> assign(colors.size());
  for (size_t i = 0; i < colors.size(); ++i) model.cost(colors[i], &assign[i]);
  return ColorModel::fit(colors, assign, k);
}

double total_cost(const std::vector<Eigen::Vector3d>& colors, const ColorModel& m) {
  double s = 0.0;
  for (const auto& c : colors) s += m.cost(c);
  return s;
}

}  // namespace

long Trimap::count(TrimapLabel l) const { return static_cast<long>(std::count(labels.begin(), labels.end(), l)); }

BinaryMask erode(const BinaryMask& m, double radius) {
  const auto d = squared_distance(m, false);
  BinaryMask out(m.width, m.height);
  for (size_t i = 0; i < d.size(); ++i) out.data[i] = m.data[i] && d[i] > radius * radius;
  return out;
}

BinaryMask dilate(const BinaryMask& m, double radius) {
  const auto d = squared_distance(m, true);
  BinaryMask out(m.width, m.height);
  for (size_t i = 0; i < d.size(); ++i) out.data[i] = d[i] <= radius * radius;
  return out;
}

Trimap build_trimap(const BinaryMask& skeleton, const BinaryMask& model, double erosion_radius,
                    double dilation_radius) {
  if (skeleton.width != model.width || skeleton.height != model.height)
    throw InputError("build_trimap: mask dimensions differ");
  Trimap t;
  t.width = model.width;
  t.height = model.height;
  t.labels.assign(model.data.size(), TrimapLabel::kBackground);
  if (model.empty()) {
    t.empty_model = true;
    return t;
  }
  const BinaryMask er = erode(model, erosion_radius);
  const BinaryMask di = dilate(model, dilation_radius);
  for (size_t i = 0; i < t.labels.size(); ++i) {
    if (skeleton.data[i] || er.data[i]) t.labels[i] = TrimapLabel::kForeground;
    else if (model.data[i]) t.labels[i] = TrimapLabel::kProbableForeground;
    else if (di.data[i]) t.labels[i] = TrimapLabel::kProbableBackground;
  }
  return t;
}

Trimap build_trimap_auto(const BinaryMask& skeleton, const BinaryMask& model, double erosion_frac,
                         double dilation_frac) {
  int x0 = model.width, y0 = model.height, x1 = -1, y1 = -1;
  for (int y = 0; y < model.height; ++y)
    for (int x = 0; x < model.width; ++x)
      if (model.at(x, y)) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  const double diag = x1 < 0 ? 0.0 : std::hypot(x1 - x0 + 1, y1 - y0 + 1);
  return build_trimap(skeleton, model, erosion_frac * diag, dilation_frac * diag);
}

std::vector<double> motion_weights(const RgbImage& current, const RgbImage& previous) {
  const size_t n = static_cast<size_t>(current.width) * static_cast<size_t>(current.height);
  std::vector<double> m(n, 0.0);
  if (previous.data.empty()) return m;
  if (previous.width != current.width || previous.height != current.height)
    throw InputError("motion_weights: frame dimensions differ");
  for (size_t i = 0; i < n; ++i) m[i] = (color_at(current, i) - color_at(previous, i)).norm();
  std::vector<double> sorted = m;
  const size_t k = static_cast<size_t>(std::floor(0.95 * static_cast<double>(n - 1)));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(k), sorted.end());
  double scale = sorted[k];
  if (scale <= 0.0) scale = *std::max_element(m.begin(), m.end());
  if (scale <= 0.0) return m;
  for (double& v : m) v = std::min(1.0, v / scale);
  return m;
}

double ColorModel::cost(const Eigen::Vector3d& c, int* best) const {
  double out = kCostCap;
  int arg = -1;
  for (size_t k = 0; k < components.size(); ++k) {
    const auto& comp = components[k];
    const Eigen::Vector3d d = c - comp.mean;
    const double v = 0.5 * d.dot(comp.inv * d) - comp.log_norm;
    if (arg < 0 || v < out) {
      out = v;
      arg = static_cast<int>(k);
    }
  }
  if (best) *best = std::max(arg, 0);
  return std::min(out, kCostCap);
}

ColorModel ColorModel::fit(const std::vector<Eigen::Vector3d>& colors, const std::vector<int>& assignment, int k) {
  std::vector<double> n(static_cast<size_t>(k), 0.0);
  std::vector<Eigen::Vector3d> sum(static_cast<size_t>(k), Eigen::Vector3d::Zero());
  for (size_t i = 0; i < colors.size(); ++i) {
    n[static_cast<size_t>(assignment[i])] += 1.0;
    sum[static_cast<size_t>(assignment[i])] += colors[i];
  }
  std::vector<Eigen::Matrix3d> scatter(static_cast<size_t>(k), Eigen::Matrix3d::Zero());
  for (size_t i = 0; i < colors.size(); ++i) {
    const auto a = static_cast<size_t>(assignment[i]);
    const Eigen::Vector3d d = colors[i] - sum[a] / n[a];
    scatter[a] += d * d.transpose();
  }
  ColorModel m;
  for (size_t a = 0; a < static_cast<size_t>(k); ++a) {
    if (n[a] == 0.0) continue;
    Component c;
    c.weight = n[a] / static_cast<double>(colors.size());
    c.mean = sum[a] / n[a];
    c.cov = scatter[a] / n[a] + 1e-5 * Eigen::Matrix3d::Identity();
    c.inv = c.cov.inverse();
    c.log_norm = std::log(c.weight) - 0.5 * std::log(std::pow(2.0 * std::numbers::pi, 3) * c.cov.determinant());
    m.components.push_back(c);
  }
  return m;
}

std::vector<int> ColorModel::split_clusters(const std::vector<Eigen::Vector3d>& colors, int k) {
  std::vector<int> assign(colors.size(), 0);
  for (int clusters = 1; clusters < k; ++clusters) {
    int best = -1;
    double best_lambda = 1e-12;
    Eigen::Vector3d best_axis, best_mean;
    for (int c = 0; c < clusters; ++c) {
      Eigen::Vector3d mean = Eigen::Vector3d::Zero();
      double cnt = 0.0;
      for (size_t i = 0; i < colors.size(); ++i)
        if (assign[i] == c) {
          mean += colors[i];
          cnt += 1.0;
        }
      if (cnt < 2.0) continue;
      mean /= cnt;
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (size_t i = 0; i < colors.size(); ++i)
        if (assign[i] == c) cov += (colors[i] - mean) * (colors[i] - mean).transpose();
      cov /= cnt;
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
      if (es.eigenvalues()[2] > best_lambda) {
        best_lambda = es.eigenvalues()[2];
        best = c;
        best_axis = es.eigenvectors().col(2);
        best_mean = mean;
      }
    }
    if (best < 0) break;
    for (size_t i = 0; i < colors.size(); ++i)
      if (assign[i] == best && best_axis.dot(colors[i] - best_mean) > 0.0) assign[i] = clusters;
  }
  return assign;
}

double grabcut_energy(const RgbImage& image, const std::vector<double>& motion, const BinaryMask& labels,
                      const ColorModel& fg, const ColorModel& bg, const GrabCutOptions& opts) {
  const PixelGraph g = pairwise_weights(image, motion, opts);
  std::vector<Eigen::Vector3d> colors(labels.data.size());
  for (size_t i = 0; i < colors.size(); ++i) colors[i] = color_at(image, i);
  std::vector<double> dfg, dbg;
  unary_costs(colors, fg, bg, dfg, dbg);
  return labeling_energy(g, dfg, dbg, labels.data);
}

GrabCutResult grabcut_segment(const RgbImage& image, const Trimap& trimap, const std::vector<double>& motion,
                              const GrabCutOptions& opts) {
  if (image.width != trimap.width || image.height != trimap.height)
    throw InputError("grabcut_segment: image and trimap dimensions differ");
  const size_t n = trimap.labels.size();
  if (!motion.empty() && motion.size() != n) throw InputError("grabcut_segment: motion map has the wrong size");
  if (trimap.count(TrimapLabel::kForeground) == 0 || trimap.count(TrimapLabel::kBackground) == 0)
    throw InputError("grabcut_segment: trimap needs known foreground and background pixels");

  GrabCutResult res;
  res.mask = BinaryMask(image.width, image.height);
  std::vector<uint8_t> fg(n);
  bool uncertain = false;
  for (size_t i = 0; i < n; ++i) {
    const auto l = trimap.labels[i];
    fg[i] = l == TrimapLabel::kForeground || l == TrimapLabel::kProbableForeground;
    uncertain |= l == TrimapLabel::kProbableForeground || l == TrimapLabel::kProbableBackground;
  }
  if (!uncertain) {
    res.mask.data = fg;
    return res;
  }

  std::vector<Eigen::Vector3d> colors(n);
  for (size_t i = 0; i < n; ++i) colors[i] = color_at(image, i);
  auto split = [&](const std::vector<uint8_t>& lab, bool want, std::vector<Eigen::Vector3d>& out) {
    out.clear();
    for (size_t i = 0; i < n; ++i)
      if ((lab[i] != 0) == want) out.push_back(colors[i]);
  };
  const int k = std::max(1, opts.components);
  std::vector<Eigen::Vector3d> fgc, bgc;
  split(fg, true, fgc);
  split(fg, false, bgc);
  ColorModel fgm = ColorModel::fit(fgc, ColorModel::split_clusters(fgc, std::min<int>(k, static_cast<int>(fgc.size()))), k);
  ColorModel bgm = ColorModel::fit(bgc, ColorModel::split_clusters(bgc, std::min<int>(k, static_cast<int>(bgc.size()))), k);

  const PixelGraph pg = pairwise_weights(image, motion, opts);
  // The graph covers the bounding box of non-background pixels plus a one
  // pixel margin; everything outside is fixed background next to fixed background.
  int x0 = image.width, y0 = image.height, x1 = -1, y1 = -1;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (trimap.at(x, y) != TrimapLabel::kBackground) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  x0 = std::max(0, x0 - 1);
  y0 = std::max(0, y0 - 1);
  x1 = std::min(image.width - 1, x1 + 1);
  y1 = std::min(image.height - 1, y1 + 1);
  const int cw = x1 - x0 + 1, ch = y1 - y0 + 1;

  std::vector<double> dfg, dbg;
  for (int it = 0; it < opts.iterations; ++it) {
    // Colour models from hard component assignments; kept only if they lower the unary cost.
    split(fg, true, fgc);
    split(fg, false, bgc);
    ColorModel nf = refit(fgc, fgm, k), nb = refit(bgc, bgm, k);
    if (total_cost(fgc, nf) <= total_cost(fgc, fgm)) fgm = std::move(nf);
    if (total_cost(bgc, nb) <= total_cost(bgc, bgm)) bgm = std::move(nb);
    unary_costs(colors, fgm, bgm, dfg, dbg);

    MaxFlowGraph graph(cw * ch);
    int64_t hard = 1;
    std::vector<int64_t> src(static_cast<size_t>(cw * ch)), snk(static_cast<size_t>(cw * ch));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const size_t i = static_cast<size_t>(y) * static_cast<size_t>(image.width) + static_cast<size_t>(x);
        const size_t node = static_cast<size_t>(y - y0) * static_cast<size_t>(cw) + static_cast<size_t>(x - x0);
        const double base = std::min(dfg[i], dbg[i]);
        src[node] = std::llround((dbg[i] - base) * kFlowScale);
        snk[node] = std::llround((dfg[i] - base) * kFlowScale);
        hard += src[node] + snk[node];
        for (int d = 0; d < 4; ++d) {
          const int nx = x + PixelGraph::kDirs[static_cast<size_t>(d)][0], ny = y + PixelGraph::kDirs[static_cast<size_t>(d)][1];
          if (nx < x0 || ny < y0 || nx > x1 || ny > y1) continue;
          const int64_t c = std::llround(pg.weights[i][static_cast<size_t>(d)] * kFlowScale);
          hard += 2 * c;
          if (c > 0) graph.add_edge(static_cast<int>(node), (ny - y0) * cw + (nx - x0), c, c);
        }
      }
    }
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const auto l = trimap.at(x, y);
        const size_t node = static_cast<size_t>(y - y0) * static_cast<size_t>(cw) + static_cast<size_t>(x - x0);
        if (l == TrimapLabel::kForeground) graph.add_terminal(static_cast<int>(node), hard, 0);
        else if (l == TrimapLabel::kBackground) graph.add_terminal(static_cast<int>(node), 0, hard);
        else graph.add_terminal(static_cast<int>(node), src[node], snk[node]);
      }
    }
    graph.maxflow();
    std::vector<uint8_t> next = fg;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        next[static_cast<size_t>(y) * static_cast<size_t>(image.width) + static_cast<size_t>(x)] =
            graph.source_side((y - y0) * cw + (x - x0)) ? 1 : 0;
    // Capacities are rounded; never accept a cut that is worse in exact arithmetic.
    const double e_old = labeling_energy(pg, dfg, dbg, fg);
    const double e_new = labeling_energy(pg, dfg, dbg, next);
    if (e_new <= e_old) fg.swap(next);
    res.energy.push_back(std::min(e_old, e_new));
  }
  res.mask.data = fg;
  return res;
}

RgbImage trimap_image(const Trimap& t) {
  RgbImage img(t.width, t.height);
  for (int y = 0; y < t.height; ++y) {
    for (int x = 0; x < t.width; ++x) {
      switch (t.at(x, y)) {
        case TrimapLabel::kForeground: img.set(x, y, 255, 0, 0); break;
        case TrimapLabel::kProbableForeground: img.set(x, y, 0, 0, 255); break;
        case TrimapLabel::kProbableBackground: img.set(x, y, 255, 255, 0); break;
        case TrimapLabel::kBackground: img.set(x, y, 0, 255, 0); break;
      }
    }
  }
  return img;
}

ModelSegmentation segment_with_model(const RgbImage& image, const RgbImage* previous, const SkeletonRig& rig,
                                     const SkeletonPose& pose, const std::vector<Vec3>& mesh_vertices,
                                     const std::vector<std::array<int, 3>>& triangles, const Camera& cam,
                                     const GrabCutOptions& opts, double erosion_frac, double dilation_frac) {
  if (image.width != cam.width || image.height != cam.height)
    throw InputError("frame size " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     " does not match the camera");
  ModelSegmentation out;
  const BinaryMask skel = render_skeleton_mask(rig, pose, cam);
  const BinaryMask model = render_mask(mesh_vertices, triangles, cam);
  out.trimap = build_trimap_auto(skel, model, erosion_frac, dilation_frac);
  if (out.trimap.count(TrimapLabel::kForeground) == 0 || out.trimap.count(TrimapLabel::kBackground) == 0) {
    out.mask = model;
    return out;
  }
  const auto motion = previous ? motion_weights(image, *previous) : std::vector<double>{};
  out.grabcut = grabcut_segment(image, out.trimap, motion, opts);
  out.mask = out.grabcut.mask;
  return out;
}

}  // namespace perfcap
