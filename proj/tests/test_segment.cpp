#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "perfcap/maxflow.hpp"
#include "perfcap/segment.hpp"

using namespace perfcap;

namespace {

struct SmallGraph {
  int n = 0;
  std::vector<int64_t> src, snk;
  struct E {
    int i, j;
    int64_t c, r;
  };
  std::vector<E> edges;
};

int64_t cut_value(const SmallGraph& g, unsigned source_set) {
  int64_t v = 0;
  for (int i = 0; i < g.n; ++i) v += ((source_set >> i) & 1u) ? g.snk[static_cast<size_t>(i)] : g.src[static_cast<size_t>(i)];
  for (const auto& e : g.edges) {
    const bool si = (source_set >> e.i) & 1u, sj = (source_set >> e.j) & 1u;
    if (si && !sj) v += e.c;
    if (sj && !si) v += e.r;
  }
  return v;
}

SmallGraph random_graph(std::mt19937& rng, int n, double density) {
  SmallGraph g;
  g.n = n;
  std::uniform_int_distribution<int> cap(0, 20);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < n; ++i) {
    g.src.push_back(u(rng) < 0.5 ? cap(rng) : 0);
    g.snk.push_back(u(rng) < 0.5 ? cap(rng) : 0);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (u(rng) < density) g.edges.push_back({i, j, cap(rng), cap(rng)});
  return g;
}

BinaryMask brute_erode(const BinaryMask& m, double r) {
  BinaryMask out(m.width, m.height);
  const int R = static_cast<int>(std::ceil(r));
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool keep = m.at(x, y);
      for (int dy = -R; dy <= R && keep; ++dy)
        for (int dx = -R; dx <= R && keep; ++dx)
          if (dx * dx + dy * dy <= r * r && m.inside(x + dx, y + dy) && !m.at(x + dx, y + dy)) keep = false;
      out.set(x, y, keep);
    }
  return out;
}

BinaryMask brute_dilate(const BinaryMask& m, double r) {
  BinaryMask out(m.width, m.height);
  const int R = static_cast<int>(std::ceil(r));
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool hit = false;
      for (int dy = -R; dy <= R && !hit; ++dy)
        for (int dx = -R; dx <= R && !hit; ++dx)
          if (dx * dx + dy * dy <= r * r && m.get(x + dx, y + dy)) hit = true;
      out.set(x, y, hit);
    }
  return out;
}

BinaryMask rect(int w, int h, int x0, int y0, int rw, int rh) {
  BinaryMask m(w, h);
  for (int y = y0; y < y0 + rh; ++y)
    for (int x = x0; x < x0 + rw; ++x) m.set(x, y);
  return m;
}

BinaryMask ellipse(int w, int h, double cx, double cy, double rx, double ry) {
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = (x + 0.5 - cx) / rx, v = (y + 0.5 - cy) / ry;
      if (u * u + v * v <= 1.0) m.set(x, y);
    }
  return m;
}

// Two noisy colours composited through a mask.
RgbImage two_color(const BinaryMask& fg, std::mt19937& rng, std::array<int, 3> cf, std::array<int, 3> cb, double noise) {
  RgbImage img(fg.width, fg.height);
  std::normal_distribution<double> g(0.0, noise);
  for (int y = 0; y < fg.height; ++y)
    for (int x = 0; x < fg.width; ++x) {
      const auto& c = fg.at(x, y) ? cf : cb;
      auto ch = [&](int v) { return static_cast<uint8_t>(std::clamp(std::lround(v + g(rng)), 0L, 255L)); };
      img.set(x, y, ch(c[0]), ch(c[1]), ch(c[2]));
    }
  return img;
}

Trimap trimap_from_truth(const BinaryMask& truth, double r_in, double r_out) {
  return build_trimap(BinaryMask(truth.width, truth.height), truth, r_in, r_out);
}

}  // namespace

TEST_CASE("max-flow equals the brute-force minimum cut on small graphs") {
  std::mt19937 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + trial % 12;
    const auto g = random_graph(rng, n, trial % 3 == 0 ? 0.8 : 0.35);
    MaxFlowGraph mf(n);
    for (int i = 0; i < n; ++i) mf.add_terminal(i, g.src[static_cast<size_t>(i)], g.snk[static_cast<size_t>(i)]);
    for (const auto& e : g.edges) mf.add_edge(e.i, e.j, e.c, e.r);
    const int64_t flow = mf.maxflow();
    int64_t best = std::numeric_limits<int64_t>::max();
    for (unsigned s = 0; s < (1u << n); ++s) best = std::min(best, cut_value(g, s));
    CHECK(flow == best);
    unsigned side = 0;
    for (int i = 0; i < n; ++i)
      if (mf.source_side(i)) side |= 1u << i;
    CHECK(cut_value(g, side) == flow);
  }
}

TEST_CASE("max-flow on a 3x4 grid with hard terminals") {
  std::mt19937 rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    SmallGraph g;
    g.n = 12;
    std::uniform_int_distribution<int> cap(0, 50);
    for (int i = 0; i < 12; ++i) {
      g.src.push_back(cap(rng));
      g.snk.push_back(cap(rng));
    }
    g.src[0] = 100000;
    g.snk[11] = 100000;
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 4; ++x) {
        const int i = y * 4 + x;
        if (x + 1 < 4) {
          const int c = cap(rng);
          g.edges.push_back({i, i + 1, c, c});
        }
        if (y + 1 < 3) {
          const int c = cap(rng);
          g.edges.push_back({i, i + 4, c, c});
        }
      }
    MaxFlowGraph mf(12);
    for (int i = 0; i < 12; ++i) mf.add_terminal(i, g.src[static_cast<size_t>(i)], g.snk[static_cast<size_t>(i)]);
    for (const auto& e : g.edges) mf.add_edge(e.i, e.j, e.c, e.r);
    const int64_t flow = mf.maxflow();
    int64_t best = std::numeric_limits<int64_t>::max();
    for (unsigned s = 0; s < 4096u; ++s) best = std::min(best, cut_value(g, s));
    CHECK(flow == best);
    CHECK(mf.source_side(0));
    CHECK_FALSE(mf.source_side(11));
  }
}

TEST_CASE("disc morphology matches brute force") {
  std::mt19937 rng(33);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 40; ++trial) {
    BinaryMask m(23, 17);
    for (auto& v : m.data) v = u(rng) < 0.6;
    const double r = 0.5 * (trial % 9);
    CHECK(erode(m, r) == brute_erode(m, r));
    CHECK(dilate(m, r) == brute_dilate(m, r));
  }
}

TEST_CASE("trimap of a square with radius-2 morphology") {
  const auto M = rect(40, 40, 10, 10, 20, 20);
  const auto t = build_trimap(BinaryMask(40, 40), M, 2, 2);
  CHECK(t.count(TrimapLabel::kForeground) == 16 * 16);
  for (int y = 12; y < 28; ++y)
    for (int x = 12; x < 28; ++x) CHECK(t.at(x, y) == TrimapLabel::kForeground);
  CHECK(t.count(TrimapLabel::kProbableForeground) == 400 - 256);
  const long ring = brute_dilate(M, 2).count() - 400;
  CHECK(t.count(TrimapLabel::kProbableBackground) == ring);
  CHECK(ring == 4 * 20 * 2 + 4);  // straight sides plus one diagonal pixel per corner
  CHECK(t.count(TrimapLabel::kBackground) == 1600 - 400 - ring);
  CHECK_FALSE(t.empty_model);
}

TEST_CASE("trimap: skeleton outside the mesh, full dilation, empty mesh") {
  const auto M = rect(30, 30, 10, 10, 10, 10);
  auto R = rect(30, 30, 14, 2, 1, 20);
  const auto t = build_trimap(R, M, 2, 3);
  for (int y = 2; y < 22; ++y) CHECK(t.at(14, y) == TrimapLabel::kForeground);
  const auto all = build_trimap(BinaryMask(30, 30), M, 1, 40);
  CHECK(all.count(TrimapLabel::kBackground) == 0);
  const auto none = build_trimap(R, BinaryMask(30, 30), 1, 1);
  CHECK(none.empty_model);
  CHECK(none.count(TrimapLabel::kBackground) == 900);
  // Labels partition the image.
  CHECK(t.count(TrimapLabel::kForeground) + t.count(TrimapLabel::kProbableForeground) +
            t.count(TrimapLabel::kProbableBackground) + t.count(TrimapLabel::kBackground) ==
        900);
}

TEST_CASE("automatic radii follow the bounding-box diagonal") {
  const auto M = rect(200, 200, 20, 20, 120, 160);
  const double diag = std::hypot(120, 160);
  const auto a = build_trimap_auto(BinaryMask(200, 200), M);
  const auto b = build_trimap(BinaryMask(200, 200), M, 0.03 * diag, 0.06 * diag);
  CHECK(a.labels == b.labels);
}

TEST_CASE("motion weights") {
  RgbImage a(8, 6), b(8, 6);
  for (auto& v : a.data) v = 77;
  b = a;
  for (double m : motion_weights(a, b)) CHECK(m == 0.0);
  RgbImage black(8, 6), white = black;
  white.set(3, 2, 255, 255, 255);
  const auto m = motion_weights(white, black);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) CHECK(m[static_cast<size_t>(y * 8 + x)] == (x == 3 && y == 2 ? 1.0 : 0.0));
  for (double v : motion_weights(a, RgbImage{})) CHECK(v == 0.0);

  // Square moving 3 px right: change exactly on the leading and trailing bands.
  RgbImage f0(40, 20), f1(40, 20);
  for (int y = 5; y < 15; ++y)
    for (int x = 10; x < 20; ++x) f0.set(x, y, 200, 50, 50);
  for (int y = 5; y < 15; ++y)
    for (int x = 13; x < 23; ++x) f1.set(x, y, 200, 50, 50);
  const auto mv = motion_weights(f1, f0);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 40; ++x) {
      const bool band = y >= 5 && y < 15 && ((x >= 10 && x < 13) || (x >= 20 && x < 23));
      CHECK((mv[static_cast<size_t>(y * 40 + x)] > 0.0) == band);
    }
}

TEST_CASE("colour model fit: weights, positive definiteness, cluster split") {
  std::mt19937 rng(34);
  std::normal_distribution<double> g(0, 0.02);
  std::vector<Eigen::Vector3d> c;
  for (int i = 0; i < 300; ++i) c.emplace_back(0.2 + g(rng), 0.3 + g(rng), 0.8 + g(rng));
  for (int i = 0; i < 200; ++i) c.emplace_back(0.9 + g(rng), 0.1 + g(rng), 0.1 + g(rng));
  const auto assign = ColorModel::split_clusters(c, 5);
  const auto m = ColorModel::fit(c, assign, 5);
  double wsum = 0.0;
  for (const auto& comp : m.components) {
    wsum += comp.weight;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(comp.cov);
    CHECK(es.eigenvalues().minCoeff() >= 1e-5 - 1e-12);
  }
  CHECK(std::abs(wsum - 1.0) <= 1e-9);
  CHECK(m.components.size() == 5);
  // The first split separates the two colours.
  for (int i = 0; i < 300; ++i)
    for (int j = 300; j < 500; ++j) CHECK(assign[static_cast<size_t>(i)] != assign[static_cast<size_t>(j)]);
  // Fewer samples than components.
  std::vector<Eigen::Vector3d> few = {c[0], c[1]};
  const auto fm = ColorModel::fit(few, ColorModel::split_clusters(few, 2), 5);
  CHECK(fm.components.size() == 2);
}

TEST_CASE("GrabCut on two-colour scenes") {
  std::mt19937 rng(35);
  for (int trial = 0; trial < 4; ++trial) {
    const auto truth = ellipse(120, 100, 60 + 3 * trial, 50, 30 - 2 * trial, 38);
    const auto img = two_color(truth, rng, {200, 60, 40}, {40, 90, 190}, 8.0);
    const auto tri = trimap_from_truth(truth, 4, 8);
    const auto res = grabcut_segment(img, tri, {});
    CHECK(mask_iou(res.mask, truth) > 0.99);
    for (size_t i = 0; i < tri.labels.size(); ++i) {
      if (tri.labels[i] == TrimapLabel::kForeground) CHECK(res.mask.data[i] == 1);
      if (tri.labels[i] == TrimapLabel::kBackground) CHECK(res.mask.data[i] == 0);
    }
    REQUIRE(res.energy.size() == 5);
    for (size_t k = 1; k < res.energy.size(); ++k) CHECK(res.energy[k] <= res.energy[k - 1]);
  }
}

TEST_CASE("GrabCut energy never increases on hard scenes") {
  std::mt19937 rng(36);
  for (int trial = 0; trial < 4; ++trial) {
    const auto truth = ellipse(80, 80, 40, 40, 20, 25);
    // Overlapping colour distributions and a loose trimap.
    const auto img = two_color(truth, rng, {120, 110, 100}, {100, 110, 120}, 30.0);
    const auto tri = trimap_from_truth(truth, 8, 12);
    GrabCutOptions opts;
    opts.iterations = 8;
    const auto res = grabcut_segment(img, tri, {}, opts);
    for (size_t k = 1; k < res.energy.size(); ++k) CHECK(res.energy[k] <= res.energy[k - 1]);
    for (size_t i = 0; i < tri.labels.size(); ++i) {
      if (tri.labels[i] == TrimapLabel::kForeground) CHECK(res.mask.data[i] == 1);
      if (tri.labels[i] == TrimapLabel::kBackground) CHECK(res.mask.data[i] == 0);
    }
  }
}

TEST_CASE("fully constrained trimap returns T_f") {
  std::mt19937 rng(37);
  const auto truth = rect(30, 30, 5, 5, 10, 10);
  const auto img = two_color(truth, rng, {255, 0, 0}, {0, 0, 255}, 5.0);
  Trimap t;
  t.width = t.height = 30;
  t.labels.assign(900, TrimapLabel::kBackground);
  for (size_t i = 0; i < 900; ++i)
    if (truth.data[i]) t.labels[i] = TrimapLabel::kForeground;
  CHECK(grabcut_segment(img, t, {}).mask == truth);
  Trimap bad = t;
  std::fill(bad.labels.begin(), bad.labels.end(), TrimapLabel::kProbableForeground);
  CHECK_THROWS(grabcut_segment(img, bad, {}));
}

TEST_CASE("motion cue: static foreground against a flickering background") {
  // Same colour everywhere in the current frame; only the background changed.
  const int w = 80, h = 80;
  const auto truth = rect(w, h, 25, 25, 30, 30);
  RgbImage cur(w, h), prev(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      cur.set(x, y, 128, 128, 128);
      if (truth.at(x, y)) prev.set(x, y, 128, 128, 128);
      else prev.set(x, y, 60, 60, 60);
    }
  Trimap t;
  t.width = w;
  t.height = h;
  t.labels.assign(static_cast<size_t>(w * h), TrimapLabel::kBackground);
  const auto outer = rect(w, h, 15, 15, 50, 50), core = rect(w, h, 27, 27, 26, 26);
  for (size_t i = 0; i < t.labels.size(); ++i) {
    if (core.data[i]) t.labels[i] = TrimapLabel::kForeground;
    else if (truth.data[i]) t.labels[i] = TrimapLabel::kProbableForeground;
    else if (outer.data[i]) t.labels[i] = TrimapLabel::kProbableBackground;
  }
  const auto motion = motion_weights(cur, prev);
  GrabCutOptions with, without;
  without.motion_mu = 0.0;
  const double iou_with = mask_iou(grabcut_segment(cur, t, motion, with).mask, truth);
  const double iou_without = mask_iou(grabcut_segment(cur, t, motion, without).mask, truth);
  CHECK(iou_with > iou_without);
  CHECK(iou_with > 0.99);
}

TEST_CASE("without the motion cue the motion map is ignored") {
  std::mt19937 rng(38);
  const auto truth = ellipse(60, 60, 30, 30, 15, 20);
  const auto img = two_color(truth, rng, {150, 100, 90}, {90, 100, 150}, 25.0);
  const auto tri = trimap_from_truth(truth, 5, 8);
  std::vector<double> noise(3600);
  std::uniform_real_distribution<double> u(0, 1);
  for (double& v : noise) v = u(rng);
  GrabCutOptions opts;
  opts.motion_mu = 0.0;
  const auto a = grabcut_segment(img, tri, {}, opts);
  const auto b = grabcut_segment(img, tri, noise, opts);
  CHECK(a.mask == b.mask);
  CHECK(a.energy == b.energy);
}

TEST_CASE("trimap debug image colours") {
  Trimap t;
  t.width = 4;
  t.height = 1;
  t.labels = {TrimapLabel::kForeground, TrimapLabel::kProbableForeground, TrimapLabel::kProbableBackground,
              TrimapLabel::kBackground};
  const auto img = trimap_image(t);
  CHECK(std::vector<uint8_t>(img.data.begin(), img.data.end()) ==
        std::vector<uint8_t>{255, 0, 0, 0, 0, 255, 255, 255, 0, 0, 255, 0});
}
