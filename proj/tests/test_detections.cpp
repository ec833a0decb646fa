#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "perfcap/detections.hpp"
#include "perfcap/error.hpp"
#include "perfcap/io.hpp"
#include "test_support.hpp"

using namespace perfcap;

namespace {

const Camera kCam{1000, 1000, 500, 500, 1000, 1000};

// Detections that agree exactly with the given pose.
FrameDetections exact_detections(const SkeletonRig& rig, const SkeletonPose& pose, int frame) {
  auto d = FrameDetections::empty(frame, rig.joint_count());
  const auto pos = joint_positions(rig, pose);
  for (int j = 0; j < rig.joint_count(); ++j) {
    const auto s = static_cast<size_t>(j);
    d.d2d[s] = project(kCam, pos[s]);
    d.d3d[s] = pos[s] - pos[0];
    d.c2d[s] = 0.9;
    d.c3d[s] = 0.8;
  }
  return d;
}

}  // namespace

TEST_CASE("detection files round-trip byte for byte") {
  const auto rig = default_rig();
  std::mt19937 rng(1);
  std::vector<FrameDetections> dets;
  for (int f = 0; f < 3; ++f) dets.push_back(exact_detections(rig, testing::random_pose(rig, rng), f));
  dets[1].c2d[4] = 0.0;
  dets[1].d2d[4] = Vec2::Zero();
  const auto dir = testing::scratch_dir("det_rt");
  save_detections(dir / "d.json", dets, rig.joint_names());
  const auto back = load_detections(dir / "d.json", rig.joint_names());
  REQUIRE(back.size() == 3);
  save_detections(dir / "d2.json", back, rig.joint_names());
  CHECK(io::read_text(dir / "d.json") == io::read_text(dir / "d2.json"));
  for (size_t f = 0; f < 3; ++f) {
    CHECK(back[f].frame == static_cast<int>(f));
    for (size_t j = 0; j < 16; ++j) {
      CHECK(back[f].d2d[j] == dets[f].d2d[j]);
      CHECK(back[f].d3d[j] == dets[f].d3d[j]);
    }
  }
}

TEST_CASE("missing frames are reported as gaps") {
  const auto rig = default_rig();
  std::vector<FrameDetections> dets = {FrameDetections::empty(0, 16), FrameDetections::empty(2, 16)};
  const auto text = detections_to_json(dets, rig.joint_names());
  try {
    parse_detections(text, rig.joint_names());
    FAIL("expected a gap error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("gap at frame 1") != std::string::npos);
  }
}

TEST_CASE("null joints load as zero-confidence zero positions") {
  const auto rig = default_rig();
  std::string j2 = "[", j3 = "[";
  for (int j = 0; j < 16; ++j) {
    j2 += std::string(j ? "," : "") + (j == 3 ? "null" : "[1.5,2.5,0.7]");
    j3 += std::string(j ? "," : "") + (j == 3 ? "null" : "[0.1,0.2,0.3,0.6]");
  }
  const std::string text = "{\"frames\":[{\"frame\":0,\"joints2d\":" + j2 + "],\"joints3d\":" + j3 + "]}]}";
  const auto dets = parse_detections(text, rig.joint_names());
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].c2d[3] == 0.0);
  CHECK(dets[0].c3d[3] == 0.0);
  CHECK(dets[0].d2d[3] == Vec2::Zero());
  CHECK(dets[0].d3d[3].allFinite());
  CHECK(dets[0].c2d[2] == doctest::Approx(0.7));
}

TEST_CASE("malformed JSON reports the line") {
  const auto rig = default_rig();
  try {
    parse_detections("{\n\"frames\": [\n{\"frame\": 0,,}\n]}", rig.joint_names());
    FAIL("expected a parse error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("joint_names header permutes slots into rig order") {
  const auto rig = default_rig();
  auto names = rig.joint_names();
  std::swap(names[2], names[5]);
  auto d = FrameDetections::empty(0, 16);
  for (int j = 0; j < 16; ++j) {
    d.d2d[static_cast<size_t>(j)] = Vec2(j, 0);
    d.c2d[static_cast<size_t>(j)] = 1.0;
  }
  const auto dets = parse_detections(detections_to_json({d}, names), rig.joint_names());
  CHECK(dets[0].d2d[2].x() == 5);
  CHECK(dets[0].d2d[5].x() == 2);
}

TEST_CASE("CSV conversion") {
  const auto rig = default_rig();
  std::string csv = "frame,joint,x,y,c,X,Y,Z,c3d\n";
  for (int f = 0; f < 2; ++f) {
    for (int j = 0; j < 16; ++j) {
      csv += std::to_string(f) + "," + (j == 1 ? std::string("neck") : std::to_string(j)) + ",10,20,1,0.1,0.2,0.3,0.5\n";
    }
  }
  const auto dets = detections_from_csv(csv, rig.joint_names());
  REQUIRE(dets.size() == 2);
  CHECK(dets[1].d2d[1] == Vec2(10, 20));
  CHECK(dets[1].c3d[15] == 0.5);
  CHECK_THROWS_AS(detections_from_csv("0,1,2\n", rig.joint_names()), InputError);
}

TEST_CASE("rescale: matching skeleton keeps scale 1, halved skeleton doubles") {
  const auto rig = default_rig();
  auto d = FrameDetections::empty(0, 16);
  const auto rest = rig.rest_positions();
  for (size_t j = 0; j < 16; ++j) d.d3d[j] = rest[j];
  double s = 0;
  const auto same = rescale_d3d(d, rig, &s);
  CHECK(std::abs(s - 1.0) <= 1e-9);
  for (size_t j = 0; j < 16; ++j) d.d3d[j] = 0.5 * rest[j];
  rescale_d3d(d, rig, &s);
  CHECK(std::abs(s - 2.0) <= 1e-9);
  // Idempotence.
  double s2 = 0;
  const auto twice = rescale_d3d(rescale_d3d(d, rig), rig, &s2);
  CHECK(std::abs(s2 - 1.0) <= 1e-12);
  CHECK(same.d3d[0] == d.d3d[0] * 2.0);
  for (auto& p : d.d3d) p.setZero();
  CHECK_THROWS_AS(rescale_d3d(d, rig), InputError);
  (void)twice;
}

TEST_CASE("rescaled random poses recover the actor's bone lengths within 2 percent") {
  const auto rig = default_rig();
  std::mt19937 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pose = testing::random_pose(rig, rng);
    const auto pos = joint_positions(rig, pose);
    auto d = FrameDetections::empty(0, 16);
    // Detector convention: root-relative, normalized to unit average bone.
    const double avg = rig.total_bone_length() / 15.0;
    for (size_t j = 0; j < 16; ++j) d.d3d[j] = (pos[j] - pos[0]) / avg;
    const auto r = rescale_d3d(d, rig);
    for (int j = 1; j < 16; ++j) {
      const double len = (r.d3d[static_cast<size_t>(j)] - r.d3d[static_cast<size_t>(rig.joint(j).parent)]).norm();
      CHECK(std::abs(len / rig.bone_length(j) - 1.0) <= 0.02);
    }
    CHECK(r.d3d[0].norm() <= 1e-12);
  }
}

TEST_CASE("PCK gate: agreement, wholesale displacement and 7 of 16") {
  const auto rig = default_rig();
  std::mt19937 rng(2);
  const auto pose = testing::random_pose(rig, rng);
  const auto pos = joint_positions(rig, pose);
  auto d = exact_detections(rig, pose, 0);
  const Vec3 root = pos[0];
  auto res = pck_gate(d, rig, kCam, root);
  CHECK(res.pck_error == 0.0);
  CHECK(res.weight == 1);

  const double torso = (d.d2d[2] - d.d2d[12]).norm();
  auto far = d;
  for (auto& p : far.d2d) p += Vec2(10 * torso, 0);
  res = pck_gate(far, rig, kCam, root);
  CHECK(res.pck_error == 1.0);
  CHECK(res.weight == 0);

  // Displace 7 non-torso joints by 0.5 torso diameters (threshold is 0.2).
  auto seven = exact_detections(rig, pose, 0);
  auto shifted = seven;
  int moved = 0;
  for (int j : {0, 1, 3, 4, 6, 9, 14}) {
    shifted.d3d[static_cast<size_t>(j)] += Vec3(0.0, 0.0, 0.0);
    shifted.d2d[static_cast<size_t>(j)] += Vec2(0.0, 0.5 * torso);
    ++moved;
  }
  CHECK(moved == 7);
  res = pck_gate(shifted, rig, kCam, root);
  CHECK(res.pck_error == doctest::Approx(7.0 / 16.0));
  CHECK(res.weight == 0);

  // Six displaced joints stay under the 0.4 threshold.
  shifted.d2d[14] = seven.d2d[14];
  res = pck_gate(shifted, rig, kCam, root);
  CHECK(res.pck_error == doctest::Approx(6.0 / 16.0));
  CHECK(res.weight == 1);

  auto no_torso = d;
  no_torso.c2d[2] = 0.0;
  res = pck_gate(no_torso, rig, kCam, root);
  CHECK(res.torso_missing);
  CHECK(res.weight == 0);
}

TEST_CASE("PCK gate is invariant to uniform image upscaling") {
  const auto rig = default_rig();
  std::mt19937 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pose = testing::random_pose(rig, rng);
    auto d = exact_detections(rig, pose, 0);
    std::normal_distribution<double> n(0.0, 15.0);
    for (auto& p : d.d2d) p += Vec2(n(rng), n(rng));
    const Vec3 root = joint_positions(rig, pose)[0];
    const auto base = pck_gate(d, rig, kCam, root);
    const double k = 2.5;
    Camera big{kCam.fx * k, kCam.fy * k, kCam.cx * k, kCam.cy * k, 2500, 2500};
    auto scaled = d;
    for (auto& p : scaled.d2d) p *= k;
    const auto up = pck_gate(scaled, rig, big, root);
    CHECK(up.pck_error == base.pck_error);
    CHECK(up.weight == base.weight);
  }
}
