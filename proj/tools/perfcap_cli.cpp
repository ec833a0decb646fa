#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "perfcap/detections.hpp"
#include "perfcap/error.hpp"
#include "perfcap/evaluate.hpp"
#include "perfcap/io.hpp"
#include "perfcap/pipeline.hpp"
#include "perfcap/raster.hpp"
#include "perfcap/segment.hpp"

namespace fs = std::filesystem;
using namespace perfcap;

namespace {

void print_summary(const MetricsReport& r) {
  std::cout << "frames: " << r.frames.size() << "\n"
            << "joint error (similarity, mm): " << r.mean(&FrameMetrics::joint_error_similarity) << "\n"
            << "joint error (procrustes, mm): " << r.mean(&FrameMetrics::joint_error_procrustes) << "\n"
            << "joint error (raw, mm): " << r.mean(&FrameMetrics::joint_error_raw) << "\n"
            << "vertex error (mm): " << r.mean(&FrameMetrics::vertex_error) << "\n"
            << "IoU: " << r.mean(&FrameMetrics::iou) << "\n";
}

int cmd_run(const fs::path& config, const std::string& output, int parallelism, bool no_refine) {
  PipelineConfig cfg = load_config(config);
  if (!output.empty()) cfg.paths.output = output;
  if (parallelism > 0) cfg.parallelism = parallelism;
  if (no_refine) cfg.refinement = false;
  const auto res = run_from_config(cfg);
  for (const auto& t : res.timings) std::cout << t.stage << ": " << t.seconds << " s\n";
  for (const auto& f : res.flags) std::cout << "flag: " << f << "\n";
  const fs::path metrics = cfg.paths.output / "metrics.csv";
  if (fs::exists(metrics)) print_summary(metrics_from_csv(io::read_text(metrics)));
  std::cout << "outputs: " << cfg.paths.output.string() << "\n";
  return 0;
}

int cmd_synth(const fs::path& out, SynthDatasetSpec spec, double sigma_3d_mm, bool masks_only) {
  spec.noise.sigma_3d = sigma_3d_mm / 1000.0;
  spec.write_frames = !masks_only;
  const auto data = synth_generate(spec);
  save_dataset(data, out);
  std::cout << "wrote " << data.poses.size() << " frames to " << out.string() << "\n";
  return 0;
}

int cmd_evaluate(const fs::path& poses_path, const fs::path& gt_dir, const fs::path& meshes_dir, const fs::path& out) {
  const auto gt = load_ground_truth(gt_dir);
  const auto rig = io::load_rig(gt_dir / "rig.json").rig;
  const auto pred = io::load_poses(poses_path);
  EvaluationInputs in;
  in.rig = &rig;
  in.predicted_poses = &pred;
  in.true_poses = &gt.poses;
  std::vector<std::vector<Vec3>> meshes;
  std::vector<std::array<int, 3>> tris;
  Camera cam;
  if (!meshes_dir.empty()) {
    tris = io::load_obj(meshes_dir / "faces.obj").triangles;
    for (size_t f = 0; f < pred.size(); ++f)
      meshes.push_back(io::load_obj_vertices(meshes_dir / frame_name("frame_", static_cast<int>(f), ".obj")));
    in.predicted_meshes = &meshes;
    if (!gt.meshes.empty()) in.true_meshes = &gt.meshes;
    if (!gt.masks.empty()) {
      cam = io::load_camera(gt_dir / "camera.json");
      in.true_masks = &gt.masks;
      in.triangles = &tris;
      in.camera = &cam;
    }
  }
  const auto report = evaluate(in);
  render_report(report, out);
  print_summary(report);
  return 0;
}

int cmd_segment(const fs::path& config, const fs::path& poses_path, const fs::path& out) {
  PipelineConfig cfg = load_config(config);
  cfg.refinement = true;
  cfg.segmentation = true;
  const auto in = load_inputs(cfg);
  const auto poses = io::load_poses(poses_path);
  if (poses.size() != in.frames.size()) throw InputError("pose and frame counts differ");
  fs::create_directories(out);
  for (size_t f = 0; f < poses.size(); ++f) {
    const auto verts = skin_mesh(in.actor, in.rig, poses[f]);
    const auto seg = segment_with_model(in.frames[f], f > 0 ? &in.frames[f - 1] : nullptr, in.rig, poses[f], verts,
                                        in.actor.triangles, in.camera, cfg.grabcut, cfg.erosion_frac, cfg.dilation_frac);
    io::save_mask(out / frame_name("mask_", static_cast<int>(f), ".png"), seg.mask);
    io::save_png(out / frame_name("trimap_", static_cast<int>(f), ".png"), trimap_image(seg.trimap));
  }
  std::cout << "segmented " << poses.size() << " frames into " << out.string() << "\n";
  return 0;
}

int cmd_report(const fs::path& metrics, const fs::path& out) {
  const auto report = metrics_from_csv(io::read_text(metrics));
  render_report(report, out);
  print_summary(report);
  return 0;
}

int cmd_convert(const fs::path& csv, const fs::path& rig_path, const fs::path& out) {
  const auto rig = io::load_rig(rig_path).rig;
  const auto dets = detections_from_csv(io::read_text(csv), rig.joint_names());
  save_detections(out, dets, rig.joint_names());
  std::cout << "converted " << dets.size() << " frames\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular performance capture from 2D/3D joint detections and silhouettes"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run the full pipeline from a config file");
  fs::path run_config;
  std::string run_output;
  int run_parallelism = 0;
  bool run_no_refine = false;
  run->add_option("config", run_config, "TOML or JSON config")->required();
  run->add_option("-o,--output", run_output, "Override the output directory");
  run->add_option("-j,--parallelism", run_parallelism, "Worker threads");
  run->add_flag("--no-refine", run_no_refine, "Stop after batch pose estimation");

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with ground truth");
  fs::path synth_out;
  SynthDatasetSpec spec;
  double sigma_3d_mm = 0.0;
  bool masks_only = false;
  synth->add_option("output", synth_out, "Dataset directory")->required();
  synth->add_option("--frames", spec.frames, "Frame count")->check(CLI::PositiveNumber);
  synth->add_option("--K", spec.dct_k, "DCT basis size of the motion")->check(CLI::PositiveNumber);
  synth->add_option("--seed", spec.seed, "Random seed");
  synth->add_option("--amplitude", spec.amplitude, "Angle amplitude (radians)");
  synth->add_option("--depth", spec.depth, "Root distance from the camera (m)");
  synth->add_option("--sigma-2d", spec.noise.sigma_2d, "2D detection noise (px)");
  synth->add_option("--sigma-3d", sigma_3d_mm, "3D detection noise (mm)");
  synth->add_flag("--masks-only", masks_only, "Skip composited frames; the config uses the masks");

  auto* eval = app.add_subcommand("evaluate", "Score predicted poses (and meshes) against a synthetic dataset");
  fs::path eval_poses, eval_gt, eval_meshes, eval_out = "report";
  eval->add_option("poses", eval_poses, "Predicted pose JSON")->required();
  eval->add_option("ground_truth", eval_gt, "Synthetic dataset directory")->required();
  eval->add_option("--meshes", eval_meshes, "Mesh directory written by run");
  eval->add_option("-o,--output", eval_out, "Report directory");

  auto* seg = app.add_subcommand("segment", "Model-guided GrabCut of every frame for a pose sequence");
  fs::path seg_config, seg_poses, seg_out = "segmentation";
  seg->add_option("config", seg_config, "Config naming template, rig, camera and frames")->required();
  seg->add_option("poses", seg_poses, "Pose JSON")->required();
  seg->add_option("-o,--output", seg_out, "Mask directory");

  auto* report = app.add_subcommand("report", "Render plots and tables from metrics.csv");
  fs::path report_metrics, report_out = "report";
  report->add_option("metrics", report_metrics, "metrics.csv")->required();
  report->add_option("-o,--output", report_out, "Report directory");

  auto* convert = app.add_subcommand("convert-detections", "Convert CSV detections to JSON");
  fs::path conv_csv, conv_rig, conv_out;
  convert->add_option("csv", conv_csv, "Rows frame,joint,x,y,c,X,Y,Z,c3d")->required();
  convert->add_option("rig", conv_rig, "Rig JSON (joint names)")->required();
  convert->add_option("output", conv_out, "Detections JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(run_config, run_output, run_parallelism, run_no_refine);
    if (*synth) return cmd_synth(synth_out, spec, sigma_3d_mm, masks_only);
    if (*eval) return cmd_evaluate(eval_poses, eval_gt, eval_meshes, eval_out);
    if (*seg) return cmd_segment(seg_config, seg_poses, seg_out);
    if (*report) return cmd_report(report_metrics, report_out);
    if (*convert) return cmd_convert(conv_csv, conv_rig, conv_out);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
