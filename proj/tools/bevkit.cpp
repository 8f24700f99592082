// Command-line front door: scene generation, the fused perception pipeline,
// map evaluation, goal planning, raster rendering, and gradient checking.
// Exit codes: 0 success, 1 usage, 2 I/O, 3 validation, 4 numeric.

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bevkit/config.hpp"
#include "bevkit/gradcheck.hpp"
#include "bevkit/metrics.hpp"
#include "bevkit/parallel.hpp"
#include "bevkit/pipeline.hpp"
#include "bevkit/planner.hpp"
#include "bevkit/render.hpp"
#include "bevkit/scene.hpp"

namespace fs = std::filesystem;
using namespace bevkit;

namespace {

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_config(path);
}

void apply_threshold_overrides(const std::string& spec, MatchThresholds& t) {
  if (spec.empty()) return;
  std::size_t pos = 0;
  while (pos < spec.size()) {
    const std::size_t comma = spec.find(',', pos);
    const std::string item =
        spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos) throw ValueError("thresholds: expected key=value pairs");
    const std::string key = item.substr(0, eq);
    const float value = std::stof(item.substr(eq + 1));
    if (key == "cd") {
      t.cd_max = value;
    } else if (key == "iou") {
      t.iou_min = value;
    } else {
      throw ValueError("thresholds: unknown key '" + key + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  t.validate();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::vector<std::byte> bytes(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) bytes[i] = static_cast<std::byte>(text[i]);
  write_file_atomic(path, bytes);
}

int cmd_gen_synthetic(const std::string& spec_path, const std::string& config_path,
                      const std::string& out_dir, std::uint64_t seed, bool seed_given) {
  SceneSpec spec;
  if (!spec_path.empty()) spec = scene_spec_from_json(load_json_file(spec_path));
  if (seed_given) spec.seed = seed;
  const RunConfig cfg = load_run_config(config_path);
  ensure_dir(out_dir);
  const Scene scene = gen_scene(spec, cfg.bev, cfg.image.camera(), cfg.bins.d_max);
  write_scene_dir(out_dir, scene);
  std::printf("scene written to %s (%zu instances, %zu points)\n", out_dir.c_str(),
              scene.gt_map.instances.size(), scene.cloud.size());
  return 0;
}

int run_check_grads(std::uint64_t seed) {
  bool all_pass = true;
  for (const GradCheckResult& r : run_grad_checks(seed)) {
    std::printf("%-18s max_err %.3e  %s\n", r.name.c_str(), r.max_err,
                r.pass ? "ok" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  if (!all_pass) throw NumericError("gradient check failed");
  return 0;
}

int cmd_pipeline(const std::string& scene_dir, const std::string& config_path,
                 const std::string& out_dir, const std::string& params_dir, std::uint64_t seed,
                 bool check_grads) {
  if (check_grads) run_check_grads(seed);
  if (scene_dir.empty()) {
    if (check_grads) return 0;
    throw ValueError("pipeline: --scene is required unless --check-grads is given");
  }
  const RunConfig cfg = load_run_config(config_path);
  const SceneInputs inputs = read_scene_dir(scene_dir);
  PipelineParams params =
      params_dir.empty() ? PipelineParams::seeded(cfg, seed) : load_params(params_dir);
  const PipelineResult result = run_pipeline(inputs, params, cfg);
  ensure_dir(out_dir);
  ensure_dir(out_dir + "/params");
  write_pipeline_artifacts(out_dir, result);
  save_params(out_dir + "/params", params);
  std::printf("pipeline done: total loss %.6f, %zu predicted instances\n", result.total,
              result.pred_map.instances.size());
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& config_path, const std::string& out_dir,
             const std::string& thresholds) {
  RunConfig cfg = load_run_config(config_path);
  apply_threshold_overrides(thresholds, cfg.thresholds);
  const PolylineMap pred = read_map_json(pred_path);
  const PolylineMap gt = read_map_json(gt_path);
  pred.validate(cfg.bev);
  gt.validate(cfg.bev);
  const EvalReport report =
      eval_intervals(pred, gt, cfg.bev, IntervalSpec{}, cfg.metrics_cfg());
  ensure_dir(out_dir);
  write_report(out_dir + "/report.csv", out_dir + "/report.json", report);
  std::printf("%s", report_to_csv(report).c_str());
  return 0;
}

int cmd_plan(const std::string& map_path, const std::string& scenes_path,
             const std::string& config_path, const std::string& out_dir) {
  const RunConfig cfg = load_run_config(config_path);
  const Json scenes_json = load_json_file(scenes_path);
  if (!scenes_json.is_array()) throw IoError("scenes file: expected a JSON list");
  if (scenes_json.empty()) {
    std::fprintf(stderr, "error: scenes file is empty\n");
    return 1;
  }
  std::vector<PlanScene> scenes;
  for (const Json& j : scenes_json) scenes.push_back(plan_scene_from_json(j));

  const fs::path scenes_base = fs::path(scenes_path).parent_path();
  auto resolve = [&](const std::string& file) {
    if (file.empty()) return map_path;
    const fs::path p(file);
    return p.is_absolute() ? file : (scenes_base / p).string();
  };

  std::map<std::string, CostMap> costmaps;
  for (const PlanScene& s : scenes) {
    const std::string file = resolve(s.map_file);
    if (file.empty()) throw ValueError("plan: scene has no map_file and no --map given");
    if (!costmaps.count(file)) {
      costmaps.emplace(file, build_costmap(read_map_json(file), cfg.bev));
    }
  }

  ensure_dir(out_dir);
  std::vector<PlanResult> results(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) {
    const CostMap& cm = costmaps.at(resolve(scenes[i].map_file));
    results[i] = plan_path(cm, scenes[i].start, scenes[i].goal_x, scenes[i].goal_y, cfg.planner);
  });

  std::string csv = "scene,verdict,steps,path_file\n";
  std::size_t successes = 0;
  char buf[160];
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "path_%03zu.json", i);
    const std::string path_file = buf;
    write_path_json(out_dir + "/" + path_file, results[i].path);
    std::snprintf(buf, sizeof buf, "scene_%03zu,%s,%zu,%s\n", i,
                  verdict_name(results[i].verdict), results[i].steps, path_file.c_str());
    csv += buf;
    successes += results[i].verdict == Verdict::success;
  }
  write_text(out_dir + "/verdicts.csv", csv);
  const double rate = static_cast<double>(successes) / static_cast<double>(scenes.size());
  Json summary;
  summary["scenes"] = scenes.size();
  summary["successes"] = successes;
  summary["success_rate"] = rate;
  write_json_file(out_dir + "/summary.json", summary);
  std::printf("success rate %.3f (%zu/%zu)\n", rate, successes, scenes.size());
  return 0;
}

int cmd_render(const std::string& in_path, const std::string& out_path,
               const std::string& config_path, const std::string& path_file,
               std::size_t channel) {
  const RunConfig cfg = load_run_config(config_path);
  std::vector<std::byte> bytes;
  if (in_path.size() >= 5 && in_path.substr(in_path.size() - 5) == ".json") {
    const PolylineMap map = read_map_json(in_path);
    std::vector<Point2> path;
    if (!path_file.empty()) {
      const Json j = load_json_file(path_file);
      for (const Json& inst : j.at("instances")) {
        for (const Json& p : inst.at("points")) {
          path.push_back({p[0].get<float>(), p[1].get<float>()});
        }
      }
    }
    bytes = render_map_ppm(map, cfg.bev, path_file.empty() ? nullptr : &path);
  } else {
    Tensor t = read_btf(in_path);
    if (t.rank() == 3) t = slice_channels(t, channel, channel + 1);
    if (t.rank() == 3) t = reshape(t, {t.extent(0), t.extent(1)});
    bytes = render_pgm(t);
  }
  const fs::path parent = fs::path(out_path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
  write_file_atomic(out_path, bytes);
  std::printf("wrote %s (%zu bytes)\n", out_path.c_str(), bytes.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bevkit: long-range BEV map toolchain"};
  app.require_subcommand(1);

  std::string config_path, out_dir, spec_path, scene_dir, params_dir;
  std::string pred_path, gt_path, map_path, scenes_path, in_path, path_file, thresholds;
  std::uint64_t seed = 0;
  bool check_grads = false;
  std::size_t channel = 0;

  auto* gen = app.add_subcommand("gen-synthetic", "generate one synthetic scene");
  gen->add_option("--spec", spec_path, "scene spec JSON");
  gen->add_option("--config", config_path, "run config JSON");
  gen->add_option("--out", out_dir, "output directory")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "override the spec seed");

  auto* pipe = app.add_subcommand("pipeline", "run the fused perception pipeline");
  pipe->add_option("--scene", scene_dir, "scene directory from gen-synthetic");
  pipe->add_option("--config", config_path, "run config JSON");
  pipe->add_option("--out", out_dir, "artifact directory");
  pipe->add_option("--params", params_dir, "load parameters instead of seeding");
  pipe->add_option("--seed", seed, "parameter init seed");
  pipe->add_flag("--check-grads", check_grads, "run the finite-difference suite first");

  auto* eval = app.add_subcommand("eval", "evaluate a predicted map against ground truth");
  eval->add_option("--pred", pred_path, "predicted map JSON")->required();
  eval->add_option("--gt", gt_path, "ground truth map JSON")->required();
  eval->add_option("--config", config_path, "run config JSON");
  eval->add_option("--out", out_dir, "report directory")->required();
  eval->add_option("--thresholds", thresholds, "override match gates, e.g. cd=1.0,iou=0.1");

  auto* plan = app.add_subcommand("plan", "plan paths over scenes");
  plan->add_option("--map", map_path, "fallback map JSON for scenes without map_file");
  plan->add_option("--scenes", scenes_path, "scenes JSON list")->required();
  plan->add_option("--config", config_path, "run config JSON");
  plan->add_option("--out", out_dir, "verdict directory")->required();

  auto* render = app.add_subcommand("render", "render a raster or map to an image");
  render->add_option("--in", in_path, "input .btf or map .json")->required();
  render->add_option("--out", out_dir, "output image file")->required();
  render->add_option("--config", config_path, "run config JSON");
  render->add_option("--path", path_file, "overlay a path JSON on a map render");
  render->add_option("--channel", channel, "channel to render for rank-3 tensors");

  auto* grads = app.add_subcommand("check-grads", "finite-difference gradient suite");
  grads->add_option("--seed", seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help text, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_synthetic(spec_path, config_path, out_dir, seed, !gen_seed->empty());
    }
    if (pipe->parsed()) {
      if (!scene_dir.empty() && out_dir.empty()) {
        std::fprintf(stderr, "error: pipeline needs --out\n");
        return 1;
      }
      return cmd_pipeline(scene_dir, config_path, out_dir, params_dir, seed, check_grads);
    }
    if (eval->parsed()) return cmd_eval(pred_path, gt_path, config_path, out_dir, thresholds);
    if (plan->parsed()) return cmd_plan(map_path, scenes_path, config_path, out_dir);
    if (render->parsed()) return cmd_render(in_path, out_dir, config_path, path_file, channel);
    if (grads->parsed()) return run_check_grads(seed == 0 ? 2024 : seed);
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const Error& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 1;
}
