#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crossinstruct/error.hpp"
#include "crossinstruct/geometry.hpp"
#include "crossinstruct/image.hpp"
#include "crossinstruct/instruction.hpp"
#include "crossinstruct/lifting.hpp"
#include "crossinstruct/models.hpp"
#include "crossinstruct/pipeline.hpp"
#include "crossinstruct/rl/dataset.hpp"
#include "crossinstruct/rl/plot.hpp"
#include "crossinstruct/rl/td3bc.hpp"
#include "crossinstruct/service.hpp"

namespace fs = std::filesystem;
using namespace crossinstruct;

namespace {

Json read_json(const fs::path& path) {
  const std::string text = read_file_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::kParse, path.string() + ": malformed JSON at byte " + std::to_string(e.byte));
  }
}

struct PlanInputs {
  fs::path instruction;
  fs::path scene;
  fs::path config;
  std::optional<std::uint64_t> seed;
};

pipeline::PipelineConfig load_pipeline_config(const PlanInputs& in) {
  pipeline::PipelineConfig config;
  if (!in.config.empty()) config = pipeline::pipeline_config_from_json(read_json(in.config));
  if (in.seed) config.lifting.rng_seed = *in.seed;
  return config;
}

pipeline::PipelineResult run_plan(const PlanInputs& in, models::ModelBackend& backend,
                                  instruction::SceneBundle* bundle_out = nullptr) {
  const auto instr = instruction::parse_instruction(read_file_text(in.instruction));
  const auto bundle = instruction::parse_scene_bundle(read_file_text(in.scene));
  const auto scene = pipeline::load_scene_input(bundle, in.scene.parent_path(), instr, in.instruction.parent_path());
  if (bundle_out) *bundle_out = bundle;
  return pipeline::run_pipeline(instr, scene, load_pipeline_config(in), backend);
}

void write_plan_outputs(const pipeline::PipelineResult& result, const instruction::SceneBundle& bundle,
                        const fs::path& out, const fs::path& trace, const fs::path& details) {
  write_file(out, pipeline::export_plan(result.plan));
  if (!trace.empty()) write_file(trace, pipeline::trace_to_jsonl(result.trace));
  if (!details.empty()) write_file(details, service::run_details_json(result, bundle).dump(2) + "\n");
}

void print_json(const Json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal instruction planning: coupling, lifting and TD3+BC tools"};
  app.require_subcommand(1);
  bool json_errors = false;
  app.add_flag("--json", json_errors, "Write errors as JSON on stderr");

  // plan
  PlanInputs plan_in;
  std::string plan_scenario, plan_backend, plan_scenario_dir = "scenarios";
  fs::path plan_out, plan_trace, plan_details;
  std::uint64_t plan_seed = 0;
  auto* plan = app.add_subcommand("plan", "Run the full pipeline and write a motion plan");
  plan->add_option("--instruction", plan_in.instruction, "Instruction JSON")->required()->check(CLI::ExistingFile);
  plan->add_option("--scene", plan_in.scene, "Scene bundle JSON")->required()->check(CLI::ExistingFile);
  plan->add_option("--scenario", plan_scenario, "Scripted scenario name");
  plan->add_option("--scenario-dir", plan_scenario_dir, "Directory holding <name>.json scenarios");
  plan->add_option("--backend", plan_backend, "\"live\" or \"scripted:<name>\"");
  auto* plan_seed_opt = plan->add_option("--seed", plan_seed, "Lifting RNG seed");
  plan->add_option("--config", plan_in.config, "Pipeline config JSON")->check(CLI::ExistingFile);
  plan->add_option("--out", plan_out, "Output plan JSON")->required();
  plan->add_option("--trace", plan_trace, "Stage trace output (JSON lines)");
  plan->add_option("--details", plan_details, "2D trajectories and keypoints output");

  // lift
  fs::path lift_xi1, lift_xi2, lift_calib, lift_config, lift_out;
  std::uint64_t lift_seed = 0;
  auto* lift = app.add_subcommand("lift", "Lift two pixel trajectories into a 3D distribution");
  lift->add_option("--xi1", lift_xi1, "Pixel trajectory for the first view")->required()->check(CLI::ExistingFile);
  lift->add_option("--xi2", lift_xi2, "Pixel trajectory for the second view")->required()->check(CLI::ExistingFile);
  lift->add_option("--calib", lift_calib, "Calibration JSON with both views")->required()->check(CLI::ExistingFile);
  lift->add_option("--config", lift_config, "Lifting config JSON")->check(CLI::ExistingFile);
  auto* lift_seed_opt = lift->add_option("--seed", lift_seed, "RNG seed");
  lift->add_option("--out", lift_out, "Output distribution JSON")->required();

  // train
  fs::path train_demo, train_plan, train_config, train_env, train_out;
  std::size_t train_rollouts = 50;
  std::uint64_t train_seed = 0;
  bool train_scratch = false;
  auto* train = app.add_subcommand("train", "Behavior cloning then TD3+BC on the toy reach task");
  auto* demo_opt = train->add_option("--demo", train_demo, "Demo dataset (JSON lines)")->check(CLI::ExistingFile);
  auto* from_plan_opt =
      train->add_option("--from-plan", train_plan, "Build the demo set from a plan's distribution")
          ->check(CLI::ExistingFile);
  demo_opt->excludes(from_plan_opt);
  train->add_option("--rollouts", train_rollouts, "Sampled rollouts for --from-plan")->needs(from_plan_opt);
  train->add_flag("--scratch", train_scratch, "Plain TD3 from scratch: no demos, lambda = 0, actor updates from step 1");
  train->add_option("--config", train_config, "Training config JSON")->check(CLI::ExistingFile);
  train->add_option("--env", train_env, "Toy env config JSON")->check(CLI::ExistingFile);
  auto* train_seed_opt = train->add_option("--seed", train_seed, "Training seed");
  train->add_option("--out", train_out, "Output directory")->required();

  // scenario
  auto* scenario = app.add_subcommand("scenario", "Record or replay scripted model scenarios");
  scenario->require_subcommand(1);
  PlanInputs rec_in;
  std::string rec_backend, rec_name, rec_scenario_dir = "scenarios";
  fs::path rec_out, rec_plan_out;
  std::uint64_t rec_seed = 0;
  auto* record = scenario->add_subcommand("record", "Run the pipeline and capture every model exchange");
  record->add_option("--instruction", rec_in.instruction)->required()->check(CLI::ExistingFile);
  record->add_option("--scene", rec_in.scene)->required()->check(CLI::ExistingFile);
  record->add_option("--backend", rec_backend, "\"live\" or \"scripted:<name>\"")->required();
  record->add_option("--scenario-dir", rec_scenario_dir);
  record->add_option("--name", rec_name, "Scenario name")->required();
  record->add_option("--config", rec_in.config)->check(CLI::ExistingFile);
  auto* rec_seed_opt = record->add_option("--seed", rec_seed);
  record->add_option("--out", rec_out, "Scenario output JSON")->required();
  record->add_option("--plan-out", rec_plan_out, "Also write the resulting plan");
  PlanInputs rep_in;
  fs::path rep_file, rep_out;
  std::uint64_t rep_seed = 0;
  auto* replay = scenario->add_subcommand("replay", "Run the pipeline against a scenario file");
  replay->add_option("--scenario", rep_file, "Scenario JSON")->required()->check(CLI::ExistingFile);
  replay->add_option("--instruction", rep_in.instruction)->required()->check(CLI::ExistingFile);
  replay->add_option("--scene", rep_in.scene)->required()->check(CLI::ExistingFile);
  replay->add_option("--config", rep_in.config)->check(CLI::ExistingFile);
  auto* rep_seed_opt = replay->add_option("--seed", rep_seed);
  replay->add_option("--out", rep_out, "Output plan JSON")->required();

  // validate
  fs::path val_scene, val_instruction;
  auto* validate = app.add_subcommand("validate", "Validate a scene bundle or an instruction");
  auto* val_scene_opt = validate->add_option("--scene", val_scene)->check(CLI::ExistingFile);
  auto* val_instr_opt = validate->add_option("--instruction", val_instruction)->check(CLI::ExistingFile);
  val_scene_opt->excludes(val_instr_opt);
  validate->require_option(1);

  // serve
  int serve_port = 8080;
  std::string serve_host = "127.0.0.1";
  fs::path serve_data, serve_scenarios = "scenarios";
  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  serve->add_option("--port", serve_port)->check(CLI::Range(0, 65535));
  serve->add_option("--host", serve_host);
  serve->add_option("--data", serve_data, "Data directory (default $CI_DATA_DIR or ./data)");
  serve->add_option("--scenario-dir", serve_scenarios);

  // plot
  std::vector<fs::path> plot_curves;
  std::vector<std::string> plot_labels;
  fs::path plot_out;
  auto* plot = app.add_subcommand("plot", "Render success-rate curves to PNG");
  plot->add_option("--curve", plot_curves, "Curve CSV (repeatable)")->required()->check(CLI::ExistingFile);
  plot->add_option("--label", plot_labels, "Legend label per curve");
  plot->add_option("--out", plot_out, "Output PNG")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*plan) {
      if (*plan_seed_opt) plan_in.seed = plan_seed;
      std::string spec = plan_backend;
      if (!plan_scenario.empty()) {
        if (!spec.empty()) fail(ErrorKind::kValidation, "use either --scenario or --backend", "backend");
        spec = "scripted:" + plan_scenario;
      }
      if (spec.empty()) fail(ErrorKind::kValidation, "a --scenario or --backend is required", "backend");
      const auto backend =
          service::make_backend(spec, plan_scenario_dir, service::service_config_from_env().live);
      instruction::SceneBundle bundle;
      const auto result = run_plan(plan_in, *backend, &bundle);
      write_plan_outputs(result, bundle, plan_out, plan_trace, plan_details);
      print_json({{"out", plan_out.string()}, {"horizon", result.plan.steps.size()},
                  {"provenance", pipeline::plan_to_json(result.plan)["provenance"]}});
    } else if (*lift) {
      const auto xi1 = lifting::pixel_trajectory_from_json(read_json(lift_xi1));
      const auto xi2 = lifting::pixel_trajectory_from_json(read_json(lift_xi2));
      const auto views = geometry::calibration_from_json(read_json(lift_calib));
      auto find = [&](const std::string& id) -> const geometry::CameraView& {
        for (const auto& v : views)
          if (v.id == id) return v;
        fail(ErrorKind::kValidation, "calibration has no view '" + id + "'", "view_id");
      };
      lifting::LiftingConfig config;
      if (!lift_config.empty()) config = lifting::lifting_config_from_json(read_json(lift_config));
      if (*lift_seed_opt) config.rng_seed = lift_seed;
      lifting::LiftReport report;
      const auto dist = lifting::lift_trajectory_pair(xi1, xi2, {find(xi1.view_id), find(xi2.view_id)}, config, &report);
      write_file(lift_out, lifting::distribution_to_json(dist).dump(2) + "\n");
      print_json({{"out", lift_out.string()}, {"horizon", dist.horizon()}, {"diagnostics", report.diagnostics}});
    } else if (*train) {
      rl::ToyEnv env;
      if (!train_env.empty()) env = rl::toy_env_from_json(read_json(train_env));
      rl::TD3BCConfig config;
      if (!train_config.empty()) config = rl::td3bc_config_from_json(read_json(train_config));
      if (*train_seed_opt) config.seed = train_seed;
      rl::DemoDataset demo;
      if (!train_demo.empty()) {
        demo = rl::parse_dataset(read_file_text(train_demo));
      } else if (!train_plan.empty()) {
        const auto plan_obj = pipeline::import_plan(read_file_text(train_plan));
        demo = rl::build_demo_dataset(plan_obj.distribution, env, train_rollouts, config.seed);
      }
      if (train_scratch) {
        demo = {};
        config.lambda = 0;
        config.actor_start = 0;
      }
      if (demo.empty() && !train_scratch) {
        fail(ErrorKind::kValidation, "no demonstrations: pass --demo, --from-plan or --scratch", "demo");
      }
      fs::create_directories(train_out);
      if (!demo.empty()) write_file(train_out / "demo.jsonl", rl::serialize_dataset(demo));
      const auto result = rl::td3bc_train(env, demo, config);
      rl::save_checkpoint(train_out / "policy.ciwt", result.policy);
      write_file(train_out / "curve.csv", rl::curve_to_csv(result.curve));
      const Json summary{{"max_success", result.max_success()},
                         {"final_success", result.curve.back().success_rate},
                         {"steps", result.curve.back().step},
                         {"demo_transitions", demo.size()},
                         {"demo_digest", result.demo_digest_after},
                         {"config", rl::td3bc_config_to_json(config)},
                         {"env", rl::toy_env_to_json(env)}};
      write_file(train_out / "summary.json", summary.dump(2) + "\n");
      print_json(summary);
    } else if (*record) {
      if (*rec_seed_opt) rec_in.seed = rec_seed;
      const auto inner = service::make_backend(rec_backend, rec_scenario_dir, service::service_config_from_env().live);
      models::RecordingBackend recorder(*inner, rec_name);
      instruction::SceneBundle bundle;
      const auto result = run_plan(rec_in, recorder, &bundle);
      write_file(rec_out, models::serialize_scenario(recorder.scenario()));
      if (!rec_plan_out.empty()) write_file(rec_plan_out, pipeline::export_plan(result.plan));
      print_json({{"out", rec_out.string()}, {"entries", recorder.scenario().entries.size()}});
    } else if (*replay) {
      if (*rep_seed_opt) rep_in.seed = rep_seed;
      models::ScriptedBackend backend(models::parse_scenario(read_file_text(rep_file)));
      const auto result = run_plan(rep_in, backend);
      write_file(rep_out, pipeline::export_plan(result.plan));
      print_json({{"out", rep_out.string()}, {"horizon", result.plan.steps.size()}});
    } else if (*validate) {
      std::vector<std::string> diags;
      if (!val_scene.empty()) {
        const auto bundle = instruction::parse_scene_bundle(read_file_text(val_scene));
        diags = instruction::validate_scene_bundle(bundle);
      } else {
        instruction::parse_instruction(read_file_text(val_instruction));
      }
      print_json({{"valid", diags.empty()}, {"diagnostics", diags}});
      if (!diags.empty()) return exit_code(ErrorKind::kValidation);
    } else if (*serve) {
      service::ServiceConfig config = service::service_config_from_env();
      if (!serve_data.empty()) config.data_dir = serve_data;
      config.scenario_dir = serve_scenarios;
      service::Service svc(config);
      static service::Service* active = nullptr;
      active = &svc;
      std::signal(SIGINT, [](int) {
        if (active) active->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (active) active->stop();
      });
      svc.listen(serve_host, serve_port, [&](int port) {
        std::cout << "listening on " << serve_host << ":" << port << std::endl;
      });
      active = nullptr;
    } else if (*plot) {
      static const std::array<Rgb, 6> palette{
          {{220, 40, 40}, {40, 90, 220}, {30, 150, 60}, {200, 120, 20}, {130, 50, 170}, {40, 160, 170}}};
      std::vector<rl::CurveSeries> series;
      for (std::size_t i = 0; i < plot_curves.size(); ++i) {
        series.push_back({i < plot_labels.size() ? plot_labels[i] : plot_curves[i].stem().string(),
                          rl::curve_from_csv(read_file_text(plot_curves[i])), palette[i % palette.size()]});
      }
      write_png(plot_out, rl::plot_curves(series));
      print_json({{"out", plot_out.string()}, {"series", series.size()}});
    }
  } catch (const Error& e) {
    if (json_errors) {
      Json j{{"error", std::string(to_string(e.kind()))}, {"message", e.detail()}, {"exit_code", exit_code(e.kind())}};
      if (!e.field().empty()) j["field"] = e.field();
      if (!e.stage().empty()) j["stage"] = e.stage();
      std::cerr << j.dump() << "\n";
    } else {
      std::cerr << "error: " << e.what() << "\n";
    }
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    if (json_errors) {
      std::cerr << Json{{"error", "internal"}, {"message", e.what()}, {"exit_code", 1}}.dump() << "\n";
    } else {
      std::cerr << "error: " << e.what() << "\n";
    }
    return 1;
  }
  return 0;
}
