#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crossinstruct/error.hpp"
#include "crossinstruct/models.hpp"
#include "crossinstruct/pipeline.hpp"
#include "crossinstruct/store.hpp"

namespace crossinstruct::service {

struct ServiceConfig {
  std::filesystem::path data_dir = "data";
  // Scripted backends "scripted:<name>" load <scenario_dir>/<name>.json.
  std::filesystem::path scenario_dir = "scenarios";
  std::optional<models::LiveConfig> live;
  pipeline::PipelineConfig defaults;
  int max_samples = 10000;
};

// Fills data_dir from CI_DATA_DIR and the live endpoint from CI_LIVE_URL when
// set. The token itself is read from the environment at request time.
ServiceConfig service_config_from_env(ServiceConfig base = {});

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";

  Json json() const { return Json::parse(body); }
};

int http_status(ErrorKind kind);
HttpResponse error_response(const Error& e);

// Scene, instruction and plan endpoints over a content-addressed store.
// Plan runs execute on background threads; each run owns its session.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Images keyed by view id; `ordered` is used when the keyed map is empty
  // and must follow the calibration order.
  HttpResponse create_scene(std::string_view calibration_json, const std::map<std::string, std::string>& images,
                            const std::vector<std::string>& ordered = {});
  // {"instruction": {...}, "scene_id": "..."} or {"instruction": {...},
  // "image_png_base64": "..."}.
  HttpResponse create_instruction(std::string_view body);
  // {"scene_id", "instruction_id", "backend", "config"?, "seed"?}
  HttpResponse create_plan(std::string_view body);
  HttpResponse get_plan(const std::string& id) const;
  // Exported MotionPlan bytes of a finished run.
  HttpResponse get_plan_file(const std::string& id) const;
  // {"n", "seed"}
  HttpResponse sample_plan(const std::string& id, std::string_view body) const;
  HttpResponse health() const;

  // Blocks until the run has finished.
  void wait(const std::string& plan_id);
  void wait_all();

  // Serves HTTP until stop(). on_ready receives the bound port (port 0 picks
  // a free one).
  void listen(const std::string& host, int port, const std::function<void(int)>& on_ready = {});
  void stop();

  Store& store();
  const ServiceConfig& config() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Model backend named "scripted:<name>" (from scenario_dir) or "live".
std::unique_ptr<models::ModelBackend> make_backend(const std::string& spec, const std::filesystem::path& scenario_dir,
                                                   const std::optional<models::LiveConfig>& live);

// Details kept next to a plan for UI overlays: per-view 2D trajectories,
// descriptors, pointed keypoints and reprojection diagnostics.
Json run_details_json(const pipeline::PipelineResult& result, const instruction::SceneBundle& bundle);

}  // namespace crossinstruct::service
