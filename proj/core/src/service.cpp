#include "crossinstruct/service.hpp"

#include <atomic>
#include <cstdlib>
#include <future>
#include <mutex>
#include <regex>

#include "crossinstruct/image.hpp"
#include "crossinstruct/instruction.hpp"
#include "crossinstruct/lifting.hpp"

// After Eigen: <resolv.h> defines a _res macro.
#include <httplib.h>

namespace crossinstruct::service {

namespace {

HttpResponse ok(const Json& j, int status = 200) { return {status, j.dump(), "application/json"}; }

Json parse_body(std::string_view body) {
  try {
    return Json::parse(body.begin(), body.end());
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::kParse, "malformed JSON body at byte " + std::to_string(e.byte), "body");
  }
}

std::string short_id(std::string_view seed_text) { return sha256_hex(seed_text).substr(0, 16); }

bool valid_scenario_name(const std::string& name) {
  if (name.empty() || name.size() > 128 || name[0] == '.') return false;
  for (char c : name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  }
  return true;
}

Json polyline_json(const std::vector<geometry::Vec2>& pts) {
  Json out = Json::array();
  for (const auto& p : pts) out.push_back({p.x(), p.y()});
  return out;
}

}  // namespace

ServiceConfig service_config_from_env(ServiceConfig c) {
  if (const char* dir = std::getenv("CI_DATA_DIR"); dir && *dir) c.data_dir = dir;
  if (const char* url = std::getenv("CI_LIVE_URL"); url && *url) {
    models::LiveConfig live = c.live.value_or(models::LiveConfig{});
    live.base_url = url;
    c.live = live;
  }
  return c;
}

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNotFound: return 404;
    case ErrorKind::kConflict: return 409;
    case ErrorKind::kTransport: return 502;
    case ErrorKind::kIo:
    case ErrorKind::kTrainingDiverged: return 500;
    default: return 400;
  }
}

namespace {

Json error_json(const Error& e) {
  Json j{{"kind", std::string(to_string(e.kind()))}, {"message", e.detail()}};
  if (!e.field().empty()) j["field"] = e.field();
  if (!e.stage().empty()) j["stage"] = e.stage();
  return j;
}

}  // namespace

HttpResponse error_response(const Error& e) { return ok(Json{{"error", error_json(e)}}, http_status(e.kind())); }

std::unique_ptr<models::ModelBackend> make_backend(const std::string& spec, const std::filesystem::path& scenario_dir,
                                                   const std::optional<models::LiveConfig>& live) {
  constexpr std::string_view kScripted = "scripted:";
  if (spec.starts_with(kScripted)) {
    const std::string name = spec.substr(kScripted.size());
    if (!valid_scenario_name(name)) fail(ErrorKind::kValidation, "bad scenario name '" + name + "'", "backend");
    const auto path = scenario_dir / (name + ".json");
    if (!std::filesystem::exists(path)) fail(ErrorKind::kNotFound, "no scenario named '" + name + "'", "backend");
    return std::make_unique<models::ScriptedBackend>(models::parse_scenario(read_file_text(path)));
  }
  if (spec == "live") {
    if (!live || live->base_url.empty()) fail(ErrorKind::kTransport, "live backend not configured (set CI_LIVE_URL)", "backend");
    return std::make_unique<models::LiveBackend>(*live);
  }
  fail(ErrorKind::kValidation, "backend must be \"scripted:<name>\" or \"live\"", "backend");
}

Json run_details_json(const pipeline::PipelineResult& result, const instruction::SceneBundle& bundle) {
  Json descriptors = Json::array();
  for (const auto& d : result.descriptors) descriptors.push_back(models::descriptor_to_json(d));
  Json pointed = Json::array();
  for (const auto& p : result.pointed) pointed.push_back(models::pointed_to_json(p));
  const auto report = pipeline::plan_diagnostics(result.plan, bundle, {result.xi_1, result.xi_2});
  return Json{{"xi",
               {{result.xi_1.view_id, polyline_json(result.xi_1.points)},
                {result.xi_2.view_id, polyline_json(result.xi_2.points)}}},
              {"descriptors", descriptors},
              {"pointed", pointed},
              {"report", pipeline::plan_report_to_json(report)}};
}

struct Service::Impl {
  ServiceConfig config;
  Store store;
  std::mutex mutex;
  std::map<std::string, std::shared_future<void>> runs;
  std::atomic<unsigned long> counter{0};
  httplib::Server server;

  explicit Impl(ServiceConfig c) : config(std::move(c)), store(config.data_dir) {}

  void execute(Session session, pipeline::PipelineConfig pconfig);
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() {
  stop();
  wait_all();
}

Store& Service::store() { return impl_->store; }
const ServiceConfig& Service::config() const { return impl_->config; }

HttpResponse Service::health() const {
  return ok({{"status", "ok"}, {"name", "crossinstruct"}, {"version", CROSSINSTRUCT_VERSION}});
}

HttpResponse Service::create_scene(std::string_view calibration_json, const std::map<std::string, std::string>& images,
                                   const std::vector<std::string>& ordered) {
  try {
    const Json cj = parse_body(calibration_json);
    instruction::SceneBundle bundle;
    if (cj.is_object() && cj.contains("views") && cj["views"].is_array() && !cj["views"].empty() &&
        cj["views"][0].is_object() && cj["views"][0].contains("calibration")) {
      bundle = instruction::scene_bundle_from_json(cj);
    } else {
      for (auto& cam : geometry::calibration_from_json(cj)) bundle.views.push_back({std::move(cam), {}});
    }
    SceneRecord record;
    for (std::size_t i = 0; i < bundle.views.size(); ++i) {
      auto& v = bundle.views[i];
      const std::string* png = nullptr;
      if (const auto it = images.find(v.camera.id); it != images.end()) {
        png = &it->second;
      } else if (images.empty() && i < ordered.size()) {
        png = &ordered[i];
      }
      if (!png) fail(ErrorKind::kValidation, "missing image for view '" + v.camera.id + "'", "image_" + v.camera.id);
      const Image img = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(png->data()), png->size()));
      if (img.width != v.camera.intrinsics.width || img.height != v.camera.intrinsics.height) {
        fail(ErrorKind::kValidation, "image size does not match intrinsics for view '" + v.camera.id + "'",
             "image_" + v.camera.id);
      }
      const std::string digest = impl_->store.put(*png);
      record.images[v.camera.id] = digest;
      v.image_path = "objects/" + digest;
    }
    record.diagnostics = instruction::validate_scene_bundle(bundle, impl_->config.defaults.min_baseline_deg);
    if (!record.diagnostics.empty()) {
      return ok({{"error", {{"kind", "validation"}, {"message", "scene bundle invalid"}, {"field", "calibration"}}},
                 {"diagnostics", record.diagnostics}},
                400);
    }
    const std::string bundle_text = canonical_json(instruction::scene_bundle_to_json(bundle));
    record.bundle_ref = impl_->store.put(bundle_text);
    record.id = short_id("scene\n" + bundle_text);
    record.created_at = pipeline::utc_now();
    if (auto existing = impl_->store.scene(record.id)) {
      record.created_at = existing->created_at;
    } else {
      impl_->store.put_scene(record);
    }
    return ok({{"id", record.id}, {"diagnostics", record.diagnostics}, {"images", record.images}}, 201);
  } catch (const Error& e) {
    return error_response(e);
  }
}

HttpResponse Service::create_instruction(std::string_view body) {
  try {
    const Json j = parse_body(body);
    if (!j.is_object() || !j.contains("instruction")) fail(ErrorKind::kValidation, "body needs an instruction", "instruction");
    const auto instr = instruction::instruction_from_json(j["instruction"]);
    InstructionRecord record;
    if (j.contains("scene_id")) {
      if (!j["scene_id"].is_string()) fail(ErrorKind::kValidation, "scene_id must be a string", "scene_id");
      record.scene_id = j["scene_id"].get<std::string>();
      const auto scene = impl_->store.scene(record.scene_id);
      if (!scene) fail(ErrorKind::kNotFound, "unknown scene " + record.scene_id, "scene_id");
      if (!scene->images.contains(instr.image_ref) && !j.contains("image_png_base64")) {
        fail(ErrorKind::kValidation, "image_ref '" + instr.image_ref + "' is not a view of the scene", "image_ref");
      }
    }
    if (j.contains("image_png_base64")) {
      if (!j["image_png_base64"].is_string()) fail(ErrorKind::kValidation, "image must be base64 text", "image_png_base64");
      const auto bytes = base64_decode(j["image_png_base64"].get<std::string>());
      decode_png(bytes);
      record.image_ref = impl_->store.put(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    }
    if (record.scene_id.empty() && record.image_ref.empty()) {
      fail(ErrorKind::kValidation, "instruction needs a scene_id or an image", "scene_id");
    }
    const std::string text = instruction::serialize_instruction(instr);
    record.instruction_ref = impl_->store.put(text);
    record.id = short_id("instruction\n" + record.instruction_ref + "\n" + record.scene_id + "\n" + record.image_ref);
    record.created_at = pipeline::utc_now();
    if (!impl_->store.instruction(record.id)) impl_->store.put_instruction(record);
    return ok({{"id", record.id}, {"instruction_ref", record.instruction_ref}}, 201);
  } catch (const Error& e) {
    return error_response(e);
  }
}

HttpResponse Service::create_plan(std::string_view body) {
  try {
    const Json j = parse_body(body);
    if (!j.is_object()) fail(ErrorKind::kValidation, "body must be an object", "body");
    for (const char* key : {"scene_id", "instruction_id", "backend"}) {
      if (!j.contains(key) || !j[key].is_string()) fail(ErrorKind::kValidation, std::string(key) + " is required", key);
    }
    const std::string scene_id = j["scene_id"].get<std::string>();
    const std::string instruction_id = j["instruction_id"].get<std::string>();
    const auto scene = impl_->store.scene(scene_id);
    if (!scene) fail(ErrorKind::kNotFound, "unknown scene " + scene_id, "scene_id");
    const auto instr = impl_->store.instruction(instruction_id);
    if (!instr) fail(ErrorKind::kNotFound, "unknown instruction " + instruction_id, "instruction_id");
    if (!instr->scene_id.empty() && instr->scene_id != scene_id) {
      fail(ErrorKind::kValidation, "instruction belongs to another scene", "instruction_id");
    }
    pipeline::PipelineConfig pconfig = impl_->config.defaults;
    if (j.contains("config")) pconfig = pipeline::pipeline_config_from_json(j["config"], pconfig);
    if (j.contains("seed")) {
      if (!j["seed"].is_number_unsigned()) fail(ErrorKind::kValidation, "seed must be a non-negative integer", "seed");
      pconfig.lifting.rng_seed = j["seed"].get<std::uint64_t>();
    }
    const std::string backend = j["backend"].get<std::string>();
    // Fail fast on unknown scenarios or a missing live endpoint.
    make_backend(backend, impl_->config.scenario_dir, impl_->config.live);

    Session s;
    s.scene_id = scene_id;
    s.instruction_id = instruction_id;
    s.scene_ref = scene->bundle_ref;
    s.instruction_ref = instr->instruction_ref;
    s.backend = backend;
    s.config = pipeline::pipeline_config_to_json(pconfig);
    s.request_digest = sha256_hex(canonical_json(
        {{"scene_id", scene_id}, {"instruction_id", instruction_id}, {"backend", backend}, {"config", s.config}}));
    s.created_at = pipeline::utc_now();
    {
      std::lock_guard lock(impl_->mutex);
      for (const auto& other : impl_->store.sessions()) {
        if (other.request_digest == s.request_digest && (other.status == "queued" || other.status == "running")) {
          fail(ErrorKind::kConflict, "an identical plan is already running: " + other.id, "plan");
        }
      }
      s.id = short_id(s.request_digest + "\n" + std::to_string(impl_->counter++) + "\n" + s.created_at + "\n" +
                      std::to_string(impl_->store.sessions().size()));
      s.status = "queued";
      impl_->store.put_session(s);
      impl_->runs[s.id] =
          std::async(std::launch::async, [impl = impl_.get(), s, pconfig] { impl->execute(s, pconfig); }).share();
    }
    return ok({{"id", s.id}, {"status", s.status}, {"status_url", "/api/v1/plans/" + s.id}}, 202);
  } catch (const Error& e) {
    return error_response(e);
  }
}

void Service::Impl::execute(Session s, pipeline::PipelineConfig pconfig) {
  s.status = "running";
  store.put_session(s);
  try {
    const auto scene = store.scene(s.scene_id);
    const auto instr_record = store.instruction(s.instruction_id);
    if (!scene || !instr_record) fail(ErrorKind::kNotFound, "scene or instruction vanished", "scene_id");
    pipeline::SceneInput input;
    input.bundle = instruction::parse_scene_bundle(store.get(scene->bundle_ref));
    for (const auto& [view_id, digest] : scene->images) {
      const std::string png = store.get(digest);
      input.view_images[view_id] = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(png.data()), png.size()));
    }
    const auto instr = instruction::parse_instruction(store.get(instr_record->instruction_ref));
    if (!instr_record->image_ref.empty()) {
      const std::string png = store.get(instr_record->image_ref);
      input.instruction_image = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(png.data()), png.size()));
    } else {
      input.instruction_image = input.view_images.at(instr.image_ref);
    }
    auto backend = make_backend(s.backend, config.scenario_dir, config.live);
    const auto result = pipeline::run_pipeline(instr, input, pconfig, *backend);
    s.trace_ref = store.put(pipeline::trace_to_jsonl(result.trace));
    s.details_ref = store.put(run_details_json(result, input.bundle).dump());
    s.plan_ref = store.put(pipeline::export_plan(result.plan));
    s.status = "done";
  } catch (const Error& e) {
    s.status = "failed";
    s.error = error_json(e);
  } catch (const std::exception& e) {
    s.status = "failed";
    s.error = Json{{"kind", "internal"}, {"message", e.what()}};
  }
  store.put_session(s);
}

HttpResponse Service::get_plan(const std::string& id) const {
  try {
    const auto s = impl_->store.session(id);
    if (!s) fail(ErrorKind::kNotFound, "unknown plan " + id, "id");
    Json out{{"id", s->id}, {"status", s->status}, {"session", session_to_json(*s)}, {"plan", nullptr},
             {"trace", Json::array()}};
    if (!s->plan_ref.empty()) out["plan"] = Json::parse(impl_->store.get(s->plan_ref));
    if (!s->details_ref.empty()) {
      const Json details = Json::parse(impl_->store.get(s->details_ref));
      for (const auto& [k, v] : details.items()) out[k] = v;
    }
    if (!s->trace_ref.empty()) {
      const std::string trace = impl_->store.get(s->trace_ref);
      std::size_t start = 0;
      while (start < trace.size()) {
        const std::size_t end = trace.find('\n', start);
        out["trace"].push_back(Json::parse(trace.substr(start, end - start)));
        if (end == std::string::npos) break;
        start = end + 1;
      }
    }
    if (!s->error.is_null()) out["error"] = s->error;
    const bool transport = s->status == "failed" && s->error.is_object() && s->error.value("kind", "") == "transport";
    return ok(out, transport ? 502 : 200);
  } catch (const Error& e) {
    return error_response(e);
  }
}

HttpResponse Service::get_plan_file(const std::string& id) const {
  try {
    const auto s = impl_->store.session(id);
    if (!s) fail(ErrorKind::kNotFound, "unknown plan " + id, "id");
    if (s->plan_ref.empty()) fail(ErrorKind::kConflict, "plan " + id + " is " + s->status, "status");
    return {200, impl_->store.get(s->plan_ref), "application/json"};
  } catch (const Error& e) {
    return error_response(e);
  }
}

HttpResponse Service::sample_plan(const std::string& id, std::string_view body) const {
  try {
    const auto s = impl_->store.session(id);
    if (!s) fail(ErrorKind::kNotFound, "unknown plan " + id, "id");
    const Json j = parse_body(body);
    if (!j.is_object() || !j.contains("n") || !j["n"].is_number_integer()) {
      fail(ErrorKind::kValidation, "n must be an integer", "n");
    }
    const auto n = j["n"].get<std::int64_t>();
    if (n < 1 || n > impl_->config.max_samples) {
      fail(ErrorKind::kValidation, "n must be in [1, " + std::to_string(impl_->config.max_samples) + "]", "n");
    }
    std::uint64_t seed = 0;
    if (j.contains("seed")) {
      if (!j["seed"].is_number_unsigned()) fail(ErrorKind::kValidation, "seed must be a non-negative integer", "seed");
      seed = j["seed"].get<std::uint64_t>();
    }
    if (s->plan_ref.empty()) fail(ErrorKind::kConflict, "plan " + id + " is " + s->status, "status");
    const auto plan = pipeline::import_plan(impl_->store.get(s->plan_ref));
    Rng rng(seed);
    Json samples = Json::array();
    for (std::int64_t k = 0; k < n; ++k) {
      Json traj = Json::array();
      for (const auto& p : lifting::sample_trajectory(plan.distribution, rng)) traj.push_back({p.x(), p.y(), p.z()});
      samples.push_back(std::move(traj));
    }
    return ok({{"plan_id", id}, {"n", n}, {"seed", seed}, {"samples", samples}});
  } catch (const Error& e) {
    return error_response(e);
  }
}

void Service::wait(const std::string& plan_id) {
  std::shared_future<void> f;
  {
    std::lock_guard lock(impl_->mutex);
    const auto it = impl_->runs.find(plan_id);
    if (it == impl_->runs.end()) return;
    f = it->second;
  }
  f.wait();
}

void Service::wait_all() {
  std::vector<std::shared_future<void>> all;
  {
    std::lock_guard lock(impl_->mutex);
    for (const auto& [id, f] : impl_->runs) all.push_back(f);
  }
  for (auto& f : all) f.wait();
}

void Service::listen(const std::string& host, int port, const std::function<void(int)>& on_ready) {
  auto& svr = impl_->server;
  auto reply = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  svr.Get("/healthz", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, health()); });
  svr.Post("/api/v1/scenes", [this, reply](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data()) {
      reply(res, error_response(Error(ErrorKind::kValidation, "expected multipart/form-data", "content-type")));
      return;
    }
    if (!req.has_file("calibration")) {
      reply(res, error_response(Error(ErrorKind::kValidation, "missing calibration part", "calibration")));
      return;
    }
    std::map<std::string, std::string> images;
    std::vector<std::string> ordered;
    for (const auto& [name, file] : req.files) {
      if (name.starts_with("image_")) images[name.substr(6)] = file.content;
    }
    for (const auto& file : req.get_file_values("images")) ordered.push_back(file.content);
    reply(res, create_scene(req.get_file_value("calibration").content, images, ordered));
  });
  svr.Post("/api/v1/instructions", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, create_instruction(req.body));
  });
  svr.Post("/api/v1/plans", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, create_plan(req.body));
  });
  svr.Get(R"(/api/v1/plans/([0-9a-zA-Z_-]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_plan(req.matches[1]));
  });
  svr.Get(R"(/api/v1/plans/([0-9a-zA-Z_-]+)/plan)", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_plan_file(req.matches[1]));
  });
  svr.Post(R"(/api/v1/plans/([0-9a-zA-Z_-]+)/samples)",
           [this, reply](const httplib::Request& req, httplib::Response& res) {
             reply(res, sample_plan(req.matches[1], req.body));
           });
  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const Json j{{"error", {{"kind", res.status == 404 ? "not-found" : "http"}, {"message", "no such route"}}}};
    res.set_content(j.dump(), "application/json");
  });
  const int bound = port == 0 ? svr.bind_to_any_port(host) : (svr.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(ErrorKind::kIo, "cannot bind " + host + ":" + std::to_string(port));
  if (on_ready) on_ready(bound);
  svr.listen_after_bind();
}

void Service::stop() { impl_->server.stop(); }

}  // namespace crossinstruct::service
