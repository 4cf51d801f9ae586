#include <gtest/gtest.h>

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <thread>

#include "crossinstruct/error.hpp"
#include "crossinstruct/pipeline.hpp"
#include "crossinstruct/service.hpp"
#include "crossinstruct/store.hpp"
#include "slide_backend.hpp"

// After Eigen: <resolv.h> defines a _res macro.
#include <httplib.h>

namespace ci = crossinstruct;
using namespace ci::service;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = CI_FIXTURE_DIR;
const fs::path kSlide = kFixtures / "slide";

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ci_service_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slide_calibration() { return ci::read_file_text(kFixtures / "fixture_a" / "calibration.json"); }

std::map<std::string, std::string> slide_images() {
  return {{"view1", ci::read_file_text(kSlide / "view1.png")}, {"view2", ci::read_file_text(kSlide / "view2.png")}};
}

ci::Json slide_config() { return ci::Json::parse(ci::read_file_text(kSlide / "slide_config.json")); }

ci::Json instruction_body(const std::string& scene_id) {
  return {{"instruction", ci::Json::parse(ci::read_file_text(kSlide / "instruction.json"))}, {"scene_id", scene_id}};
}

ci::Json plan_body(const std::string& scene_id, const std::string& instruction_id, const std::string& backend,
                   const ci::Json& config = slide_config()) {
  return {{"scene_id", scene_id}, {"instruction_id", instruction_id}, {"backend", backend}, {"config", config}};
}

ServiceConfig slide_service_config(const std::string& name) {
  ServiceConfig c;
  c.data_dir = fresh_dir(name);
  c.scenario_dir = kFixtures / "scenarios";
  return c;
}

// Scene and instruction ids for the slide fixtures.
std::pair<std::string, std::string> upload_slide(Service& svc) {
  const auto scene = svc.create_scene(slide_calibration(), slide_images());
  EXPECT_EQ(scene.status, 201) << scene.body;
  const std::string scene_id = scene.json()["id"];
  const auto instr = svc.create_instruction(instruction_body(scene_id).dump());
  EXPECT_EQ(instr.status, 201) << instr.body;
  return {scene_id, instr.json()["id"]};
}

// Records the synthetic slide backend at several seeds into `dir`.
void record_seed_scenarios(const fs::path& dir, const std::vector<std::uint64_t>& seeds) {
  const auto instr = ci::instruction::parse_instruction(ci::read_file_text(kSlide / "instruction.json"));
  const auto bundle = ci::instruction::parse_scene_bundle(ci::read_file_text(kSlide / "scene.json"));
  const auto scene = ci::pipeline::load_scene_input(bundle, kSlide, instr, kSlide);
  for (auto seed : seeds) {
    auto config = ci::pipeline::pipeline_config_from_json(slide_config());
    config.lifting.rng_seed = seed;
    ci::testing::SlideBackend synthetic;
    ci::models::RecordingBackend recorder(synthetic, "S" + std::to_string(seed));
    ci::pipeline::run_pipeline(instr, scene, config, recorder);
    ci::write_file(dir / ("S" + std::to_string(seed) + ".json"), ci::models::serialize_scenario(recorder.scenario()));
  }
}

// Live endpoint whose answers can be held back or failed.
class GatedModel {
 public:
  explicit GatedModel(int status = 200) : status_(status) {
    server_.Post(R"(/v1/(\w+))", [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return open_; });
      }
      if (status_ != 200) {
        res.status = status_;
        return;
      }
      const auto body = ci::Json::parse(req.body);
      res.set_content(backend_.complete(rebuild(body)).dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~GatedModel() {
    open();
    server_.stop();
    thread_.join();
  }
  void close() {
    std::lock_guard lock(mutex_);
    open_ = false;
  }
  void open() {
    {
      std::lock_guard lock(mutex_);
      open_ = true;
    }
    cv_.notify_all();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  static ci::models::ModelRequest rebuild(const ci::Json& body) {
    return {body["kind"].get<std::string>(), body["payload"], {}};
  }

  int status_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool open_ = true;
  ci::testing::SlideBackend backend_;
};

}  // namespace

TEST(Service, ScriptedFlowMatchesGolden) {
  Service svc(slide_service_config("golden"));
  const auto [scene_id, instruction_id] = upload_slide(svc);
  const auto created = svc.create_plan(plan_body(scene_id, instruction_id, "scripted:SCEN-SLIDE").dump());
  ASSERT_EQ(created.status, 202) << created.body;
  const std::string id = created.json()["id"];
  EXPECT_EQ(created.json()["status_url"], "/api/v1/plans/" + id);
  svc.wait(id);
  const auto got = svc.get_plan(id);
  ASSERT_EQ(got.status, 200) << got.body;
  const auto j = got.json();
  EXPECT_EQ(j["status"], "done");
  EXPECT_EQ(j["trace"].size(), 9u);
  EXPECT_EQ(j["descriptors"].size(), 3u);
  EXPECT_EQ(j["pointed"].size(), 6u);
  EXPECT_EQ(j["xi"]["view1"].size(), 20u);
  const auto golden = ci::read_file_text(kSlide / "golden_plan.json");
  EXPECT_EQ(j["plan"], ci::Json::parse(golden));
  EXPECT_EQ(svc.get_plan_file(id).body, golden);
}

TEST(Service, SamplesAreSeededTrajectories) {
  Service svc(slide_service_config("samples"));
  const auto [scene_id, instruction_id] = upload_slide(svc);
  const std::string id = svc.create_plan(plan_body(scene_id, instruction_id, "scripted:SCEN-SLIDE").dump()).json()["id"];
  svc.wait(id);
  const auto a = svc.sample_plan(id, R"({"n": 3, "seed": 5})");
  ASSERT_EQ(a.status, 200) << a.body;
  EXPECT_EQ(a.json()["samples"].size(), 3u);
  EXPECT_EQ(a.json()["samples"][0].size(), 20u);
  EXPECT_EQ(a.body, svc.sample_plan(id, R"({"n": 3, "seed": 5})").body);
  EXPECT_NE(a.body, svc.sample_plan(id, R"({"n": 3, "seed": 6})").body);
  EXPECT_EQ(svc.sample_plan(id, R"({"n": 0})").status, 400);
  EXPECT_EQ(svc.sample_plan(id, R"({"n": 100000})").status, 400);
  EXPECT_EQ(svc.sample_plan(id, R"({"n": "three"})").status, 400);
  EXPECT_EQ(svc.sample_plan("nope", R"({"n": 1})").status, 404);
}

TEST(Service, ErrorStatuses) {
  Service svc(slide_service_config("errors"));
  const auto [scene_id, instruction_id] = upload_slide(svc);
  auto r = svc.create_plan(plan_body("unknown", instruction_id, "scripted:SCEN-SLIDE").dump());
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(r.json()["error"]["field"], "scene_id");
  EXPECT_EQ(svc.create_plan(plan_body(scene_id, "unknown", "scripted:SCEN-SLIDE").dump()).status, 404);
  EXPECT_EQ(svc.create_plan(plan_body(scene_id, instruction_id, "scripted:NOPE").dump()).status, 404);
  EXPECT_EQ(svc.create_plan(plan_body(scene_id, instruction_id, "scripted:../x").dump()).status, 400);
  EXPECT_EQ(svc.create_plan(plan_body(scene_id, instruction_id, "oracle").dump()).status, 400);
  EXPECT_EQ(svc.create_plan(plan_body(scene_id, instruction_id, "live").dump()).status, 502);
  r = svc.create_plan(plan_body(scene_id, instruction_id, "scripted:SCEN-SLIDE", {{"horizon", 1}}).dump());
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(r.json()["error"]["field"], "horizon");
  EXPECT_EQ(svc.create_plan("{not json").status, 400);
  EXPECT_EQ(svc.get_plan("missing").status, 404);
}

TEST(Service, SceneValidation) {
  Service svc(slide_service_config("scenes"));
  auto images = slide_images();
  images.erase("view2");
  auto r = svc.create_scene(slide_calibration(), images);
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(r.json()["error"]["field"], "image_view2");

  auto calib = ci::Json::parse(slide_calibration());
  calib["views"][1]["pose"] = calib["views"][0]["pose"];
  r = svc.create_scene(calib.dump(), slide_images());
  EXPECT_EQ(r.status, 400) << r.body;
  EXPECT_FALSE(r.json()["diagnostics"].empty());

  // Same content, same id.
  const auto a = svc.create_scene(slide_calibration(), slide_images());
  const auto b = svc.create_scene(slide_calibration(), slide_images());
  EXPECT_EQ(a.json()["id"], b.json()["id"]);
  // The bundle form from scene.json is accepted too.
  std::vector<std::string> ordered = {slide_images()["view1"], slide_images()["view2"]};
  const auto c = svc.create_scene(ci::read_file_text(kSlide / "scene.json"), {}, ordered);
  EXPECT_EQ(c.status, 201) << c.body;
}

TEST(Service, InstructionValidation) {
  Service svc(slide_service_config("instructions"));
  const auto [scene_id, instruction_id] = upload_slide(svc);
  auto body = instruction_body(scene_id);
  body["instruction"]["labels"][0]["anchor"] = {500, 5};
  auto r = svc.create_instruction(body.dump());
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(r.json()["error"]["field"], "labels[0].anchor");
  EXPECT_EQ(svc.create_instruction(instruction_body("nope").dump()).status, 404);
  body = instruction_body(scene_id);
  body["instruction"]["image_ref"] = "view9";
  EXPECT_EQ(svc.create_instruction(body.dump()).status, 400);
  // Standalone image.
  body = instruction_body(scene_id);
  body.erase("scene_id");
  const auto png = ci::read_file_text(kSlide / "view1.png");
  body["image_png_base64"] =
      ci::base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(png.data()), png.size()));
  r = svc.create_instruction(body.dump());
  EXPECT_EQ(r.status, 201) << r.body;
  // Standalone run renders over the same pixels as the scene view, so the plan matches the golden one.
  const std::string id = svc.create_plan(plan_body(scene_id, r.json()["id"], "scripted:SCEN-SLIDE").dump()).json()["id"];
  svc.wait(id);
  EXPECT_EQ(svc.get_plan_file(id).body, ci::read_file_text(kSlide / "golden_plan.json"));
}

TEST(Service, RunningPlanConflictsAndLiveFailureIs502) {
  GatedModel model;
  auto cfg = slide_service_config("conflict");
  cfg.live = ci::models::LiveConfig{model.url(), "CI_LIVE_TOKEN", 10.0, 0, {}};
  Service svc(cfg);
  const auto [scene_id, instruction_id] = upload_slide(svc);
  model.close();
  const auto body = plan_body(scene_id, instruction_id, "live").dump();
  const auto first = svc.create_plan(body);
  ASSERT_EQ(first.status, 202);
  const auto second = svc.create_plan(body);
  EXPECT_EQ(second.status, 409);
  EXPECT_EQ(second.json()["error"]["kind"], "conflict");
  const std::string id = first.json()["id"];
  EXPECT_EQ(svc.get_plan_file(id).status, 409);
  model.open();
  svc.wait(id);
  const auto done = svc.get_plan(id);
  EXPECT_EQ(done.status, 200) << done.body;
  EXPECT_EQ(done.json()["status"], "done");
  EXPECT_EQ(done.json()["session"]["backend"], "live");
  // Finished runs no longer block identical requests.
  EXPECT_EQ(svc.create_plan(body).status, 202);
  svc.wait_all();

  GatedModel broken(500);
  cfg.live->base_url = broken.url();
  cfg.data_dir = fresh_dir("broken");
  Service svc2(cfg);
  const auto [s2, i2] = upload_slide(svc2);
  const std::string failed = svc2.create_plan(plan_body(s2, i2, "live").dump()).json()["id"];
  svc2.wait(failed);
  const auto r = svc2.get_plan(failed);
  EXPECT_EQ(r.status, 502);
  EXPECT_EQ(r.json()["error"]["kind"], "transport");
  EXPECT_EQ(r.json()["error"]["stage"], "keypoints");
}

TEST(Service, ParallelSessionsMatchSerialRuns) {
  const auto scenarios = fresh_dir("scenarios");
  const std::vector<std::uint64_t> seeds = {3, 4, 5, 6};
  record_seed_scenarios(scenarios, seeds);
  auto cfg = slide_service_config("parallel");
  cfg.scenario_dir = scenarios;
  Service svc(cfg);
  const auto [scene_id, instruction_id] = upload_slide(svc);
  std::vector<std::string> ids;
  for (auto seed : seeds) {
    auto config = slide_config();
    config["lifting"]["rng_seed"] = seed;
    const auto r = svc.create_plan(plan_body(scene_id, instruction_id, "scripted:S" + std::to_string(seed), config).dump());
    ASSERT_EQ(r.status, 202) << r.body;
    ids.push_back(r.json()["id"]);
  }
  svc.wait_all();

  const auto instr = ci::instruction::parse_instruction(ci::read_file_text(kSlide / "instruction.json"));
  const auto bundle = ci::instruction::parse_scene_bundle(ci::read_file_text(kSlide / "scene.json"));
  const auto scene = ci::pipeline::load_scene_input(bundle, kSlide, instr, kSlide);
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    auto config = ci::pipeline::pipeline_config_from_json(slide_config());
    config.lifting.rng_seed = seeds[k];
    ci::models::ScriptedBackend backend(
        ci::models::parse_scenario(ci::read_file_text(scenarios / ("S" + std::to_string(seeds[k]) + ".json"))));
    const auto serial = ci::pipeline::run_pipeline(instr, scene, config, backend);
    EXPECT_EQ(svc.get_plan_file(ids[k]).body, ci::pipeline::export_plan(serial.plan)) << seeds[k];
  }
}

TEST(Service, HttpEndToEnd) {
  Service svc(slide_service_config("http"));
  int port = 0;
  std::mutex m;
  std::condition_variable cv;
  std::thread server([&] {
    svc.listen("127.0.0.1", 0, [&](int p) {
      std::lock_guard lock(m);
      port = p;
      cv.notify_all();
    });
  });
  {
    std::unique_lock lock(m);
    cv.wait(lock, [&] { return port != 0; });
  }
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(30, 0);

  auto health = cli.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(ci::Json::parse(health->body)["status"], "ok");

  const auto images = slide_images();
  httplib::MultipartFormDataItems items = {
      {"calibration", slide_calibration(), "calibration.json", "application/json"},
      {"image_view1", images.at("view1"), "view1.png", "image/png"},
      {"image_view2", images.at("view2"), "view2.png", "image/png"}};
  auto scene = cli.Post("/api/v1/scenes", items);
  ASSERT_TRUE(scene);
  ASSERT_EQ(scene->status, 201) << scene->body;
  const std::string scene_id = ci::Json::parse(scene->body)["id"];
  auto instr = cli.Post("/api/v1/instructions", instruction_body(scene_id).dump(), "application/json");
  ASSERT_EQ(instr->status, 201) << instr->body;
  const std::string instruction_id = ci::Json::parse(instr->body)["id"];
  auto created = cli.Post("/api/v1/plans", plan_body(scene_id, instruction_id, "scripted:SCEN-SLIDE").dump(),
                          "application/json");
  ASSERT_EQ(created->status, 202) << created->body;
  const std::string status_url = ci::Json::parse(created->body)["status_url"];
  std::string status;
  for (int i = 0; i < 600 && status != "done" && status != "failed"; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    status = ci::Json::parse(cli.Get(status_url)->body)["status"];
  }
  ASSERT_EQ(status, "done");
  EXPECT_EQ(cli.Get(status_url + "/plan")->body, ci::read_file_text(kSlide / "golden_plan.json"));
  auto samples = cli.Post(status_url + "/samples", R"({"n": 0})", "application/json");
  EXPECT_EQ(samples->status, 400);
  samples = cli.Post(status_url + "/samples", R"({"n": 2, "seed": 1})", "application/json");
  EXPECT_EQ(samples->status, 200);
  EXPECT_EQ(cli.Get("/api/v1/plans/doesnotexist")->status, 404);
  EXPECT_EQ(cli.Get("/nowhere")->status, 404);
  EXPECT_EQ(cli.Post("/api/v1/scenes", "{}", "application/json")->status, 400);

  svc.stop();
  server.join();
}

TEST(Store, RoundTripAndReopen) {
  const auto dir = fresh_dir("store");
  Session s;
  {
    Store store(dir);
    const auto d = store.put("hello");
    EXPECT_EQ(d, ci::sha256_hex(std::string_view("hello")));
    EXPECT_EQ(store.put("hello"), d);
    EXPECT_TRUE(store.contains(d));
    EXPECT_EQ(store.get(d), "hello");
    EXPECT_THROW(store.get(std::string(64, '0')), ci::Error);
    store.put_scene({"sc1", d, {{"view1", d}}, {"note"}, "2024-01-01T00:00:00Z"});
    store.put_instruction({"in1", d, "sc1", "", "2024-01-01T00:00:00Z"});
    s.id = "p1";
    s.scene_id = "sc1";
    s.status = "failed";
    s.config = {{"horizon", 20}};
    s.error = {{"kind", "transport"}, {"message", "down"}};
    store.put_session(s);
    s.status = "done";
    store.put_session(s);
    EXPECT_EQ(store.sessions().size(), 1u);
  }
  Store reopened(dir);
  EXPECT_EQ(reopened.session("p1"), s);
  EXPECT_EQ(reopened.scene("sc1")->images.at("view1"), reopened.scene("sc1")->bundle_ref);
  EXPECT_EQ(reopened.instruction("in1")->scene_id, "sc1");
  EXPECT_FALSE(reopened.session("p2").has_value());
  const auto index = ci::Json::parse(ci::read_file_text(dir / "index.json"));
  EXPECT_TRUE(index.contains("sessions"));
  EXPECT_TRUE(index.contains("scenes"));
  EXPECT_TRUE(index.contains("instructions"));
}

TEST(Store, RecordJsonRoundTrip) {
  ci::Rng rng(4);
  for (int k = 0; k < 50; ++k) {
    Session s;
    s.id = ci::sha256_hex(std::to_string(rng.next())).substr(0, 16);
    s.scene_id = "s" + std::to_string(rng.index(100));
    s.plan_ref = rng.index(2) ? ci::sha256_hex(s.id) : "";
    s.status = std::vector<std::string>{"queued", "running", "done", "failed"}[rng.index(4)];
    s.config = {{"seed", rng.index(1000)}};
    if (s.status == "failed") s.error = {{"kind", "validation"}, {"message", "bad"}};
    EXPECT_EQ(session_from_json(session_to_json(s)), s);
    SceneRecord sc{s.id, s.plan_ref, {{"a", "b"}}, {"x", "y"}, "t"};
    EXPECT_EQ(scene_record_from_json(scene_record_to_json(sc)), sc);
    InstructionRecord ir{s.id, "r", "", "img", "t"};
    EXPECT_EQ(instruction_record_from_json(instruction_record_to_json(ir)), ir);
  }
}

TEST(Service, ConfigFromEnvironment) {
  ::setenv("CI_DATA_DIR", "/tmp/somewhere", 1);
  ::setenv("CI_LIVE_URL", "http://example.invalid", 1);
  const auto c = service_config_from_env();
  EXPECT_EQ(c.data_dir, "/tmp/somewhere");
  ASSERT_TRUE(c.live.has_value());
  EXPECT_EQ(c.live->base_url, "http://example.invalid");
  EXPECT_EQ(c.live->token_env, "CI_LIVE_TOKEN");
  ::unsetenv("CI_DATA_DIR");
  ::unsetenv("CI_LIVE_URL");
  EXPECT_EQ(http_status(ci::ErrorKind::kNotFound), 404);
  EXPECT_EQ(http_status(ci::ErrorKind::kConflict), 409);
  EXPECT_EQ(http_status(ci::ErrorKind::kTransport), 502);
  EXPECT_EQ(http_status(ci::ErrorKind::kValidation), 400);
}
