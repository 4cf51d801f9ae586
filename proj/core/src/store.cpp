#include "crossinstruct/store.hpp"

#include <atomic>
#include <fstream>

#include "crossinstruct/error.hpp"
#include "crossinstruct/image.hpp"

namespace crossinstruct::service {

namespace fs = std::filesystem;

namespace {

bool is_digest(const std::string& d) {
  if (d.size() != 64) return false;
  for (char c : d) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

// Write to a unique temp file then rename, so readers never see partial files.
void atomic_write(const fs::path& path, std::string_view bytes) {
  static std::atomic<unsigned long> counter{0};
  const fs::path tmp = path.string() + ".tmp" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "cannot rename into " + path.string() + ": " + ec.message());
}

std::string str(const Json& j, const char* key) {
  if (!j.contains(key)) return {};
  if (!j[key].is_string()) fail(ErrorKind::kParse, std::string(key) + " must be a string", key);
  return j[key].get<std::string>();
}

template <typename T>
std::optional<T> find_by_id(const std::vector<T>& items, const std::string& id) {
  for (const auto& item : items)
    if (item.id == id) return item;
  return std::nullopt;
}

}  // namespace

Json scene_record_to_json(const SceneRecord& r) {
  return Json{{"id", r.id},
              {"bundle_ref", r.bundle_ref},
              {"images", r.images},
              {"diagnostics", r.diagnostics},
              {"created_at", r.created_at}};
}

SceneRecord scene_record_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorKind::kParse, "scene record must be an object");
  SceneRecord r{str(j, "id"), str(j, "bundle_ref"), {}, {}, str(j, "created_at")};
  try {
    if (j.contains("images")) r.images = j["images"].get<std::map<std::string, std::string>>();
    if (j.contains("diagnostics")) r.diagnostics = j["diagnostics"].get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    fail(ErrorKind::kParse, std::string("bad scene record: ") + e.what(), "images");
  }
  return r;
}

Json instruction_record_to_json(const InstructionRecord& r) {
  return Json{{"id", r.id},
              {"instruction_ref", r.instruction_ref},
              {"scene_id", r.scene_id},
              {"image_ref", r.image_ref},
              {"created_at", r.created_at}};
}

InstructionRecord instruction_record_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorKind::kParse, "instruction record must be an object");
  return {str(j, "id"), str(j, "instruction_ref"), str(j, "scene_id"), str(j, "image_ref"), str(j, "created_at")};
}

Json session_to_json(const Session& s) {
  return Json{{"id", s.id},
              {"scene_id", s.scene_id},
              {"instruction_id", s.instruction_id},
              {"scene_ref", s.scene_ref},
              {"instruction_ref", s.instruction_ref},
              {"plan_ref", s.plan_ref.empty() ? Json(nullptr) : Json(s.plan_ref)},
              {"trace_ref", s.trace_ref},
              {"details_ref", s.details_ref},
              {"created_at", s.created_at},
              {"status", s.status},
              {"backend", s.backend},
              {"request_digest", s.request_digest},
              {"config", s.config},
              {"error", s.error}};
}

Session session_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorKind::kParse, "session must be an object");
  Session s;
  s.id = str(j, "id");
  s.scene_id = str(j, "scene_id");
  s.instruction_id = str(j, "instruction_id");
  s.scene_ref = str(j, "scene_ref");
  s.instruction_ref = str(j, "instruction_ref");
  if (j.contains("plan_ref") && !j["plan_ref"].is_null()) s.plan_ref = str(j, "plan_ref");
  s.trace_ref = str(j, "trace_ref");
  s.details_ref = str(j, "details_ref");
  s.created_at = str(j, "created_at");
  s.status = str(j, "status");
  s.backend = str(j, "backend");
  s.request_digest = str(j, "request_digest");
  if (j.contains("config")) s.config = j["config"];
  if (j.contains("error")) s.error = j["error"];
  if (s.id.empty()) fail(ErrorKind::kParse, "session id is empty", "id");
  return s;
}

Store::Store(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "objects", ec);
  if (ec) fail(ErrorKind::kIo, "cannot create store at " + root_.string() + ": " + ec.message());
  load_index();
}

std::string Store::put(std::string_view bytes) {
  const std::string d = sha256_hex(bytes);
  const fs::path p = root_ / "objects" / d;
  if (!fs::exists(p)) atomic_write(p, bytes);
  return d;
}

bool Store::contains(const std::string& digest) const {
  return is_digest(digest) && fs::exists(root_ / "objects" / digest);
}

std::string Store::get(const std::string& digest) const {
  if (!contains(digest)) fail(ErrorKind::kNotFound, "no object " + digest, "digest");
  return read_file_text(root_ / "objects" / digest);
}

void Store::load_index() {
  const fs::path p = root_ / "index.json";
  if (!fs::exists(p)) return;
  Json j;
  try {
    j = Json::parse(read_file_text(p));
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::kParse, "corrupt index.json at byte " + std::to_string(e.byte));
  }
  if (!j.is_object()) fail(ErrorKind::kParse, "index.json must be an object");
  if (j.contains("scenes"))
    for (const auto& r : j["scenes"]) scenes_.push_back(scene_record_from_json(r));
  if (j.contains("instructions"))
    for (const auto& r : j["instructions"]) instructions_.push_back(instruction_record_from_json(r));
  if (j.contains("sessions"))
    for (const auto& s : j["sessions"]) sessions_.push_back(session_from_json(s));
}

void Store::save_index() const {
  Json j{{"sessions", Json::array()}, {"scenes", Json::array()}, {"instructions", Json::array()}};
  for (const auto& s : sessions_) j["sessions"].push_back(session_to_json(s));
  for (const auto& r : scenes_) j["scenes"].push_back(scene_record_to_json(r));
  for (const auto& r : instructions_) j["instructions"].push_back(instruction_record_to_json(r));
  atomic_write(root_ / "index.json", j.dump(2) + "\n");
}

void Store::put_scene(const SceneRecord& r) {
  std::lock_guard lock(mutex_);
  for (auto& existing : scenes_) {
    if (existing.id == r.id) {
      existing = r;
      save_index();
      return;
    }
  }
  scenes_.push_back(r);
  save_index();
}

void Store::put_instruction(const InstructionRecord& r) {
  std::lock_guard lock(mutex_);
  for (auto& existing : instructions_) {
    if (existing.id == r.id) {
      existing = r;
      save_index();
      return;
    }
  }
  instructions_.push_back(r);
  save_index();
}

void Store::put_session(const Session& s) {
  std::lock_guard lock(mutex_);
  for (auto& existing : sessions_) {
    if (existing.id == s.id) {
      existing = s;
      save_index();
      return;
    }
  }
  sessions_.push_back(s);
  save_index();
}

std::optional<SceneRecord> Store::scene(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return find_by_id(scenes_, id);
}

std::optional<InstructionRecord> Store::instruction(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return find_by_id(instructions_, id);
}

std::optional<Session> Store::session(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return find_by_id(sessions_, id);
}

std::vector<Session> Store::sessions() const {
  std::lock_guard lock(mutex_);
  return sessions_;
}

}  // namespace crossinstruct::service
