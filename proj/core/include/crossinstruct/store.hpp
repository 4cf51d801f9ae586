#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crossinstruct/digest.hpp"

namespace crossinstruct::service {

struct SceneRecord {
  std::string id;
  std::string bundle_ref;
  // view id -> PNG object digest
  std::map<std::string, std::string> images;
  std::vector<std::string> diagnostics;
  std::string created_at;

  bool operator==(const SceneRecord&) const = default;
};

struct InstructionRecord {
  std::string id;
  std::string instruction_ref;
  // Empty for a standalone instruction image.
  std::string scene_id;
  // PNG object digest of a standalone instruction image.
  std::string image_ref;
  std::string created_at;

  bool operator==(const InstructionRecord&) const = default;
};

// One plan run. plan_ref is set only after the run succeeds.
struct Session {
  std::string id;
  std::string scene_id;
  std::string instruction_id;
  std::string scene_ref;
  std::string instruction_ref;
  std::string plan_ref;
  std::string trace_ref;
  // Per-view 2D trajectories, keypoints and diagnostics for overlays.
  std::string details_ref;
  std::string created_at;
  std::string status;  // queued | running | done | failed
  std::string backend;
  std::string request_digest;
  Json config = Json::object();
  Json error = nullptr;

  bool operator==(const Session&) const = default;
};

Json scene_record_to_json(const SceneRecord& r);
SceneRecord scene_record_from_json(const Json& j);
Json instruction_record_to_json(const InstructionRecord& r);
InstructionRecord instruction_record_from_json(const Json& j);
Json session_to_json(const Session& s);
Session session_from_json(const Json& j);

// Content-addressed directory store: objects/<sha256> plus index.json holding
// {sessions: [...], scenes: [...], instructions: [...]}. Thread-safe.
class Store {
 public:
  explicit Store(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  // Writes the object if absent and returns its digest.
  std::string put(std::string_view bytes);
  bool contains(const std::string& digest) const;
  // Throws kNotFound for unknown digests.
  std::string get(const std::string& digest) const;

  void put_scene(const SceneRecord& r);
  void put_instruction(const InstructionRecord& r);
  // Inserts or replaces by id.
  void put_session(const Session& s);

  std::optional<SceneRecord> scene(const std::string& id) const;
  std::optional<InstructionRecord> instruction(const std::string& id) const;
  std::optional<Session> session(const std::string& id) const;
  std::vector<Session> sessions() const;

 private:
  void load_index();
  void save_index() const;  // caller holds mutex_

  std::filesystem::path root_;
  mutable std::mutex mutex_;
  std::vector<SceneRecord> scenes_;
  std::vector<InstructionRecord> instructions_;
  std::vector<Session> sessions_;
};

}  // namespace crossinstruct::service
