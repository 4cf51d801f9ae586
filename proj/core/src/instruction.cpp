#include "crossinstruct/instruction.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "crossinstruct/error.hpp"

namespace crossinstruct::instruction {

std::string_view to_string(StrokeKind kind) {
  switch (kind) {
    case StrokeKind::kFreehand: return "freehand";
    case StrokeKind::kArrow: return "arrow";
    case StrokeKind::kBoundary: return "boundary";
  }
  return "freehand";
}

StrokeKind stroke_kind_from_string(std::string_view name) {
  if (name == "freehand") return StrokeKind::kFreehand;
  if (name == "arrow") return StrokeKind::kArrow;
  if (name == "boundary") return StrokeKind::kBoundary;
  fail(ErrorKind::kValidation, "unknown stroke kind '" + std::string(name) + "'", "strokes.kind");
}

const SceneView& SceneBundle::view(std::string_view id) const {
  for (const auto& v : views)
    if (v.camera.id == id) return v;
  fail(ErrorKind::kNotFound, "no view with id '" + std::string(id) + "'", "views.id");
}

namespace {

bool in_bounds(const Vec2& p, const std::optional<std::array<int, 2>>& size) {
  if (!p.allFinite() || p.x() < 0 || p.y() < 0) return false;
  if (!size) return true;
  return p.x() <= (*size)[0] - 1 && p.y() <= (*size)[1] - 1;
}

Vec2 read_point(const Json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    fail(ErrorKind::kValidation, "point must be [u, v]", field);
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

void validate(const CrossModalInstruction& instr) {
  if (instr.image_ref.empty()) fail(ErrorKind::kValidation, "image_ref empty", "image_ref");
  if (instr.image_size && ((*instr.image_size)[0] <= 0 || (*instr.image_size)[1] <= 0)) {
    fail(ErrorKind::kValidation, "image_size must be positive", "image_size");
  }
  if (instr.strokes.empty() && instr.labels.empty()) fail(ErrorKind::kValidation, "no annotations", "strokes");
  for (std::size_t i = 0; i < instr.strokes.size(); ++i) {
    const auto& s = instr.strokes[i];
    const std::string field = "strokes[" + std::to_string(i) + "]";
    if (s.points.size() < 2) fail(ErrorKind::kValidation, "stroke needs at least 2 points", field + ".points");
    if (!(s.style.width > 0) || !std::isfinite(s.style.width)) {
      fail(ErrorKind::kValidation, "stroke width must be positive", field + ".style.width");
    }
    for (const auto& p : s.points)
      if (!in_bounds(p, instr.image_size)) fail(ErrorKind::kValidation, "stroke point out of bounds", field + ".points");
  }
  for (std::size_t i = 0; i < instr.labels.size(); ++i) {
    const auto& l = instr.labels[i];
    const std::string field = "labels[" + std::to_string(i) + "]";
    if (l.text.empty()) fail(ErrorKind::kValidation, "label text empty", field + ".text");
    if (!in_bounds(l.anchor, instr.image_size)) fail(ErrorKind::kValidation, "anchor out of bounds", field + ".anchor");
  }
}

CrossModalInstruction instruction_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorKind::kValidation, "instruction must be an object", "");
  if (!j.contains("version") || j["version"] != kSchemaVersion) {
    fail(ErrorKind::kValidation, "unsupported schema version", "version");
  }
  CrossModalInstruction instr;
  if (!j.contains("image_ref") || !j["image_ref"].is_string()) fail(ErrorKind::kValidation, "missing image_ref", "image_ref");
  instr.image_ref = j["image_ref"].get<std::string>();
  if (j.contains("image_size")) {
    const auto& s = j["image_size"];
    if (!s.is_array() || s.size() != 2 || !s[0].is_number_integer() || !s[1].is_number_integer()) {
      fail(ErrorKind::kValidation, "image_size must be [width, height]", "image_size");
    }
    instr.image_size = std::array<int, 2>{s[0].get<int>(), s[1].get<int>()};
  }
  const Json empty = Json::array();
  const Json& strokes = j.contains("strokes") ? j["strokes"] : empty;
  const Json& labels = j.contains("labels") ? j["labels"] : empty;
  if (!strokes.is_array()) fail(ErrorKind::kValidation, "strokes must be an array", "strokes");
  if (!labels.is_array()) fail(ErrorKind::kValidation, "labels must be an array", "labels");
  for (std::size_t i = 0; i < strokes.size(); ++i) {
    const Json& sj = strokes[i];
    const std::string field = "strokes[" + std::to_string(i) + "]";
    if (!sj.is_object()) fail(ErrorKind::kValidation, "stroke must be an object", field);
    Stroke s;
    if (!sj.contains("kind") || !sj["kind"].is_string()) fail(ErrorKind::kValidation, "missing kind", field + ".kind");
    s.kind = stroke_kind_from_string(sj["kind"].get<std::string>());
    if (!sj.contains("points") || !sj["points"].is_array()) fail(ErrorKind::kValidation, "missing points", field + ".points");
    for (const auto& p : sj["points"]) s.points.push_back(read_point(p, field + ".points"));
    if (sj.contains("style")) {
      const Json& st = sj["style"];
      if (st.contains("rgba")) {
        const Json& c = st["rgba"];
        if (!c.is_array() || c.size() != 4) fail(ErrorKind::kValidation, "rgba must have 4 entries", field + ".style.rgba");
        for (int k = 0; k < 4; ++k) {
          if (!c[k].is_number_integer() || c[k].get<int>() < 0 || c[k].get<int>() > 255) {
            fail(ErrorKind::kValidation, "rgba entries must be 0..255", field + ".style.rgba");
          }
          s.style.rgba[k] = static_cast<std::uint8_t>(c[k].get<int>());
        }
      }
      if (st.contains("width")) {
        if (!st["width"].is_number()) fail(ErrorKind::kValidation, "width must be a number", field + ".style.width");
        s.style.width = st["width"].get<double>();
      }
    }
    instr.strokes.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Json& lj = labels[i];
    const std::string field = "labels[" + std::to_string(i) + "]";
    if (!lj.is_object() || !lj.contains("text") || !lj["text"].is_string()) {
      fail(ErrorKind::kValidation, "label needs text", field + ".text");
    }
    if (!lj.contains("anchor")) fail(ErrorKind::kValidation, "label needs anchor", field + ".anchor");
    instr.labels.push_back(TextLabel{lj["text"].get<std::string>(), read_point(lj["anchor"], field + ".anchor")});
  }
  validate(instr);
  return instr;
}

Json instruction_to_json(const CrossModalInstruction& instr) {
  Json strokes = Json::array();
  for (const auto& s : instr.strokes) {
    Json pts = Json::array();
    for (const auto& p : s.points) pts.push_back({p.x(), p.y()});
    strokes.push_back({{"kind", to_string(s.kind)},
                       {"points", pts},
                       {"style",
                        {{"rgba", {s.style.rgba[0], s.style.rgba[1], s.style.rgba[2], s.style.rgba[3]}},
                         {"width", s.style.width}}}});
  }
  Json labels = Json::array();
  for (const auto& l : instr.labels) labels.push_back({{"text", l.text}, {"anchor", {l.anchor.x(), l.anchor.y()}}});
  Json j{{"version", kSchemaVersion}, {"image_ref", instr.image_ref}, {"strokes", strokes}, {"labels", labels}};
  if (instr.image_size) j["image_size"] = {(*instr.image_size)[0], (*instr.image_size)[1]};
  return j;
}

namespace {

Json parse_json_or_throw(std::string_view bytes) {
  try {
    return Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::kParse, "malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what(), "");
  }
}

}  // namespace

CrossModalInstruction parse_instruction(std::string_view bytes) {
  return instruction_from_json(parse_json_or_throw(bytes));
}

std::string serialize_instruction(const CrossModalInstruction& instr) { return instruction_to_json(instr).dump(2); }

std::vector<CrossModalInstruction> parse_instruction_list(std::string_view bytes) {
  const Json j = parse_json_or_throw(bytes);
  std::vector<CrossModalInstruction> out;
  if (j.is_object() && j.contains("instructions")) {
    if (!j["instructions"].is_array()) fail(ErrorKind::kValidation, "instructions must be an array", "instructions");
    for (const auto& item : j["instructions"]) out.push_back(instruction_from_json(item));
  } else {
    out.push_back(instruction_from_json(j));
  }
  return out;
}

SceneBundle scene_bundle_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("views") || !j["views"].is_array()) {
    fail(ErrorKind::kValidation, "scene bundle needs a views array", "views");
  }
  SceneBundle bundle;
  for (std::size_t i = 0; i < j["views"].size(); ++i) {
    const Json& vj = j["views"][i];
    const std::string field = "views[" + std::to_string(i) + "]";
    if (!vj.is_object() || !vj.contains("id") || !vj["id"].is_string()) fail(ErrorKind::kValidation, "missing id", field + ".id");
    if (!vj.contains("calibration")) fail(ErrorKind::kValidation, "missing calibration", field + ".calibration");
    Json calib = vj["calibration"];
    const std::string id = vj["id"].get<std::string>();
    if (!calib.is_object()) fail(ErrorKind::kValidation, "calibration must be an object", field + ".calibration");
    if (!calib.contains("id")) {
      calib["id"] = id;
    } else if (calib["id"] != id) {
      fail(ErrorKind::kValidation, "calibration id does not match view id", field + ".calibration.id");
    }
    SceneView sv;
    sv.camera = geometry::view_from_json(calib);
    if (vj.contains("image_path")) {
      if (!vj["image_path"].is_string()) fail(ErrorKind::kValidation, "image_path must be a string", field + ".image_path");
      sv.image_path = vj["image_path"].get<std::string>();
    }
    bundle.views.push_back(std::move(sv));
  }
  return bundle;
}

Json scene_bundle_to_json(const SceneBundle& bundle) {
  Json views = Json::array();
  for (const auto& v : bundle.views) {
    views.push_back({{"id", v.camera.id}, {"image_path", v.image_path}, {"calibration", geometry::view_to_json(v.camera)}});
  }
  return Json{{"views", views}};
}

SceneBundle parse_scene_bundle(std::string_view bytes) { return scene_bundle_from_json(parse_json_or_throw(bytes)); }

std::vector<std::string> validate_scene_bundle(const SceneBundle& bundle, double min_baseline_deg) {
  std::vector<std::string> diags;
  if (bundle.views.size() != 2) {
    diags.push_back("expected exactly 2 views, got " + std::to_string(bundle.views.size()));
  }
  std::set<std::string> ids;
  for (const auto& v : bundle.views) {
    if (!ids.insert(v.camera.id).second) diags.push_back("duplicate id '" + v.camera.id + "'");
    try {
      geometry::validate(v.camera);
    } catch (const Error& e) {
      diags.push_back("view '" + v.camera.id + "': " + e.detail());
    }
  }
  if (bundle.views.size() >= 2) {
    const auto& a = bundle.views[0].camera;
    const auto& b = bundle.views[1].camera;
    const double angle = geometry::baseline_angle_deg(a, b, geometry::workspace_center(a, b));
    if (!(angle >= min_baseline_deg)) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "baseline angle %.4g° < %.4g°", angle, min_baseline_deg);
      diags.emplace_back(buf);
    }
  }
  return diags;
}

}  // namespace crossinstruct::instruction
