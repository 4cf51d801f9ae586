#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crossinstruct/geometry.hpp"
#include "crossinstruct/image.hpp"

namespace crossinstruct::instruction {

using geometry::Vec2;

inline constexpr std::string_view kSchemaVersion = "crossinstruct/1";
inline constexpr double kDefaultMinBaselineDeg = 10.0;

enum class StrokeKind { kFreehand, kArrow, kBoundary };

std::string_view to_string(StrokeKind kind);
StrokeKind stroke_kind_from_string(std::string_view name);

struct StrokeStyle {
  std::array<std::uint8_t, 4> rgba{255, 0, 0, 255};
  double width = 2.0;

  bool operator==(const StrokeStyle&) const = default;
};

struct Stroke {
  StrokeKind kind = StrokeKind::kFreehand;
  std::vector<Vec2> points;
  StrokeStyle style;

  bool operator==(const Stroke&) const = default;
};

struct TextLabel {
  std::string text;
  Vec2 anchor = Vec2::Zero();

  bool operator==(const TextLabel&) const = default;
};

struct CrossModalInstruction {
  std::string image_ref;
  // Dimensions of the referenced image. When present, parsing checks
  // annotation bounds against it; rasterization always does.
  std::optional<std::array<int, 2>> image_size;
  std::vector<Stroke> strokes;
  std::vector<TextLabel> labels;

  bool operator==(const CrossModalInstruction&) const = default;
};

struct SceneView {
  geometry::CameraView camera;
  std::string image_path;

  bool operator==(const SceneView&) const = default;
};

struct SceneBundle {
  std::vector<SceneView> views;

  const SceneView& view(std::string_view id) const;
  bool operator==(const SceneBundle&) const = default;
};

// Structural validation; throws kValidation naming the field.
void validate(const CrossModalInstruction& instr);

// Throws kParse (with byte offset) on malformed JSON, kValidation on
// invariant violations.
CrossModalInstruction parse_instruction(std::string_view bytes);
CrossModalInstruction instruction_from_json(const Json& j);
Json instruction_to_json(const CrossModalInstruction& instr);
std::string serialize_instruction(const CrossModalInstruction& instr);
// Accepts a single instruction document or {"instructions": [...]}.
std::vector<CrossModalInstruction> parse_instruction_list(std::string_view bytes);

SceneBundle scene_bundle_from_json(const Json& j);
Json scene_bundle_to_json(const SceneBundle& bundle);
SceneBundle parse_scene_bundle(std::string_view bytes);

// One diagnostic per violated invariant; empty when the bundle is usable.
std::vector<std::string> validate_scene_bundle(const SceneBundle& bundle,
                                               double min_baseline_deg = kDefaultMinBaselineDeg);

// Copy of `image` with strokes and labels drawn on it.
Image rasterize_overlay(const Image& image, const CrossModalInstruction& instr);

struct PixelBox {
  int x0, y0, x1, y1;  // inclusive
};
// Regions rasterize_overlay may touch, one per stroke and label.
std::vector<PixelBox> overlay_footprint(const CrossModalInstruction& instr);

// Text drawing with the embedded 5x7 font. Each glyph advances 6 pixels;
// rows span [anchor.y, anchor.y + 7). Non-ASCII code points render as a box.
inline constexpr int kGlyphAdvance = 6;
inline constexpr int kGlyphHeight = 7;
void draw_text(Image& image, const Vec2& anchor, std::string_view utf8, Rgb color);
int text_width(std::string_view utf8);

// Brush drawing shared with the curve plotter.
void draw_segment(Image& image, const Vec2& a, const Vec2& b, double width, std::array<std::uint8_t, 4> rgba);

}  // namespace crossinstruct::instruction
