#include <algorithm>
#include <cmath>
#include <numbers>

#include "crossinstruct/error.hpp"
#include "crossinstruct/instruction.hpp"

namespace crossinstruct::instruction {

namespace detail {
extern const std::array<std::array<std::uint8_t, 5>, 95> kFont5x7;
extern const std::array<std::uint8_t, 5> kMissingGlyph;
}  // namespace detail

namespace {

constexpr Rgb kLabelColor{255, 255, 255};
constexpr double kArrowHalfAngle = 25.0 * std::numbers::pi / 180.0;

double brush_radius(double width) { return std::max(width / 2.0, 0.5); }

double arrow_length(double width) { return std::max(6.0, 3.0 * width); }

std::uint8_t blend(std::uint8_t dst, std::uint8_t src, std::uint8_t alpha) {
  const int v = (alpha * src + (255 - alpha) * dst + 127) / 255;
  return static_cast<std::uint8_t>(v);
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Coverage mask of a capsule brush over [a, b]; marks pixels whose centers lie
// within the brush radius.
void mark_segment(std::vector<std::uint8_t>& mask, int w, int h, const Vec2& a, const Vec2& b, double width) {
  const double r = brush_radius(width);
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - r)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + r)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + r)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (point_segment_distance(Vec2(x, y), a, b) <= r + 1e-12) mask[static_cast<std::size_t>(y) * w + x] = 1;
}

std::array<Vec2, 2> arrow_wings(const Stroke& s) {
  const Vec2& tip = s.points.back();
  const Vec2& prev = s.points[s.points.size() - 2];
  Vec2 d = tip - prev;
  if (d.norm() == 0) d = Vec2(1, 0);
  d.normalize();
  const double len = arrow_length(s.style.width);
  const double c = std::cos(kArrowHalfAngle), sn = std::sin(kArrowHalfAngle);
  const Vec2 back(-d.x(), -d.y());
  const Vec2 left(c * back.x() - sn * back.y(), sn * back.x() + c * back.y());
  const Vec2 right(c * back.x() + sn * back.y(), -sn * back.x() + c * back.y());
  return {tip + len * left, tip + len * right};
}

std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      cp = c & 0x1F, extra = 1;
    } else if ((c & 0xF0) == 0xE0) {
      cp = c & 0x0F, extra = 2;
    } else if ((c & 0xF8) == 0xF0) {
      cp = c & 0x07, extra = 3;
    } else {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    bool ok = true;
    for (int k = 1; k <= extra; ++k) {
      if (i + k >= s.size() || (static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += 1 + extra;
  }
  return out;
}

}  // namespace

int text_width(std::string_view utf8) {
  const auto n = static_cast<int>(decode_utf8(utf8).size());
  return n == 0 ? 0 : n * kGlyphAdvance - 1;
}

void draw_text(Image& image, const Vec2& anchor, std::string_view utf8, Rgb color) {
  const int x0 = static_cast<int>(std::floor(anchor.x()));
  const int y0 = static_cast<int>(std::floor(anchor.y()));
  int pen = x0;
  for (char32_t cp : decode_utf8(utf8)) {
    const auto& glyph = (cp >= 0x20 && cp <= 0x7E) ? detail::kFont5x7[cp - 0x20] : detail::kMissingGlyph;
    for (int col = 0; col < 5; ++col)
      for (int row = 0; row < kGlyphHeight; ++row)
        if ((glyph[col] >> row) & 1) {
          const int x = pen + col, y = y0 + row;
          if (image.contains(x, y)) image.set(x, y, color);
        }
    pen += kGlyphAdvance;
  }
}

void draw_segment(Image& image, const Vec2& a, const Vec2& b, double width, std::array<std::uint8_t, 4> rgba) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(image.width) * image.height, 0);
  mark_segment(mask, image.width, image.height, a, b, width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (mask[static_cast<std::size_t>(y) * image.width + x]) {
        const Rgb d = image.at(x, y);
        image.set(x, y, {blend(d[0], rgba[0], rgba[3]), blend(d[1], rgba[1], rgba[3]), blend(d[2], rgba[2], rgba[3])});
      }
}

std::vector<PixelBox> overlay_footprint(const CrossModalInstruction& instr) {
  std::vector<PixelBox> boxes;
  for (const auto& s : instr.strokes) {
    std::vector<Vec2> pts = s.points;
    if (s.kind == StrokeKind::kArrow && pts.size() >= 2) {
      const auto wings = arrow_wings(s);
      pts.push_back(wings[0]);
      pts.push_back(wings[1]);
    }
    double minx = pts[0].x(), maxx = minx, miny = pts[0].y(), maxy = miny;
    for (const auto& p : pts) {
      minx = std::min(minx, p.x()), maxx = std::max(maxx, p.x());
      miny = std::min(miny, p.y()), maxy = std::max(maxy, p.y());
    }
    const double r = brush_radius(s.style.width);
    boxes.push_back({static_cast<int>(std::floor(minx - r)), static_cast<int>(std::floor(miny - r)),
                     static_cast<int>(std::ceil(maxx + r)), static_cast<int>(std::ceil(maxy + r))});
  }
  for (const auto& l : instr.labels) {
    const int x0 = static_cast<int>(std::floor(l.anchor.x()));
    const int y0 = static_cast<int>(std::floor(l.anchor.y()));
    boxes.push_back({x0, y0, x0 + std::max(0, text_width(l.text) - 1), y0 + kGlyphHeight - 1});
  }
  return boxes;
}

Image rasterize_overlay(const Image& image, const CrossModalInstruction& instr) {
  if (instr.image_size && ((*instr.image_size)[0] != image.width || (*instr.image_size)[1] != image.height)) {
    fail(ErrorKind::kValidation, "image dimensions do not match instruction image_size", "image_size");
  }
  for (const auto& s : instr.strokes)
    for (const auto& p : s.points)
      if (p.x() > image.width - 1 || p.y() > image.height - 1) {
        fail(ErrorKind::kValidation, "stroke point outside image", "strokes.points");
      }
  for (const auto& l : instr.labels)
    if (l.anchor.x() > image.width - 1 || l.anchor.y() > image.height - 1) {
      fail(ErrorKind::kValidation, "label anchor outside image", "labels.anchor");
    }

  Image out = image;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(out.width) * out.height);
  for (const auto& s : instr.strokes) {
    std::fill(mask.begin(), mask.end(), 0);
    for (std::size_t i = 0; i + 1 < s.points.size(); ++i) {
      mark_segment(mask, out.width, out.height, s.points[i], s.points[i + 1], s.style.width);
    }
    if (s.kind == StrokeKind::kBoundary && s.points.size() > 2) {
      mark_segment(mask, out.width, out.height, s.points.back(), s.points.front(), s.style.width);
    }
    if (s.kind == StrokeKind::kArrow) {
      const auto wings = arrow_wings(s);
      mark_segment(mask, out.width, out.height, s.points.back(), wings[0], s.style.width);
      mark_segment(mask, out.width, out.height, s.points.back(), wings[1], s.style.width);
    }
    const auto& c = s.style.rgba;
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        if (mask[static_cast<std::size_t>(y) * out.width + x]) {
          const Rgb d = out.at(x, y);
          out.set(x, y, {blend(d[0], c[0], c[3]), blend(d[1], c[1], c[3]), blend(d[2], c[2], c[3])});
        }
  }
  for (const auto& l : instr.labels) draw_text(out, l.anchor, l.text, kLabelColor);
  return out;
}

}  // namespace crossinstruct::instruction
