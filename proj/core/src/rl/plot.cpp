#include "crossinstruct/rl/plot.hpp"

#include <algorithm>
#include <cstdio>

#include "crossinstruct/error.hpp"
#include "crossinstruct/instruction.hpp"

namespace crossinstruct::rl {

Image plot_curves(const std::vector<CurveSeries>& series, int width, int height) {
  if (width < 120 || height < 80) fail(ErrorKind::kValidation, "plot canvas too small", "width");
  Image img(width, height, Rgb{255, 255, 255});
  const double left = 48, right = width - 16.0, top = 16, bottom = height - 32.0;
  const Rgb black{0, 0, 0};
  const std::array<std::uint8_t, 4> axis{0, 0, 0, 255};
  const std::array<std::uint8_t, 4> grid{210, 210, 210, 255};

  std::int64_t max_step = 1;
  for (const auto& s : series)
    for (const auto& p : s.points) max_step = std::max(max_step, p.step);
  auto to_px = [&](std::int64_t step, double rate) {
    const double x = left + (right - left) * static_cast<double>(step) / static_cast<double>(max_step);
    const double y = bottom - (bottom - top) * std::clamp(rate, 0.0, 1.0);
    return geometry::Vec2(x, y);
  };

  char buf[32];
  for (int i = 0; i <= 4; ++i) {
    const double rate = i / 4.0;
    const auto a = to_px(0, rate);
    instruction::draw_segment(img, a, to_px(max_step, rate), 1.0, grid);
    std::snprintf(buf, sizeof buf, "%.2f", rate);
    instruction::draw_text(img, {4, a.y() - 3}, buf, black);
  }
  instruction::draw_segment(img, {left, top}, {left, bottom}, 1.0, axis);
  instruction::draw_segment(img, {left, bottom}, {right, bottom}, 1.0, axis);
  for (int i = 0; i <= 4; ++i) {
    const auto step = max_step * i / 4;
    const auto a = to_px(step, 0);
    instruction::draw_segment(img, a, {a.x(), a.y() + 4}, 1.0, axis);
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(step));
    const double w = instruction::text_width(buf);
    instruction::draw_text(img, {std::clamp(a.x() - w / 2, 0.0, width - w), bottom + 8}, buf, black);
  }
  instruction::draw_text(img, {right - instruction::text_width("step"), bottom + 20}, "step", black);

  double legend_y = top + 4;
  for (const auto& s : series) {
    const std::array<std::uint8_t, 4> rgba{s.color[0], s.color[1], s.color[2], 255};
    for (std::size_t i = 1; i < s.points.size(); ++i) {
      instruction::draw_segment(img, to_px(s.points[i - 1].step, s.points[i - 1].success_rate),
                                to_px(s.points[i].step, s.points[i].success_rate), 2.0, rgba);
    }
    if (s.points.size() == 1) {
      const auto p = to_px(s.points[0].step, s.points[0].success_rate);
      instruction::draw_segment(img, p, p, 3.0, rgba);
    }
    if (!s.label.empty()) {
      instruction::draw_segment(img, {left + 8, legend_y + 3}, {left + 24, legend_y + 3}, 2.0, rgba);
      instruction::draw_text(img, {left + 30, legend_y}, s.label, black);
      legend_y += 12;
    }
  }
  return img;
}

}  // namespace crossinstruct::rl
