#pragma once

#include <vector>

#include "crossinstruct/image.hpp"
#include "crossinstruct/rl/td3bc.hpp"

namespace crossinstruct::rl {

struct CurveSeries {
  std::string label;
  std::vector<CurvePoint> points;
  Rgb color{220, 40, 40};
};

// Success rate against step on a white canvas with labelled axes.
Image plot_curves(const std::vector<CurveSeries>& series, int width = 640, int height = 400);

}  // namespace crossinstruct::rl
