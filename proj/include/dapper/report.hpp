#pragma once

#include <string>
#include <vector>

#include "dapper/evalhost.hpp"
#include "dapper/image.hpp"

namespace dapper::report {

// Tile images into rows x cols with a 1-pixel separator.
Image image_grid(const std::vector<Image>& tiles, int cols, float separator = 1.f);

// Accuracy-vs-fraction curves (one polyline + error bars per policy),
// deterministic byte-for-byte given the same report.
std::string sweep_curves_svg(const eval::SweepReport& report);

}  // namespace dapper::report
