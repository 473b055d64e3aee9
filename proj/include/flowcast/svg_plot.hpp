#pragma once

#include <string>
#include <vector>

namespace flowcast {

// Minimal SVG chart: truth and forecast series with a shaded interval band.
// Series are indexed on a shared x axis (one point per evaluation step).
void write_forecast_svg(const std::string& path,
                        const std::vector<double>& truth,
                        const std::vector<double>& forecast,
                        const std::vector<double>& lower,
                        const std::vector<double>& upper,
                        const std::string& title);

}  // namespace flowcast
