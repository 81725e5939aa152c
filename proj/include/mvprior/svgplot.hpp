#pragma once

#include <string>
#include <vector>

namespace mvprior {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Renders one or more polyline series into a standalone SVG file with axes,
// tick labels, and a legend.
void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label,
                      const std::vector<Series>& series);

}  // namespace mvprior
