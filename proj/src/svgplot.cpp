#include "mvprior/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "mvprior/common.hpp"

namespace mvprior {

namespace {

constexpr int kWidth = 860, kHeight = 480;
constexpr int kLeft = 70, kRight = 700, kTop = 40, kBottom = 430;

const char* kPalette[] = {"#1f6fb4", "#d2452c", "#2e8540", "#8640b4",
                          "#b48a1f", "#188a8a"};

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad() {
        if (!(lo <= hi)) {
            lo = 0.0;
            hi = 1.0;
            return;
        }
        if (lo == hi) {
            const double d = std::max(1.0, std::abs(lo)) * 0.05;
            lo -= d;
            hi += d;
            return;
        }
        const double d = (hi - lo) * 0.05;
        lo -= d;
        hi += d;
    }
    double map(double v, double a, double b) const {
        return a + (v - lo) / (hi - lo) * (b - a);
    }
};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label,
                      const std::vector<Series>& series) {
    if (series.empty()) throw DataError("chart needs at least one series");
    Range rx, ry;
    bool any = false;
    for (const Series& s : series) {
        if (s.x.size() != s.y.size()) throw DataError("series x/y sizes differ");
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            rx.add(s.x[i]);
            ry.add(s.y[i]);
            any = true;
        }
    }
    if (!any) throw DataError("chart series contain no finite points");
    rx.pad();
    ry.pad();

    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
       << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' '
       << kHeight << "\">\n";
    os << "<rect width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << (kLeft + kRight) / 2 << "\" y=\"24\" font-size=\"16\" "
          "text-anchor=\"middle\" font-family=\"sans-serif\">"
       << escape(title) << "</text>\n";

    // Axes box and ticks.
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\""
       << kRight - kLeft << "\" height=\"" << kBottom - kTop
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fx = rx.lo + (rx.hi - rx.lo) * i / 5.0;
        const double px = rx.map(fx, kLeft, kRight);
        os << "<line x1=\"" << px << "\" y1=\"" << kBottom << "\" x2=\"" << px
           << "\" y2=\"" << kBottom + 5 << "\" stroke=\"#444\"/>\n";
        os << "<text x=\"" << px << "\" y=\"" << kBottom + 20
           << "\" font-size=\"11\" text-anchor=\"middle\" "
              "font-family=\"sans-serif\">"
           << fmt(fx) << "</text>\n";
        const double fy = ry.lo + (ry.hi - ry.lo) * i / 5.0;
        const double py = ry.map(fy, kBottom, kTop);
        os << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << py << "\" x2=\"" << kLeft
           << "\" y2=\"" << py << "\" stroke=\"#444\"/>\n";
        os << "<text x=\"" << kLeft - 8 << "\" y=\"" << py + 4
           << "\" font-size=\"11\" text-anchor=\"end\" "
              "font-family=\"sans-serif\">"
           << fmt(fy) << "</text>\n";
    }
    os << "<text x=\"" << (kLeft + kRight) / 2 << "\" y=\"" << kBottom + 38
       << "\" font-size=\"13\" text-anchor=\"middle\" "
          "font-family=\"sans-serif\">"
       << escape(x_label) << "</text>\n";

    for (size_t si = 0; si < series.size(); ++si) {
        const char* color = kPalette[si % (sizeof(kPalette) / sizeof(*kPalette))];
        std::string pts;
        bool open = false;
        auto flush = [&]() {
            if (open && !pts.empty()) {
                os << "<polyline fill=\"none\" stroke=\"" << color
                   << "\" stroke-width=\"1.5\" points=\"" << pts << "\"/>\n";
            }
            pts.clear();
            open = false;
        };
        for (size_t i = 0; i < series[si].x.size(); ++i) {
            const double xv = series[si].x[i], yv = series[si].y[i];
            if (!std::isfinite(xv) || !std::isfinite(yv)) {
                flush();
                continue;
            }
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", rx.map(xv, kLeft, kRight),
                          ry.map(yv, kBottom, kTop));
            pts += buf;
            open = true;
        }
        flush();
        const int ly = kTop + 16 + static_cast<int>(si) * 18;
        os << "<line x1=\"" << kRight + 12 << "\" y1=\"" << ly - 4 << "\" x2=\""
           << kRight + 36 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
           << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << kRight + 42 << "\" y=\"" << ly
           << "\" font-size=\"12\" font-family=\"sans-serif\">"
           << escape(series[si].label) << "</text>\n";
    }
    os << "</svg>\n";
    if (!os) throw DataError("failed writing: " + path);
}

}  // namespace mvprior
