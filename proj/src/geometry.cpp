#include "mvprior/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvprior/common.hpp"

namespace mvprior {

double wrap_angle(double a) {
    a = std::fmod(a, 2.0 * M_PI);
    if (a > M_PI) a -= 2.0 * M_PI;
    if (a <= -M_PI) a += 2.0 * M_PI;
    return a;
}

double wrap_angle_half(double a) {
    a = std::fmod(a, M_PI);
    if (a > M_PI / 2.0) a -= M_PI;
    if (a <= -M_PI / 2.0) a += M_PI;
    return a;
}

std::array<Eigen::Vector2d, 4> RBBox::corners() const {
    const double c = std::cos(alpha), s = std::sin(alpha);
    const double hw = w / 2.0, hh = h / 2.0;
    std::array<Eigen::Vector2d, 4> out;
    const double ox[4] = {-hw, hw, hw, -hw};
    const double oy[4] = {-hh, -hh, hh, hh};
    for (int i = 0; i < 4; ++i) {
        out[i] = {cx + ox[i] * c - oy[i] * s, cy + ox[i] * s + oy[i] * c};
    }
    return out;
}

MotionParams MotionParams::from_latent(const Eigen::Matrix<double, 5, 1>& v) {
    if (std::abs(v[2]) > 1.0) {
        throw UsageError("motion latent v3 out of [-1, 1]; no rotation angle exists");
    }
    return {v[0], v[1], std::asin(v[2]), v[3], v[4]};
}

void validate_rbbox(const RBBox& b) {
    if (!(b.w > 0.0) || !(b.h > 0.0)) {
        throw UsageError("rbbox sides must be positive");
    }
}

void validate_motion(const MotionParams& p) {
    if (!(p.dsx > 0.0) || !(p.dsy > 0.0)) {
        throw UsageError("motion scale ratios must be positive");
    }
}

TransformMatrix compose_transform(const MotionParams& p, const FrameDims& dims) {
    validate_motion(p);
    const double c = std::cos(p.theta), s = std::sin(p.theta);
    TransformMatrix g;
    g << p.dsx * c, -p.dsy * s, p.dx * dims.w,
         p.dsx * s,  p.dsy * c, p.dy * dims.h,
         0.0, 0.0, 1.0;
    return g;
}

RBBox apply_transform(const RBBox& b, const MotionParams& p, const FrameDims& dims) {
    validate_rbbox(b);
    validate_motion(p);
    const double c = std::cos(p.theta), s = std::sin(p.theta);
    const double tx = p.dx * dims.w, ty = p.dy * dims.h;
    RBBox out;
    out.cx = p.dsx * c * b.cx - p.dsy * s * b.cy + tx;
    out.cy = p.dsx * s * b.cx + p.dsy * c * b.cy + ty;
    out.w = p.dsx * b.w;
    out.h = p.dsy * b.h;
    out.alpha = wrap_angle(b.alpha + p.theta);
    return out;
}

MotionParams extract_motion(const RBBox& b_t, const RBBox& b_t1, const FrameDims& dims) {
    validate_rbbox(b_t1);
    if (!(b_t.w > 0.0) || !(b_t.h > 0.0)) {
        throw UsageError("cannot divide by zero-size source rbbox");
    }
    MotionParams p;
    p.dsx = b_t1.w / b_t.w;
    p.dsy = b_t1.h / b_t.h;
    p.theta = wrap_angle(b_t1.alpha - b_t.alpha);
    const double c = std::cos(p.theta), s = std::sin(p.theta);
    const double tx = b_t1.cx - b_t.cx * p.dsx * c + b_t.cy * p.dsy * s;
    const double ty = b_t1.cy - b_t.cx * p.dsx * s - b_t.cy * p.dsy * c;
    p.dx = tx / dims.w;
    p.dy = ty / dims.h;
    return p;
}

namespace {

struct Pt {
    long long x, y;
    bool operator<(const Pt& o) const { return x != o.x ? x < o.x : y < o.y; }
    bool operator==(const Pt& o) const { return x == o.x && y == o.y; }
};

long long cross(const Pt& o, const Pt& a, const Pt& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew monotone chain; returns hull in counterclockwise order,
// collinear interior points dropped.
std::vector<Pt> convex_hull(std::vector<Pt> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    const int n = static_cast<int>(pts.size());
    if (n <= 2) return pts;
    std::vector<Pt> hull(2 * n);
    int k = 0;
    for (int i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (int i = n - 2, lower = k + 1; i >= 0; --i) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

struct RectCandidate {
    double area = std::numeric_limits<double>::infinity();
    double cx = 0, cy = 0, w = 0, h = 0, angle = 0;
};

// Tightest rectangle at direction `angle` over the hull points, sides
// inflated by the one-pixel extent.
RectCandidate rect_at_angle(const std::vector<Pt>& hull, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    double umin = std::numeric_limits<double>::infinity(), umax = -umin;
    double vmin = umin, vmax = -umin;
    for (const Pt& p : hull) {
        const double u = p.x * c + p.y * s;
        const double v = -p.x * s + p.y * c;
        umin = std::min(umin, u);
        umax = std::max(umax, u);
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
    }
    RectCandidate r;
    r.w = (umax - umin) + 1.0;
    r.h = (vmax - vmin) + 1.0;
    r.area = r.w * r.h;
    const double uc = (umin + umax) / 2.0, vc = (vmin + vmax) / 2.0;
    r.cx = uc * c - vc * s;
    r.cy = uc * s + vc * c;
    r.angle = angle;
    return r;
}

RBBox canonicalize(RectCandidate r) {
    if (r.h > r.w) {
        std::swap(r.w, r.h);
        r.angle += M_PI / 2.0;
    }
    return RBBox{r.cx, r.cy, r.w, r.h, wrap_angle_half(r.angle)};
}

}  // namespace

RBBox mask_to_rbbox(const Mask& mask) {
    std::vector<Pt> pts;
    for (int y = 0; y < mask.h; ++y) {
        for (int x = 0; x < mask.w; ++x) {
            if (mask.at(x, y)) pts.push_back({x, y});
        }
    }
    if (pts.empty()) throw DataError("mask has no foreground pixels");
    if (pts.size() == 1) {
        return RBBox{static_cast<double>(pts[0].x), static_cast<double>(pts[0].y),
                     1.0, 1.0, 0.0};
    }
    std::vector<Pt> hull = convex_hull(std::move(pts));

    RectCandidate best = rect_at_angle(hull, 0.0);
    const int n = static_cast<int>(hull.size());
    for (int i = 0; i < n; ++i) {
        const Pt& a = hull[i];
        const Pt& b = hull[(i + 1) % n];
        if (a == b) continue;
        const double angle = std::atan2(static_cast<double>(b.y - a.y),
                                        static_cast<double>(b.x - a.x));
        RectCandidate r = rect_at_angle(hull, angle);
        if (r.area < best.area) best = r;
    }
    return canonicalize(best);
}

RBBox match_rbbox_representation(const RBBox& ref, const RBBox& b) {
    RBBox best = b;
    double best_dev = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 4; ++k) {
        RBBox cand = b;
        if (k % 2 == 1) std::swap(cand.w, cand.h);
        cand.alpha = wrap_angle(b.alpha + k * M_PI / 2.0);
        const double dev = std::abs(wrap_angle(cand.alpha - ref.alpha));
        if (dev < best_dev) {
            best_dev = dev;
            best = cand;
        }
    }
    return best;
}

}  // namespace mvprior
