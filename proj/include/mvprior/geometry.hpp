#pragma once

#include <Eigen/Dense>
#include <array>

#include "mvprior/image.hpp"

namespace mvprior {

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);
/// Wraps an angle to (-pi/2, pi/2] (rectangle symmetry modulo pi).
double wrap_angle_half(double a);

/// Rotated bounding box: center in pixels, side lengths in pixels, and
/// counterclockwise angle in radians, normalized to (-pi, pi].
struct RBBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;
    double alpha = 0.0;

    std::array<Eigen::Vector2d, 4> corners() const;
};

/// Inter-frame motion: scale ratios, rotation, and translations normalized by
/// the frame dimensions. The latent view is (dsx, dsy, sin(theta), dx, dy).
struct MotionParams {
    double dsx = 1.0;
    double dsy = 1.0;
    double theta = 0.0;
    double dx = 0.0;
    double dy = 0.0;

    Eigen::Matrix<double, 5, 1> latent() const {
        return {dsx, dsy, std::sin(theta), dx, dy};
    }
    /// Inverse of latent(): theta = asin(v3), which restricts |theta| <= pi/2.
    static MotionParams from_latent(const Eigen::Matrix<double, 5, 1>& v);
};

/// Homogeneous 3x3 transform. Translation slots hold raw pixel translations.
using TransformMatrix = Eigen::Matrix3d;

struct FrameDims {
    int w = 0;
    int h = 0;
};

void validate_rbbox(const RBBox& b);
void validate_motion(const MotionParams& p);

/// Builds the homogeneous motion matrix
///   [ dsx*cos t  -dsy*sin t  tx ]
///   [ dsx*sin t   dsy*cos t  ty ]
///   [     0           0       1 ]
/// with tx = dx*w, ty = dy*h in pixels.
TransformMatrix compose_transform(const MotionParams& p, const FrameDims& dims);

/// Moves a box one step: center through the matrix, sides scaled, angle rotated.
RBBox apply_transform(const RBBox& b, const MotionParams& p, const FrameDims& dims);

/// Recovers the unique motion carrying b_t onto b_t1.
MotionParams extract_motion(const RBBox& b_t, const RBBox& b_t1, const FrameDims& dims);

/// Minimum-area rotated rectangle over the foreground pixels (convex hull +
/// directional sweep over hull edges), canonicalized to w >= h with
/// alpha in (-pi/2, pi/2]. Pixel (x, y) counts as the lattice point (x, y);
/// sides include the +1 pixel extent.
RBBox mask_to_rbbox(const Mask& mask);

/// Picks, among the four symmetric representations of `b` (side swap and
/// angle shifts by multiples of pi/2), the one whose angle is nearest to
/// ref.alpha. Used when tracking canonicalized boxes across frames.
RBBox match_rbbox_representation(const RBBox& ref, const RBBox& b);

}  // namespace mvprior
