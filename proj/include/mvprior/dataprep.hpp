#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvprior/gaussian.hpp"
#include "mvprior/geometry.hpp"
#include "mvprior/image.hpp"

namespace mvprior {

/// Ordered binary masks of one object over one clip; all frames share dims
/// and, once filtered, every frame has at least one foreground pixel.
struct MaskSequence {
    FrameDims dims;
    std::vector<Mask> frames;
};

/// Masks plus the paired textured color frames and the generating boxes.
struct SequenceData {
    MaskSequence masks;
    std::vector<Image> images;
    std::vector<RBBox> boxes;  // ground-truth boxes used to rasterize
};

/// Object-centered crop: P x P x 3 image in [0,1] plus the resampled mask.
struct FramePatch {
    Image image;
    Mask gt_mask;
    int source_seq = 0;
    int source_frame = 0;
};

enum class ShapeKind { Rectangle, Ellipse, Polygon };

/// Convex shape drawn in box coordinates (the unit square [-0.5, 0.5]^2 that
/// the object's rbbox is mapped onto).
struct ShapeSpec {
    ShapeKind kind = ShapeKind::Ellipse;
    std::vector<Eigen::Vector2d> poly;  // convex vertices, Polygon only

    static ShapeSpec random(Rng& rng);
    /// Membership test in box coordinates.
    bool contains(double u, double v) const;
};

/// Rasterizes the shape mapped into the box; pixels outside the frame clip.
Mask rasterize_shape(const ShapeSpec& shape, const RBBox& box, FrameDims dims);

/// Draws per-step motion from the prior, walks the seed box through the
/// frames, and rasterizes masks plus textured images. Steps are re-drawn
/// (up to 50 retries) when the scale draw is degenerate (<= 0.05), |v3| > 1,
/// or the moved box would leave the frame or collapse below 3 px; exhausting
/// the retries raises a data error.
SequenceData synthesize_sequence(const GaussianND& prior, const ShapeSpec& shape,
                                 int length, FrameDims dims, Rng& rng);

enum class FilterReason { Accepted, Oversize, Occluded };

struct FilterResult {
    bool accepted = false;
    FilterReason reason = FilterReason::Accepted;
};

const char* filter_reason_name(FilterReason r);

/// Rejects clips where any frame's axis-aligned object extent reaches 70% of
/// the frame dimension, or where any frame is empty (fully occluded).
FilterResult filter_sequence(const MaskSequence& s);

/// Per-pixel label maps for one clip; label 0 is background.
struct LabelSequence {
    FrameDims dims;
    std::vector<std::vector<int>> frames;  // row-major labels per frame
};

/// One binary sequence per label present in every frame; labels missing from
/// any frame are dropped.
std::vector<MaskSequence> split_multi_object(const LabelSequence& ann);

/// Square crop window centered on the mask's rbbox center with side
/// 1.5x the box's largest axis-aligned extent, resampled to P x P
/// (bilinear image, nearest-neighbor mask) with zero padding off-frame.
FramePatch crop_patch(const Image& frame, const Mask& mask, int patch);

/// The prior-production pipeline: recover the motion between every pair of
/// consecutive frames from the masks alone, map to the latent view
/// (scale ratios, sin rotation, normalized translations), and fit a
/// gaussian over all pairs.
GaussianND analyze_dataset(const std::vector<MaskSequence>& sequences);

/// Generation bookkeeping for a dataset build.
struct GenStats {
    int drawn = 0;
    int accepted = 0;
    int rejected_oversize = 0;
    int rejected_occluded = 0;
    int rejected_generation = 0;
};

/// Keeps drawing candidate clips (per-candidate rng derived from the seed)
/// and filtering them until n_train + n_val clips are accepted.
struct GeneratedDataset {
    FrameDims dims;
    std::vector<SequenceData> train;
    std::vector<SequenceData> val;
    GenStats stats;
};
GeneratedDataset generate_dataset(const GaussianND& prior, int n_train, int n_val,
                                  int length, FrameDims dims, std::uint64_t seed);

/// Crops every frame of every sequence.
std::vector<FramePatch> make_patches(const std::vector<SequenceData>& sequences,
                                     int patch);

// --- On-disk dataset layout -------------------------------------------------
// <root>/manifest.json plus one directory per clip holding frame_<k>.pgm
// masks and frame_<k>.ppm images.

struct ManifestEntry {
    std::string dir;
    std::string split;  // "train" or "val"
    int frames = 0;
};

struct Manifest {
    FrameDims dims;
    std::vector<ManifestEntry> entries;
};

void save_manifest(const std::string& path, const Manifest& m);
Manifest load_manifest(const std::string& path);

void save_sequence(const std::string& dir, const SequenceData& seq);
SequenceData load_sequence(const std::string& dir, int frames);

/// Writes manifest + all sequences under root (created if missing).
void store_dataset(const std::string& root, const GeneratedDataset& ds);

/// Loads manifest + all sequences from root.
struct LoadedDataset {
    FrameDims dims;
    std::vector<SequenceData> train;
    std::vector<SequenceData> val;
};
LoadedDataset load_dataset(const std::string& root);

}  // namespace mvprior
