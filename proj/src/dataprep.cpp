#include "mvprior/dataprep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mvprior {

namespace {

constexpr std::uint64_t kDatasetStream = 0xD5;

std::string frame_name(int k, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d.%s", k, ext);
    return buf;
}

std::string seq_name(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "seq_%04d", id);
    return buf;
}

// Convex hull (counterclockwise) of 2-D points, for polygon shape seeds.
std::vector<Eigen::Vector2d> hull2d(std::vector<Eigen::Vector2d> pts) {
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
        return a.x() != b.x() ? a.x() < b.x() : a.y() < b.y();
    });
    auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a,
                    const Eigen::Vector2d& b) {
        return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
    };
    const int n = static_cast<int>(pts.size());
    if (n <= 2) return pts;
    std::vector<Eigen::Vector2d> h(2 * n);
    int k = 0;
    for (int i = 0; i < n; ++i) {
        while (k >= 2 && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    for (int i = n - 2, low = k + 1; i >= 0; --i) {
        while (k >= low && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    h.resize(k - 1);
    return h;
}

bool box_in_frame(const RBBox& b, FrameDims dims) {
    for (const auto& c : b.corners()) {
        if (c.x() < 0.0 || c.x() > dims.w - 1.0 || c.y() < 0.0 || c.y() > dims.h - 1.0) {
            return false;
        }
    }
    return true;
}

// Static per-clip texture: striped foreground/background fields with strong
// mean color separation plus frozen per-pixel noise, so a motionless clip
// renders bit-identical frames.
struct Texture {
    Eigen::Vector3d bg_a, bg_b, fg_a, fg_b;
    double bg_fx, bg_fy, bg_phase;
    double fg_fx, fg_fy, fg_phase;
    Image noise;

    static Texture random(FrameDims dims, Rng& rng) {
        Texture t;
        auto color = [&rng] {
            return Eigen::Vector3d(rng.uniform(), rng.uniform(), rng.uniform());
        };
        for (int tries = 0; tries < 1000; ++tries) {
            t.bg_a = color();
            t.bg_b = color();
            t.fg_a = color();
            t.fg_b = color();
            const Eigen::Vector3d sep =
                (t.fg_a + t.fg_b) / 2.0 - (t.bg_a + t.bg_b) / 2.0;
            if (sep.cwiseAbs().sum() >= 0.8) break;
        }
        t.bg_fx = rng.uniform(0.02, 0.1);
        t.bg_fy = rng.uniform(0.02, 0.1);
        t.bg_phase = rng.uniform(0.0, 2.0 * M_PI);
        t.fg_fx = rng.uniform(0.1, 0.3);
        t.fg_fy = rng.uniform(0.1, 0.3);
        t.fg_phase = rng.uniform(0.0, 2.0 * M_PI);
        t.noise = Image(dims.w, dims.h, 3);
        for (float& v : t.noise.data) v = static_cast<float>(0.04 * rng.normal());
        return t;
    }

    Image render(const Mask& mask) const {
        Image img(mask.w, mask.h, 3);
        for (int y = 0; y < mask.h; ++y) {
            for (int x = 0; x < mask.w; ++x) {
                Eigen::Vector3d c;
                if (mask.at(x, y)) {
                    const double s =
                        0.5 + 0.5 * std::sin(2.0 * M_PI * (fg_fx * x + fg_fy * y) +
                                             fg_phase);
                    c = fg_a + s * (fg_b - fg_a);
                } else {
                    const double s =
                        0.5 + 0.5 * std::sin(2.0 * M_PI * (bg_fx * x + bg_fy * y) +
                                             bg_phase);
                    c = bg_a + s * (bg_b - bg_a);
                }
                for (int ch = 0; ch < 3; ++ch) {
                    const double v = c[ch] + noise.at(x, y, ch);
                    img.at(x, y, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
        return img;
    }
};

double bilinear(const Image& img, double x, double y, int ch) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    auto px = [&](int xi, int yi) -> double {
        if (xi < 0 || xi >= img.w || yi < 0 || yi >= img.h) return 0.0;
        return img.at(xi, yi, ch);
    };
    return (1 - fx) * (1 - fy) * px(x0, y0) + fx * (1 - fy) * px(x0 + 1, y0) +
           (1 - fx) * fy * px(x0, y0 + 1) + fx * fy * px(x0 + 1, y0 + 1);
}

}  // namespace

ShapeSpec ShapeSpec::random(Rng& rng) {
    ShapeSpec s;
    const double u = rng.uniform();
    if (u < 0.4) {
        s.kind = ShapeKind::Rectangle;
    } else if (u < 0.8) {
        s.kind = ShapeKind::Ellipse;
    } else {
        s.kind = ShapeKind::Polygon;
        const int m = static_cast<int>(rng.uniform_int(5, 9));
        std::vector<Eigen::Vector2d> pts;
        for (int i = 0; i < m; ++i) {
            const double phi =
                2.0 * M_PI * (i + 0.4 * (rng.uniform() - 0.5)) / m;
            const double r = rng.uniform(0.33, 0.5);
            pts.emplace_back(r * std::cos(phi), r * std::sin(phi));
        }
        s.poly = hull2d(std::move(pts));
        // Stretch to fill the unit box so the shape's extent matches its box.
        double ux = 0.0, uy = 0.0;
        for (const auto& p : s.poly) {
            ux = std::max(ux, std::abs(p.x()));
            uy = std::max(uy, std::abs(p.y()));
        }
        for (auto& p : s.poly) {
            p.x() *= 0.5 / ux;
            p.y() *= 0.5 / uy;
        }
    }
    return s;
}

bool ShapeSpec::contains(double u, double v) const {
    switch (kind) {
        case ShapeKind::Rectangle:
            return std::abs(u) <= 0.5 && std::abs(v) <= 0.5;
        case ShapeKind::Ellipse:
            return (u * u + v * v) <= 0.25;
        case ShapeKind::Polygon: {
            const int n = static_cast<int>(poly.size());
            for (int i = 0; i < n; ++i) {
                const Eigen::Vector2d& a = poly[i];
                const Eigen::Vector2d& b = poly[(i + 1) % n];
                const double c = (b.x() - a.x()) * (v - a.y()) -
                                 (b.y() - a.y()) * (u - a.x());
                if (c < 0.0) return false;
            }
            return true;
        }
    }
    return false;
}

Mask rasterize_shape(const ShapeSpec& shape, const RBBox& box, FrameDims dims) {
    validate_rbbox(box);
    Mask mask(dims.w, dims.h);
    double minx = 1e30, maxx = -1e30, miny = 1e30, maxy = -1e30;
    for (const auto& c : box.corners()) {
        minx = std::min(minx, c.x());
        maxx = std::max(maxx, c.x());
        miny = std::min(miny, c.y());
        maxy = std::max(maxy, c.y());
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
    const int x1 = std::min(dims.w - 1, static_cast<int>(std::ceil(maxx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
    const int y1 = std::min(dims.h - 1, static_cast<int>(std::ceil(maxy)));
    const double c = std::cos(box.alpha), s = std::sin(box.alpha);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - box.cx, dy = y - box.cy;
            const double u = (c * dx + s * dy) / box.w;
            const double v = (-s * dx + c * dy) / box.h;
            if (shape.contains(u, v)) mask.at(x, y) = 1;
        }
    }
    return mask;
}

SequenceData synthesize_sequence(const GaussianND& prior, const ShapeSpec& shape,
                                 int length, FrameDims dims, Rng& rng) {
    if (prior.k() != 5) throw UsageError("motion prior must be 5-dimensional");
    if (length < 1) throw UsageError("sequence length must be >= 1");
    if (dims.w < 16 || dims.h < 16) throw UsageError("frame dims must be >= 16");

    RBBox box;
    bool placed = false;
    for (int tries = 0; tries < 50 && !placed; ++tries) {
        const double base = rng.uniform(0.16, 0.30) * std::min(dims.w, dims.h);
        const double aspect = rng.uniform(1.2, 1.8);
        box.w = base * std::sqrt(aspect);
        box.h = base / std::sqrt(aspect);
        box.alpha = rng.uniform(-M_PI / 2.0, M_PI / 2.0);
        box.cx = rng.uniform(0.35, 0.65) * dims.w;
        box.cy = rng.uniform(0.35, 0.65) * dims.h;
        placed = box_in_frame(box, dims);
    }
    if (!placed) throw DataError("could not place the seed box inside the frame");

    const Texture tex = Texture::random(dims, rng);

    SequenceData out;
    out.masks.dims = dims;
    out.boxes.push_back(box);
    for (int t = 1; t < length; ++t) {
        bool stepped = false;
        for (int attempt = 0; attempt < 50 && !stepped; ++attempt) {
            const Eigen::VectorXd v = sample_gaussian(prior, 1, rng).row(0);
            if (v[0] <= 0.05 || v[1] <= 0.05 || std::abs(v[2]) > 1.0) continue;
            const MotionParams p = MotionParams::from_latent(v);
            const RBBox moved = apply_transform(box, p, dims);
            if (!box_in_frame(moved, dims) || std::min(moved.w, moved.h) < 3.0) {
                continue;
            }
            box = moved;
            stepped = true;
        }
        if (!stepped) {
            throw DataError("motion draw retry budget exhausted; box cannot stay in frame");
        }
        out.boxes.push_back(box);
    }
    for (const RBBox& b : out.boxes) {
        Mask m = rasterize_shape(shape, b, dims);
        if (m.empty_mask()) throw DataError("rasterized frame came out empty");
        out.images.push_back(tex.render(m));
        out.masks.frames.push_back(std::move(m));
    }
    return out;
}

const char* filter_reason_name(FilterReason r) {
    switch (r) {
        case FilterReason::Accepted: return "accepted";
        case FilterReason::Oversize: return "oversize";
        case FilterReason::Occluded: return "occluded";
    }
    return "unknown";
}

FilterResult filter_sequence(const MaskSequence& s) {
    for (const Mask& m : s.frames) {
        int minx = m.w, maxx = -1, miny = m.h, maxy = -1;
        for (int y = 0; y < m.h; ++y) {
            for (int x = 0; x < m.w; ++x) {
                if (!m.at(x, y)) continue;
                minx = std::min(minx, x);
                maxx = std::max(maxx, x);
                miny = std::min(miny, y);
                maxy = std::max(maxy, y);
            }
        }
        if (maxx < 0) return {false, FilterReason::Occluded};
        if (maxx - minx + 1 >= 0.7 * s.dims.w || maxy - miny + 1 >= 0.7 * s.dims.h) {
            return {false, FilterReason::Oversize};
        }
    }
    return {true, FilterReason::Accepted};
}

std::vector<MaskSequence> split_multi_object(const LabelSequence& ann) {
    std::vector<MaskSequence> out;
    if (ann.frames.empty()) return out;
    const size_t npx = static_cast<size_t>(ann.dims.w) * ann.dims.h;
    std::set<int> keep;
    for (size_t f = 0; f < ann.frames.size(); ++f) {
        if (ann.frames[f].size() != npx) {
            throw UsageError("label frame size does not match dims");
        }
        std::set<int> present(ann.frames[f].begin(), ann.frames[f].end());
        present.erase(0);
        if (f == 0) {
            keep = present;
        } else {
            std::set<int> inter;
            std::set_intersection(keep.begin(), keep.end(), present.begin(),
                                  present.end(), std::inserter(inter, inter.begin()));
            keep = std::move(inter);
        }
    }
    for (int label : keep) {
        MaskSequence s;
        s.dims = ann.dims;
        for (const auto& frame : ann.frames) {
            Mask m(ann.dims.w, ann.dims.h);
            for (size_t i = 0; i < npx; ++i) m.data[i] = frame[i] == label ? 1 : 0;
            s.frames.push_back(std::move(m));
        }
        out.push_back(std::move(s));
    }
    return out;
}

FramePatch crop_patch(const Image& frame, const Mask& mask, int patch) {
    if (patch < 4) throw UsageError("patch size must be >= 4");
    if (mask.empty_mask()) throw DataError("cannot crop a patch around an empty mask");
    if (frame.w != mask.w || frame.h != mask.h) {
        throw UsageError("image and mask dims differ");
    }
    const RBBox b = mask_to_rbbox(mask);
    double minx = 1e30, maxx = -1e30, miny = 1e30, maxy = -1e30;
    for (const auto& c : b.corners()) {
        minx = std::min(minx, c.x());
        maxx = std::max(maxx, c.x());
        miny = std::min(miny, c.y());
        maxy = std::max(maxy, c.y());
    }
    const double side =
        std::max(4.0, 1.5 * std::max(maxx - minx + 1.0, maxy - miny + 1.0));

    FramePatch out;
    out.image = Image(patch, patch, 3);
    out.gt_mask = Mask(patch, patch);
    for (int v = 0; v < patch; ++v) {
        for (int u = 0; u < patch; ++u) {
            const double sx = b.cx + ((u + 0.5) / patch - 0.5) * side;
            const double sy = b.cy + ((v + 0.5) / patch - 0.5) * side;
            const int xi = static_cast<int>(std::lround(sx));
            const int yi = static_cast<int>(std::lround(sy));
            if (mask.inside(xi, yi) && mask.at(xi, yi)) out.gt_mask.at(u, v) = 1;
            for (int ch = 0; ch < 3; ++ch) {
                out.image.at(u, v, ch) = static_cast<float>(bilinear(frame, sx, sy, ch));
            }
        }
    }
    if (out.gt_mask.empty_mask()) {
        // Sparse masks can slip between sample points; splat each foreground
        // pixel onto its nearest patch cell so the output is never empty.
        for (int y = 0; y < mask.h; ++y) {
            for (int x = 0; x < mask.w; ++x) {
                if (!mask.at(x, y)) continue;
                const int u = static_cast<int>(
                    std::lround(((x - b.cx) / side + 0.5) * patch - 0.5));
                const int vq = static_cast<int>(
                    std::lround(((y - b.cy) / side + 0.5) * patch - 0.5));
                if (out.gt_mask.inside(u, vq)) out.gt_mask.at(u, vq) = 1;
            }
        }
    }
    return out;
}

GaussianND analyze_dataset(const std::vector<MaskSequence>& sequences) {
    std::vector<Eigen::Matrix<double, 5, 1>> rows;
    for (const MaskSequence& s : sequences) {
        if (s.frames.size() < 2) continue;
        RBBox prev = mask_to_rbbox(s.frames[0]);
        for (size_t t = 1; t < s.frames.size(); ++t) {
            const RBBox raw = mask_to_rbbox(s.frames[t]);
            const RBBox cur = match_rbbox_representation(prev, raw);
            rows.push_back(extract_motion(prev, cur, s.dims).latent());
            prev = cur;
        }
    }
    if (rows.size() < 2) {
        throw DataError("need at least two frame pairs to fit a motion prior");
    }
    Eigen::MatrixXd samples(static_cast<int>(rows.size()), 5);
    for (size_t i = 0; i < rows.size(); ++i) samples.row(static_cast<int>(i)) = rows[i];
    return fit_gaussian(samples);
}

GeneratedDataset generate_dataset(const GaussianND& prior, int n_train, int n_val,
                                  int length, FrameDims dims, std::uint64_t seed) {
    if (n_train < 0 || n_val < 0) throw UsageError("sequence counts must be >= 0");
    GeneratedDataset ds;
    ds.dims = dims;
    const int total = n_train + n_val;
    const long long max_candidates = std::max(1000LL, 60LL * total);
    for (long long cand = 0; ds.stats.accepted < total && cand < max_candidates;
         ++cand) {
        Rng rng = Rng::derive(seed, {kDatasetStream, static_cast<std::uint64_t>(cand)});
        const ShapeSpec shape = ShapeSpec::random(rng);
        ds.stats.drawn++;
        SequenceData seq;
        try {
            seq = synthesize_sequence(prior, shape, length, dims, rng);
        } catch (const DataError&) {
            ds.stats.rejected_generation++;
            continue;
        }
        const FilterResult fr = filter_sequence(seq.masks);
        if (!fr.accepted) {
            if (fr.reason == FilterReason::Oversize) {
                ds.stats.rejected_oversize++;
            } else {
                ds.stats.rejected_occluded++;
            }
            continue;
        }
        if (ds.stats.accepted < n_train) {
            ds.train.push_back(std::move(seq));
        } else {
            ds.val.push_back(std::move(seq));
        }
        ds.stats.accepted++;
    }
    if (ds.stats.accepted < total) {
        throw DataError("candidate budget exhausted before reaching the requested "
                        "number of accepted sequences");
    }
    return ds;
}

std::vector<FramePatch> make_patches(const std::vector<SequenceData>& sequences,
                                     int patch) {
    std::vector<FramePatch> out;
    for (size_t s = 0; s < sequences.size(); ++s) {
        const SequenceData& seq = sequences[s];
        for (size_t f = 0; f < seq.masks.frames.size(); ++f) {
            FramePatch p = crop_patch(seq.images[f], seq.masks.frames[f], patch);
            p.source_seq = static_cast<int>(s);
            p.source_frame = static_cast<int>(f);
            out.push_back(std::move(p));
        }
    }
    return out;
}

void save_manifest(const std::string& path, const Manifest& m) {
    nlohmann::json j;
    j["dims"] = {{"w", m.dims.w}, {"h", m.dims.h}};
    j["sequences"] = nlohmann::json::array();
    for (const ManifestEntry& e : m.entries) {
        j["sequences"].push_back(
            {{"dir", e.dir}, {"split", e.split}, {"frames", e.frames}});
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw DataError("short write to " + path);
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path + " for reading");
    nlohmann::json j;
    try {
        in >> j;
        Manifest m;
        m.dims.w = j.at("dims").at("w").get<int>();
        m.dims.h = j.at("dims").at("h").get<int>();
        for (const auto& e : j.at("sequences")) {
            m.entries.push_back({e.at("dir").get<std::string>(),
                                 e.at("split").get<std::string>(),
                                 e.at("frames").get<int>()});
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad manifest " + path + ": " + e.what());
    }
}

void save_sequence(const std::string& dir, const SequenceData& seq) {
    std::filesystem::create_directories(dir);
    for (size_t f = 0; f < seq.masks.frames.size(); ++f) {
        write_pgm(dir + "/" + frame_name(static_cast<int>(f), "pgm"),
                  seq.masks.frames[f]);
        write_ppm(dir + "/" + frame_name(static_cast<int>(f), "ppm"), seq.images[f]);
    }
}

SequenceData load_sequence(const std::string& dir, int frames) {
    SequenceData seq;
    for (int f = 0; f < frames; ++f) {
        Mask m = read_pgm(dir + "/" + frame_name(f, "pgm"));
        Image img = read_ppm(dir + "/" + frame_name(f, "ppm"));
        if (f == 0) {
            seq.masks.dims = {m.w, m.h};
        } else if (m.w != seq.masks.dims.w || m.h != seq.masks.dims.h) {
            throw DataError("frame dims differ within " + dir);
        }
        if (img.w != m.w || img.h != m.h) {
            throw DataError("image and mask dims differ in " + dir);
        }
        seq.masks.frames.push_back(std::move(m));
        seq.images.push_back(std::move(img));
    }
    return seq;
}

void store_dataset(const std::string& root, const GeneratedDataset& ds) {
    std::filesystem::create_directories(root);
    Manifest m;
    m.dims = ds.dims;
    int id = 0;
    for (const SequenceData& seq : ds.train) {
        const std::string dir = seq_name(id++);
        save_sequence(root + "/" + dir, seq);
        m.entries.push_back({dir, "train", static_cast<int>(seq.masks.frames.size())});
    }
    for (const SequenceData& seq : ds.val) {
        const std::string dir = seq_name(id++);
        save_sequence(root + "/" + dir, seq);
        m.entries.push_back({dir, "val", static_cast<int>(seq.masks.frames.size())});
    }
    save_manifest(root + "/manifest.json", m);
}

LoadedDataset load_dataset(const std::string& root) {
    const Manifest m = load_manifest(root + "/manifest.json");
    LoadedDataset ds;
    ds.dims = m.dims;
    for (const ManifestEntry& e : m.entries) {
        SequenceData seq = load_sequence(root + "/" + e.dir, e.frames);
        if (!seq.masks.frames.empty() &&
            (seq.masks.dims.w != m.dims.w || seq.masks.dims.h != m.dims.h)) {
            throw DataError("sequence " + e.dir + " dims disagree with manifest");
        }
        if (e.split == "val") {
            ds.val.push_back(std::move(seq));
        } else {
            ds.train.push_back(std::move(seq));
        }
    }
    return ds;
}

}  // namespace mvprior
