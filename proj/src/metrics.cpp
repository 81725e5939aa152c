#include "mvprior/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mvprior/common.hpp"

namespace mvprior {

namespace {

constexpr double kProbFloor = 1e-7;
constexpr double kFBetaSq = 0.3;

void check_same_shape(const Mask& a, const Mask& b) {
    if (a.w != b.w || a.h != b.h) throw UsageError("mask shapes differ");
}

void check_prob_shape(const std::vector<double>& p, const Mask& gt) {
    if (p.size() != static_cast<size_t>(gt.w) * gt.h) {
        throw UsageError("probability map size does not match mask");
    }
}

std::vector<std::uint8_t> boundary_pixels(const Mask& m) {
    std::vector<std::uint8_t> b(static_cast<size_t>(m.w) * m.h, 0);
    for (int y = 0; y < m.h; ++y) {
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(x, y)) continue;
            const bool edge =
                x == 0 || x == m.w - 1 || y == 0 || y == m.h - 1 ||
                !m.at(x - 1, y) || !m.at(x + 1, y) || !m.at(x, y - 1) ||
                !m.at(x, y + 1);
            if (edge) b[static_cast<size_t>(y) * m.w + x] = 1;
        }
    }
    return b;
}

std::vector<std::uint8_t> dilate_disc(const std::vector<std::uint8_t>& src, int w,
                                      int h, int tol) {
    std::vector<std::uint8_t> out(src.size(), 0);
    const int t2 = tol * tol;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!src[static_cast<size_t>(y) * w + x]) continue;
            for (int dy = -tol; dy <= tol; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= h) continue;
                for (int dx = -tol; dx <= tol; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= w) continue;
                    if (dx * dx + dy * dy <= t2) {
                        out[static_cast<size_t>(yy) * w + xx] = 1;
                    }
                }
            }
        }
    }
    return out;
}

struct MatchCount {
    std::int64_t total = 0, matched = 0;
};

MatchCount count_matches(const std::vector<std::uint8_t>& boundary,
                         const std::vector<std::uint8_t>& other_dilated) {
    MatchCount c;
    for (size_t i = 0; i < boundary.size(); ++i) {
        if (boundary[i]) {
            ++c.total;
            if (other_dilated[i]) ++c.matched;
        }
    }
    return c;
}

}  // namespace

double jaccard(const Mask& pred, const Mask& gt) {
    check_same_shape(pred, gt);
    std::int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const bool a = pred.data[i] != 0, b = gt.data[i] != 0;
        inter += (a && b);
        uni += (a || b);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

int default_boundary_tol(int w, int h) {
    const double diag = std::sqrt(static_cast<double>(w) * w +
                                  static_cast<double>(h) * h);
    return static_cast<int>(std::ceil(0.008 * diag));
}

double boundary_f(const Mask& pred, const Mask& gt, int tol) {
    check_same_shape(pred, gt);
    if (tol < 0) throw UsageError("boundary tolerance must be >= 0");
    const auto pb = boundary_pixels(pred);
    const auto gb = boundary_pixels(gt);
    const bool pe = std::find(pb.begin(), pb.end(), 1) == pb.end();
    const bool ge = std::find(gb.begin(), gb.end(), 1) == gb.end();
    if (pe && ge) return 1.0;
    if (pe || ge) return 0.0;
    const auto pd = dilate_disc(pb, pred.w, pred.h, tol);
    const auto gd = dilate_disc(gb, pred.w, pred.h, tol);
    const MatchCount pc = count_matches(pb, gd);
    const MatchCount gc = count_matches(gb, pd);
    const double precision = static_cast<double>(pc.matched) / pc.total;
    const double recall = static_cast<double>(gc.matched) / gc.total;
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double boundary_f(const Mask& pred, const Mask& gt) {
    return boundary_f(pred, gt, default_boundary_tol(gt.w, gt.h));
}

double prob_mse(const std::vector<double>& pred, const Mask& gt) {
    check_prob_shape(pred, gt);
    double s = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - (gt.data[i] ? 1.0 : 0.0);
        s += d * d;
    }
    return s / static_cast<double>(pred.size());
}

double prob_nll(const std::vector<double>& pred, const Mask& gt) {
    check_prob_shape(pred, gt);
    double s = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double p_true = gt.data[i] ? pred[i] : 1.0 - pred[i];
        s += -std::log(std::max(p_true, kProbFloor));
    }
    return s / static_cast<double>(pred.size());
}

SaliencyScores saliency_scores(const std::vector<double>& pred, const Mask& gt) {
    check_prob_shape(pred, gt);
    SaliencyScores out;
    double abs_sum = 0.0, mean = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        abs_sum += std::abs(pred[i] - (gt.data[i] ? 1.0 : 0.0));
        mean += pred[i];
    }
    mean /= static_cast<double>(pred.size());
    out.mae = abs_sum / static_cast<double>(pred.size());
    out.threshold = std::clamp(2.0 * mean, 0.0, 1.0);

    // Strictly-above binarization so an all-zero map predicts nothing; the
    // saturated threshold 1 switches to >= so a perfect all-ones map still
    // predicts everything.
    const double tau = out.threshold;
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool hit = tau < 1.0 ? pred[i] > tau : pred[i] >= 1.0;
        const bool g = gt.data[i] != 0;
        tp += (hit && g);
        fp += (hit && !g);
        fn += (!hit && g);
    }
    if (tp + fp + fn == 0) {
        out.f_beta = 1.0;
        return out;
    }
    if (tp == 0) {
        out.f_beta = 0.0;
        return out;
    }
    const double precision = static_cast<double>(tp) / (tp + fp);
    const double recall = static_cast<double>(tp) / (tp + fn);
    out.f_beta = (1.0 + kFBetaSq) * precision * recall /
                 (kFBetaSq * precision + recall);
    return out;
}

BestOfBatch best_of_batch(const std::vector<Mask>& candidates, const Mask& gt) {
    if (candidates.empty()) throw UsageError("best_of_batch needs >= 1 candidate");
    BestOfBatch best;
    best.index = 0;
    best.j = jaccard(candidates[0], gt);
    for (size_t i = 1; i < candidates.size(); ++i) {
        const double j = jaccard(candidates[i], gt);
        if (j > best.j) {
            best.j = j;
            best.index = static_cast<int>(i);
        }
    }
    return best;
}

double mean_pairwise_jaccard(const std::vector<Mask>& masks) {
    if (masks.size() < 2) return 1.0;
    double s = 0.0;
    int n = 0;
    for (size_t i = 0; i < masks.size(); ++i) {
        for (size_t k = i + 1; k < masks.size(); ++k) {
            s += jaccard(masks[i], masks[k]);
            ++n;
        }
    }
    return s / n;
}

int count_distinct_masks(const std::vector<Mask>& masks) {
    std::set<std::vector<std::uint8_t>> seen;
    for (const Mask& m : masks) seen.insert(m.data);
    return static_cast<int>(seen.size());
}

}  // namespace mvprior
