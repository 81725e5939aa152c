#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvprior/common.hpp"
#include "mvprior/metrics.hpp"

using namespace mvprior;

namespace {

Mask rect_mask(int w, int h, int x0, int y0, int x1, int y1) {
    Mask m(w, h);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) m.at(x, y) = 1;
    }
    return m;
}

// Boundary pixels: foreground with a 4-neighbor background or image border.
std::vector<std::pair<int, int>> boundary_pixels(const Mask& m) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < m.h; ++y) {
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(x, y)) continue;
            const bool edge = x == 0 || x == m.w - 1 || y == 0 || y == m.h - 1 ||
                              !m.at(x - 1, y) || !m.at(x + 1, y) || !m.at(x, y - 1) ||
                              !m.at(x, y + 1);
            if (edge) out.emplace_back(x, y);
        }
    }
    return out;
}

// All-pairs distance oracle for the contour score.
double naive_boundary_f(const Mask& pred, const Mask& gt, int tol) {
    const auto bp = boundary_pixels(pred);
    const auto bg = boundary_pixels(gt);
    if (bp.empty() && bg.empty()) return 1.0;
    if (bp.empty() || bg.empty()) return 0.0;
    auto matched = [&](const std::vector<std::pair<int, int>>& a,
                       const std::vector<std::pair<int, int>>& b) {
        int hits = 0;
        for (const auto& p : a) {
            bool hit = false;
            for (const auto& q : b) {
                const double dx = p.first - q.first, dy = p.second - q.second;
                if (dx * dx + dy * dy <= static_cast<double>(tol) * tol) {
                    hit = true;
                    break;
                }
            }
            hits += hit;
        }
        return static_cast<double>(hits) / a.size();
    };
    const double precision = matched(bp, bg);
    const double recall = matched(bg, bp);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

TEST_CASE("region similarity basics") {
    const Mask a = rect_mask(8, 8, 1, 1, 4, 4);
    CHECK(jaccard(a, a) == doctest::Approx(1.0));

    const Mask b = rect_mask(8, 8, 5, 5, 7, 7);
    CHECK(jaccard(a, b) == doctest::Approx(0.0));

    // 2x2 vs 2x2 overlapping in a 2x1 strip: 2 / (4 + 4 - 2) = 1/3...
    const Mask c = rect_mask(8, 8, 1, 1, 2, 2);
    const Mask d = rect_mask(8, 8, 2, 1, 3, 2);
    CHECK(jaccard(c, d) == doctest::Approx(2.0 / 6.0));

    // ...and a half-overlap case: 2x2 shifted one row.
    const Mask e = rect_mask(8, 8, 1, 1, 2, 2);
    const Mask f = rect_mask(8, 8, 1, 2, 2, 3);
    CHECK(jaccard(e, f) == doctest::Approx(2.0 / 6.0));

    CHECK(jaccard(Mask(8, 8), Mask(8, 8)) == doctest::Approx(1.0));
    CHECK(jaccard(a, Mask(8, 8)) == doctest::Approx(0.0));
    CHECK_THROWS_AS(jaccard(a, Mask(4, 4)), UsageError);
}

TEST_CASE("default contour tolerance is ceil of 0.8 percent of the diagonal") {
    CHECK(default_boundary_tol(480, 854) == 8);   // diag ~ 979.7 -> 7.84
    CHECK(default_boundary_tol(128, 128) == 2);   // diag ~ 181 -> 1.45
    CHECK(default_boundary_tol(32, 32) == 1);
    CHECK(default_boundary_tol(1000, 0) == 8);
}

TEST_CASE("contour score basics") {
    const Mask a = rect_mask(32, 32, 5, 5, 20, 18);
    CHECK(boundary_f(a, a) == doctest::Approx(1.0));
    CHECK(boundary_f(Mask(32, 32), Mask(32, 32)) == doctest::Approx(1.0));
    CHECK(boundary_f(a, Mask(32, 32)) == doctest::Approx(0.0));
    CHECK(boundary_f(Mask(32, 32), a) == doctest::Approx(0.0));
}

TEST_CASE("a small shift inside the tolerance still scores high") {
    const Mask a = rect_mask(64, 64, 10, 10, 40, 30);
    const Mask b = rect_mask(64, 64, 11, 10, 41, 30);  // shifted by 1
    CHECK(boundary_f(a, b, 2) == doctest::Approx(1.0));
    // Far beyond the tolerance the match collapses.
    const Mask c = rect_mask(64, 64, 30, 35, 60, 55);
    CHECK(boundary_f(a, c, 2) < 0.3);
}

TEST_CASE("contour score matches the all-pairs oracle") {
    for (int trial = 0; trial < 12; ++trial) {
        Rng rng = Rng::derive(808, {static_cast<std::uint64_t>(trial)});
        Mask a(24, 24), b(24, 24);
        const int blobs = 1 + static_cast<int>(rng.uniform_int(0, 2));
        for (int i = 0; i < blobs; ++i) {
            const int ax = static_cast<int>(rng.uniform_int(2, 20));
            const int ay = static_cast<int>(rng.uniform_int(2, 20));
            const int bx = static_cast<int>(rng.uniform_int(2, 20));
            const int by = static_cast<int>(rng.uniform_int(2, 20));
            for (int dy = -2; dy <= 2; ++dy) {
                for (int dx = -2; dx <= 2; ++dx) {
                    if (std::abs(dx) + std::abs(dy) <= 2) {
                        a.at(ax + dx, ay + dy) = 1;
                        b.at(bx + dx, by + dy) = 1;
                    }
                }
            }
        }
        for (int tol = 1; tol <= 4; ++tol) {
            CHECK(boundary_f(a, b, tol) ==
                  doctest::Approx(naive_boundary_f(a, b, tol)).epsilon(1e-12));
        }
        // Symmetry of the F score.
        CHECK(boundary_f(a, b, 2) == doctest::Approx(boundary_f(b, a, 2)));
    }
}

TEST_CASE("contour score is translation invariant away from the border") {
    const Mask a = rect_mask(64, 64, 8, 8, 20, 16);
    const Mask b = rect_mask(64, 64, 9, 9, 21, 17);
    const Mask a2 = rect_mask(64, 64, 28, 30, 40, 38);
    const Mask b2 = rect_mask(64, 64, 29, 31, 41, 39);
    CHECK(boundary_f(a, b, 1) == doctest::Approx(boundary_f(a2, b2, 1)).epsilon(1e-12));
}

TEST_CASE("probability map error measures") {
    Mask gt(2, 2);
    gt.at(0, 0) = 1;
    gt.at(1, 1) = 1;
    const std::vector<double> perfect = {1.0, 0.0, 0.0, 1.0};
    CHECK(prob_mse(perfect, gt) == doctest::Approx(0.0));
    CHECK(prob_nll(perfect, gt) <= 1e-6);

    const std::vector<double> uniform = {0.5, 0.5, 0.5, 0.5};
    CHECK(prob_mse(uniform, gt) == doctest::Approx(0.25));
    CHECK(prob_nll(uniform, gt) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const std::vector<double> mixed = {0.8, 0.1, 0.3, 0.6};
    CHECK(prob_mse(mixed, gt) ==
          doctest::Approx((0.04 + 0.01 + 0.09 + 0.16) / 4.0).epsilon(1e-12));
    const double nll = -(std::log(0.8) + std::log(0.9) + std::log(0.7) +
                         std::log(0.6)) / 4.0;
    CHECK(prob_nll(mixed, gt) == doctest::Approx(nll).epsilon(1e-12));

    // The clamp keeps confident mistakes finite.
    const std::vector<double> wrong = {0.0, 1.0, 1.0, 0.0};
    CHECK(std::isfinite(prob_nll(wrong, gt)));
    CHECK(prob_nll(wrong, gt) == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
    CHECK_THROWS_AS(prob_mse({0.5}, gt), UsageError);
}

TEST_CASE("saliency scores: perfect, empty, and a hand case") {
    Mask gt(3, 3);
    gt.at(0, 0) = 1;
    gt.at(1, 0) = 1;
    gt.at(0, 1) = 1;

    std::vector<double> perfect(9, 0.0);
    perfect[0] = perfect[1] = perfect[3] = 1.0;
    const SaliencyScores sp = saliency_scores(perfect, gt);
    CHECK(sp.mae == doctest::Approx(0.0));
    CHECK(sp.f_beta == doctest::Approx(1.0));

    const std::vector<double> zeros(9, 0.0);
    const SaliencyScores sz = saliency_scores(zeros, gt);
    CHECK(sz.mae == doctest::Approx(3.0 / 9.0));
    CHECK(sz.f_beta == doctest::Approx(0.0));  // no true positives

    // Hand case: prediction 0.6 on two gt pixels, 0.3 on one background pixel.
    std::vector<double> hand(9, 0.0);
    hand[0] = 0.6;
    hand[1] = 0.6;
    hand[2] = 0.3;
    const SaliencyScores sh = saliency_scores(hand, gt);
    // MAE: (0.4 + 0.4 + 0.3 + 1.0) / 9.
    CHECK(sh.mae == doctest::Approx((0.4 + 0.4 + 0.3 + 1.0) / 9.0).epsilon(1e-12));
    // Threshold 2*mean = 1/3. Only the two 0.6 pixels clear it (0.3 does
    // not), so tp = 2, fp = 0, fn = 1: precision 1, recall 2/3.
    CHECK(sh.threshold == doctest::Approx(2.0 * 1.5 / 9.0).epsilon(1e-12));
    const double beta2 = 0.3, precision = 1.0, recall = 2.0 / 3.0;
    const double expect =
        (1 + beta2) * precision * recall / (beta2 * precision + recall);
    CHECK(sh.f_beta == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("saliency threshold saturates at one for bright predictions") {
    Mask gt(2, 2);
    gt.at(0, 0) = 1;
    gt.at(1, 0) = 1;
    gt.at(0, 1) = 1;
    gt.at(1, 1) = 1;
    // All-ones prediction on an all-ones mask: mean 1 -> threshold clamps to
    // 1; the binarization must still call these hits.
    const std::vector<double> ones(4, 1.0);
    const SaliencyScores s = saliency_scores(ones, gt);
    CHECK(s.threshold == doctest::Approx(1.0));
    CHECK(s.f_beta == doctest::Approx(1.0));
    CHECK(s.mae == doctest::Approx(0.0));
}

TEST_CASE("best of batch picks the highest overlap with low-index ties") {
    const Mask gt = rect_mask(16, 16, 4, 4, 11, 11);
    std::vector<Mask> cands;
    cands.push_back(rect_mask(16, 16, 0, 0, 3, 3));    // disjoint
    cands.push_back(rect_mask(16, 16, 5, 5, 11, 11));  // good overlap
    cands.push_back(rect_mask(16, 16, 4, 4, 10, 10));  // same J as above
    cands.push_back(rect_mask(16, 16, 13, 13, 15, 15));
    const BestOfBatch best = best_of_batch(cands, gt);
    CHECK(jaccard(cands[1], gt) == doctest::Approx(jaccard(cands[2], gt)));
    CHECK(best.index == 1);
    CHECK(best.j == doctest::Approx(jaccard(cands[1], gt)));

    const BestOfBatch exact = best_of_batch({gt, cands[0]}, gt);
    CHECK(exact.index == 0);
    CHECK(exact.j == doctest::Approx(1.0));

    // The winner is at least as good as the average candidate.
    double mean = 0.0;
    for (const Mask& m : cands) mean += jaccard(m, gt);
    mean /= cands.size();
    CHECK(best.j >= mean);
    CHECK_THROWS_AS(best_of_batch({}, gt), UsageError);
}

TEST_CASE("pairwise similarity and distinct-mask counting") {
    const Mask a = rect_mask(8, 8, 1, 1, 4, 4);
    const Mask b = rect_mask(8, 8, 1, 1, 4, 4);
    const Mask c = rect_mask(8, 8, 2, 2, 5, 5);
    CHECK(mean_pairwise_jaccard({a}) == doctest::Approx(1.0));
    CHECK(mean_pairwise_jaccard({a, b}) == doctest::Approx(1.0));
    const double jac = jaccard(a, c);
    CHECK(mean_pairwise_jaccard({a, b, c}) ==
          doctest::Approx((1.0 + jac + jac) / 3.0).epsilon(1e-12));
    CHECK(count_distinct_masks({a, b, c}) == 2);
    CHECK(count_distinct_masks({a, b}) == 1);
    CHECK(count_distinct_masks({}) == 0);
}
