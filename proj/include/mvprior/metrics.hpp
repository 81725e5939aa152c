#pragma once

#include <vector>

#include "mvprior/image.hpp"

namespace mvprior {

// Region similarity |pred ∩ gt| / |pred ∪ gt|; two empty masks score 1.
double jaccard(const Mask& pred, const Mask& gt);

// Default matching tolerance for boundary_f: 0.8% of the image diagonal,
// rounded up.
int default_boundary_tol(int w, int h);

// Contour match score. Boundaries are foreground pixels with a 4-neighbor
// that is background or outside the image. Precision is the fraction of
// pred-boundary pixels within Euclidean distance tol of the gt boundary
// (computed by disc dilation); recall is symmetric; F = 2PR/(P+R) with 0
// when P+R = 0 and 1 when both boundaries are empty.
double boundary_f(const Mask& pred, const Mask& gt, int tol);
double boundary_f(const Mask& pred, const Mask& gt);

// Mean squared difference between a foreground-probability map (row-major,
// w*h values) and a binary mask.
double prob_mse(const std::vector<double>& pred, const Mask& gt);

// Mean negative log-probability of the true class, probabilities clamped
// at 1e-7 from below.
double prob_nll(const std::vector<double>& pred, const Mask& gt);

struct SaliencyScores {
    double mae = 0.0;
    double f_beta = 0.0;
    double threshold = 0.0;
};

// MAE = mean |pred - gt|. F-measure with beta^2 = 0.3 at the adaptive
// threshold 2*mean(pred) clamped to [0,1].
SaliencyScores saliency_scores(const std::vector<double>& pred, const Mask& gt);

struct BestOfBatch {
    int index = 0;
    double j = 0.0;
};

// Index of the candidate with the greatest region similarity to gt;
// ties broken by the lowest index.
BestOfBatch best_of_batch(const std::vector<Mask>& candidates, const Mask& gt);

// Mean of J over all unordered pairs of masks; 1 when fewer than 2 masks.
double mean_pairwise_jaccard(const std::vector<Mask>& masks);

// Number of distinct masks in the list (exact pixel equality).
int count_distinct_masks(const std::vector<Mask>& masks);

}  // namespace mvprior
