#pragma once

#include <string>
#include <vector>

#include "dcelanm/ops.hpp"

namespace dcelanm {

/// Tversky coefficient parameters. alpha weighs false positives, beta false
/// negatives; alpha=beta=0.5 reduces to Dice, alpha=beta=1 to Jaccard.
struct TverskyParams {
    double alpha = 0.5;
    double beta = 0.5;
    double smooth = 1.0;  // added to numerator and denominator
};

/// Eq.-style weighted combination of the segmentation and reconstruction
/// terms: loss = seg_weight * tversky + recon_weight * recon_mse.
struct LossWeights {
    double seg_weight = 0.8;
    double recon_weight = 0.2;
};

/// Soft Tversky coefficient over the whole tensor:
/// T = (sum p*g + s) / (sum p*g + alpha*sum p*(1-g) + beta*sum (1-p)*g + s).
/// pred must be a probability map, target binary {0,1}.
/// `pixel_weights` optionally scales every soft count per element.
template <typename T>
Tensor<T> tversky_coeff(const Tensor<T>& pred, const Tensor<T>& target, const TverskyParams& params,
                        const Tensor<T>* pixel_weights = nullptr);

/// 1 - tversky_coeff, differentiable in pred.
template <typename T>
Tensor<T> tversky_loss(const Tensor<T>& pred, const Tensor<T>& target, const TverskyParams& params,
                       const Tensor<T>* pixel_weights = nullptr);

/// Mean of squared differences.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b);

/// weights.seg_weight * seg_loss + weights.recon_weight * recon_loss.
template <typename T>
Tensor<T> combined_loss(const Tensor<T>& seg_loss, const Tensor<T>& recon_loss, const LossWeights& weights);

/// Optional hard-pixel emphasis map: w = 1 + lambda * |boxmean(target, k) - target|,
/// computed on the binary target only (no gradient path). k must be odd.
template <typename T>
Tensor<T> boundary_weight_map(const Tensor<T>& target, int64_t k = 31, double lambda = 5.0);

/// Thresholded evaluation metrics.
struct MetricReport {
    double mdice = 0.0;
    double miou = 0.0;
    double mpre = 0.0;
    double threshold = 0.5;
    std::vector<std::string> ids;
    std::vector<double> dice, iou, precision;

    /// Tab-separated text form: one row per sample plus the three means.
    std::string to_text() const;
};

/// Per-sample Dice / IoU / Precision at `threshold`, means across the batch.
/// pred_batch[B,1,H,W] probabilities, target_batch binary. The empty/empty
/// convention scores 1.0 on all three metrics; an empty prediction against a
/// non-empty target (or vice versa) scores 0.
template <typename T>
MetricReport metrics(const Tensor<T>& pred_batch, const Tensor<T>& target_batch, double threshold = 0.5,
                     const std::vector<std::string>& ids = {});

}  // namespace dcelanm
