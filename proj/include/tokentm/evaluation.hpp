// SPDX-License-Identifier: Apache-2.0
//
// Faithfulness evaluation: pixel-deletion curves (accuracy AUC, AOPC, LOdds)
// and heatmap-as-segmentation scoring against ground-truth masks.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tokentm/explainers.hpp"
#include "tokentm/model.hpp"
#include "tokentm/tensor.hpp"

namespace tokentm {

enum class PerturbOrder { kPositive, kNegative };
enum class FillMode { kZero, kDatasetMean };
enum class TargetMode { kPredicted, kGroundTruth };

const char* order_name(PerturbOrder order);
const char* fill_name(FillMode fill);
const char* target_name(TargetMode target);

/// 0.1, 0.2, ..., 0.9
std::vector<double> default_fractions();

struct PerturbSpec {
  std::vector<double> fractions = default_fractions();
  PerturbOrder order = PerturbOrder::kPositive;
  TargetMode target = TargetMode::kPredicted;
  FillMode fill = FillMode::kDatasetMean;

  /// Fractions must be strictly increasing and inside [0,1].
  void validate() const;
};

/// Bilinear resize of a [g×g] map to [height×width]. Sample positions are
/// pixel centers mapped into patch-center coordinates, clamped at the border.
Tensor upsample(const Tensor& grid_map, std::size_t height, std::size_t width);

/// Pixel indices (row-major) in removal order. Positive order is descending
/// relevance with ties taken in row-major order; negative order is its reverse.
std::vector<std::size_t> removal_order(const Tensor& relevance, PerturbOrder order);

/// round(fraction · pixels)
std::size_t removal_count(double fraction, std::size_t pixels);

/// Fill color in raw [0,1] pixel space.
std::array<double, 3> fill_color(FillMode fill, const Normalization& normalization);

/// Replaces the first removal_count(fraction, H·W) pixels of the removal order
/// with `fill` in every channel. `image` is [H×W×3], `relevance` is [H×W].
Tensor perturb_image(const Tensor& image, const Tensor& relevance, double fraction, PerturbOrder order,
                     const std::array<double, 3>& fill);

struct CurvePoint {
  double fraction = 0.0;
  double accuracy = 0.0;
};

/// Trapezoidal area under the curve divided by the fraction span.
double auc_accuracy(std::span<const CurvePoint> curve);

/// Target-class probability on the clean image and after each deletion step.
struct ProbabilityCurve {
  double clean = 0.0;
  std::vector<double> perturbed;
};

/// Mean over images of (1/(K+1)) Σ_{k=0..K} [p(x) − p(x_k)], with x_0 = x.
double aopc(std::span<const ProbabilityCurve> curves);

/// Mean over images of (1/(K+1)) Σ_{k=0..K} log(odds(x_k) / odds(x)), with
/// probabilities clamped to [1e-12, 1 − 1e-12].
double lodds(std::span<const ProbabilityCurve> curves);

/// All-point interpolated average precision of `scores` against binary labels.
/// Tied scores form one threshold. Returns 0 when there are no positives.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct SegmentationScores {
  double pixel_accuracy = 0.0;
  double mean_ap = 0.0;
  double mean_iou = 0.0;
};

/// Heatmaps are thresholded at their own mean (strictly greater is foreground).
/// Pixel accuracy and per-class IoU are pooled over all pixels of all images;
/// mIoU averages background and foreground IoU; mAP averages per-image AP over
/// images that contain foreground.
SegmentationScores segmentation_scores(std::span<const Tensor> heatmaps, std::span<const Tensor> masks);

/// Heatmap of independent uniform values, reproducible from `seed`.
Heatmap random_heatmap(std::size_t grid, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset-level drivers

struct EvalSample {
  std::string id;
  Tensor image;  // [H×W×3] raw pixels in [0,1]
  std::size_t label = 0;
  Tensor mask;   // [H×W] in {0,1}; empty when absent
};

/// A heatmap source: an explainer configuration, or the seeded random baseline.
struct EvalMethod {
  std::string name;
  std::optional<ExplainerConfig> explainer;

  static EvalMethod from_explainer(const ExplainerConfig& config);
  static EvalMethod random();
};

struct EvalOptions {
  PerturbSpec spec;
  std::vector<PerturbOrder> orders = {PerturbOrder::kPositive, PerturbOrder::kNegative};
  DType forward_dtype = DType::kReal64;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct CurveReport {
  std::vector<double> fractions;
  std::vector<double> accuracy;  // percent
  double auc = 0.0;
};

struct MethodReport {
  std::string name;
  std::optional<CurveReport> positive;
  std::optional<CurveReport> negative;
  std::optional<double> aopc;
  std::optional<double> lodds;
  std::optional<SegmentationScores> segmentation;  // reported as fractions in [0,1]
  std::size_t images = 0;
};

struct EvalReport {
  std::vector<MethodReport> methods;
  std::size_t images = 0;
};

nlohmann::json report_to_json(const EvalReport& report);

/// Heatmap for one sample and method; `target_class` is what gradients aim at.
Heatmap method_heatmap(const ModelBundle& bundle, const ForwardResult& clean, std::size_t target_class,
                       const EvalMethod& method, std::uint64_t seed, std::size_t sample_index);

EvalReport evaluate_perturbation(const ModelBundle& bundle, std::span<const EvalSample> samples,
                                 std::span<const EvalMethod> methods, const EvalOptions& options);

EvalReport evaluate_segmentation(const ModelBundle& bundle, std::span<const EvalSample> samples,
                                 std::span<const EvalMethod> methods, const EvalOptions& options);

}  // namespace tokentm
