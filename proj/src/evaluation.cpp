// SPDX-License-Identifier: Apache-2.0
#include "tokentm/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "tokentm/error.hpp"

namespace tokentm {

const char* order_name(PerturbOrder order) { return order == PerturbOrder::kPositive ? "positive" : "negative"; }
const char* fill_name(FillMode fill) { return fill == FillMode::kZero ? "zero" : "mean"; }
const char* target_name(TargetMode target) { return target == TargetMode::kPredicted ? "predicted" : "gt"; }

std::vector<double> default_fractions() {
  std::vector<double> out;
  for (int i = 1; i <= 9; ++i) out.push_back(i / 10.0);
  return out;
}

void PerturbSpec::validate() const {
  if (fractions.empty()) throw InputError("perturbation fractions are empty");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] >= 0.0 && fractions[i] <= 1.0)) throw InputError("perturbation fraction outside [0,1]");
    if (i > 0 && !(fractions[i] > fractions[i - 1])) {
      throw InputError("perturbation fractions must be strictly increasing");
    }
  }
}

Tensor upsample(const Tensor& grid_map, std::size_t height, std::size_t width) {
  if (grid_map.rank() != 2 || grid_map.rows() == 0 || grid_map.cols() == 0) {
    throw DimensionError("upsample: expected a non-empty matrix");
  }
  const std::size_t gh = grid_map.rows(), gw = grid_map.cols();
  auto axis = [](std::size_t i, std::size_t out_len, std::size_t in_len) {
    double src = (static_cast<double>(i) + 0.5) * static_cast<double>(in_len) / static_cast<double>(out_len) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_len - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in_len - 1);
    return std::tuple{lo, hi, src - static_cast<double>(lo)};
  };
  Tensor out({height, width});
  for (std::size_t y = 0; y < height; ++y) {
    const auto [y0, y1, ty] = axis(y, height, gh);
    for (std::size_t x = 0; x < width; ++x) {
      const auto [x0, x1, tx] = axis(x, width, gw);
      const double top = grid_map(y0, x0) * (1.0 - tx) + grid_map(y0, x1) * tx;
      const double bottom = grid_map(y1, x0) * (1.0 - tx) + grid_map(y1, x1) * tx;
      out(y, x) = top * (1.0 - ty) + bottom * ty;
    }
  }
  out.finalize("upsample");
  return out;
}

std::vector<std::size_t> removal_order(const Tensor& relevance, PerturbOrder order) {
  std::vector<std::size_t> idx(relevance.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto v = relevance.values();
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  if (order == PerturbOrder::kNegative) std::reverse(idx.begin(), idx.end());
  return idx;
}

std::size_t removal_count(double fraction, std::size_t pixels) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InputError("perturbation fraction outside [0,1]");
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pixels)));
}

std::array<double, 3> fill_color(FillMode fill, const Normalization& normalization) {
  if (fill == FillMode::kZero) return {0.0, 0.0, 0.0};
  return normalization.mean;
}

Tensor perturb_image(const Tensor& image, const Tensor& relevance, double fraction, PerturbOrder order,
                     const std::array<double, 3>& fill) {
  if (image.rank() != 3 || image.dim(2) != 3) throw DimensionError("perturb_image: expected an H×W×3 image");
  if (relevance.rank() != 2 || relevance.rows() != image.dim(0) || relevance.cols() != image.dim(1)) {
    throw DimensionError("perturb_image: relevance map " + shape_to_string(relevance.shape()) +
                         " does not match image " + shape_to_string(image.shape()));
  }
  const std::size_t count = removal_count(fraction, relevance.size());
  const auto order_idx = removal_order(relevance, order);
  Tensor out = image;
  auto v = out.mutable_values();
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t p = order_idx[r];
    for (std::size_t c = 0; c < 3; ++c) v[3 * p + c] = fill[c];
  }
  return out;
}

double auc_accuracy(std::span<const CurvePoint> curve) {
  if (curve.size() < 2) throw InputError("auc_accuracy: need at least two curve points");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double width = curve[i].fraction - curve[i - 1].fraction;
    if (!(width > 0.0)) throw InputError("auc_accuracy: fractions must be strictly increasing");
    area += 0.5 * width * (curve[i].accuracy + curve[i - 1].accuracy);
  }
  return area / (curve.back().fraction - curve.front().fraction);
}

namespace {

constexpr double kProbFloor = 1e-12;

double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

template <typename Term>
double mean_over_curves(std::span<const ProbabilityCurve> curves, const char* name, Term term) {
  if (curves.empty()) throw InputError(std::string(name) + ": no probability curves");
  double total = 0.0;
  for (const auto& c : curves) {
    if (c.perturbed.empty()) throw InputError(std::string(name) + ": empty probability curve");
    double acc = 0.0;  // the k = 0 term is zero
    for (double pk : c.perturbed) acc += term(c.clean, pk);
    total += acc / static_cast<double>(c.perturbed.size() + 1);
  }
  return total / static_cast<double>(curves.size());
}

}  // namespace

double aopc(std::span<const ProbabilityCurve> curves) {
  return mean_over_curves(curves, "aopc", [](double p0, double pk) { return p0 - pk; });
}

double lodds(std::span<const ProbabilityCurve> curves) {
  return mean_over_curves(curves, "lodds", [](double p0, double pk) {
    const double a = clamp_prob(p0), b = clamp_prob(pk);
    return std::log(b * (1.0 - a) / ((1.0 - b) * a));
  });
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("average_precision: length mismatch");
  const std::size_t positives = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  if (positives == 0) return 0.0;
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<double> recall, precision;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double s = scores[idx[i]];
    for (; i < idx.size() && scores[idx[i]] == s; ++i) {
      ++seen;
      if (labels[idx[i]]) ++tp;
    }
    recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
  }
  for (std::size_t i = precision.size() - 1; i-- > 0;) precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

SegmentationScores segmentation_scores(std::span<const Tensor> heatmaps, std::span<const Tensor> masks) {
  if (heatmaps.size() != masks.size()) throw DimensionError("segmentation_scores: heatmap/mask count mismatch");
  if (heatmaps.empty()) throw InputError("segmentation_scores: no images");
  std::size_t correct = 0, total = 0;
  std::array<std::size_t, 2> inter{0, 0}, uni{0, 0};
  double ap_sum = 0.0;
  std::size_t ap_count = 0;
  for (std::size_t k = 0; k < heatmaps.size(); ++k) {
    const Tensor& h = heatmaps[k];
    const Tensor& m = masks[k];
    if (h.shape() != m.shape()) {
      throw DimensionError("segmentation_scores: heatmap " + shape_to_string(h.shape()) + " vs mask " +
                           shape_to_string(m.shape()));
    }
    const double threshold = sum(h) / static_cast<double>(h.size());
    std::vector<std::uint8_t> truth(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
      const int pred = h[i] > threshold ? 1 : 0;
      const int gt = m[i] > 0.5 ? 1 : 0;
      truth[i] = static_cast<std::uint8_t>(gt);
      correct += pred == gt;
      for (int c = 0; c < 2; ++c) {
        inter[c] += (pred == c && gt == c);
        uni[c] += (pred == c || gt == c);
      }
    }
    total += h.size();
    if (std::any_of(truth.begin(), truth.end(), [](auto t) { return t != 0; })) {
      ap_sum += average_precision(h.values(), truth);
      ++ap_count;
    }
  }
  SegmentationScores out;
  out.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  double iou_sum = 0.0;
  for (int c = 0; c < 2; ++c) {
    iou_sum += uni[c] == 0 ? 1.0 : static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
  }
  out.mean_iou = iou_sum / 2.0;
  out.mean_ap = ap_count ? ap_sum / static_cast<double>(ap_count) : 0.0;
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Heatmap random_heatmap(std::size_t grid, std::uint64_t seed) {
  std::uint64_t state = seed;
  std::vector<double> values(grid * grid);
  for (auto& v : values) v = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
  Heatmap out;
  out.grid = grid;
  out.raw = values;
  out.values = Tensor({grid, grid}, std::move(values));
  return out;
}

EvalMethod EvalMethod::from_explainer(const ExplainerConfig& config) {
  std::string name = method_name(config.method);
  if (config.method == Method::kTokenTM) {
    if (!config.use_af) name += "-af";
    if (!config.use_length) name += "-length";
    if (!config.use_necc) name += "-necc";
  }
  if (config.depth_limit) name += "@" + std::to_string(*config.depth_limit);
  return {name, config};
}

EvalMethod EvalMethod::random() { return {"random", std::nullopt}; }

nlohmann::json report_to_json(const EvalReport& report) {
  using nlohmann::json;
  json methods = json::array();
  auto curve_json = [](const CurveReport& c) {
    return json{{"fractions", c.fractions}, {"accuracy", c.accuracy}, {"auc", c.auc}};
  };
  for (const auto& m : report.methods) {
    json e = {{"name", m.name}, {"images", m.images}};
    if (m.positive) e["positive"] = curve_json(*m.positive);
    if (m.negative) e["negative"] = curve_json(*m.negative);
    if (m.aopc) e["aopc"] = *m.aopc;
    if (m.lodds) e["lodds"] = *m.lodds;
    if (m.segmentation) {
      e["pixel_accuracy"] = 100.0 * m.segmentation->pixel_accuracy;
      e["mAP"] = 100.0 * m.segmentation->mean_ap;
      e["mIoU"] = 100.0 * m.segmentation->mean_iou;
    }
    methods.push_back(std::move(e));
  }
  return json{{"images", report.images}, {"methods", std::move(methods)}};
}

namespace {

// Runs fn(i) for i in [0, count) on up to `threads` workers. Results must be
// written to per-index slots; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

const ForwardOptions kInferenceOnly = [] {
  ForwardOptions o;
  o.record_traces = false;
  return o;
}();

std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t state = seed ^ (0x5851f42d4c957f2dULL * (index + 1));
  return splitmix64(state);
}

std::size_t target_for(const EvalSample& sample, const ForwardResult& clean, TargetMode mode, std::size_t n_classes) {
  const std::size_t target = mode == TargetMode::kPredicted ? clean.predicted_class() : sample.label;
  if (target >= n_classes) throw InputError("sample " + sample.id + ": label out of range");
  return target;
}

}  // namespace

Heatmap method_heatmap(const ModelBundle& bundle, const ForwardResult& clean, std::size_t target_class,
                       const EvalMethod& method, std::uint64_t seed, std::size_t sample_index) {
  if (!method.explainer) return random_heatmap(bundle.config().grid(), sample_seed(seed, sample_index));
  return explain_forward(bundle, clean, target_class, *method.explainer);
}

EvalReport evaluate_perturbation(const ModelBundle& bundle_in, std::span<const EvalSample> samples,
                                 std::span<const EvalMethod> methods, const EvalOptions& options) {
  options.spec.validate();
  if (samples.empty()) throw InputError("evaluate_perturbation: no samples");
  const ModelBundle bundle = bundle_in.dtype() == DType::kReal64 ? bundle_in : bundle_in.as(DType::kReal64);
  const ModelBundle forward_bundle = options.forward_dtype == DType::kReal64 ? bundle : bundle.as(options.forward_dtype);
  const auto fill = fill_color(options.spec.fill, bundle.normalization());
  const std::size_t n_fracs = options.spec.fractions.size();
  const std::size_t n_classes = bundle.config().n_classes;

  struct SampleResult {
    // [method][order][fraction]
    std::vector<std::vector<std::vector<std::uint8_t>>> hit;
    std::vector<ProbabilityCurve> positive_probs;  // per method
  };
  std::vector<SampleResult> results(samples.size());

  parallel_for(samples.size(), options.threads, [&](std::size_t i) {
    const EvalSample& sample = samples[i];
    const ForwardResult clean = forward(bundle, tokenize(bundle, normalize_image(sample.image, bundle.normalization())));
    const std::size_t target = target_for(sample, clean, options.spec.target, n_classes);
    const double clean_prob =
        forward(forward_bundle, tokenize(forward_bundle, normalize_image(sample.image, bundle.normalization())),
                kInferenceOnly)
            .probs[target];

    SampleResult& r = results[i];
    r.hit.resize(methods.size());
    r.positive_probs.resize(methods.size());
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const Heatmap heatmap = method_heatmap(bundle, clean, target, methods[m], options.seed, i);
      const Tensor relevance = upsample(heatmap.values, sample.image.dim(0), sample.image.dim(1));
      r.positive_probs[m].clean = clean_prob;
      for (PerturbOrder order : options.orders) {
        std::vector<std::uint8_t> hits;
        for (double f : options.spec.fractions) {
          const Tensor perturbed = perturb_image(sample.image, relevance, f, order, fill);
          const ForwardResult fr =
              forward(forward_bundle, tokenize(forward_bundle, normalize_image(perturbed, bundle.normalization())),
                      kInferenceOnly);
          hits.push_back(fr.predicted_class() == target ? 1 : 0);
          if (order == PerturbOrder::kPositive) r.positive_probs[m].perturbed.push_back(fr.probs[target]);
        }
        r.hit[m].push_back(std::move(hits));
      }
    }
  });

  EvalReport report;
  report.images = samples.size();
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodReport mr;
    mr.name = methods[m].name;
    mr.images = samples.size();
    for (std::size_t o = 0; o < options.orders.size(); ++o) {
      CurveReport curve;
      curve.fractions = options.spec.fractions;
      std::vector<CurvePoint> points;
      for (std::size_t f = 0; f < n_fracs; ++f) {
        std::size_t hits = 0;
        for (const auto& r : results) hits += r.hit[m][o][f];
        const double acc = 100.0 * static_cast<double>(hits) / static_cast<double>(samples.size());
        curve.accuracy.push_back(acc);
        points.push_back({options.spec.fractions[f], acc});
      }
      curve.auc = points.size() >= 2 ? auc_accuracy(points) : points.front().accuracy;
      if (options.orders[o] == PerturbOrder::kPositive) {
        mr.positive = std::move(curve);
      } else {
        mr.negative = std::move(curve);
      }
    }
    if (std::find(options.orders.begin(), options.orders.end(), PerturbOrder::kPositive) != options.orders.end()) {
      std::vector<ProbabilityCurve> curves;
      for (const auto& r : results) curves.push_back(r.positive_probs[m]);
      mr.aopc = aopc(curves);
      mr.lodds = lodds(curves);
    }
    report.methods.push_back(std::move(mr));
  }
  return report;
}

EvalReport evaluate_segmentation(const ModelBundle& bundle_in, std::span<const EvalSample> samples,
                                 std::span<const EvalMethod> methods, const EvalOptions& options) {
  if (samples.empty()) throw InputError("evaluate_segmentation: no samples");
  std::vector<std::string> missing;
  for (const auto& s : samples) {
    if (s.mask.empty()) missing.push_back(s.id);
  }
  if (!missing.empty()) {
    std::string msg = "segmentation needs a mask for every record; missing:";
    for (const auto& id : missing) msg += "\n  " + id;
    throw InputError(msg);
  }
  const ModelBundle bundle = bundle_in.dtype() == DType::kReal64 ? bundle_in : bundle_in.as(DType::kReal64);
  const std::size_t n_classes = bundle.config().n_classes;

  // [method][sample]
  std::vector<std::vector<Tensor>> maps(methods.size(), std::vector<Tensor>(samples.size()));
  parallel_for(samples.size(), options.threads, [&](std::size_t i) {
    const EvalSample& sample = samples[i];
    const ForwardResult clean = forward(bundle, tokenize(bundle, normalize_image(sample.image, bundle.normalization())));
    const std::size_t target = target_for(sample, clean, options.spec.target, n_classes);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const Heatmap heatmap = method_heatmap(bundle, clean, target, methods[m], options.seed, i);
      maps[m][i] = upsample(heatmap.values, sample.mask.rows(), sample.mask.cols());
    }
  });

  std::vector<Tensor> masks;
  for (const auto& s : samples) masks.push_back(s.mask);
  EvalReport report;
  report.images = samples.size();
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodReport mr;
    mr.name = methods[m].name;
    mr.images = samples.size();
    mr.segmentation = segmentation_scores(maps[m], masks);
    report.methods.push_back(std::move(mr));
  }
  return report;
}

}  // namespace tokentm
