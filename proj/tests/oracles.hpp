// SPDX-License-Identifier: Apache-2.0
//
// Independent reference computations for tests. Everything here works on
// plain nested vectors and reads weights straight from the bundle; none of it
// calls the library kernels, explainers or metrics it is used to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <vector>

#include "tokentm/gradients.hpp"
#include "tokentm/model.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

inline Mat to_mat(const tokentm::Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, Vec(c, 0.0)); }

inline Mat eye(std::size_t n) {
  Mat m = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) m[i][i] = 1.0;
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) acc += a[i][k] * b[k][j];
      out[i][j] = acc;
    }
  return out;
}

inline double norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Row softmax evaluated in long double.
inline Vec softmax(const Vec& x) {
  long double mx = *std::max_element(x.begin(), x.end()), total = 0.0L;
  std::vector<long double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) total += e[i] = std::exp(static_cast<long double>(x[i]) - mx);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(e[i] / total);
  return out;
}

// Two-pass mean / biased variance.
inline Vec layernorm(const Vec& x, const Vec& g, const Vec& b, double eps) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + eps) * g[i] + b[i];
  return out;
}

// What one sublayer of the straight-line forward saw.
struct Layer {
  bool mhsa = true;
  Mat ref;                 // post-LN input
  std::vector<Mat> A, Eh;  // per head (MHSA)
  Mat Ef;                  // FFN transform
};

// Straight-line pre-LN ViT forward from input tokens.
inline std::vector<Layer> forward(const tokentm::ModelBundle& bundle, Mat x) {
  const auto& cfg = bundle.config();
  const std::size_t n = x.size(), d = cfg.d_model, H = cfg.n_heads, dh = d / H;
  auto W = [&](std::size_t b, const char* leaf) { return to_mat(bundle.block_weight(b, leaf)); };
  auto V = [&](std::size_t b, const char* leaf) {
    const auto v = bundle.block_weight(b, leaf).values();
    return Vec(v.begin(), v.end());
  };
  std::vector<Layer> layers;
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    Layer att;
    for (const auto& row : x) att.ref.push_back(layernorm(row, V(b, "ln1.g"), V(b, "ln1.b"), cfg.layernorm_eps));
    const Mat wq = W(b, "attn.wq"), wk = W(b, "attn.wk"), wv = W(b, "attn.wv"), wo = W(b, "attn.wo");
    const Vec bq = V(b, "attn.bq"), bk = V(b, "attn.bk"), bv = V(b, "attn.bv"), bo = V(b, "attn.bo");
    Mat mixed = zeros(n, d);
    for (std::size_t h = 0; h < H; ++h) {
      Mat q = zeros(n, dh), k = zeros(n, dh), v = zeros(n, dh);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < dh; ++c) {
          const std::size_t col = h * dh + c;
          q[i][c] = bq[col], k[i][c] = bk[col], v[i][c] = bv[col];
          for (std::size_t m = 0; m < d; ++m) {
            q[i][c] += att.ref[i][m] * wq[m][col];
            k[i][c] += att.ref[i][m] * wk[m][col];
            v[i][c] += att.ref[i][m] * wv[m][col];
          }
        }
      Mat A(n), Eh = zeros(n, d);
      for (std::size_t i = 0; i < n; ++i) {
        Vec s(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t c = 0; c < dh; ++c) s[j] += q[i][c] * k[j][c];
          s[j] /= std::sqrt(static_cast<double>(dh));
        }
        A[i] = softmax(s);
        for (std::size_t o = 0; o < d; ++o) {
          Eh[i][o] = bo[o] / static_cast<double>(H);
          for (std::size_t c = 0; c < dh; ++c) Eh[i][o] += v[i][c] * wo[h * dh + c][o];
        }
      }
      const Mat AE = matmul(A, Eh);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < d; ++o) mixed[i][o] += AE[i][o];
      att.A.push_back(std::move(A));
      att.Eh.push_back(std::move(Eh));
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < d; ++o) x[i][o] += mixed[i][o];
    layers.push_back(std::move(att));

    Layer ffn;
    ffn.mhsa = false;
    for (const auto& row : x) ffn.ref.push_back(layernorm(row, V(b, "ln2.g"), V(b, "ln2.b"), cfg.layernorm_eps));
    const Mat w1 = W(b, "ffn.w1"), w2 = W(b, "ffn.w2");
    const Vec b1 = V(b, "ffn.b1"), b2 = V(b, "ffn.b2");
    ffn.Ef = zeros(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      Vec hid(cfg.d_ff);
      for (std::size_t u = 0; u < cfg.d_ff; ++u) {
        double z = b1[u];
        for (std::size_t m = 0; m < d; ++m) z += ffn.ref[i][m] * w1[m][u];
        hid[u] = 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0)));
      }
      for (std::size_t o = 0; o < d; ++o) {
        ffn.Ef[i][o] = b2[o];
        for (std::size_t u = 0; u < cfg.d_ff; ++u) ffn.Ef[i][o] += hid[u] * w2[u][o];
        x[i][o] += ffn.Ef[i][o];
      }
    }
    layers.push_back(std::move(ffn));
  }
  return layers;
}

// Diagonal of W: length ratio times softmax of per-token cosines.
inline Vec transform_weights(const Mat& E, const Mat& Et) {
  const std::size_t n = E.size();
  Vec ratio(n), cosv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = norm(E[i]), b = norm(Et[i]);
    double dot = 0.0;
    for (std::size_t c = 0; c < E[i].size(); ++c) dot += E[i][c] * Et[i][c];
    ratio[i] = b / a;
    cosv[i] = dot / (a * b);
  }
  const Vec nec = softmax(cosv);
  Vec w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = ratio[i] * nec[i];
  return w;
}

// Full TokenTM [CLS]-row heatmap (min-max normalized), using `grads` for ∂p/∂A.
inline Vec tokentm_heatmap(const tokentm::ModelBundle& bundle, const Mat& tokens, const tokentm::AttnGradSet& grads) {
  const auto layers = forward(bundle, tokens);
  const std::size_t n = tokens.size();
  Mat C = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) C[i][i] = norm(tokens[i]);
  for (std::size_t s = 0; s < layers.size(); ++s) {
    const Layer& L = layers[s];
    Mat U = eye(n);
    if (L.mhsa) {
      const auto& G = grads.for_sublayer(s).heads;
      const double H = static_cast<double>(L.A.size());
      for (std::size_t h = 0; h < L.A.size(); ++h) {
        const Vec w = transform_weights(L.ref, L.Eh[h]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) U[i][j] += std::max(G[h](i, j), 0.0) * L.A[h][i][j] * w[j] / H;
      }
    } else {
      const Vec w = transform_weights(L.ref, L.Ef);
      for (std::size_t i = 0; i < n; ++i) U[i][i] += w[i];
    }
    C = matmul(U, C);
  }
  Vec row(C[0].begin() + 1, C[0].end());
  const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
  const double a = *lo, span = *hi - *lo;
  for (auto& v : row) v = span > 0.0 ? (v - a) / span : 0.0;
  return row;
}

// Central finite differences of p(c) with respect to every attention entry.
// The perturbed entry is written into A after the softmax and the row is not
// renormalized; everything downstream is recomputed.
inline std::vector<std::vector<Mat>> fd_attention_gradients(const tokentm::ModelBundle& bundle,
                                                            const tokentm::Tensor& tokens, std::size_t target,
                                                            double step = 1e-5) {
  const auto& cfg = bundle.config();
  const std::size_t n = tokens.rows();
  auto prob = [&](std::size_t sublayer, std::size_t head, std::size_t i, std::size_t j, double delta) {
    tokentm::ForwardOptions opts;
    opts.record_traces = false;
    opts.attention_hook = [&](std::size_t s, std::size_t h, tokentm::Tensor& A) {
      if (s == sublayer && h == head) A(i, j) += delta;
    };
    return tokentm::forward(bundle, tokens, opts).probs[target];
  };
  std::vector<std::vector<Mat>> out;
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    std::vector<Mat> heads;
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      Mat g = zeros(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          g[i][j] = (prob(2 * b, h, i, j, step) - prob(2 * b, h, i, j, -step)) / (2.0 * step);
      heads.push_back(std::move(g));
    }
    out.push_back(std::move(heads));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric oracles

inline double trapezoid(const Vec& x, const Vec& y) {
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) area += (x[i + 1] - x[i]) * (y[i] + y[i + 1]) / 2.0;
  return area / (x.back() - x.front());
}

// One image: (1/(K+1)) Σ_{k=0..K} (p0 − p_k) with p_0 = p0.
inline double aopc_one(double p0, const Vec& pk) {
  double s = 0.0;
  for (double p : pk) s += p0 - p;
  return s / static_cast<double>(pk.size() + 1);
}

inline double lodds_one(double p0, const Vec& pk) {
  auto clampp = [](double p) { return std::min(std::max(p, 1e-12), 1.0 - 1e-12); };
  auto logit = [&](double p) { return std::log(clampp(p)) - std::log(1.0 - clampp(p)); };
  double s = 0.0;
  for (double p : pk) s += logit(p) - logit(p0);
  return s / static_cast<double>(pk.size() + 1);
}

// Average precision by brute force: for every distinct threshold t, count
// predictions with score >= t; precision envelope = max precision at any
// threshold with recall at least as large.
inline double average_precision(const Vec& scores, const std::vector<int>& labels) {
  const std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  const double positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) return 0.0;
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  for (double t : thresholds) {
    double tp = 0, pp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= t) pp += 1, tp += labels[i];
    pr.emplace_back(tp / positives, tp / pp);
  }
  double ap = 0.0, prev = 0.0;
  for (const auto& [r, p] : pr) {
    double best = 0.0;
    for (const auto& [r2, p2] : pr)
      if (r2 >= r) best = std::max(best, p2);
    ap += (r - prev) * best;
    prev = r;
  }
  return ap;
}

struct Seg {
  double pixel_accuracy, mean_ap, mean_iou;
};

// Mean-threshold segmentation scores with pooled counts.
inline Seg segmentation(const std::vector<Vec>& heat, const std::vector<std::vector<int>>& mask) {
  double tp = 0, tn = 0, fp = 0, fn = 0, ap = 0, ap_n = 0;
  for (std::size_t k = 0; k < heat.size(); ++k) {
    double mean = 0.0;
    for (double v : heat[k]) mean += v;
    mean /= static_cast<double>(heat[k].size());
    for (std::size_t i = 0; i < heat[k].size(); ++i) {
      const bool p = heat[k][i] > mean, g = mask[k][i] == 1;
      tp += p && g, tn += !p && !g, fp += p && !g, fn += !p && g;
    }
    if (std::count(mask[k].begin(), mask[k].end(), 1) > 0) ap += average_precision(heat[k], mask[k]), ap_n += 1;
  }
  auto iou = [](double i, double u) { return u == 0 ? 1.0 : i / u; };
  return {(tp + tn) / (tp + tn + fp + fn), ap_n > 0 ? ap / ap_n : 0.0,
          (iou(tp, tp + fp + fn) + iou(tn, tn + fp + fn)) / 2.0};
}

}  // namespace oracle
