#include "warpcell/matching.hpp"

#include <cmath>
#include <stdexcept>

namespace warpcell {

Tensor avg_pool_spatial(const Tensor& map) {
  if (map.rank() != 3) throw std::invalid_argument("avg_pool_spatial: map must be [H, W, C]");
  const int h = map.dims[0], w = map.dims[1], c = map.dims[2];
  Tensor out = Tensor::zeros({c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) out.at(ch) += map.at(y, x, ch);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (auto& v : out.data) v *= inv;
  return out;
}

Tensor avg_pool_spatial_vjp(const Tensor& map, const Tensor& grad_out) {
  const int h = map.dims[0], w = map.dims[1], c = map.dims[2];
  Tensor g = zeros_like(map);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) g.at(y, x, ch) = grad_out.at(ch) * inv;
  return g;
}

// ---------------------------------------------------------------------------
// RoI pooling

namespace {

struct RoiSampling {
  std::vector<std::array<double, 2>> coords;  // (y, x) per sample, bin-major
  int ns_y = 1, ns_x = 1;
};

RoiSampling roi_sampling(const Tensor& map, const Box& box, int out_h, int out_w) {
  if (map.rank() != 3) throw std::invalid_argument("roi_pool: map must be [H, W, C]");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("roi_pool: output dims must be >= 1");
  if (box.ymin < 0.0 || box.xmin < 0.0 || box.ymax > 1.0 || box.xmax > 1.0 ||
      box.ymin > box.ymax || box.xmin > box.xmax) {
    throw std::invalid_argument("roi_pool: box outside [0,1] or inverted");
  }
  const double y0 = box.ymin * map.dims[0], y1 = box.ymax * map.dims[0];
  const double x0 = box.xmin * map.dims[1], x1 = box.xmax * map.dims[1];
  if (y1 - y0 <= 0.0 || x1 - x0 <= 0.0) throw std::invalid_argument("roi_pool: zero-area box");

  const double bin_h = (y1 - y0) / out_h, bin_w = (x1 - x0) / out_w;
  RoiSampling s;
  s.ns_y = std::max(1, static_cast<int>(std::ceil(bin_h)));
  s.ns_x = std::max(1, static_cast<int>(std::ceil(bin_w)));
  s.coords.reserve(static_cast<std::size_t>(out_h) * out_w * s.ns_y * s.ns_x);
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j)
      for (int sy = 0; sy < s.ns_y; ++sy)
        for (int sx = 0; sx < s.ns_x; ++sx) {
          // corner-space sample, shifted by -0.5 into pixel-center space
          const double y = y0 + i * bin_h + (sy + 0.5) * bin_h / s.ns_y - 0.5;
          const double x = x0 + j * bin_w + (sx + 0.5) * bin_w / s.ns_x - 0.5;
          s.coords.push_back({y, x});
        }
  return s;
}

}  // namespace

Tensor roi_pool(const Tensor& map, const Box& box, int out_h, int out_w) {
  const RoiSampling s = roi_sampling(map, box, out_h, out_w);
  const Tensor samples = bilinear_sample(map, s.coords);
  const int c = map.dims[2], per_bin = s.ns_y * s.ns_x;
  Tensor out = Tensor::zeros({out_h, out_w, c});
  std::size_t row = 0;
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j) {
      for (int k = 0; k < per_bin; ++k, ++row)
        for (int ch = 0; ch < c; ++ch) out.at(i, j, ch) += samples.at(static_cast<int>(row), ch);
      for (int ch = 0; ch < c; ++ch) out.at(i, j, ch) /= per_bin;
    }
  return out;
}

Tensor roi_pool_vjp(const Tensor& map, const Box& box, int out_h, int out_w,
                    const Tensor& grad_out) {
  const RoiSampling s = roi_sampling(map, box, out_h, out_w);
  const int c = map.dims[2], per_bin = s.ns_y * s.ns_x;
  Tensor grad_samples = Tensor::zeros({static_cast<int>(s.coords.size()), c});
  std::size_t row = 0;
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j)
      for (int k = 0; k < per_bin; ++k, ++row)
        for (int ch = 0; ch < c; ++ch)
          grad_samples.at(static_cast<int>(row), ch) = grad_out.at(i, j, ch) / per_bin;

  Tensor grad_map = zeros_like(map);
  bilinear_sample_vjp_accumulate(map, s.coords, grad_samples, &grad_map, nullptr);
  return grad_map;
}

// ---------------------------------------------------------------------------
// attention

AttentionParams make_attention(int channels, Rng& rng, double scale, int dim) {
  if (dim <= 0) dim = std::max(1, channels / 4);
  AttentionParams p;
  p.w_q = Tensor({dim, channels});
  p.w_r = Tensor({dim, channels});
  p.w = Tensor({dim});
  p.b_p = Tensor::zeros({dim});
  for (auto& v : p.w_q.data) v = rng.normal() * scale;
  for (auto& v : p.w_r.data) v = rng.normal() * scale;
  for (auto& v : p.w.data) v = rng.normal() * scale;
  return p;
}

namespace {

struct AttentionForward {
  std::vector<Tensor> e;          // tanh outputs, [D] per clip
  std::vector<Tensor> q_means;    // [C] per clip
  Tensor r_mean;                  // [C]
  std::vector<double> alpha;
};

AttentionForward attention_forward(const std::vector<Tensor>& query_feats,
                                   const Tensor& proposal_feat, const AttentionParams& params) {
  if (query_feats.empty()) throw std::invalid_argument("attention_pool: empty query list");
  const int d = params.w_q.dims[0], c = params.w_q.dims[1];
  if (proposal_feat.dims[2] != c) {
    throw std::invalid_argument("attention_pool: proposal has " +
                                std::to_string(proposal_feat.dims[2]) + " channels, params expect " +
                                std::to_string(c));
  }

  AttentionForward f;
  f.r_mean = avg_pool_spatial(proposal_feat);
  Tensor wr_r = Tensor::zeros({d});
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < c; ++j) wr_r.at(i) += params.w_r.at(i, j) * f.r_mean.at(j);

  std::vector<double> logits;
  for (const Tensor& q : query_feats) {
    if (!q.same_shape(*query_feats.begin()) || q.dims[2] != c) {
      throw std::invalid_argument("attention_pool: inconsistent query feature shape");
    }
    Tensor qm = avg_pool_spatial(q);
    Tensor z = Tensor::zeros({d});
    for (int i = 0; i < d; ++i) {
      double acc = params.b_p.at(i) + wr_r.at(i);
      for (int j = 0; j < c; ++j) acc += params.w_q.at(i, j) * qm.at(j);
      z.at(i) = std::tanh(acc);
    }
    double logit = params.b_s;
    for (int i = 0; i < d; ++i) logit += params.w.at(i) * z.at(i);
    logits.push_back(logit);
    f.e.push_back(std::move(z));
    f.q_means.push_back(std::move(qm));
  }

  double m = logits[0];
  for (double l : logits) m = std::max(m, l);
  double denom = 0.0;
  f.alpha.resize(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    f.alpha[j] = std::exp(logits[j] - m);
    denom += f.alpha[j];
  }
  for (double& a : f.alpha) a /= denom;
  return f;
}

}  // namespace

Tensor attention_pool(const std::vector<Tensor>& query_feats, const Tensor& proposal_feat,
                      const AttentionParams& params, std::vector<double>* alpha_out) {
  const AttentionForward f = attention_forward(query_feats, proposal_feat, params);
  Tensor out = zeros_like(query_feats[0]);
  for (std::size_t j = 0; j < query_feats.size(); ++j) axpy(out, f.alpha[j], query_feats[j]);
  if (alpha_out) *alpha_out = f.alpha;
  return out;
}

AttentionGrads attention_pool_vjp(const std::vector<Tensor>& query_feats,
                                  const Tensor& proposal_feat, const AttentionParams& params,
                                  const Tensor& grad_out) {
  const AttentionForward f = attention_forward(query_feats, proposal_feat, params);
  const int d = params.w_q.dims[0], c = params.w_q.dims[1];
  const std::size_t n = query_feats.size();

  AttentionGrads g;
  g.proposal_feat = zeros_like(proposal_feat);
  g.params.w_q = zeros_like(params.w_q);
  g.params.w_r = zeros_like(params.w_r);
  g.params.w = zeros_like(params.w);
  g.params.b_p = zeros_like(params.b_p);
  g.params.b_s = 0.0;
  g.query_feats.reserve(n);
  for (const Tensor& q : query_feats) g.query_feats.push_back(zeros_like(q));

  // direct path out = sum alpha_j q_j, plus alpha cotangents
  std::vector<double> alpha_bar(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    axpy(g.query_feats[j], f.alpha[j], grad_out);
    alpha_bar[j] = dot(grad_out, query_feats[j]);
  }

  // softmax: l_bar_j = alpha_j (alpha_bar_j - sum_k alpha_k alpha_bar_k)
  double mixture = 0.0;
  for (std::size_t j = 0; j < n; ++j) mixture += f.alpha[j] * alpha_bar[j];
  std::vector<double> logit_bar(n);
  for (std::size_t j = 0; j < n; ++j) logit_bar[j] = f.alpha[j] * (alpha_bar[j] - mixture);

  Tensor z_bar_sum = Tensor::zeros({d});
  const double hw = static_cast<double>(query_feats[0].dims[0]) * query_feats[0].dims[1];
  for (std::size_t j = 0; j < n; ++j) {
    g.params.b_s += logit_bar[j];
    Tensor z_bar = Tensor::zeros({d});
    for (int i = 0; i < d; ++i) {
      g.params.w.at(i) += logit_bar[j] * f.e[j].at(i);
      const double e = f.e[j].at(i);
      z_bar.at(i) = logit_bar[j] * params.w.at(i) * (1.0 - e * e);
      z_bar_sum.at(i) += z_bar.at(i);
      g.params.b_p.at(i) += z_bar.at(i);
    }
    // W_q outer product and the query-mean chain, spread uniformly over pixels
    Tensor qm_bar = Tensor::zeros({c});
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < c; ++k) {
        g.params.w_q.at(i, k) += z_bar.at(i) * f.q_means[j].at(k);
        qm_bar.at(k) += params.w_q.at(i, k) * z_bar.at(i);
      }
    add_inplace(g.query_feats[j], avg_pool_spatial_vjp(query_feats[j], qm_bar));
  }

  Tensor r_bar = Tensor::zeros({c});
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < c; ++k) {
      g.params.w_r.at(i, k) += z_bar_sum.at(i) * f.r_mean.at(k);
      r_bar.at(k) += params.w_r.at(i, k) * z_bar_sum.at(i);
    }
  add_inplace(g.proposal_feat, avg_pool_spatial_vjp(proposal_feat, r_bar));
  return g;
}

// ---------------------------------------------------------------------------
// correspondence head

CorrespondenceHead make_correspondence_head(int channels, int features, int kernel, Rng& rng,
                                            double scale) {
  CorrespondenceHead h;
  h.conv.kernel = Tensor({kernel, kernel, 2 * channels, features});
  for (auto& v : h.conv.kernel.data) v = rng.normal() * scale;
  h.conv.bias = Tensor::zeros({features});
  h.dense_w = Tensor({features});
  for (auto& v : h.dense_w.data) v = rng.normal() * scale;
  return h;
}

double correspondence_score(const Tensor& proposal_feat, const Tensor& weighted_query,
                            const CorrespondenceHead& head) {
  if (!proposal_feat.same_shape(weighted_query)) {
    throw std::invalid_argument("correspondence_score: feature shapes differ, " +
                                proposal_feat.shape_string() + " vs " +
                                weighted_query.shape_string());
  }
  const Tensor cat = concat_channels(proposal_feat, weighted_query);
  const Tensor conv = conv2d(cat, head.conv, Padding::SameZero);
  const Tensor pooled = avg_pool_spatial(conv);
  double z = head.dense_b;
  for (int i = 0; i < pooled.dims[0]; ++i) z += head.dense_w.at(i) * pooled.at(i);
  return sigmoid(z);
}

CorrespondenceGrads correspondence_vjp(const Tensor& proposal_feat, const Tensor& weighted_query,
                                       const CorrespondenceHead& head, double grad_score) {
  const Tensor cat = concat_channels(proposal_feat, weighted_query);
  const Tensor conv = conv2d(cat, head.conv, Padding::SameZero);
  const Tensor pooled = avg_pool_spatial(conv);
  double z = head.dense_b;
  for (int i = 0; i < pooled.dims[0]; ++i) z += head.dense_w.at(i) * pooled.at(i);
  const double s = sigmoid(z);
  const double z_bar = grad_score * s * (1.0 - s);

  CorrespondenceGrads g;
  g.head.conv.kernel = zeros_like(head.conv.kernel);
  g.head.conv.bias = zeros_like(head.conv.bias);
  g.head.dense_w = zeros_like(head.dense_w);
  g.head.dense_b = z_bar;

  Tensor pooled_bar = Tensor::zeros({pooled.dims[0]});
  for (int i = 0; i < pooled.dims[0]; ++i) {
    g.head.dense_w.at(i) = z_bar * pooled.at(i);
    pooled_bar.at(i) = z_bar * head.dense_w.at(i);
  }
  const Tensor conv_bar = avg_pool_spatial_vjp(conv, pooled_bar);
  Tensor cat_bar = zeros_like(cat);
  conv2d_vjp_accumulate(cat, head.conv.kernel, Padding::SameZero, conv_bar, &cat_bar,
                        &g.head.conv.kernel, &g.head.conv.bias);
  const int c = proposal_feat.dims[2];
  g.proposal_feat = channel_slice(cat_bar, 0, c);
  g.weighted_query = channel_slice(cat_bar, c, 2 * c);
  return g;
}

}  // namespace warpcell
