#pragma once

#include <vector>

#include "warpcell/rng.hpp"
#include "warpcell/tensor.hpp"

namespace warpcell {

/// Axis-aligned box, all coordinates normalized to [0, 1].
struct Box {
  double ymin = 0.0;
  double xmin = 0.0;
  double ymax = 0.0;
  double xmax = 0.0;

  bool operator==(const Box&) const = default;
};

/// Per-channel mean over the spatial axes: [H, W, C] -> [C].
Tensor avg_pool_spatial(const Tensor& map);
/// Spreads the channel cotangent uniformly over the pixels.
Tensor avg_pool_spatial_vjp(const Tensor& map, const Tensor& grad_out);

/// Average RoI-align: the box spans [ymin*H, ymax*H] x [xmin*W, xmax*W] in
/// corner coordinates and is cut into out_h x out_w bins; each bin averages
/// ceil(bin_size) x ceil(bin_size) bilinear samples taken at sub-cell centers
/// (so a full-image box at input resolution is the identity, and integral
/// bins average exact pixels).
Tensor roi_pool(const Tensor& map, const Box& box, int out_h, int out_w);
Tensor roi_pool_vjp(const Tensor& map, const Box& box, int out_h, int out_w,
                    const Tensor& grad_out);

/// Weights of the query-attention head. Matrices are stored [D, C].
struct AttentionParams {
  Tensor w_q;  // [D, C]
  Tensor w_r;  // [D, C]
  Tensor w;    // [D]
  Tensor b_p;  // [D]
  double b_s = 0.0;
};

AttentionParams make_attention(int channels, Rng& rng, double scale, int dim = -1);

/// Scores every query clip against the proposal:
///   e_j = tanh(W_q avg(q_j) + W_r avg(p) + b_p),  logit_j = w . e_j + b_s,
/// alpha = softmax(logits), output = sum_j alpha_j q_j.
/// `alpha_out`, when given, receives the weights (they sum to 1).
Tensor attention_pool(const std::vector<Tensor>& query_feats, const Tensor& proposal_feat,
                      const AttentionParams& params, std::vector<double>* alpha_out = nullptr);

struct AttentionGrads {
  std::vector<Tensor> query_feats;
  Tensor proposal_feat;
  AttentionParams params;
};
AttentionGrads attention_pool_vjp(const std::vector<Tensor>& query_feats,
                                  const Tensor& proposal_feat, const AttentionParams& params,
                                  const Tensor& grad_out);

/// Binary pair scorer: channel-concat -> conv -> spatial average -> dense ->
/// sigmoid. Zero weights score exactly 0.5.
struct CorrespondenceHead {
  ConvParams conv;  // [k, k, 2C, F]
  Tensor dense_w;   // [F]
  double dense_b = 0.0;
};

CorrespondenceHead make_correspondence_head(int channels, int features, int kernel, Rng& rng,
                                            double scale);

double correspondence_score(const Tensor& proposal_feat, const Tensor& weighted_query,
                            const CorrespondenceHead& head);

struct CorrespondenceGrads {
  Tensor proposal_feat;
  Tensor weighted_query;
  CorrespondenceHead head;
};
CorrespondenceGrads correspondence_vjp(const Tensor& proposal_feat, const Tensor& weighted_query,
                                       const CorrespondenceHead& head, double grad_score);

}  // namespace warpcell
