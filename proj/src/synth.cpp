#include "warpcell/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "warpcell/rng.hpp"

namespace warpcell {

namespace {

struct Blob {
  double y = 0.0, x = 0.0;
  double vy = 0.0, vx = 0.0;
};

void validate(const SynthConfig& cfg) {
  if (cfg.steps < 2) throw std::invalid_argument("generate_synthetic: steps must be >= 2");
  if (cfg.height < 4 || cfg.width < 4) {
    throw std::invalid_argument("generate_synthetic: frame too small");
  }
  if (cfg.distractors < 0) throw std::invalid_argument("generate_synthetic: negative distractors");
  if (cfg.blob_sigma <= 0.0) throw std::invalid_argument("generate_synthetic: blob sigma must be positive");
  if (cfg.noise_sigma < 0.0) throw std::invalid_argument("generate_synthetic: negative noise sigma");
  if (cfg.min_speed < 0.0 || cfg.max_speed < cfg.min_speed) {
    throw std::invalid_argument("generate_synthetic: bad speed range");
  }
  // the spawn band [margin, extent - 1 - margin] must be nonempty
  if (cfg.box_half < 1 || 2 * cfg.box_half + 3 > std::min(cfg.height, cfg.width)) {
    throw std::invalid_argument("generate_synthetic: blob larger than frame");
  }
  if (cfg.occlusion_start >= 0 &&
      (cfg.occlusion_length < 1 || cfg.occlusion_start + cfg.occlusion_length > cfg.steps)) {
    throw std::invalid_argument("generate_synthetic: occlusion window outside the sequence");
  }
}

Blob spawn(const SynthConfig& cfg, Rng& rng, double lo_speed, double hi_speed) {
  Blob b;
  const double margin = cfg.box_half + 1.0;
  b.y = rng.uniform(margin, cfg.height - 1 - margin);
  b.x = rng.uniform(margin, cfg.width - 1 - margin);
  const double speed = rng.uniform(lo_speed, hi_speed);
  const double angle = rng.uniform(0.0, 6.283185307179586);
  b.vy = speed * std::sin(angle);
  b.vx = speed * std::cos(angle);
  return b;
}

// advance one step, reflecting velocity at the margins
void advance(Blob& b, const SynthConfig& cfg) {
  const double margin = cfg.box_half + 1.0;
  b.y += b.vy;
  b.x += b.vx;
  if (b.y < margin) {
    b.y = 2.0 * margin - b.y;
    b.vy = -b.vy;
  } else if (b.y > cfg.height - 1 - margin) {
    b.y = 2.0 * (cfg.height - 1 - margin) - b.y;
    b.vy = -b.vy;
  }
  if (b.x < margin) {
    b.x = 2.0 * margin - b.x;
    b.vx = -b.vx;
  } else if (b.x > cfg.width - 1 - margin) {
    b.x = 2.0 * (cfg.width - 1 - margin) - b.x;
    b.vx = -b.vx;
  }
}

void render(Tensor& frame, const Blob& b, int channel, double sigma) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  // 3-sigma support keeps rendering O(1) per blob
  const int reach = static_cast<int>(std::ceil(3.0 * sigma));
  const int y0 = std::max(0, static_cast<int>(std::floor(b.y)) - reach);
  const int y1 = std::min(frame.dims[0] - 1, static_cast<int>(std::ceil(b.y)) + reach);
  const int x0 = std::max(0, static_cast<int>(std::floor(b.x)) - reach);
  const int x1 = std::min(frame.dims[1] - 1, static_cast<int>(std::ceil(b.x)) + reach);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dy = y - b.y, dx = x - b.x;
      frame.at(y, x, channel) += std::exp(-(dy * dy + dx * dx) * inv);
    }
}

}  // namespace

Box center_box(const SynthConfig& cfg, double cy, double cx) {
  const double half = cfg.box_half;
  return Box{std::clamp((cy - half) / cfg.height, 0.0, 1.0),
             std::clamp((cx - half) / cfg.width, 0.0, 1.0),
             std::clamp((cy + half) / cfg.height, 0.0, 1.0),
             std::clamp((cx + half) / cfg.width, 0.0, 1.0)};
}

SynthSequence generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);

  SynthSequence seq;
  seq.config = cfg;
  Blob target = spawn(cfg, rng, cfg.min_speed, cfg.max_speed);
  std::vector<Blob> distractors;
  for (int i = 0; i < cfg.distractors; ++i)
    distractors.push_back(spawn(cfg, rng, cfg.min_speed, cfg.max_speed));

  for (int t = 0; t < cfg.steps; ++t) {
    double prev_y = target.y, prev_x = target.x;
    if (t > 0) {
      advance(target, cfg);
      for (Blob& d : distractors) advance(d, cfg);
    }

    const bool hidden = cfg.occlusion_start >= 0 && t >= cfg.occlusion_start &&
                        t < cfg.occlusion_start + cfg.occlusion_length;
    Tensor frame = Tensor::zeros({cfg.height, cfg.width, 2});
    if (!hidden) render(frame, target, 0, cfg.blob_sigma);
    for (const Blob& d : distractors) render(frame, d, 1, cfg.blob_sigma);
    if (cfg.noise_sigma > 0.0) {
      for (auto& v : frame.data) v += rng.normal() * cfg.noise_sigma;
    }

    Tensor flow = Tensor::zeros({cfg.height, cfg.width, 2});
    if (t > 0) {
      const double dy = target.y - prev_y, dx = target.x - prev_x;
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
          flow.at(y, x, 0) = dy;
          flow.at(y, x, 1) = dx;
        }
    }

    seq.frames.push_back(std::move(frame));
    seq.gt_centers.push_back({target.y, target.x});
    seq.gt_boxes.push_back(center_box(cfg, target.y, target.x));
    seq.gt_flow.push_back(std::move(flow));
    seq.occluded.push_back(hidden);
  }
  return seq;
}

}  // namespace warpcell
