#include "warpcell/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <utility>

#include "json.hpp"
#include "warpcell/rng.hpp"
#include "warpcell/tensor_io.hpp"
#include "warpcell/tubelets.hpp"

namespace warpcell {

namespace {

std::vector<Tensor*> tensor_ptrs(TrackerModel& m) {
  std::vector<Tensor*> out;
  visit_model_params(m, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  Rng r(base ^ (index * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL));
  return r.next_u64();
}

void validate(const TrainConfig& cfg) {
  if (cfg.learning_rate <= 0.0) throw std::invalid_argument("train: learning rate must be > 0");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) {
    throw std::invalid_argument("train: momentum must lie in [0, 1)");
  }
  if (cfg.iterations < 0) throw std::invalid_argument("train: negative iteration count");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (cfg.target_sigma <= 0.0) throw std::invalid_argument("train: target sigma must be > 0");
}

}  // namespace

double sequence_loss(const TrackerModel& model, const SynthSequence& seq, double target_sigma,
                     TrackerModel* grads) {
  ModelCache cache;
  const std::vector<Tensor> logits =
      model_forward(model, seq.frames, &seq.gt_flow, grads ? &cache : nullptr);
  const double inv_t = 1.0 / static_cast<double>(logits.size());

  double loss = 0.0;
  std::vector<Tensor> grad_logits;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const Tensor target = heatmap_target(logits[t].dims[0], logits[t].dims[1],
                                         seq.gt_centers[t][0], seq.gt_centers[t][1], target_sigma);
    Tensor g;
    loss += bce_with_logits(logits[t], target, grads ? &g : nullptr) * inv_t;
    if (grads) {
      for (auto& v : g.data) v *= inv_t;
      grad_logits.push_back(std::move(g));
    }
  }
  if (grads) model_backward(model, cache, grad_logits, grads);
  return loss;
}

TrainResult train(const TrainConfig& cfg) {
  ModelConfig mc = cfg.model;
  mc.kind = cfg.kind;
  mc.seed = cfg.seed;
  return train_from(make_model(mc), cfg);
}

TrainResult train_from(TrackerModel model, const TrainConfig& cfg) {
  validate(cfg);
  TrainResult result{std::move(model), {}};
  TrackerModel velocity = zeroed_model_like(result.model);
  const auto theta = tensor_ptrs(result.model);
  const auto vel = tensor_ptrs(velocity);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    TrackerModel grads = zeroed_model_like(result.model);
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      SynthConfig dc = cfg.data;
      dc.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(iter) * cfg.batch_size + b);
      const SynthSequence seq = generate_synthetic(dc);
      batch_loss += sequence_loss(result.model, seq, cfg.target_sigma, &grads);
    }
    batch_loss /= cfg.batch_size;
    if (!std::isfinite(batch_loss)) {
      throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(iter));
    }

    const double lr = iter >= cfg.lr_decay_step ? cfg.learning_rate / 10.0 : cfg.learning_rate;
    const auto g = tensor_ptrs(grads);
    const double inv_batch = 1.0 / cfg.batch_size;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      for (std::size_t i = 0; i < theta[k]->data.size(); ++i) {
        vel[k]->data[i] =
            cfg.momentum * vel[k]->data[i] - lr * g[k]->data[i] * inv_batch;
        theta[k]->data[i] += vel[k]->data[i];
      }
    }
    result.loss_curve.push_back(batch_loss);
  }
  return result;
}

EvalMetrics evaluate(const TrackerModel& model, const std::vector<SynthSequence>& sequences) {
  std::vector<std::vector<Tensor>> logits;
  logits.reserve(sequences.size());
  for (const SynthSequence& seq : sequences)
    logits.push_back(model_forward(model, seq.frames, &seq.gt_flow, nullptr));
  return evaluate_heatmaps(logits, sequences);
}

EvalMetrics evaluate_heatmaps(const std::vector<std::vector<Tensor>>& per_sequence_logits,
                              const std::vector<SynthSequence>& sequences) {
  if (per_sequence_logits.size() != sequences.size())
    throw std::invalid_argument("evaluate_heatmaps: one logit list per sequence required");
  EvalMetrics m;
  std::vector<Detection> dets, occl_dets;
  std::vector<GroundTruthBox> gts, occl_gts;
  const std::vector<int> label = {1};

  double err_sum = 0.0, iou_sum = 0.0, occl_err_sum = 0.0, occl_iou_sum = 0.0;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const SynthSequence& seq = sequences[s];
    const std::string video = "seq" + std::to_string(s);
    const std::vector<Tensor>& logits = per_sequence_logits[s];
    if (logits.size() != seq.frames.size())
      throw std::invalid_argument("evaluate_heatmaps: one logit map per step required");

    for (std::size_t t = 0; t < logits.size(); ++t) {
      const Tensor& map = logits[t];
      int best_y = 0, best_x = 0;
      double best = map.at(0, 0, 0);
      for (int y = 0; y < map.dims[0]; ++y)
        for (int x = 0; x < map.dims[1]; ++x) {
          if (map.at(y, x, 0) > best) {  // strict: ties keep the smallest (y, x)
            best = map.at(y, x, 0);
            best_y = y;
            best_x = x;
          }
        }

      const double err = std::hypot(best_y - seq.gt_centers[t][0], best_x - seq.gt_centers[t][1]);
      const Box pred = center_box(seq.config, best_y, best_x);
      const double overlap = iou(pred, seq.gt_boxes[t]);
      const Detection det{video, static_cast<int>(t), pred, sigmoid(best), label};
      const GroundTruthBox gt{video, static_cast<int>(t), seq.gt_boxes[t], label};

      err_sum += err;
      iou_sum += overlap;
      ++m.frames_total;
      dets.push_back(det);
      gts.push_back(gt);
      if (seq.occluded[t]) {
        occl_err_sum += err;
        occl_iou_sum += overlap;
        ++m.frames_occluded;
        occl_dets.push_back(det);
        occl_gts.push_back(gt);
      }
    }
  }

  if (m.frames_total) {
    m.mean_center_error_px = err_sum / m.frames_total;
    m.mean_iou = iou_sum / m.frames_total;
    m.map50 = frame_map(dets, gts, 0.5).mean_ap;
  }
  if (m.frames_occluded) {
    m.occl_center_error_px = occl_err_sum / m.frames_occluded;
    m.occl_mean_iou = occl_iou_sum / m.frames_occluded;
    m.occl_map50 = frame_map(occl_dets, occl_gts, 0.5).mean_ap;
  }
  return m;
}

void save_checkpoint(const TrackerModel& model, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const ModelConfig& c = model.config;
  nlohmann::json j;
  j["kind"] = cell_kind_name(c.kind);
  j["channels"] = c.channels;
  j["encoder_kernel"] = c.encoder_kernel;
  j["cell_kernel"] = c.cell_kernel;
  j["lines_y"] = c.lines_y;
  j["lines_x"] = c.lines_x;
  j["links"] = c.links;
  j["init_scale"] = c.init_scale;
  j["seed"] = c.seed;
  std::ofstream(dir + "/config.json") << j.dump(2) << "\n";

  TrackerModel copy = model;
  std::ofstream manifest(dir + "/manifest.txt");
  int index = 0;
  visit_model_params(copy, [&](const std::string& name, Tensor& t) {
    char file[16];
    std::snprintf(file, sizeof file, "p%03d.ten", index++);
    manifest << name << " " << file << "\n";
    write_tensor(dir + "/" + file, t);
  });
}

TrackerModel load_checkpoint(const std::string& dir) {
  std::ifstream cfg_in(dir + "/config.json");
  if (!cfg_in) throw std::runtime_error("load_checkpoint: cannot open " + dir + "/config.json");
  nlohmann::json j = nlohmann::json::parse(cfg_in);
  ModelConfig c;
  c.kind = cell_kind_from_name(j.at("kind").get<std::string>());
  c.channels = j.at("channels").get<int>();
  c.encoder_kernel = j.at("encoder_kernel").get<int>();
  c.cell_kernel = j.at("cell_kernel").get<int>();
  c.lines_y = j.at("lines_y").get<int>();
  c.lines_x = j.at("lines_x").get<int>();
  c.links = j.at("links").get<int>();
  c.init_scale = j.at("init_scale").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();

  std::ifstream manifest(dir + "/manifest.txt");
  if (!manifest) throw std::runtime_error("load_checkpoint: cannot open " + dir + "/manifest.txt");
  std::map<std::string, std::string> files;
  std::string name, file;
  while (manifest >> name >> file) files[name] = file;

  TrackerModel model = make_model(c);
  visit_model_params(model, [&](const std::string& pname, Tensor& t) {
    const auto it = files.find(pname);
    if (it == files.end()) {
      throw std::runtime_error("load_checkpoint: manifest is missing " + pname);
    }
    Tensor loaded = read_tensor(dir + "/" + it->second);
    if (loaded.dims != t.dims) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + pname);
    }
    t = std::move(loaded);
  });
  return model;
}

}  // namespace warpcell
