#include <algorithm>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "warpcell/dataset.hpp"
#include "warpcell/gradsuite.hpp"
#include "warpcell/model.hpp"
#include "warpcell/synth.hpp"
#include "warpcell/train.hpp"
#include "warpcell/tubelets.hpp"

using nlohmann::json;
using namespace warpcell;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// ---------------------------------------------------------------------------
// gradcheck

int run_gradcheck(std::uint64_t seed, const std::string& report_path) {
  const SuiteReport report = run_suite(default_suite(seed), seed);

  json j;
  j["seed"] = seed;
  j["pass"] = report.pass;
  j["worst_max_rel_error"] = report.worst;
  j["ops"] = json::array();
  for (const SuiteEntry& e : report.entries) {
    j["ops"].push_back({{"name", e.name},
                        {"max_rel_error", e.max_rel_error},
                        {"argument_index", e.argument_index},
                        {"tolerance", e.tolerance},
                        {"pass", e.pass},
                        {"seconds", e.seconds}});
  }
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!report_path.empty()) write_file(report_path, text);
  return report.pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// synth-gen

int run_synth_gen(const std::string& config_path, const std::string& out_dir) {
  const std::string text = read_file(config_path);
  const json j = json::parse(text);
  const int count = j.value("count", 1);
  if (count < 1) throw std::runtime_error("synth-gen: count must be >= 1");

  const SynthConfig base = synth_config_from_json(text);
  std::vector<SynthSequence> sequences;
  for (int i = 0; i < count; ++i) {
    SynthConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(i);
    sequences.push_back(generate_synthetic(cfg));
  }
  save_sequences(out_dir, sequences);
  std::cout << "wrote " << count << " sequence" << (count == 1 ? "" : "s") << " to " << out_dir
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

TrainConfig train_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig cfg;
  cfg.kind = cell_kind_from_name(j.value("kind", cell_kind_name(cfg.kind)));
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.lr_decay_step = j.value("lr_decay_step", cfg.lr_decay_step);
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.target_sigma = j.value("target_sigma", cfg.target_sigma);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("data")) cfg.data = synth_config_from_json(j.at("data").dump());
  if (j.contains("model")) {
    const json& m = j.at("model");
    cfg.model.channels = m.value("channels", cfg.model.channels);
    cfg.model.encoder_kernel = m.value("encoder_kernel", cfg.model.encoder_kernel);
    cfg.model.cell_kernel = m.value("cell_kernel", cfg.model.cell_kernel);
    cfg.model.lines_y = m.value("lines_y", cfg.model.lines_y);
    cfg.model.lines_x = m.value("lines_x", cfg.model.lines_x);
    cfg.model.links = m.value("links", cfg.model.links);
    cfg.model.init_scale = m.value("init_scale", cfg.model.init_scale);
  }
  return cfg;
}

int run_train(const std::string& config_path, const std::string& out_dir) {
  const TrainConfig cfg = train_config_from_json(read_file(config_path));
  const TrainResult result = train(cfg);
  save_checkpoint(result.model, out_dir);

  json curve;
  curve["loss"] = result.loss_curve;
  write_file(out_dir + "/loss.json", curve.dump(2) + "\n");

  if (!result.loss_curve.empty()) {
    std::cout << "trained " << cell_kind_name(cfg.kind) << " for " << cfg.iterations
              << " iterations: loss " << result.loss_curve.front() << " -> "
              << result.loss_curve.back() << "\n";
  } else {
    std::cout << "wrote the untrained initialization\n";
  }
  std::cout << "checkpoint in " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

json metrics_to_json(const EvalMetrics& m) {
  return json{{"mean_center_error_px", m.mean_center_error_px},
              {"mean_iou", m.mean_iou},
              {"map50", m.map50},
              {"occl_center_error_px", m.occl_center_error_px},
              {"occl_mean_iou", m.occl_mean_iou},
              {"occl_map50", m.occl_map50},
              {"frames_total", m.frames_total},
              {"frames_occluded", m.frames_occluded}};
}

int run_eval(const std::string& ckpt_dir, const std::string& data_dir,
             const std::string& report_path) {
  const TrackerModel model = load_checkpoint(ckpt_dir);
  const std::vector<SynthSequence> sequences = load_sequences(data_dir);
  const EvalMetrics m = evaluate(model, sequences);

  json j = metrics_to_json(m);
  j["kind"] = cell_kind_name(model.config.kind);
  j["sequences"] = sequences.size();
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!report_path.empty()) write_file(report_path, text);
  return 0;
}

// ---------------------------------------------------------------------------
// tubelet tools

json tubelet_to_json(const Tubelet& t) {
  json frames = json::array();
  for (const auto& [sec, box] : t.frames) {
    frames.push_back({{"t", sec}, {"box", {box.ymin, box.xmin, box.ymax, box.xmax}}});
  }
  return json{{"video_id", t.video_id},
              {"person_id", t.person_id},
              {"label", label_key(t.combined_label)},
              {"start_t", t.start_t()},
              {"end_t", t.end_t()},
              {"frames", std::move(frames)}};
}

int run_tubelet_link(const std::string& in_path, const std::string& out_path) {
  const std::vector<Tubelet> tubelets = link_tubelets(parse_annotations(in_path));
  json j;
  j["tubelets"] = json::array();
  for (const Tubelet& t : tubelets) j["tubelets"].push_back(tubelet_to_json(t));
  write_file(out_path, j.dump(2) + "\n");
  std::cout << "linked " << tubelets.size() << " tubelets into " << out_path << "\n";
  return 0;
}

int run_tubelet_split(const std::string& in_path, const std::string& out_path, SplitSpec spec) {
  const std::vector<Tubelet> tubelets = link_tubelets(parse_annotations(in_path));
  const LabelPartition part = split_by_combined_label(tubelets, spec);

  const auto keys = [](const std::vector<std::vector<int>>& labels) {
    json arr = json::array();
    for (const auto& l : labels) arr.push_back(label_key(l));
    return arr;
  };
  json j{{"train", keys(part.train)}, {"val", keys(part.val)}, {"test", keys(part.test)}};
  write_file(out_path, j.dump(2) + "\n");
  std::cout << "split " << part.train.size() << " train / " << part.val.size() << " val / "
            << part.test.size() << " test labels into " << out_path << "\n";
  return 0;
}

int run_tubelet_pairs(const std::string& in_path, const std::string& out_path, int pad,
                      std::uint64_t seed, bool fixed) {
  const std::vector<Tubelet> tubelets = link_tubelets(parse_annotations(in_path));

  std::map<std::string, std::vector<Tubelet>> by_label;
  for (const Tubelet& t : tubelets) by_label[label_key(t.combined_label)].push_back(t);

  json pairs = json::array();
  std::vector<std::string> skipped;
  for (const auto& [key, group] : by_label) {
    if (group.size() < 2) {
      skipped.push_back(key);
      continue;
    }
    for (const PairSpec& p :
         make_pairs(group, pad, seed, fixed ? PairMode::Fixed : PairMode::Random)) {
      json targets = json::array();
      for (const Tubelet& t : p.targets) targets.push_back(tubelet_to_json(t));
      pairs.push_back({{"label", key},
                       {"query", tubelet_to_json(p.query)},
                       {"reference_video", p.reference_video},
                       {"window_start", p.window_start},
                       {"window_end", p.window_end},
                       {"targets", std::move(targets)}});
    }
  }
  json j{{"pairs", std::move(pairs)}, {"skipped_labels", skipped}};
  write_file(out_path, j.dump(2) + "\n");
  std::cout << "wrote " << j["pairs"].size() << " pairs (" << skipped.size()
            << " single-sample labels skipped) into " << out_path << "\n";
  return 0;
}

int run_tubelet_map(const std::string& det_path, const std::string& truth_path,
                    const std::string& out_path, double threshold) {
  const std::vector<Detection> dets = parse_detections(det_path);
  const std::vector<GroundTruthBox> gts = collect_labeled_boxes(parse_annotations(truth_path));
  const FrameMapResult result = frame_map(dets, gts, threshold);

  json per_label = json::object();
  for (const auto& [key, ap] : result.per_label_ap) per_label[key] = ap;
  json j{{"iou_threshold", threshold},
         {"per_label_ap", std::move(per_label)},
         {"mean_ap", result.mean_ap}};
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!out_path.empty()) write_file(out_path, text);
  return 0;
}

// ---------------------------------------------------------------------------
// warp-viz

int run_warp_viz(const std::string& ckpt_dir, const std::string& data_dir,
                 const std::string& out_path, int seq_index) {
  const TrackerModel model = load_checkpoint(ckpt_dir);
  const CellKind kind = model.config.kind;
  if (kind != CellKind::WarpLSTM && kind != CellKind::GtFlowWarp) {
    throw std::runtime_error("warp-viz: the " + cell_kind_name(kind) +
                             " cell carries no flow field");
  }

  const std::vector<SynthSequence> sequences = load_sequences(data_dir);
  if (seq_index < 0 || seq_index >= static_cast<int>(sequences.size())) {
    throw std::runtime_error("warp-viz: sequence index out of range");
  }
  const SynthSequence& seq = sequences[seq_index];
  const int h = seq.config.height, w = seq.config.width;

  ModelCache cache;
  model_forward(model, seq.frames, &seq.gt_flow, &cache);

  // grid lines at the warp cell's own control positions
  const ControlPointSet grid =
      make_control_grid(h, w, model.config.lines_y, model.config.lines_x);
  std::set<int> ys, xs;
  for (const Point& p : grid.interior) {
    ys.insert(static_cast<int>(p.y));
    xs.insert(static_cast<int>(p.x));
  }

  std::ostringstream csv;
  csv << "t,line_id,point_idx,y_src,x_src\n";
  for (std::size_t t = 0; t < cache.steps.size(); ++t) {
    const Tensor& flow = cache.steps[t].flow;
    int line_id = 0;
    for (int y : ys) {
      for (int x = 0; x < w; ++x) {
        csv << t << ',' << line_id << ',' << x << ',' << y - flow.at(y, x, 0) << ','
            << x - flow.at(y, x, 1) << "\n";
      }
      ++line_id;
    }
    for (int x : xs) {
      for (int y = 0; y < h; ++y) {
        csv << t << ',' << line_id << ',' << y << ',' << y - flow.at(y, x, 0) << ','
            << x - flow.at(y, x, 1) << "\n";
      }
      ++line_id;
    }
  }
  write_file(out_path, csv.str());
  std::cout << "wrote " << cache.steps.size() << " steps of warped grid lines to " << out_path
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"warp-recurrent cell toolkit: synthetic benchmark, training, evaluation"};
  app.require_subcommand(1);
  int rc = 0;

  // gradcheck
  std::uint64_t gc_seed = 0;
  std::string gc_report;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "run the gradient-check suite");
  gradcheck->add_option("--seed", gc_seed, "probe seed");
  gradcheck->add_option("--report", gc_report, "also write the JSON report here");
  gradcheck->callback([&] { rc = run_gradcheck(gc_seed, gc_report); });

  // synth-gen
  std::string sg_config, sg_out;
  CLI::App* synth_gen = app.add_subcommand("synth-gen", "generate a synthetic dataset directory");
  synth_gen->add_option("--config", sg_config, "generator config JSON")->required();
  synth_gen->add_option("--out", sg_out, "output dataset directory")->required();
  synth_gen->callback([&] { rc = run_synth_gen(sg_config, sg_out); });

  // train
  std::string tr_config, tr_out;
  CLI::App* train_cmd = app.add_subcommand("train", "train a tracker on generated sequences");
  train_cmd->add_option("--config", tr_config, "training config JSON")->required();
  train_cmd->add_option("--out", tr_out, "checkpoint output directory")->required();
  train_cmd->callback([&] { rc = run_train(tr_config, tr_out); });

  // eval
  std::string ev_ckpt, ev_data, ev_report;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset directory");
  eval_cmd->add_option("--ckpt", ev_ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--data", ev_data, "dataset directory")->required();
  eval_cmd->add_option("--report", ev_report, "JSON report path");
  eval_cmd->callback([&] { rc = run_eval(ev_ckpt, ev_data, ev_report); });

  // tubelet
  CLI::App* tubelet = app.add_subcommand("tubelet", "annotation reorganization tools");
  tubelet->require_subcommand(1);

  std::string tl_in, tl_out;
  CLI::App* link = tubelet->add_subcommand("link", "chain per-frame boxes into tubelets");
  link->add_option("--in", tl_in, "annotation CSV")->required();
  link->add_option("--out", tl_out, "tubelet JSON")->required();
  link->callback([&] { rc = run_tubelet_link(tl_in, tl_out); });

  std::string ts_in, ts_out;
  SplitSpec spec;
  CLI::App* split = tubelet->add_subcommand("split", "partition combined labels");
  split->add_option("--in", ts_in, "annotation CSV")->required();
  split->add_option("--out", ts_out, "partition JSON")->required();
  split->add_option("--seed", spec.seed, "shuffle seed");
  split->add_option("--val-fraction", spec.val_fraction, "validation share");
  split->add_option("--test-fraction", spec.test_fraction, "test share");
  split->add_option("--min-samples", spec.min_samples, "labels below this stay in train");
  split->callback([&] { rc = run_tubelet_split(ts_in, ts_out, spec); });

  std::string tp_in, tp_out;
  int tp_pad = 0;
  std::uint64_t tp_seed = 0;
  bool tp_fixed = false;
  CLI::App* pairs = tubelet->add_subcommand("pairs", "query/reference pairs per label");
  pairs->add_option("--in", tp_in, "annotation CSV")->required();
  pairs->add_option("--out", tp_out, "pair JSON")->required();
  pairs->add_option("--pad", tp_pad, "reference window padding (seconds)");
  pairs->add_option("--seed", tp_seed, "partner sampling seed");
  pairs->add_flag("--fixed", tp_fixed, "deterministic next-sample partner instead of random");
  pairs->callback([&] { rc = run_tubelet_pairs(tp_in, tp_out, tp_pad, tp_seed, tp_fixed); });

  std::string tm_det, tm_truth, tm_out;
  double tm_iou = 0.5;
  CLI::App* map_cmd = tubelet->add_subcommand("map", "frame-level mean average precision");
  map_cmd->add_option("--det", tm_det, "detection CSV")->required();
  map_cmd->add_option("--truth", tm_truth, "annotation CSV")->required();
  map_cmd->add_option("--out", tm_out, "JSON report path");
  map_cmd->add_option("--iou", tm_iou, "match threshold");
  map_cmd->callback([&] { rc = run_tubelet_map(tm_det, tm_truth, tm_out, tm_iou); });

  // warp-viz
  std::string wv_ckpt, wv_data, wv_out;
  int wv_seq = 0;
  CLI::App* warp_viz =
      app.add_subcommand("warp-viz", "emit warped control-grid lines as CSV for plotting");
  warp_viz->add_option("--ckpt", wv_ckpt, "checkpoint directory")->required();
  warp_viz->add_option("--data", wv_data, "dataset directory")->required();
  warp_viz->add_option("--out", wv_out, "CSV path")->required();
  warp_viz->add_option("--sequence", wv_seq, "sequence index in the dataset");
  warp_viz->callback([&] { rc = run_warp_viz(wv_ckpt, wv_data, wv_out, wv_seq); });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "warpcell: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
