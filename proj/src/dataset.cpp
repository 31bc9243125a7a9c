#include "warpcell/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "warpcell/tensor_io.hpp"

namespace warpcell {

namespace {

using nlohmann::json;

json config_to_object(const SynthConfig& cfg) {
  return json{{"height", cfg.height},
              {"width", cfg.width},
              {"steps", cfg.steps},
              {"distractors", cfg.distractors},
              {"min_speed", cfg.min_speed},
              {"max_speed", cfg.max_speed},
              {"occlusion_start", cfg.occlusion_start},
              {"occlusion_length", cfg.occlusion_length},
              {"noise_sigma", cfg.noise_sigma},
              {"blob_sigma", cfg.blob_sigma},
              {"box_half", cfg.box_half},
              {"seed", cfg.seed}};
}

SynthConfig config_from_object(const json& j) {
  SynthConfig cfg;
  cfg.height = j.value("height", cfg.height);
  cfg.width = j.value("width", cfg.width);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.distractors = j.value("distractors", cfg.distractors);
  cfg.min_speed = j.value("min_speed", cfg.min_speed);
  cfg.max_speed = j.value("max_speed", cfg.max_speed);
  cfg.occlusion_start = j.value("occlusion_start", cfg.occlusion_start);
  cfg.occlusion_length = j.value("occlusion_length", cfg.occlusion_length);
  cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
  cfg.blob_sigma = j.value("blob_sigma", cfg.blob_sigma);
  cfg.box_half = j.value("box_half", cfg.box_half);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

std::string step_name(const char* stem, int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03d.ten", stem, t);
  return buf;
}

std::string seq_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq%03d", i);
  return buf;
}

}  // namespace

std::string synth_config_to_json(const SynthConfig& cfg) { return config_to_object(cfg).dump(2); }

SynthConfig synth_config_from_json(const std::string& text) {
  return config_from_object(json::parse(text));
}

void save_sequences(const std::string& dir, const std::vector<SynthSequence>& sequences) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  json meta;
  meta["sequences"] = json::array();
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const SynthSequence& seq = sequences[i];
    const std::string sub = seq_name(static_cast<int>(i));
    fs::create_directories(fs::path(dir) / sub);

    json entry;
    entry["dir"] = sub;
    entry["config"] = config_to_object(seq.config);
    entry["gt_boxes"] = json::array();
    for (const Box& b : seq.gt_boxes) entry["gt_boxes"].push_back({b.ymin, b.xmin, b.ymax, b.xmax});
    entry["gt_centers"] = json::array();
    for (const auto& c : seq.gt_centers) entry["gt_centers"].push_back({c[0], c[1]});
    entry["occluded"] = json::array();
    for (bool o : seq.occluded) entry["occluded"].push_back(o);
    meta["sequences"].push_back(std::move(entry));

    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
      const fs::path base = fs::path(dir) / sub;
      write_tensor((base / step_name("frame", static_cast<int>(t))).string(), seq.frames[t]);
      write_tensor((base / step_name("flow", static_cast<int>(t))).string(), seq.gt_flow[t]);
    }
  }

  std::ofstream out(fs::path(dir) / "dataset.json");
  out << meta.dump(2) << "\n";
}

std::vector<SynthSequence> load_sequences(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "dataset.json");
  if (!in) throw std::runtime_error("load_sequences: cannot open " + dir + "/dataset.json");
  json meta = json::parse(in);

  std::vector<SynthSequence> sequences;
  for (const json& entry : meta.at("sequences")) {
    SynthSequence seq;
    seq.config = config_from_object(entry.at("config"));
    for (const json& b : entry.at("gt_boxes"))
      seq.gt_boxes.push_back(Box{b.at(0).get<double>(), b.at(1).get<double>(),
                                 b.at(2).get<double>(), b.at(3).get<double>()});
    for (const json& c : entry.at("gt_centers"))
      seq.gt_centers.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    for (const json& o : entry.at("occluded")) seq.occluded.push_back(o.get<bool>());

    const int steps = static_cast<int>(seq.gt_boxes.size());
    if (static_cast<int>(seq.gt_centers.size()) != steps ||
        static_cast<int>(seq.occluded.size()) != steps) {
      throw std::runtime_error("load_sequences: inconsistent ground-truth lengths in " + dir);
    }
    const fs::path base = fs::path(dir) / entry.at("dir").get<std::string>();
    for (int t = 0; t < steps; ++t) {
      seq.frames.push_back(read_tensor((base / step_name("frame", t)).string()));
      seq.gt_flow.push_back(read_tensor((base / step_name("flow", t)).string()));
    }
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

}  // namespace warpcell
