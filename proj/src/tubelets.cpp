#include "warpcell/tubelets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "warpcell/rng.hpp"

namespace warpcell {

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

int parse_int_field(const std::string& field, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(field, &pos);
    if (pos != field.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(ctx + ": not an integer: '" + field + "'");
  }
}

double parse_double_field(const std::string& field, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(field, &pos);
    if (pos != field.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(ctx + ": not a number: '" + field + "'");
  }
}

void check_unit_box(const Box& b, const std::string& ctx) {
  if (!(b.ymin >= 0.0 && b.xmin >= 0.0 && b.ymax <= 1.0 && b.xmax <= 1.0)) {
    throw std::runtime_error(ctx + ": coordinate outside [0, 1]");
  }
  if (b.ymin > b.ymax || b.xmin > b.xmax) {
    throw std::runtime_error(ctx + ": box min exceeds max");
  }
}

std::vector<int> canonical_label(std::vector<int> label) {
  std::sort(label.begin(), label.end());
  label.erase(std::unique(label.begin(), label.end()), label.end());
  return label;
}

struct LabeledBox {
  std::string video_id;
  int t = 0;
  int person_id = 0;
  Box box;
  std::vector<int> labels;
};

// one entry per (video, person, t); key order doubles as the linking order
std::map<std::tuple<std::string, int, int>, LabeledBox> group_rows(
    const std::vector<AnnotationRow>& rows) {
  std::map<std::tuple<std::string, int, int>, LabeledBox> grouped;
  for (const AnnotationRow& r : rows) {
    auto key = std::make_tuple(r.video_id, r.person_id, r.t);
    auto it = grouped.find(key);
    if (it == grouped.end()) {
      grouped.emplace(key, LabeledBox{r.video_id, r.t, r.person_id, r.box, {r.action_id}});
    } else {
      if (!(it->second.box == r.box)) {
        throw std::runtime_error("conflicting boxes for video " + r.video_id + " t=" +
                                 std::to_string(r.t) + " person " + std::to_string(r.person_id));
      }
      it->second.labels.push_back(r.action_id);
    }
  }
  for (auto& [key, lb] : grouped) lb.labels = canonical_label(lb.labels);
  return grouped;
}

double envelope_ap(const std::vector<double>& recall, const std::vector<double>& precision) {
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (int i = static_cast<int>(mpre.size()) - 2; i >= 0; --i)
    mpre[i] = std::max(mpre[i], mpre[i + 1]);
  double ap = 0.0;
  for (std::size_t i = 0; i + 1 < mrec.size(); ++i) ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1];
  return ap;
}

}  // namespace

std::string label_key(const std::vector<int>& combined_label) {
  std::string key;
  for (std::size_t i = 0; i < combined_label.size(); ++i) {
    if (i) key += '+';
    key += std::to_string(combined_label[i]);
  }
  return key;
}

std::vector<int> parse_label_key(const std::string& key) {
  if (key.empty()) throw std::runtime_error("empty label key");
  std::vector<int> label;
  for (const std::string& part : split_fields(key, '+'))
    label.push_back(parse_int_field(part, "label key '" + key + "'"));
  return canonical_label(label);
}

std::vector<AnnotationRow> parse_annotations_text(const std::string& text,
                                                  const std::string& source) {
  std::vector<AnnotationRow> rows;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string ctx = source + ":" + std::to_string(line_no);
    const auto fields = split_fields(line, ',');
    if (fields.size() != 8) {
      throw std::runtime_error(ctx + ": expected 8 fields, got " +
                               std::to_string(fields.size()));
    }
    AnnotationRow r;
    r.video_id = fields[0];
    r.t = parse_int_field(fields[1], ctx);
    const double x1 = parse_double_field(fields[2], ctx);
    const double y1 = parse_double_field(fields[3], ctx);
    const double x2 = parse_double_field(fields[4], ctx);
    const double y2 = parse_double_field(fields[5], ctx);
    r.box = Box{y1, x1, y2, x2};
    r.action_id = parse_int_field(fields[6], ctx);
    r.person_id = parse_int_field(fields[7], ctx);
    if (r.video_id.empty()) throw std::runtime_error(ctx + ": empty video id");
    if (r.t < 0) throw std::runtime_error(ctx + ": negative time");
    check_unit_box(r.box, ctx);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<AnnotationRow> parse_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_annotations_text(buf.str(), path);
}

std::vector<Detection> parse_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Detection> dets;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string ctx = path + ":" + std::to_string(line_no);
    const auto fields = split_fields(line, ',');
    if (fields.size() != 8) {
      throw std::runtime_error(ctx + ": expected 8 fields, got " +
                               std::to_string(fields.size()));
    }
    Detection d;
    d.video_id = fields[0];
    d.t = parse_int_field(fields[1], ctx);
    d.box = Box{parse_double_field(fields[2], ctx), parse_double_field(fields[3], ctx),
                parse_double_field(fields[4], ctx), parse_double_field(fields[5], ctx)};
    d.score = parse_double_field(fields[6], ctx);
    d.combined_label = parse_label_key(fields[7]);
    if (d.t < 0) throw std::runtime_error(ctx + ": negative time");
    if (!std::isfinite(d.score)) throw std::runtime_error(ctx + ": non-finite score");
    check_unit_box(d.box, ctx);
    dets.push_back(std::move(d));
  }
  return dets;
}

std::vector<GroundTruthBox> collect_labeled_boxes(const std::vector<AnnotationRow>& rows) {
  std::vector<GroundTruthBox> out;
  for (const auto& [key, lb] : group_rows(rows))
    out.push_back(GroundTruthBox{lb.video_id, lb.t, lb.box, lb.labels});
  return out;
}

std::vector<Tubelet> link_tubelets(const std::vector<AnnotationRow>& rows) {
  std::vector<Tubelet> tubelets;
  const LabeledBox* prev = nullptr;
  for (const auto& [key, lb] : group_rows(rows)) {
    const bool chains = prev && prev->video_id == lb.video_id &&
                        prev->person_id == lb.person_id && prev->t + 1 == lb.t &&
                        prev->labels == lb.labels;
    if (!chains) {
      tubelets.push_back(Tubelet{lb.video_id, lb.person_id, lb.labels, {}});
    }
    tubelets.back().frames.emplace_back(lb.t, lb.box);
    prev = &lb;
  }
  return tubelets;
}

LabelPartition split_by_combined_label(const std::vector<Tubelet>& tubelets,
                                       const SplitSpec& spec) {
  if (spec.min_samples < 2) {
    throw std::invalid_argument("split_by_combined_label: min_samples must be >= 2");
  }
  if (spec.val_fraction < 0.0 || spec.test_fraction < 0.0 ||
      spec.val_fraction + spec.test_fraction > 1.0) {
    throw std::invalid_argument("split_by_combined_label: bad split fractions");
  }

  std::set<std::vector<int>> explicit_val, explicit_test;
  for (const auto& l : spec.explicit_val) explicit_val.insert(canonical_label(l));
  for (const auto& l : spec.explicit_test) explicit_test.insert(canonical_label(l));
  for (const auto& l : explicit_val) {
    if (explicit_test.count(l)) {
      throw std::invalid_argument("split_by_combined_label: label " + label_key(l) +
                                  " listed for both validation and test");
    }
  }

  std::map<std::vector<int>, int> counts;
  for (const Tubelet& tb : tubelets) ++counts[tb.combined_label];

  LabelPartition part;
  std::vector<std::vector<int>> pending;
  for (const auto& [label, count] : counts) {
    if (explicit_val.count(label)) {
      part.val.push_back(label);
    } else if (explicit_test.count(label)) {
      part.test.push_back(label);
    } else if (count < spec.min_samples) {
      part.train.push_back(label);
    } else {
      pending.push_back(label);
    }
  }

  Rng rng(spec.seed);
  for (int i = static_cast<int>(pending.size()) - 1; i > 0; --i) {
    std::swap(pending[i], pending[rng.uniform_int(0, i)]);
  }
  const auto n = static_cast<double>(pending.size());
  const int n_val = static_cast<int>(std::floor(spec.val_fraction * n + 0.5));
  const int n_test = static_cast<int>(std::floor(spec.test_fraction * n + 0.5));
  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (static_cast<int>(i) < n_val) {
      part.val.push_back(pending[i]);
    } else if (static_cast<int>(i) < n_val + n_test) {
      part.test.push_back(pending[i]);
    } else {
      part.train.push_back(pending[i]);
    }
  }
  std::sort(part.train.begin(), part.train.end());
  std::sort(part.val.begin(), part.val.end());
  std::sort(part.test.begin(), part.test.end());
  return part;
}

std::vector<Tubelet> remove_training_overlap(const std::vector<Tubelet>& train,
                                             const std::vector<Tubelet>& heldout) {
  std::set<std::pair<std::string, int>> covered;
  for (const Tubelet& tb : heldout)
    for (const auto& [t, box] : tb.frames) covered.emplace(tb.video_id, t);

  std::vector<Tubelet> out;
  for (const Tubelet& tb : train) {
    Tubelet piece{tb.video_id, tb.person_id, tb.combined_label, {}};
    for (const auto& frame : tb.frames) {
      if (covered.count({tb.video_id, frame.first})) {
        if (!piece.frames.empty()) out.push_back(std::move(piece));
        piece = Tubelet{tb.video_id, tb.person_id, tb.combined_label, {}};
      } else {
        piece.frames.push_back(frame);
      }
    }
    if (!piece.frames.empty()) out.push_back(std::move(piece));
  }
  return out;
}

std::vector<PairSpec> make_pairs(const std::vector<Tubelet>& same_label, int background_pad,
                                 std::uint64_t seed, PairMode mode) {
  if (background_pad < 0) throw std::invalid_argument("make_pairs: negative background pad");
  if (same_label.size() < 2) {
    throw std::invalid_argument("make_pairs: no pair can be formed for a single-sample label");
  }
  for (const Tubelet& tb : same_label) {
    if (tb.combined_label != same_label[0].combined_label) {
      throw std::invalid_argument("make_pairs: mixed combined labels");
    }
  }

  const int n = static_cast<int>(same_label.size());
  Rng rng(seed);
  std::vector<PairSpec> pairs;
  for (int i = 0; i < n; ++i) {
    int j;
    if (mode == PairMode::Fixed) {
      j = (i + 1) % n;
    } else {
      j = rng.uniform_int(0, n - 2);
      if (j >= i) ++j;
    }
    const Tubelet& target = same_label[j];
    PairSpec pair;
    pair.query = same_label[i];
    pair.reference_video = target.video_id;
    pair.window_start = std::max(0, target.start_t() - background_pad);
    pair.window_end = target.end_t() + background_pad;
    for (const Tubelet& tb : same_label) {
      if (tb.video_id == target.video_id && tb.start_t() >= pair.window_start &&
          tb.end_t() <= pair.window_end) {
        pair.targets.push_back(tb);
      }
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

double iou(const Box& a, const Box& b) {
  const double iy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  const double ix = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double inter = (iy > 0.0 && ix > 0.0) ? iy * ix : 0.0;
  const double area_a = (a.ymax - a.ymin) * (a.xmax - a.xmin);
  const double area_b = (b.ymax - b.ymin) * (b.xmax - b.xmin);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

FrameMapResult frame_map(const std::vector<Detection>& detections,
                         const std::vector<GroundTruthBox>& ground_truth,
                         double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw std::invalid_argument("frame_map: iou threshold must lie in (0, 1)");
  }
  for (const Detection& d : detections) {
    if (!std::isfinite(d.score)) throw std::invalid_argument("frame_map: non-finite score");
  }

  struct GtEntry {
    Box box;
    bool matched = false;
  };
  // label -> (video, t) -> boxes; counts per label drive the recall axis
  std::map<std::string, std::map<std::pair<std::string, int>, std::vector<GtEntry>>> gt;
  std::map<std::string, int> gt_counts;
  for (const GroundTruthBox& g : ground_truth) {
    const std::string key = label_key(g.combined_label);
    gt[key][{g.video_id, g.t}].push_back(GtEntry{g.box, false});
    ++gt_counts[key];
  }

  std::map<std::string, std::vector<const Detection*>> by_label;
  for (const Detection& d : detections) by_label[label_key(d.combined_label)].push_back(&d);

  FrameMapResult result;
  double ap_sum = 0.0;
  int ap_labels = 0;
  for (auto& [key, n_gt] : gt_counts) {
    auto& frames = gt[key];
    std::vector<const Detection*> dets;
    if (auto it = by_label.find(key); it != by_label.end()) dets = it->second;
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection* a, const Detection* b) { return a->score > b->score; });

    std::vector<double> recall, precision;
    int tp = 0, fp = 0;
    for (const Detection* d : dets) {
      GtEntry* best = nullptr;
      double best_iou = 0.0;
      if (auto it = frames.find({d->video_id, d->t}); it != frames.end()) {
        for (GtEntry& entry : it->second) {
          if (entry.matched) continue;
          const double v = iou(d->box, entry.box);
          if (v > best_iou) {
            best_iou = v;
            best = &entry;
          }
        }
      }
      if (best && best_iou >= iou_threshold) {
        best->matched = true;
        ++tp;
      } else {
        ++fp;
      }
      recall.push_back(static_cast<double>(tp) / n_gt);
      precision.push_back(static_cast<double>(tp) / (tp + fp));
    }
    const double ap = envelope_ap(recall, precision);
    result.per_label_ap[key] = ap;
    ap_sum += ap;
    ++ap_labels;
  }

  // predicted labels with no ground truth anywhere score 0 and stay out of the mean
  for (const auto& [key, dets] : by_label) {
    if (!gt_counts.count(key)) result.per_label_ap[key] = 0.0;
  }
  result.mean_ap = ap_labels ? ap_sum / ap_labels : 0.0;
  return result;
}

}  // namespace warpcell
