// Acceptance gate: eight checks, one line each, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "warpcell/cells.hpp"
#include "warpcell/gradsuite.hpp"
#include "warpcell/model.hpp"
#include "warpcell/rng.hpp"
#include "warpcell/spline.hpp"
#include "warpcell/synth.hpp"
#include "warpcell/train.hpp"
#include "warpcell/tubelets.hpp"

using namespace warpcell;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* format, ...) {
  va_list args;
  va_start(args, format);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. every registered operation passes the finite-difference suite

Outcome gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  const SuiteReport report = run_suite(default_suite(0), 0);
  const double elapsed = seconds_since(start);

  const bool pass = report.pass && elapsed <= 300.0;
  return {pass, fmt("worst max rel error %.2e over %zu ops in %.1f s", report.worst,
                    report.entries.size(), elapsed)};
}

// ---------------------------------------------------------------------------
// 2. spline solves interpolate exactly and reproduce affine data with zero
//    kernel weights

Outcome spline_exactness() {
  Rng rng(2026);
  double worst_residual = 0.0;
  double worst_weight = 0.0;
  int affine_cases = 0;

  for (int it = 0; it < 500; ++it) {
    const int n = rng.uniform_int(3, 25);
    std::vector<Point> sites;
    while (static_cast<int>(sites.size()) < n) {
      const Point p{rng.uniform(0.0, 20.0), rng.uniform(0.0, 20.0)};
      bool ok = true;
      for (const Point& q : sites)
        if (std::hypot(p.x - q.x, p.y - q.y) < 0.5) ok = false;
      if (ok) sites.push_back(p);
    }
    const int order = 1 + it % 2;
    const bool affine_case = it % 3 == 0;

    std::vector<double> values(n);
    if (affine_case) {
      const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0),
                   c = rng.uniform(-2.0, 2.0);
      for (int i = 0; i < n; ++i) values[i] = a * sites[i].x + b * sites[i].y + c;
      ++affine_cases;
    } else {
      for (double& v : values) v = rng.uniform(-2.0, 2.0);
    }

    const SplineInterpolant interp = solve_interpolant(sites, values, order, 0.0);
    const std::vector<double> back = eval_interpolant(interp, sites);
    for (int i = 0; i < n; ++i)
      worst_residual = std::max(worst_residual, std::abs(back[i] - values[i]));
    if (affine_case)
      for (double w : interp.rbf_weights) worst_weight = std::max(worst_weight, std::abs(w));
  }

  const bool pass = worst_residual <= 1e-8 && worst_weight <= 1e-8;
  return {pass, fmt("500 site sets: worst residual %.2e, worst affine-case |w| %.2e (%d affine)",
                    worst_residual, worst_weight, affine_cases)};
}

// ---------------------------------------------------------------------------
// 3. zero displacement: the warp is an exact identity and the warp cell
//    reduces to the plain cell bitwise

Outcome warp_identity_and_reduction() {
  Rng rng(3033);
  double worst_identity = 0.0;
  int bitwise_matches = 0;
  const int fixtures = 100;

  for (int it = 0; it < fixtures; ++it) {
    const int h = rng.uniform_int(8, 14);
    const int w = rng.uniform_int(8, 14);
    const int c = rng.uniform_int(2, 4);
    const int ly = rng.uniform_int(2, 3);
    const int lx = rng.uniform_int(2, 3);

    Tensor map({h, w, c});
    for (auto& v : map.data) v = rng.normal();
    const ControlPointSet grid = make_control_grid(h, w, ly, lx);  // zero displacements
    const Tensor warped = sparse_warp(map, grid, 2, kDefaultRegularization);
    for (std::size_t i = 0; i < map.data.size(); ++i)
      worst_identity = std::max(worst_identity, std::abs(warped.data[i] - map.data[i]));

    WarpLSTMParams wp = make_warplstm(3, c, c, ly, lx, rng, 0.4);  // disp stays zero
    Tensor x({h, w, c});
    for (auto& v : x.data) v = rng.normal() * 0.5;
    CellState st{Tensor({h, w, c}), Tensor({h, w, c})};
    for (auto& v : st.h.data) v = rng.normal() * 0.5;
    for (auto& v : st.c.data) v = rng.normal() * 0.5;

    const CellState a = warplstm_step(wp, x, st).state;
    const CellState b = convlstm_step(wp.base, x, st);
    if (a.h.data == b.h.data && a.c.data == b.c.data) ++bitwise_matches;
  }

  const bool pass = worst_identity <= 1e-12 && bitwise_matches == fixtures;
  return {pass, fmt("identity error %.2e; %d/%d fixtures bitwise equal", worst_identity,
                    bitwise_matches, fixtures)};
}

// ---------------------------------------------------------------------------
// 4. integer-aligned destinations copy the source values

Outcome destination_pointwise() {
  Rng rng(4044);
  double worst = 0.0;
  int checked = 0;

  for (int it = 0; it < 20; ++it) {
    const int h = rng.uniform_int(12, 18);
    const int w = rng.uniform_int(12, 18);
    ControlPointSet cps = make_control_grid(h, w, rng.uniform_int(2, 3), rng.uniform_int(2, 3));

    std::set<std::pair<int, int>> taken;  // destinations and integer boundary pins
    for (const Point& p : cps.boundary) {
      if (p.x == std::floor(p.x) && p.y == std::floor(p.y))
        taken.emplace(static_cast<int>(p.y), static_cast<int>(p.x));
    }
    for (std::size_t k = 0; k < cps.interior.size(); ++k) {
      const int sy = static_cast<int>(cps.interior[k].y);
      const int sx = static_cast<int>(cps.interior[k].x);
      for (;;) {
        const int dy = rng.uniform_int(-2, 2);
        const int dx = rng.uniform_int(-2, 2);
        const int ty = sy + dy, tx = sx + dx;
        if (ty < 1 || ty > h - 2 || tx < 1 || tx > w - 2) continue;
        if (taken.count({ty, tx})) continue;
        taken.emplace(ty, tx);
        cps.displacements[k] = Disp{static_cast<double>(dx), static_cast<double>(dy)};
        break;
      }
    }

    Tensor map({h, w, 2});
    for (auto& v : map.data) v = rng.normal();
    const Tensor warped = sparse_warp(map, cps, 2, 0.0);

    for (std::size_t k = 0; k < cps.interior.size(); ++k) {
      const int sy = static_cast<int>(cps.interior[k].y);
      const int sx = static_cast<int>(cps.interior[k].x);
      const int ty = sy + static_cast<int>(cps.displacements[k].dy);
      const int tx = sx + static_cast<int>(cps.displacements[k].dx);
      for (int c = 0; c < 2; ++c) {
        worst = std::max(worst, std::abs(warped.at(ty, tx, c) - map.at(sy, sx, c)));
        ++checked;
      }
    }
  }

  return {worst <= 1e-10, fmt("worst destination error %.2e over %d point values", worst, checked)};
}

// ---------------------------------------------------------------------------
// 5. synthetic benchmark: recurrence ordering and occlusion retention

TrainConfig benchmark_config(CellKind kind) {
  TrainConfig cfg;
  cfg.kind = kind;
  cfg.seed = 42;
  cfg.learning_rate = 0.003;
  cfg.momentum = 0.9;
  cfg.lr_decay_step = 1000;
  cfg.iterations = 150;
  cfg.batch_size = 4;
  cfg.target_sigma = 2.0;
  cfg.data.height = 40;
  cfg.data.width = 40;
  cfg.data.steps = 16;
  cfg.data.distractors = 3;
  cfg.data.min_speed = 2.0;
  cfg.data.max_speed = 4.0;
  cfg.data.noise_sigma = 0.3;
  cfg.data.occlusion_start = 6;
  cfg.data.occlusion_length = 3;
  cfg.data.box_half = 3;
  cfg.model.channels = 8;
  return cfg;
}

Outcome synthetic_benchmark() {
  SynthConfig data = benchmark_config(CellKind::ConvLSTM).data;
  std::vector<SynthSequence> eval_set;
  for (int i = 0; i < 10; ++i) {
    data.seed = 1000 + i;
    eval_set.push_back(generate_synthetic(data));
  }

  std::map<CellKind, EvalMetrics> metrics;
  for (CellKind kind : {CellKind::ClipIndependent, CellKind::ConvLSTM, CellKind::WarpLSTM,
                        CellKind::GtFlowWarp}) {
    const TrainResult result = train(benchmark_config(kind));
    metrics[kind] = evaluate(result.model, eval_set);
  }

  const double warp = metrics[CellKind::WarpLSTM].mean_iou;
  const double conv = metrics[CellKind::ConvLSTM].mean_iou;
  const double indep = metrics[CellKind::ClipIndependent].mean_iou;
  const double gtflow_occl = metrics[CellKind::GtFlowWarp].occl_mean_iou;
  const double indep_occl = metrics[CellKind::ClipIndependent].occl_mean_iou;

  const bool ordering = warp >= conv + 0.02 && conv >= indep + 0.02;
  const bool occlusion = gtflow_occl >= 0.5 && indep_occl < 0.3;
  return {ordering && occlusion,
          fmt("mean_iou warplstm %.3f > convlstm %.3f > clip_independent %.3f; "
              "occluded-frame mean_iou gt_flow_warp %.3f, clip_independent %.3f",
              warp, conv, indep, gtflow_occl, indep_occl)};
}

// ---------------------------------------------------------------------------
// 6. the mAP evaluator agrees with a brute-force oracle

struct MapInstance {
  std::vector<Detection> dets;
  std::vector<GroundTruthBox> gts;
};

Box palette_box(Rng& rng) {
  const double cy = 0.25 * rng.uniform_int(1, 3);
  const double cx = 0.25 * rng.uniform_int(1, 3);
  const double half = 0.05 * rng.uniform_int(2, 4);
  const double jy = 0.05 * rng.uniform_int(-1, 1);
  const double jx = 0.05 * rng.uniform_int(-1, 1);
  return Box{std::max(0.0, cy + jy - half), std::max(0.0, cx + jx - half),
             std::min(1.0, cy + jy + half), std::min(1.0, cx + jx + half)};
}

MapInstance random_map_instance(Rng& rng) {
  MapInstance inst;
  const std::vector<std::string> videos{"a", "b"};
  const std::vector<std::vector<int>> labels{{1}, {2}};
  const int n_gt = rng.uniform_int(1, 6);
  const int n_det = rng.uniform_int(0, 6);
  for (int i = 0; i < n_gt; ++i) {
    inst.gts.push_back(GroundTruthBox{videos[rng.uniform_int(0, 1)], rng.uniform_int(0, 2),
                                      palette_box(rng), labels[rng.uniform_int(0, 1)]});
  }
  for (int i = 0; i < n_det; ++i) {
    inst.dets.push_back(Detection{videos[rng.uniform_int(0, 1)], rng.uniform_int(0, 2),
                                  palette_box(rng), 0.1 * rng.uniform_int(0, 9),
                                  labels[rng.uniform_int(0, 1)]});
  }
  return inst;
}

// greedy matching for the first k detections, re-run from scratch
int oracle_prefix_tp(const std::vector<Detection>& sorted, std::size_t k,
                     const std::vector<GroundTruthBox>& gts, double threshold) {
  std::vector<bool> used(gts.size(), false);
  int tp = 0;
  for (std::size_t i = 0; i < k; ++i) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].video_id != sorted[i].video_id || gts[g].t != sorted[i].t) continue;
      const double ov = iou(sorted[i].box, gts[g].box);
      if (ov >= threshold && ov > best_iou) {
        best_iou = ov;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      used[best] = true;
      ++tp;
    }
  }
  return tp;
}

double oracle_label_ap(std::vector<Detection> dets, const std::vector<GroundTruthBox>& gts,
                       double threshold) {
  if (gts.empty()) return 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<double> recalls, precisions;
  for (std::size_t k = 1; k <= dets.size(); ++k) {
    const int tp = oracle_prefix_tp(dets, k, gts, threshold);
    recalls.push_back(static_cast<double>(tp) / gts.size());
    precisions.push_back(static_cast<double>(tp) / k);
  }
  // area under the precision envelope: height at recall r is the best
  // precision among all operating points with recall >= r
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recalls.size(); ++i) {
    if (recalls[i] <= prev_recall) continue;
    double height = 0.0;
    for (std::size_t j = 0; j < recalls.size(); ++j)
      if (recalls[j] >= recalls[i]) height = std::max(height, precisions[j]);
    ap += (recalls[i] - prev_recall) * height;
    prev_recall = recalls[i];
  }
  return ap;
}

FrameMapResult oracle_frame_map(const MapInstance& inst, double threshold) {
  std::set<std::string> keys;
  for (const auto& d : inst.dets) keys.insert(label_key(d.combined_label));
  for (const auto& g : inst.gts) keys.insert(label_key(g.combined_label));

  FrameMapResult result;
  double sum = 0.0;
  int with_gt = 0;
  for (const std::string& key : keys) {
    std::vector<Detection> dets;
    std::vector<GroundTruthBox> gts;
    for (const auto& d : inst.dets)
      if (label_key(d.combined_label) == key) dets.push_back(d);
    for (const auto& g : inst.gts)
      if (label_key(g.combined_label) == key) gts.push_back(g);
    const double ap = oracle_label_ap(dets, gts, threshold);
    result.per_label_ap[key] = ap;
    if (!gts.empty()) {
      sum += ap;
      ++with_gt;
    }
  }
  if (with_gt) result.mean_ap = sum / with_gt;
  return result;
}

Outcome map_oracle_equivalence() {
  // hand cases first
  const Box unit{0.2, 0.2, 0.6, 0.6};
  const Box miss{0.62, 0.62, 0.9, 0.9};
  const std::vector<int> label{1};

  const std::vector<GroundTruthBox> one_gt{{"v", 0, unit, label}};
  const double perfect = frame_map({{"v", 0, unit, 0.9, label}}, one_gt, 0.5).mean_ap;
  const double wrong = frame_map({{"v", 0, miss, 0.9, label}}, one_gt, 0.5).mean_ap;
  const double halved =
      frame_map({{"v", 1, unit, 0.9, label}, {"v", 0, unit, 0.5, label}}, one_gt, 0.5).mean_ap;
  const bool hand = perfect == 1.0 && wrong == 0.0 && halved == 0.5;

  Rng rng(6066);
  double worst = 0.0;
  int instances = 0;
  for (int it = 0; it < 200; ++it) {
    const MapInstance inst = random_map_instance(rng);
    const FrameMapResult got = frame_map(inst.dets, inst.gts, 0.5);
    const FrameMapResult want = oracle_frame_map(inst, 0.5);
    worst = std::max(worst, std::abs(got.mean_ap - want.mean_ap));
    if (got.per_label_ap.size() != want.per_label_ap.size()) worst = 1.0;
    for (const auto& [key, ap] : want.per_label_ap) {
      const auto found = got.per_label_ap.find(key);
      if (found == got.per_label_ap.end())
        worst = 1.0;
      else
        worst = std::max(worst, std::abs(found->second - ap));
    }
    ++instances;
  }

  const bool pass = hand && worst <= 1e-10;
  return {pass, fmt("hand APs %.1f/%.1f/%.1f; oracle gap %.2e over %d instances", perfect, wrong,
                    halved, worst, instances)};
}

// ---------------------------------------------------------------------------
// 7. the tubelet pipeline is fast, invariant and reproducible

bool same_tubelets(const std::vector<Tubelet>& a, const std::vector<Tubelet>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].video_id != b[i].video_id || a[i].person_id != b[i].person_id ||
        a[i].combined_label != b[i].combined_label || a[i].frames != b[i].frames)
      return false;
  }
  return true;
}

Outcome tubelet_pipeline() {
  Rng rng(7077);
  std::vector<AnnotationRow> rows;
  while (rows.size() < 1000) {
    const int person = static_cast<int>(rows.size() / 25) % 40;
    const int t = rng.uniform_int(0, 19);
    const std::string video = "v" + std::to_string(person % 3);
    const Box box{0.1 + 0.005 * person, 0.1, 0.5 + 0.005 * person, 0.6};
    const int n_labels = rng.uniform_int(1, 3);
    for (int k = 0; k < n_labels && rows.size() < 1000; ++k)
      rows.push_back(AnnotationRow{video, t, box, 1 + (person + k) % 4, person});
  }

  const auto started = std::chrono::steady_clock::now();
  const std::vector<Tubelet> tubelets = link_tubelets(rows);
  SplitSpec spec;
  spec.seed = 11;
  const LabelPartition part = split_by_combined_label(tubelets, spec);
  std::set<std::vector<int>> heldout_labels(part.val.begin(), part.val.end());
  heldout_labels.insert(part.test.begin(), part.test.end());
  std::vector<Tubelet> train_tubelets, heldout;
  for (const Tubelet& tb : tubelets)
    (heldout_labels.count(tb.combined_label) ? heldout : train_tubelets).push_back(tb);
  const std::vector<Tubelet> filtered = remove_training_overlap(train_tubelets, heldout);

  std::map<std::vector<int>, std::vector<Tubelet>> by_label;
  for (const Tubelet& tb : tubelets) by_label[tb.combined_label].push_back(tb);
  std::vector<PairSpec> pairs;
  for (const auto& [label, group] : by_label) {
    if (group.size() < 2) continue;
    for (PairSpec& p : make_pairs(group, 1, 5, PairMode::Random)) pairs.push_back(std::move(p));
  }
  const double elapsed = seconds_since(started);

  // partition: every annotated (video, person, t) slot lands in exactly one
  // linked tubelet frame
  std::set<std::tuple<std::string, int, int>> slots;
  for (const AnnotationRow& r : rows) slots.emplace(r.video_id, r.person_id, r.t);
  std::size_t linked_frames = 0;
  std::set<std::tuple<std::string, int, int>> seen;
  bool no_duplicates = true;
  for (const Tubelet& tb : tubelets) {
    linked_frames += tb.frames.size();
    for (const auto& [t, box] : tb.frames)
      no_duplicates &= seen.emplace(tb.video_id, tb.person_id, t).second;
  }
  const bool partition = no_duplicates && linked_frames == slots.size();

  // split: disjoint buckets covering every linked label
  std::set<std::vector<int>> all_labels;
  for (const Tubelet& tb : tubelets) all_labels.insert(tb.combined_label);
  std::set<std::vector<int>> bucketed;
  std::size_t bucketed_count = 0;
  for (const auto* bucket : {&part.train, &part.val, &part.test}) {
    bucketed.insert(bucket->begin(), bucket->end());
    bucketed_count += bucket->size();
  }
  const bool split_ok = bucketed == all_labels && bucketed_count == all_labels.size();

  // order invariance of the linker
  std::vector<AnnotationRow> shuffled = rows;
  for (std::size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.uniform_int(0, static_cast<int>(i) - 1)]);
  const bool order_invariant = same_tubelets(link_tubelets(shuffled), tubelets);

  // bitwise rerun
  const LabelPartition part2 = split_by_combined_label(link_tubelets(rows), spec);
  bool reproducible = part2.train == part.train && part2.val == part.val &&
                      part2.test == part.test &&
                      same_tubelets(remove_training_overlap(train_tubelets, heldout), filtered);
  std::vector<PairSpec> pairs2;
  for (const auto& [label, group] : by_label) {
    if (group.size() < 2) continue;
    for (PairSpec& p : make_pairs(group, 1, 5, PairMode::Random)) pairs2.push_back(std::move(p));
  }
  reproducible = reproducible && pairs2.size() == pairs.size();
  for (std::size_t i = 0; reproducible && i < pairs.size(); ++i) {
    reproducible = pairs2[i].reference_video == pairs[i].reference_video &&
                   pairs2[i].window_start == pairs[i].window_start &&
                   pairs2[i].window_end == pairs[i].window_end &&
                   pairs2[i].targets.size() == pairs[i].targets.size();
  }

  const bool pass = elapsed < 1.0 && partition && split_ok && order_invariant && reproducible;
  return {pass, fmt("%zu rows -> %zu tubelets, %zu pairs in %.3f s; partition %s, split %s, "
                    "order-invariant %s, reproducible %s",
                    rows.size(), tubelets.size(), pairs.size(), elapsed, partition ? "ok" : "BAD",
                    split_ok ? "ok" : "BAD", order_invariant ? "yes" : "NO",
                    reproducible ? "yes" : "NO")};
}

// ---------------------------------------------------------------------------
// 8. the 20x20 / 3+3 control grid sits exactly on {5,10,15} x {5,10,15}

Outcome control_grid_placement() {
  const ControlPointSet cps = make_control_grid(20, 20, 3, 3);
  std::vector<std::pair<double, double>> expected;  // (y, x), row-major
  for (int y : {5, 10, 15})
    for (int x : {5, 10, 15}) expected.emplace_back(y, x);

  bool pass = cps.interior.size() == expected.size();
  for (std::size_t i = 0; pass && i < expected.size(); ++i) {
    pass = cps.interior[i].y == expected[i].first && cps.interior[i].x == expected[i].second;
  }
  std::ostringstream got;
  for (const Point& p : cps.interior) got << "(" << p.y << "," << p.x << ")";
  return {pass, "interior points " + got.str()};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    Outcome (*check)();
  };
  const Criterion criteria[] = {
      {1, "gradient suite", gradient_suite},
      {2, "spline exactness", spline_exactness},
      {3, "warp identity and cell reduction", warp_identity_and_reduction},
      {4, "integer-destination warp copies sources", destination_pointwise},
      {5, "synthetic benchmark ordering", synthetic_benchmark},
      {6, "frame-mAP oracle equivalence", map_oracle_equivalence},
      {7, "tubelet pipeline", tubelet_pipeline},
      {8, "control grid placement", control_grid_placement},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const Outcome result = c.check()();
    std::printf("[%s] %d %s: %s\n", result.pass ? "PASS" : "FAIL", c.id, c.name,
                result.detail.c_str());
    std::fflush(stdout);
    if (!result.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
