#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "warpcell/rng.hpp"
#include "warpcell/tubelets.hpp"

using namespace warpcell;

namespace {

AnnotationRow row(const std::string& video, int t, int action, int person,
                  const Box& box = Box{0.1, 0.1, 0.5, 0.5}) {
  return AnnotationRow{video, t, box, action, person};
}

Tubelet tubelet(const std::string& video, int person, std::vector<int> label, int t0, int t1,
                const Box& box = Box{0.1, 0.1, 0.5, 0.5}) {
  Tubelet tb{video, person, std::move(label), {}};
  for (int t = t0; t <= t1; ++t) tb.frames.emplace_back(t, box);
  return tb;
}

// ---------------------------------------------------------------------------
// independent evaluator: prefix-by-prefix matching plus explicit PR-point
// envelope enumeration, both O(n^2)

std::vector<const Detection*> sorted_label_dets(const std::vector<Detection>& dets,
                                                const std::string& key) {
  std::vector<const Detection*> out;
  for (const Detection& d : dets)
    if (label_key(d.combined_label) == key) out.push_back(&d);
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection* a, const Detection* b) { return a->score > b->score; });
  return out;
}

std::vector<int> oracle_match_flags(const std::vector<const Detection*>& dets,
                                    const std::vector<GroundTruthBox>& gts, double thr) {
  std::vector<bool> used(gts.size(), false);
  std::vector<int> flags;
  for (const Detection* d : dets) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      if (used[i] || gts[i].video_id != d->video_id || gts[i].t != d->t) continue;
      const double v = iou(d->box, gts[i].box);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(i);
      }
    }
    if (best >= 0 && best_iou >= thr) {
      used[best] = true;
      flags.push_back(1);
    } else {
      flags.push_back(0);
    }
  }
  return flags;
}

double oracle_label_ap(const std::vector<const Detection*>& dets,
                       const std::vector<GroundTruthBox>& gts, double thr) {
  const int n = static_cast<int>(dets.size());
  std::vector<double> rec(n), prec(n);
  for (int k = 1; k <= n; ++k) {
    const std::vector<const Detection*> prefix(dets.begin(), dets.begin() + k);
    const std::vector<int> flags = oracle_match_flags(prefix, gts, thr);
    int tp = 0;
    for (int f : flags) tp += f;
    rec[k - 1] = static_cast<double>(tp) / gts.size();
    prec[k - 1] = static_cast<double>(tp) / k;
  }
  double ap = 0.0, prev_r = 0.0;
  for (int k = 0; k < n; ++k) {
    if (rec[k] <= prev_r) continue;
    double height = 0.0;
    for (int j = 0; j < n; ++j)
      if (rec[j] >= rec[k]) height = std::max(height, prec[j]);
    ap += (rec[k] - prev_r) * height;
    prev_r = rec[k];
  }
  return ap;
}

FrameMapResult oracle_frame_map(const std::vector<Detection>& dets,
                                const std::vector<GroundTruthBox>& gts, double thr) {
  std::set<std::string> gt_keys, det_keys;
  for (const GroundTruthBox& g : gts) gt_keys.insert(label_key(g.combined_label));
  for (const Detection& d : dets) det_keys.insert(label_key(d.combined_label));

  FrameMapResult result;
  double sum = 0.0;
  for (const std::string& key : gt_keys) {
    std::vector<GroundTruthBox> label_gts;
    for (const GroundTruthBox& g : gts)
      if (label_key(g.combined_label) == key) label_gts.push_back(g);
    const double ap = oracle_label_ap(sorted_label_dets(dets, key), label_gts, thr);
    result.per_label_ap[key] = ap;
    sum += ap;
  }
  for (const std::string& key : det_keys)
    if (!gt_keys.count(key)) result.per_label_ap[key] = 0.0;
  result.mean_ap = gt_keys.empty() ? 0.0 : sum / gt_keys.size();
  return result;
}

Box random_box(Rng& rng) {
  // quantized palette so distinct draws often overlap heavily
  const double cy = 0.25 * rng.uniform_int(1, 3);
  const double cx = 0.25 * rng.uniform_int(1, 3);
  const double half = 0.05 * rng.uniform_int(2, 4);
  const double jy = rng.bernoulli(0.5) ? 0.05 : 0.0;
  const double jx = rng.bernoulli(0.5) ? 0.05 : 0.0;
  return Box{std::max(0.0, cy - half + jy), std::max(0.0, cx - half + jx),
             std::min(1.0, cy + half + jy), std::min(1.0, cx + half + jx)};
}

void random_instance(Rng& rng, std::vector<Detection>& dets, std::vector<GroundTruthBox>& gts) {
  const std::vector<std::string> videos = {"a", "b"};
  const std::vector<std::vector<int>> labels = {{1}, {2}};
  gts.clear();
  dets.clear();
  const int n_gt = rng.uniform_int(1, 6);
  const int n_det = rng.uniform_int(0, 6);
  for (int i = 0; i < n_gt; ++i) {
    gts.push_back(GroundTruthBox{videos[rng.uniform_int(0, 1)], rng.uniform_int(0, 2),
                                 random_box(rng), labels[rng.uniform_int(0, 1)]});
  }
  for (int i = 0; i < n_det; ++i) {
    dets.push_back(Detection{videos[rng.uniform_int(0, 1)], rng.uniform_int(0, 2),
                             random_box(rng), 0.1 * rng.uniform_int(0, 9),
                             labels[rng.uniform_int(0, 1)]});
  }
}

}  // namespace

TEST_CASE("label keys round-trip") {
  CHECK(label_key({2, 5, 9}) == "2+5+9");
  CHECK(label_key({7}) == "7");
  CHECK(parse_label_key("2+5+9") == std::vector<int>{2, 5, 9});
  CHECK(parse_label_key("5+2+2") == std::vector<int>{2, 5});  // canonicalized
  CHECK_THROWS_AS(parse_label_key(""), std::runtime_error);
  CHECK_THROWS_AS(parse_label_key("1+x"), std::runtime_error);
}

TEST_CASE("annotation parsing") {
  SUBCASE("empty text gives no rows") { CHECK(parse_annotations_text("").empty()); }
  SUBCASE("single line") {
    const auto rows = parse_annotations_text("vid1,7,0.1,0.2,0.5,0.8,12,3\n");
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].video_id == "vid1");
    CHECK(rows[0].t == 7);
    CHECK(rows[0].box.xmin == 0.1);
    CHECK(rows[0].box.ymin == 0.2);
    CHECK(rows[0].box.xmax == 0.5);
    CHECK(rows[0].box.ymax == 0.8);
    CHECK(rows[0].action_id == 12);
    CHECK(rows[0].person_id == 3);
  }
  SUBCASE("inverted box is rejected with the line number") {
    CHECK_THROWS_WITH_AS(parse_annotations_text("ok,0,0.1,0.1,0.5,0.5,1,1\nv,0,0.7,0.1,0.5,0.5,1,1\n", "f.csv"),
                         "f.csv:2: box min exceeds max", std::runtime_error);
  }
  SUBCASE("coordinate outside the unit square is rejected") {
    CHECK_THROWS_WITH_AS(parse_annotations_text("v,0,0.1,0.1,1.5,0.5,1,1", "f.csv"),
                         "f.csv:1: coordinate outside [0, 1]", std::runtime_error);
  }
  SUBCASE("wrong field count names the line") {
    CHECK_THROWS_WITH_AS(parse_annotations_text("v,0,0.1,0.1\n", "f.csv"),
                         "f.csv:1: expected 8 fields, got 4", std::runtime_error);
  }
  SUBCASE("non-numeric field is rejected") {
    CHECK_THROWS_AS(parse_annotations_text("v,zero,0.1,0.1,0.5,0.5,1,1"), std::runtime_error);
  }
  SUBCASE("negative time is rejected") {
    CHECK_THROWS_AS(parse_annotations_text("v,-1,0.1,0.1,0.5,0.5,1,1"), std::runtime_error);
  }
  SUBCASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "warpcell_ann_test.csv";
    std::ofstream(path) << "v,0,0.1,0.2,0.3,0.4,1,1\nv,1,0.1,0.2,0.3,0.4,1,1\n";
    CHECK(parse_annotations(path.string()).size() == 2);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(parse_annotations(path.string()), std::runtime_error);
  }
}

TEST_CASE("linking merges rows and chains equal label sets") {
  SUBCASE("same label set at consecutive seconds gives one tubelet") {
    const auto tbs = link_tubelets({row("v", 0, 1, 5), row("v", 0, 2, 5), row("v", 1, 2, 5),
                                    row("v", 1, 1, 5)});
    REQUIRE(tbs.size() == 1);
    CHECK(tbs[0].combined_label == std::vector<int>{1, 2});
    CHECK(tbs[0].frames.size() == 2);
    CHECK(tbs[0].start_t() == 0);
    CHECK(tbs[0].end_t() == 1);
  }
  SUBCASE("label set change breaks the chain") {
    const auto tbs = link_tubelets({row("v", 0, 1, 5), row("v", 0, 2, 5), row("v", 1, 1, 5)});
    REQUIRE(tbs.size() == 2);
    CHECK(tbs[0].frames.size() == 1);
    CHECK(tbs[1].frames.size() == 1);
    CHECK(tbs[0].combined_label == std::vector<int>{1, 2});
    CHECK(tbs[1].combined_label == std::vector<int>{1});
  }
  SUBCASE("a one-second gap breaks the chain") {
    const auto tbs = link_tubelets({row("v", 0, 1, 5), row("v", 2, 1, 5)});
    REQUIRE(tbs.size() == 2);
  }
  SUBCASE("different people never link") {
    const auto tbs = link_tubelets({row("v", 0, 1, 5), row("v", 1, 1, 6)});
    CHECK(tbs.size() == 2);
  }
  SUBCASE("conflicting boxes for one person-second are corrupt input") {
    CHECK_THROWS_WITH_AS(link_tubelets({row("v", 0, 1, 5, (Box{0.1, 0.1, 0.5, 0.5})),
                                        row("v", 0, 2, 5, (Box{0.2, 0.1, 0.5, 0.5}))}),
                         "conflicting boxes for video v t=0 person 5", std::runtime_error);
  }
}

TEST_CASE("every labeled box lands in exactly one tubelet") {
  Rng rng(17);
  std::vector<AnnotationRow> rows;
  for (int i = 0; i < 200; ++i) {
    rows.push_back(row(rng.bernoulli(0.5) ? "v1" : "v2", rng.uniform_int(0, 12),
                       rng.uniform_int(1, 3), rng.uniform_int(0, 2)));
  }
  const auto boxes = collect_labeled_boxes(rows);
  const auto tbs = link_tubelets(rows);
  std::size_t frame_total = 0;
  for (const Tubelet& tb : tbs) {
    frame_total += tb.frames.size();
    for (std::size_t i = 1; i < tb.frames.size(); ++i)
      CHECK(tb.frames[i].first == tb.frames[i - 1].first + 1);
    CHECK(!tb.combined_label.empty());
  }
  CHECK(frame_total == boxes.size());
}

TEST_CASE("linking is invariant to input row order") {
  Rng rng(23);
  std::vector<AnnotationRow> rows;
  for (int i = 0; i < 60; ++i) {
    rows.push_back(row("v", rng.uniform_int(0, 9), rng.uniform_int(1, 2), rng.uniform_int(0, 1)));
  }
  const auto base = link_tubelets(rows);
  for (int trial = 0; trial < 5; ++trial) {
    for (int i = static_cast<int>(rows.size()) - 1; i > 0; --i)
      std::swap(rows[i], rows[rng.uniform_int(0, i)]);
    const auto shuffled = link_tubelets(rows);
    REQUIRE(shuffled.size() == base.size());
    for (std::size_t k = 0; k < base.size(); ++k) {
      CHECK(shuffled[k].video_id == base[k].video_id);
      CHECK(shuffled[k].person_id == base[k].person_id);
      CHECK(shuffled[k].combined_label == base[k].combined_label);
      CHECK(shuffled[k].frames.size() == base[k].frames.size());
    }
  }
}

TEST_CASE("label splitting") {
  std::vector<Tubelet> tbs;
  for (int label = 1; label <= 6; ++label)
    for (int copy = 0; copy < 3; ++copy)
      tbs.push_back(tubelet("v", label * 10 + copy, {label}, copy * 5, copy * 5 + 1));
  tbs.push_back(tubelet("v", 99, {7}, 0, 3));  // single sample

  SUBCASE("rare labels stay out of validation and test") {
    SplitSpec spec;
    spec.seed = 5;
    const LabelPartition part = split_by_combined_label(tbs, spec);
    const std::vector<int> rare = {7};
    CHECK(std::count(part.train.begin(), part.train.end(), rare) == 1);
    CHECK(std::count(part.val.begin(), part.val.end(), rare) == 0);
    CHECK(std::count(part.test.begin(), part.test.end(), rare) == 0);
  }
  SUBCASE("partition is disjoint and covers every label") {
    for (std::uint64_t seed : {0ULL, 1ULL, 42ULL}) {
      SplitSpec spec;
      spec.seed = seed;
      const LabelPartition part = split_by_combined_label(tbs, spec);
      std::set<std::vector<int>> seen;
      for (const auto* bucket : {&part.train, &part.val, &part.test})
        for (const auto& label : *bucket) CHECK(seen.insert(label).second);
      CHECK(seen.size() == 7);
      CHECK(part.val.size() + part.test.size() + part.train.size() == 7);
    }
  }
  SUBCASE("each qualifying label lands in exactly one bucket") {
    SplitSpec spec;
    spec.seed = 11;
    const LabelPartition part = split_by_combined_label(tbs, spec);
    for (int label = 1; label <= 6; ++label) {
      const std::vector<int> l = {label};
      const int hits = static_cast<int>(std::count(part.train.begin(), part.train.end(), l) +
                                        std::count(part.val.begin(), part.val.end(), l) +
                                        std::count(part.test.begin(), part.test.end(), l));
      CHECK(hits == 1);
    }
  }
  SUBCASE("same seed reproduces the partition, explicit lists are honored") {
    SplitSpec spec;
    spec.seed = 9;
    const LabelPartition a = split_by_combined_label(tbs, spec);
    const LabelPartition b = split_by_combined_label(tbs, spec);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);

    spec.explicit_val = {{3}};
    spec.explicit_test = {{4}};
    spec.val_fraction = spec.test_fraction = 0.0;
    const LabelPartition c = split_by_combined_label(tbs, spec);
    CHECK(c.val == std::vector<std::vector<int>>{{3}});
    CHECK(c.test == std::vector<std::vector<int>>{{4}});
  }
  SUBCASE("overlapping explicit lists are rejected") {
    SplitSpec spec;
    spec.explicit_val = {{3}};
    spec.explicit_test = {{3}};
    CHECK_THROWS_AS(split_by_combined_label(tbs, spec), std::invalid_argument);
  }
  SUBCASE("min_samples below two is rejected") {
    SplitSpec spec;
    spec.min_samples = 1;
    CHECK_THROWS_AS(split_by_combined_label(tbs, spec), std::invalid_argument);
  }
}

TEST_CASE("held-out frames are cut out of training tubelets") {
  SUBCASE("no overlap leaves training untouched") {
    const auto train = {tubelet("v", 1, {1}, 0, 4)};
    const auto out = remove_training_overlap(train, {tubelet("w", 2, {9}, 0, 4)});
    REQUIRE(out.size() == 1);
    CHECK(out[0].frames.size() == 5);
  }
  SUBCASE("full overlap deletes the tubelet") {
    const auto out =
        remove_training_overlap({tubelet("v", 1, {1}, 2, 3)}, {tubelet("v", 2, {9}, 0, 5)});
    CHECK(out.empty());
  }
  SUBCASE("a middle hole splits a five-frame tubelet into two of length two") {
    const auto out =
        remove_training_overlap({tubelet("v", 1, {1}, 0, 4)}, {tubelet("v", 2, {9}, 2, 2)});
    REQUIRE(out.size() == 2);
    CHECK(out[0].frames.size() == 2);
    CHECK(out[0].start_t() == 0);
    CHECK(out[1].frames.size() == 2);
    CHECK(out[1].start_t() == 3);
    CHECK(out[0].combined_label == std::vector<int>{1});
  }
}

TEST_CASE("pairing") {
  SUBCASE("two samples query each other") {
    const std::vector<Tubelet> tbs = {tubelet("v1", 1, {1}, 0, 2), tubelet("v2", 2, {1}, 5, 7)};
    const auto pairs = make_pairs(tbs, 0, 0, PairMode::Fixed);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].query.video_id == "v1");
    CHECK(pairs[0].reference_video == "v2");
    CHECK(pairs[1].query.video_id == "v2");
    CHECK(pairs[1].reference_video == "v1");
  }
  SUBCASE("window is the padded target span, clamped at zero") {
    const std::vector<Tubelet> tbs = {tubelet("v1", 1, {1}, 0, 1), tubelet("v2", 2, {1}, 4, 6)};
    const auto pairs = make_pairs(tbs, 1, 0, PairMode::Fixed);
    CHECK(pairs[0].window_start == 3);
    CHECK(pairs[0].window_end == 7);
    CHECK(pairs[1].window_start == 0);  // 0 - 1 clamps
    CHECK(pairs[1].window_end == 2);
  }
  SUBCASE("all same-label tubelets inside the window become targets") {
    const std::vector<Tubelet> tbs = {tubelet("q", 1, {1}, 0, 1), tubelet("r", 2, {1}, 4, 6),
                                      tubelet("r", 3, {1}, 5, 7), tubelet("r", 4, {1}, 30, 31)};
    const auto pairs = make_pairs(tbs, 1, 0, PairMode::Fixed);
    // query 0 pairs with tubelet 1: window [3, 7] holds both r-video tubelets
    REQUIRE(pairs[0].targets.size() == 2);
    CHECK(pairs[0].targets[0].person_id == 2);
    CHECK(pairs[0].targets[1].person_id == 3);
  }
  SUBCASE("random mode is seed-deterministic and never self-pairs") {
    std::vector<Tubelet> tbs;
    for (int i = 0; i < 7; ++i) tbs.push_back(tubelet("v" + std::to_string(i), i, {1}, i, i + 2));
    const auto a = make_pairs(tbs, 2, 123, PairMode::Random);
    const auto b = make_pairs(tbs, 2, 123, PairMode::Random);
    REQUIRE(a.size() == 7);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].reference_video == b[i].reference_video);
      CHECK(a[i].reference_video != a[i].query.video_id);
      CHECK(a[i].window_start == b[i].window_start);
    }
  }
  SUBCASE("single-sample labels cannot pair") {
    CHECK_THROWS_WITH_AS(make_pairs({tubelet("v", 1, {1}, 0, 2)}, 1, 0, PairMode::Fixed),
                         "make_pairs: no pair can be formed for a single-sample label",
                         std::invalid_argument);
  }
  SUBCASE("mixed labels are rejected") {
    CHECK_THROWS_AS(make_pairs({tubelet("v", 1, {1}, 0, 2), tubelet("v", 2, {2}, 0, 2)}, 1, 0,
                               PairMode::Fixed),
                    std::invalid_argument);
  }
}

TEST_CASE("iou") {
  const Box a{0.2, 0.2, 0.6, 0.6};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{0.7, 0.7, 0.9, 0.9}) == 0.0);
  // unit-agnostic: (x, y) in [0,3] works the same as normalized input
  CHECK(iou(Box{0.0, 0.0, 2.0, 2.0}, Box{0.0, 1.0, 2.0, 3.0}) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(Box{0.5, 0.5, 0.5, 0.5}, Box{0.5, 0.5, 0.5, 0.5}) == 0.0);  // degenerate union
}

TEST_CASE("frame-ap hand cases") {
  const std::vector<int> label = {1};
  const Box unit{0.0, 0.0, 1.0, 1.0};
  const std::vector<GroundTruthBox> gt = {{"v", 0, unit, label}};

  SUBCASE("exact match gives ap one") {
    const std::vector<Detection> dets = {{"v", 0, unit, 0.9, label}};
    const FrameMapResult r = frame_map(dets, gt, 0.5);
    CHECK(r.per_label_ap.at("1") == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r.mean_ap == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("iou 0.4 misses a 0.5 threshold") {
    const std::vector<Detection> dets = {{"v", 0, Box{0.0, 0.0, 0.4, 1.0}, 0.9, label}};
    CHECK(frame_map(dets, gt, 0.5).per_label_ap.at("1") == 0.0);
    CHECK(frame_map(dets, gt, 0.35).per_label_ap.at("1") == 1.0);
  }
  SUBCASE("higher-scored false positive halves the ap") {
    const std::vector<Detection> dets = {{"v", 0, Box{0.6, 0.6, 0.9, 0.9}, 0.9, label},
                                         {"v", 0, unit, 0.5, label}};
    CHECK(frame_map(dets, gt, 0.5).per_label_ap.at("1") == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("a perfect box at the wrong second is a false positive") {
    const std::vector<Detection> dets = {{"v", 1, unit, 0.9, label}};
    CHECK(frame_map(dets, gt, 0.5).per_label_ap.at("1") == 0.0);
  }
  SUBCASE("detected label with no ground truth anywhere scores zero, outside the mean") {
    const std::vector<Detection> dets = {{"v", 0, unit, 0.9, label},
                                         {"v", 0, unit, 0.8, {2}}};
    const FrameMapResult r = frame_map(dets, gt, 0.5);
    CHECK(r.per_label_ap.at("2") == 0.0);
    CHECK(r.mean_ap == doctest::Approx(1.0).epsilon(1e-14));  // only label 1 has ground truth
  }
  SUBCASE("no detections means zero ap") {
    CHECK(frame_map({}, gt, 0.5).per_label_ap.at("1") == 0.0);
  }
  SUBCASE("threshold domain") {
    CHECK_THROWS_AS(frame_map({}, gt, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(frame_map({}, gt, 1.0), std::invalid_argument);
  }
}

TEST_CASE("frame-ap matches the prefix-enumeration evaluator on random instances") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> dets;
    std::vector<GroundTruthBox> gts;
    random_instance(rng, dets, gts);
    const FrameMapResult fast = frame_map(dets, gts, 0.5);
    const FrameMapResult slow = oracle_frame_map(dets, gts, 0.5);
    REQUIRE(fast.per_label_ap.size() == slow.per_label_ap.size());
    for (const auto& [key, ap] : slow.per_label_ap) {
      REQUIRE(fast.per_label_ap.count(key) == 1);
      CHECK(std::abs(fast.per_label_ap.at(key) - ap) <= 1e-10);
      CHECK(ap >= 0.0);
      CHECK(ap <= 1.0);
    }
    CHECK(std::abs(fast.mean_ap - slow.mean_ap) <= 1e-10);
    CHECK(fast.mean_ap >= 0.0);
    CHECK(fast.mean_ap <= 1.0);
  }
}

TEST_CASE("dropping the lowest-scored false positive never hurts any label") {
  Rng rng(777);
  int exercised = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Detection> dets;
    std::vector<GroundTruthBox> gts;
    random_instance(rng, dets, gts);
    if (dets.empty()) continue;

    // locate false positives via the reference matcher, label by label
    const Detection* victim = nullptr;
    std::set<std::string> keys;
    for (const Detection& d : dets) keys.insert(label_key(d.combined_label));
    for (const std::string& key : keys) {
      std::vector<GroundTruthBox> label_gts;
      for (const GroundTruthBox& g : gts)
        if (label_key(g.combined_label) == key) label_gts.push_back(g);
      const auto sorted = sorted_label_dets(dets, key);
      const auto flags = oracle_match_flags(sorted, label_gts, 0.5);
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (!flags[i] && (!victim || sorted[i]->score < victim->score)) victim = sorted[i];
      }
    }
    if (!victim) continue;
    ++exercised;

    const FrameMapResult before = frame_map(dets, gts, 0.5);
    std::vector<Detection> pruned;
    for (const Detection& d : dets)
      if (&d != victim) pruned.push_back(d);
    const FrameMapResult after = frame_map(pruned, gts, 0.5);
    for (const auto& [key, ap] : before.per_label_ap) {
      if (after.per_label_ap.count(key)) CHECK(after.per_label_ap.at(key) >= ap - 1e-12);
    }
  }
  CHECK(exercised >= 30);  // the generator must actually produce false positives
}

TEST_CASE("thousand-row reorganization runs fast and reproducibly") {
  Rng rng(99);
  std::vector<AnnotationRow> rows;
  int made = 0;
  for (int person = 0; person < 40 && made < 1000; ++person) {
    for (int t = 0; t < 20 && made < 1000; ++t) {
      const int n_labels = rng.uniform_int(1, 3);
      const std::string video = person % 2 ? "v1" : "v2";
      const Box box{0.1 + 0.01 * person, 0.1, 0.5 + 0.01 * person, 0.5};
      for (int k = 0; k < n_labels && made < 1000; ++k) {
        rows.push_back(row(video, t, 1 + (person + k) % 4, person, box));
        ++made;
      }
    }
  }
  REQUIRE(rows.size() == 1000);

  const auto started = std::chrono::steady_clock::now();
  const auto tbs = link_tubelets(rows);
  SplitSpec spec;
  spec.seed = 4;
  const LabelPartition part = split_by_combined_label(tbs, spec);
  std::set<std::vector<int>> heldout_labels(part.val.begin(), part.val.end());
  heldout_labels.insert(part.test.begin(), part.test.end());
  std::vector<Tubelet> train, heldout;
  for (const Tubelet& tb : tbs)
    (heldout_labels.count(tb.combined_label) ? heldout : train).push_back(tb);
  const auto filtered = remove_training_overlap(train, heldout);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  CHECK(elapsed < 1.0);
  CHECK(!tbs.empty());

  // bitwise rerun
  const auto tbs2 = link_tubelets(rows);
  const LabelPartition part2 = split_by_combined_label(tbs2, spec);
  CHECK(part2.train == part.train);
  CHECK(part2.val == part.val);
  CHECK(part2.test == part.test);
  const auto filtered2 = remove_training_overlap(train, heldout);
  REQUIRE(filtered2.size() == filtered.size());
  for (std::size_t i = 0; i < filtered.size(); ++i) {
    CHECK(filtered2[i].video_id == filtered[i].video_id);
    CHECK(filtered2[i].frames == filtered[i].frames);
  }
}
