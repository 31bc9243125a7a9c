#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "warpcell/matching.hpp"

namespace warpcell {

/// One CSV annotation line: a person's box at an integer second carrying one
/// action label. A box with several labels appears as several rows sharing
/// (video, t, person).
struct AnnotationRow {
  std::string video_id;
  int t = 0;
  Box box;
  int action_id = 0;
  int person_id = 0;
};

/// A maximal chain of per-second boxes for one person whose label set stays
/// constant. frames are strictly consecutive seconds.
struct Tubelet {
  std::string video_id;
  int person_id = 0;
  std::vector<int> combined_label;  // sorted, unique, nonempty
  std::vector<std::pair<int, Box>> frames;

  int start_t() const { return frames.front().first; }
  int end_t() const { return frames.back().first; }
};

struct Detection {
  std::string video_id;
  int t = 0;
  Box box;
  double score = 0.0;
  std::vector<int> combined_label;
};

struct GroundTruthBox {
  std::string video_id;
  int t = 0;
  Box box;
  std::vector<int> combined_label;
};

/// A query tubelet with the reference segment it should be matched against.
struct PairSpec {
  Tubelet query;
  std::string reference_video;
  int window_start = 0, window_end = 0;  // inclusive seconds
  std::vector<Tubelet> targets;          // every same-label tubelet inside the window
};

/// Canonical text form of a combined label, e.g. {2, 5} -> "2+5".
std::string label_key(const std::vector<int>& combined_label);
std::vector<int> parse_label_key(const std::string& key);

/// CSV `video_id,t,x1,y1,x2,y2,action_id,person_id`, normalized coordinates.
/// Errors carry `source:line`.
std::vector<AnnotationRow> parse_annotations(const std::string& path);
std::vector<AnnotationRow> parse_annotations_text(const std::string& text,
                                                  const std::string& source = "<string>");

/// CSV `video_id,t,ymin,xmin,ymax,xmax,score,label_key`.
std::vector<Detection> parse_detections(const std::string& path);

/// Groups rows into labeled boxes (one per video/t/person, label set = union
/// of action ids) without linking. Two rows of one group disagreeing on the
/// box is an error.
std::vector<GroundTruthBox> collect_labeled_boxes(const std::vector<AnnotationRow>& rows);

/// Links boxes of the same person at consecutive seconds iff their label sets
/// are identical. Output sorted by (video, person, start time).
std::vector<Tubelet> link_tubelets(const std::vector<AnnotationRow>& rows);

struct SplitSpec {
  int min_samples = 2;             // labels below this stay in train
  double val_fraction = 0.25;      // of qualifying labels, when no explicit lists
  double test_fraction = 0.25;
  std::vector<std::vector<int>> explicit_val, explicit_test;  // honored verbatim
  std::uint64_t seed = 0;
};

struct LabelPartition {
  std::vector<std::vector<int>> train, val, test;  // disjoint combined labels
};

LabelPartition split_by_combined_label(const std::vector<Tubelet>& tubelets,
                                       const SplitSpec& spec);

/// Deletes from every training tubelet any (video, t) frame also covered by a
/// held-out tubelet, splitting at the holes and dropping empty remnants.
std::vector<Tubelet> remove_training_overlap(const std::vector<Tubelet>& train,
                                             const std::vector<Tubelet>& heldout);

enum class PairMode { Random, Fixed };

/// Pairs every tubelet of one combined label with a distinct target. The
/// reference window is the target's span padded on both sides (clamped at 0);
/// all same-label tubelets of the target's video lying fully inside the
/// window become targets.
std::vector<PairSpec> make_pairs(const std::vector<Tubelet>& same_label, int background_pad,
                                 std::uint64_t seed, PairMode mode);

/// Intersection over union; 0 when the union has zero area.
double iou(const Box& a, const Box& b);

struct FrameMapResult {
  std::map<std::string, double> per_label_ap;  // keyed by label_key
  double mean_ap = 0.0;                        // over labels with >= 1 ground truth
};

/// Frame-level average precision per combined label: detections sorted by
/// descending score (input order on ties), matched greedily to the unmatched
/// ground truth of highest IoU >= threshold in the same (video, t); AP is the
/// area under the precision envelope.
FrameMapResult frame_map(const std::vector<Detection>& detections,
                         const std::vector<GroundTruthBox>& ground_truth, double iou_threshold);

}  // namespace warpcell
