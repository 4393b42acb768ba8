#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "detkit/data.hpp"
#include "detkit/geometry.hpp"
#include "detkit/matching.hpp"
#include "detkit/pipeline.hpp"

namespace detkit {

// The ten COCO IoU thresholds 0.50, 0.55, ..., 0.95, each built by integer
// division so every consumer lands on bit-identical values.
inline const std::array<double, 10>& coco_thresholds() {
  static const std::array<double, 10> t = [] {
    std::array<double, 10> v{};
    for (int k = 0; k < 10; ++k) v[k] = static_cast<double>(50 + 5 * k) / 100.0;
    return v;
  }();
  return t;
}

inline std::string format_fixed(double v, int decimals = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

// ---- average recall --------------------------------------------------------

struct ARTable {
  std::array<double, 10> ar_at{};  // indexed like coco_thresholds()
  double ar = 0.0;                 // mean of the ten
  int budget = 0;
};

namespace detail {

// Top-`budget` boxes by score, descending, ties to the lower index; every box
// when the set is unscored.
inline std::vector<Box> budgeted_boxes(const ProposalSet& ps, int budget) {
  if (!ps.scores) return ps.boxes;
  std::vector<std::size_t> order(ps.boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return (*ps.scores)[a] > (*ps.scores)[b];
  });
  if (order.size() > static_cast<std::size_t>(budget)) order.resize(static_cast<std::size_t>(budget));
  std::vector<Box> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(ps.boxes[i]);
  return out;
}

// Ground-truth-driven greedy matching: each gt, in index order, claims its
// best still-unclaimed proposal with IoU >= t (ties to the lower proposal
// index). Returns the number of matched gts.
inline std::size_t greedy_recall_matches(const IoUMatrix& m, double t) {
  std::vector<bool> used(m.rows(), false);
  std::size_t matched = 0;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double best = 0.0;
    std::ptrdiff_t best_i = -1;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      if (used[i]) continue;
      const double v = m.at(i, j);
      if (v >= t && v > best) {
        best = v;
        best_i = static_cast<std::ptrdiff_t>(i);
      }
    }
    if (best_i >= 0) {
      used[static_cast<std::size_t>(best_i)] = true;
      ++matched;
    }
  }
  return matched;
}

}  // namespace detail

// COCO-style proposal recall at the ten thresholds, class-agnostic, over the
// top-`budget` proposals per image.
inline ARTable average_recall(const std::vector<ProposalSet>& proposals,
                              const std::vector<GroundTruth>& gts, int budget) {
  if (budget < 1) throw std::invalid_argument("average_recall: budget must be >= 1");
  if (proposals.size() != gts.size())
    throw std::invalid_argument("average_recall: proposal/gt image count mismatch");
  std::size_t total_gt = 0;
  for (const GroundTruth& g : gts) total_gt += g.size();
  if (total_gt == 0) throw std::invalid_argument("average_recall: no ground truth instances");

  std::array<std::size_t, 10> matched{};
  for (std::size_t img = 0; img < gts.size(); ++img) {
    if (gts[img].empty()) continue;
    const std::vector<Box> boxes = detail::budgeted_boxes(proposals[img], budget);
    std::vector<Box> gt_boxes;
    gt_boxes.reserve(gts[img].size());
    for (const GtInstance& g : gts[img]) gt_boxes.push_back(g.box);
    const IoUMatrix m = iou_matrix(boxes, gt_boxes);
    for (int k = 0; k < 10; ++k)
      matched[static_cast<std::size_t>(k)] += detail::greedy_recall_matches(m, coco_thresholds()[k]);
  }

  ARTable table;
  table.budget = budget;
  double sum = 0.0;
  for (int k = 0; k < 10; ++k) {
    table.ar_at[k] = static_cast<double>(matched[k]) / static_cast<double>(total_gt);
    sum += table.ar_at[k];
  }
  table.ar = sum / 10.0;
  for (int k = 0; k + 1 < 10; ++k)
    if (table.ar_at[k] < table.ar_at[k + 1])
      throw std::logic_error("average_recall: AR@t increased with t");
  return table;
}

// ---- average precision -----------------------------------------------------

struct ApResult {
  double ap = 0.0, ap50 = 0.0, ap75 = 0.0;
  std::array<double, 10> ap_at{};  // class-mean per threshold
  std::vector<double> per_class;   // mean over thresholds; NaN for classes with no gt
  int classes_with_gt = 0;
};

namespace detail {

struct ClassDetections {
  std::vector<const Detection*> dets;  // sorted: score desc, image_id asc, box lex asc
  std::map<std::int64_t, std::vector<Box>> gt_boxes;
  std::size_t total_gt = 0;
};

inline bool box_lex_less(const Box& a, const Box& b) {
  if (a.x1 != b.x1) return a.x1 < b.x1;
  if (a.y1 != b.y1) return a.y1 < b.y1;
  if (a.x2 != b.x2) return a.x2 < b.x2;
  return a.y2 < b.y2;
}

// 101-point interpolated AP for one class at one threshold via greedy
// matching in score order: each detection claims its best unclaimed gt of the
// class in its image with IoU >= t.
inline double ap_single(const ClassDetections& cd, double t) {
  if (cd.total_gt == 0) return std::numeric_limits<double>::quiet_NaN();
  std::map<std::int64_t, std::vector<bool>> used;
  for (const auto& [img, boxes] : cd.gt_boxes) used[img].assign(boxes.size(), false);

  std::vector<int> is_tp;
  is_tp.reserve(cd.dets.size());
  for (const Detection* d : cd.dets) {
    auto it = cd.gt_boxes.find(d->image_id);
    double best = 0.0;
    std::ptrdiff_t best_j = -1;
    if (it != cd.gt_boxes.end()) {
      std::vector<bool>& u = used[d->image_id];
      for (std::size_t j = 0; j < it->second.size(); ++j) {
        if (u[j]) continue;
        const double v = iou(d->box, it->second[j]);
        if (v >= t && v > best) {
          best = v;
          best_j = static_cast<std::ptrdiff_t>(j);
        }
      }
    }
    if (best_j >= 0) {
      used[d->image_id][static_cast<std::size_t>(best_j)] = true;
      is_tp.push_back(1);
    } else {
      is_tp.push_back(0);
    }
  }

  std::vector<double> precision(is_tp.size()), recall(is_tp.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < is_tp.size(); ++k) {
    tp += static_cast<std::size_t>(is_tp[k]);
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(cd.total_gt);
  }
  // Monotone precision envelope from the right, sampled at recalls 0..1 in
  // hundredths.
  for (std::size_t k = precision.size(); k-- > 1;)
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double sum = 0.0;
  std::size_t idx = 0;
  for (int r = 0; r <= 100; ++r) {
    const double rr = static_cast<double>(r) / 100.0;
    while (idx < recall.size() && recall[idx] < rr) ++idx;
    if (idx < recall.size()) sum += precision[idx];
  }
  return sum / 101.0;
}

}  // namespace detail

// COCO-style AP: greedy matching per class and threshold, 101-point
// interpolation, class mean then threshold mean. Classes without ground truth
// are excluded from the means. An optional [lo, hi) box-area filter restricts
// both detections and ground truth (the small/medium/large views).
inline ApResult average_precision(const std::vector<Detection>& detections,
                                  const std::map<std::int64_t, GroundTruth>& gts, int num_classes,
                                  std::optional<std::pair<double, double>> area_range = std::nullopt) {
  if (num_classes < 1) throw std::invalid_argument("average_precision: num_classes must be >= 1");
  const auto in_range = [&](const Box& b) {
    if (!area_range) return true;
    const double a = b.area();
    return a >= area_range->first && a < area_range->second;
  };

  std::vector<detail::ClassDetections> per_class(static_cast<std::size_t>(num_classes));
  for (const auto& [img, gt] : gts)
    for (const GtInstance& g : gt) {
      if (g.class_id < 0 || g.class_id >= num_classes)
        throw std::invalid_argument("average_precision: gt class out of range");
      if (!in_range(g.box)) continue;
      auto& cd = per_class[static_cast<std::size_t>(g.class_id)];
      cd.gt_boxes[img].push_back(g.box);
      ++cd.total_gt;
    }
  for (const Detection& d : detections) {
    if (d.class_id < 0 || d.class_id >= num_classes)
      throw std::invalid_argument("average_precision: detection class out of range");
    if (!in_range(d.box)) continue;
    per_class[static_cast<std::size_t>(d.class_id)].dets.push_back(&d);
  }
  for (auto& cd : per_class) {
    std::stable_sort(cd.dets.begin(), cd.dets.end(), [](const Detection* a, const Detection* b) {
      if (a->final_score != b->final_score) return a->final_score > b->final_score;
      if (a->image_id != b->image_id) return a->image_id < b->image_id;
      return detail::box_lex_less(a->box, b->box);
    });
  }

  ApResult res;
  res.per_class.assign(static_cast<std::size_t>(num_classes), std::numeric_limits<double>::quiet_NaN());
  std::array<double, 10> sums{};
  for (int c = 0; c < num_classes; ++c) {
    const auto& cd = per_class[static_cast<std::size_t>(c)];
    if (cd.total_gt == 0) continue;
    ++res.classes_with_gt;
    double class_sum = 0.0;
    for (int k = 0; k < 10; ++k) {
      const double v = detail::ap_single(cd, coco_thresholds()[k]);
      sums[static_cast<std::size_t>(k)] += v;
      class_sum += v;
    }
    res.per_class[static_cast<std::size_t>(c)] = class_sum / 10.0;
  }
  if (res.classes_with_gt == 0) {
    res.ap = res.ap50 = res.ap75 = std::numeric_limits<double>::quiet_NaN();
    res.ap_at.fill(std::numeric_limits<double>::quiet_NaN());
    return res;
  }
  double total = 0.0;
  for (int k = 0; k < 10; ++k) {
    res.ap_at[k] = sums[static_cast<std::size_t>(k)] / static_cast<double>(res.classes_with_gt);
    total += res.ap_at[k];
  }
  res.ap = total / 10.0;
  res.ap50 = res.ap_at[0];
  res.ap75 = res.ap_at[5];
  return res;
}

// ---- IoU histograms --------------------------------------------------------

enum class HistogramPopulation { kOriginalPositive, kAugmentedPositive };

inline const char* histogram_population_name(HistogramPopulation p) {
  return p == HistogramPopulation::kOriginalPositive ? "original-positive" : "augmented-positive";
}

struct IoUHistogram {
  std::vector<double> edges;         // bins + 1, spanning [0.5, 1.0]
  std::vector<std::size_t> counts;   // counts sum to the population size
  HistogramPopulation population = HistogramPopulation::kOriginalPositive;

  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
};

// Histogram of max-IoU values >= 0.5. The original-positive population keeps
// boxes whose provenance is original (or verbatim-kept positives); the
// augmented-positive population spans the whole augmented set and requires
// provenance tags to prove the dump is an augmented one. Untagged sets count
// entirely as original.
inline IoUHistogram iou_histogram(const std::vector<ProposalSet>& proposals,
                                  const std::vector<GroundTruth>& gts, HistogramPopulation population,
                                  int bins = 10) {
  if (bins < 1) throw std::invalid_argument("iou_histogram: bins must be >= 1");
  if (proposals.size() != gts.size())
    throw std::invalid_argument("iou_histogram: proposal/gt image count mismatch");

  IoUHistogram h;
  h.population = population;
  const double width = 0.5 / static_cast<double>(bins);
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int k = 0; k <= bins; ++k) h.edges[static_cast<std::size_t>(k)] = 0.5 + width * k;
  h.counts.assign(static_cast<std::size_t>(bins), 0);

  for (std::size_t img = 0; img < proposals.size(); ++img) {
    const ProposalSet& ps = proposals[img];
    if (population == HistogramPopulation::kAugmentedPositive && !ps.provenance)
      throw SchemaError("iou_histogram: augmented-positive population needs provenance tags");
    if (ps.boxes.empty()) continue;
    const MatchResult m = match(ps.boxes, gts[img], 0.5);
    for (std::size_t i = 0; i < ps.boxes.size(); ++i) {
      if (!m.positive[i]) continue;
      if (population == HistogramPopulation::kOriginalPositive && ps.provenance) {
        const Provenance p = (*ps.provenance)[i];
        if (p != Provenance::kOriginal && p != Provenance::kPositiveOriginal) continue;
      }
      const double v = m.max_iou[i];
      auto bin = static_cast<std::size_t>((v - 0.5) / width);
      if (bin >= static_cast<std::size_t>(bins)) bin = static_cast<std::size_t>(bins) - 1;
      ++h.counts[bin];
    }
  }
  return h;
}

// ---- score quality ---------------------------------------------------------

namespace detail {

// Average ranks (1-based), ties sharing the mean of their rank span.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw std::invalid_argument("correlation undefined: a variable has no variance");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace detail

// Spearman rank correlation between final scores and each detection's best
// IoU against any ground truth box in its image (0 when the image has none).
inline double score_iou_correlation(const std::vector<Detection>& detections,
                                    const std::map<std::int64_t, GroundTruth>& gts) {
  if (detections.size() < 2)
    throw std::invalid_argument("score_iou_correlation: need at least 2 detections");
  std::vector<double> scores, ious;
  scores.reserve(detections.size());
  ious.reserve(detections.size());
  for (const Detection& d : detections) {
    scores.push_back(d.final_score);
    double best = 0.0;
    auto it = gts.find(d.image_id);
    if (it != gts.end())
      for (const GtInstance& g : it->second) best = std::max(best, iou(d.box, g.box));
    ious.push_back(best);
  }
  return detail::pearson(detail::average_ranks(scores), detail::average_ranks(ious));
}

// ---- report emission -------------------------------------------------------

struct EvalReport {
  ApResult ap;
  std::optional<double> ap_small, ap_medium, ap_large;
  std::optional<double> spearman;
  std::size_t num_detections = 0;
  std::size_t num_images = 0;
};

inline nlohmann::json ar_table_to_json(const ARTable& t) {
  nlohmann::json j;
  j["ar"] = t.ar;
  for (int k = 0; k < 10; ++k) j["ar" + std::to_string(50 + 5 * k)] = t.ar_at[static_cast<std::size_t>(k)];
  j["budget"] = t.budget;
  return j;
}

inline std::string ar_table_to_csv(const ARTable& t) {
  std::ostringstream out;
  out << "metric,value\n";
  out << "ar," << format_fixed(t.ar) << "\n";
  for (int k = 0; k < 10; ++k)
    out << "ar" << (50 + 5 * k) << "," << format_fixed(t.ar_at[static_cast<std::size_t>(k)]) << "\n";
  out << "budget," << t.budget << "\n";
  return out.str();
}

// One-row view with the five staple recall columns.
inline std::string ar_table_row_csv(const ARTable& t) {
  std::ostringstream out;
  out << "ar50,ar60,ar70,ar80,ar90\n";
  out << format_fixed(t.ar_at[0]) << "," << format_fixed(t.ar_at[2]) << ","
      << format_fixed(t.ar_at[4]) << "," << format_fixed(t.ar_at[6]) << ","
      << format_fixed(t.ar_at[8]) << "\n";
  return out.str();
}

inline std::string histogram_to_csv(const IoUHistogram& h) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t k = 0; k < h.counts.size(); ++k)
    out << format_fixed(h.edges[k]) << "," << format_fixed(h.edges[k + 1]) << "," << h.counts[k] << "\n";
  return out.str();
}

inline nlohmann::json histogram_to_json(const IoUHistogram& h) {
  nlohmann::json j;
  j["population"] = histogram_population_name(h.population);
  j["edges"] = h.edges;
  j["counts"] = h.counts;
  return j;
}

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["ap"] = r.ap.ap;
  j["ap50"] = r.ap.ap50;
  j["ap75"] = r.ap.ap75;
  for (int k = 0; k < 10; ++k)
    j["ap_at"][std::to_string(50 + 5 * k)] = r.ap.ap_at[static_cast<std::size_t>(k)];
  nlohmann::json pc = nlohmann::json::array();
  for (double v : r.ap.per_class) {
    if (std::isnan(v))
      pc.push_back(nullptr);
    else
      pc.push_back(v);
  }
  j["per_class_ap"] = std::move(pc);
  if (r.ap_small) j["ap_small"] = *r.ap_small;
  if (r.ap_medium) j["ap_medium"] = *r.ap_medium;
  if (r.ap_large) j["ap_large"] = *r.ap_large;
  if (r.spearman) j["score_iou_spearman"] = *r.spearman;
  j["num_detections"] = r.num_detections;
  j["num_images"] = r.num_images;
  return j;
}

inline std::string eval_report_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "metric,value\n";
  out << "ap," << format_fixed(r.ap.ap) << "\n";
  out << "ap50," << format_fixed(r.ap.ap50) << "\n";
  out << "ap75," << format_fixed(r.ap.ap75) << "\n";
  for (int k = 0; k < 10; ++k)
    out << "ap" << (50 + 5 * k) << "," << format_fixed(r.ap.ap_at[static_cast<std::size_t>(k)]) << "\n";
  for (std::size_t c = 0; c < r.ap.per_class.size(); ++c)
    if (!std::isnan(r.ap.per_class[c]))
      out << "ap_class_" << c << "," << format_fixed(r.ap.per_class[c]) << "\n";
  if (r.ap_small) out << "ap_small," << format_fixed(*r.ap_small) << "\n";
  if (r.ap_medium) out << "ap_medium," << format_fixed(*r.ap_medium) << "\n";
  if (r.ap_large) out << "ap_large," << format_fixed(*r.ap_large) << "\n";
  if (r.spearman) out << "score_iou_spearman," << format_fixed(*r.spearman) << "\n";
  out << "num_detections," << r.num_detections << "\n";
  out << "num_images," << r.num_images << "\n";
  return out.str();
}

}  // namespace detkit
