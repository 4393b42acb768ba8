#pragma once

#include <array>
#include <string>
#include <vector>

#include "detkit/data.hpp"
#include "detkit/geometry.hpp"
#include "detkit/random.hpp"

namespace detkit {

// matched_gt sentinel for proposals assigned to no ground truth.
inline constexpr int kNoMatch = -1;
// class_target sentinel for background; heads map it to class index K.
inline constexpr int kBackground = -1;

// Per-proposal assignment: argmax-IoU ground truth (ties to the lowest gt
// index), positive iff max_iou >= fg_threshold.
struct MatchResult {
  std::vector<int> matched_gt;
  std::vector<double> max_iou;
  std::vector<bool> positive;
  std::vector<int> class_target;  // gt class for positives, kBackground otherwise

  std::size_t size() const { return matched_gt.size(); }
};

inline MatchResult match(const std::vector<Box>& proposals, const GroundTruth& gt,
                         double fg_threshold) {
  if (!(fg_threshold > 0.0 && fg_threshold <= 1.0))
    throw std::invalid_argument("match: fg_threshold must be in (0, 1]");
  MatchResult r;
  const std::size_t n = proposals.size();
  r.matched_gt.assign(n, kNoMatch);
  r.max_iou.assign(n, 0.0);
  r.positive.assign(n, false);
  r.class_target.assign(n, kBackground);
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    int best_j = kNoMatch;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double v = iou(proposals[i], gt[j].box);
      if (v > best) {
        best = v;
        best_j = static_cast<int>(j);
      }
    }
    r.max_iou[i] = best;
    r.matched_gt[i] = best_j;
    if (best >= fg_threshold && best_j != kNoMatch) {
      r.positive[i] = true;
      r.class_target[i] = gt[best_j].class_id;
    }
  }
  return r;
}

struct SampleEntry {
  int index = 0;  // proposal index
  int class_target = kBackground;
  bool is_positive = false;
  BoxDeltas delta_target;  // meaningful only when is_positive
  double iou_target = 0.0;
};

using SampleBatch = std::vector<SampleEntry>;

namespace detail {

// Uniform subsample of k indices out of pool, by partial Fisher-Yates.
inline std::vector<int> subsample(std::vector<int> pool, std::size_t k, Rng& rng) {
  if (k >= pool.size()) return pool;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool.size()) - 1));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace detail

// Subsamples at most ceil(batch_size * positive_fraction) positives and fills
// the remainder with negatives; when either class runs short the other tops
// the batch up.
inline SampleBatch sample(const MatchResult& m, const std::vector<Box>& proposals,
                          const GroundTruth& gt, int batch_size, double positive_fraction,
                          const DeltaWeights& weights, Rng& rng) {
  if (!(positive_fraction > 0.0 && positive_fraction <= 1.0))
    throw std::invalid_argument("sample: positive_fraction must be in (0, 1]");
  if (batch_size < 1) throw std::invalid_argument("sample: batch_size must be >= 1");

  std::vector<int> pos, neg;
  for (std::size_t i = 0; i < m.size(); ++i) (m.positive[i] ? pos : neg).push_back(static_cast<int>(i));

  const std::size_t quota = static_cast<std::size_t>(
      std::ceil(static_cast<double>(batch_size) * positive_fraction));
  std::size_t n_pos = std::min(pos.size(), quota);
  std::size_t n_neg = std::min(neg.size(), static_cast<std::size_t>(batch_size) - n_pos);
  if (n_pos + n_neg < static_cast<std::size_t>(batch_size))
    n_pos = std::min(pos.size(), static_cast<std::size_t>(batch_size) - n_neg);

  std::vector<int> chosen = detail::subsample(std::move(pos), n_pos, rng);
  std::vector<int> chosen_neg = detail::subsample(std::move(neg), n_neg, rng);
  chosen.insert(chosen.end(), chosen_neg.begin(), chosen_neg.end());

  SampleBatch batch;
  batch.reserve(chosen.size());
  for (int idx : chosen) {
    SampleEntry e;
    e.index = idx;
    e.class_target = m.class_target[idx];
    e.is_positive = m.positive[idx];
    e.iou_target = m.max_iou[idx];
    if (e.is_positive)
      e.delta_target = encode_deltas(proposals[idx], gt[m.matched_gt[idx]].box, weights);
    batch.push_back(e);
  }
  return batch;
}

enum class CascadeMode { kBaseline, kApdi };

inline CascadeMode parse_cascade_mode(const std::string& s) {
  if (s == "baseline") return CascadeMode::kBaseline;
  if (s == "apdi") return CascadeMode::kApdi;
  throw ConfigError("unknown cascade threshold mode '" + s + "'");
}

// Per-stage foreground thresholds for the three-head cascade. The apdi
// schedule raises the later stages to match the higher-quality proposal
// stream produced by augmentation.
inline std::array<double, 3> cascade_thresholds(CascadeMode mode) {
  switch (mode) {
    case CascadeMode::kBaseline:
      return {0.5, 0.6, 0.7};
    case CascadeMode::kApdi:
      return {0.5, 0.65, 0.8};
  }
  throw ConfigError("unknown cascade threshold mode");
}

}  // namespace detkit
