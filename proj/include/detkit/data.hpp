#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "detkit/errors.hpp"
#include "detkit/geometry.hpp"
#include "detkit/random.hpp"

namespace detkit {

// C x H x W grid of real values. Channel 0 carries objectness (1.0 inside any
// object), the remaining channels carry the per-class signature.
struct ImageTensor {
  int channels = 0, height = 0, width = 0;
  std::vector<double> v;

  ImageTensor() = default;
  ImageTensor(int c, int h, int w) : channels(c), height(h), width(w), v(static_cast<std::size_t>(c) * h * w, 0.0) {}

  double& at(int c, int y, int x) { return v[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return v[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  Box bounds() const { return Box(0, 0, width, height); }
};

struct GtInstance {
  Box box;
  int class_id = 0;
};

// Per-image annotated objects.
using GroundTruth = std::vector<GtInstance>;

enum class Provenance { kOriginal, kRefined, kPositiveOriginal };

// Per-image proposal collection. Scores and provenance are optional; when
// present they are index-aligned with boxes.
struct ProposalSet {
  std::vector<Box> boxes;
  std::optional<std::vector<double>> scores;
  std::optional<std::vector<Provenance>> provenance;

  std::size_t size() const { return boxes.size(); }

  void validate() const {
    if (scores && scores->size() != boxes.size())
      throw SchemaError("ProposalSet: scores size mismatch");
    if (provenance && provenance->size() != boxes.size())
      throw SchemaError("ProposalSet: provenance size mismatch");
    if (scores)
      for (double s : *scores)
        if (!std::isfinite(s)) throw SchemaError("ProposalSet: non-finite score");
  }
};

// Synthetic scene parameters. Objects are axis-aligned rectangles painted as
// per-class channel signatures over a zero background, plus Gaussian noise.
struct SceneSpec {
  int height = 64, width = 64;
  int channels = 3;
  int num_classes = 3;
  int min_objects = 1, max_objects = 3;
  double min_size = 12.0, max_size = 28.0;
  double noise_sigma = 0.05;
  std::vector<std::vector<double>> class_signatures;  // [K][C]; empty -> defaults
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 1) throw ConfigError("scene: num_classes must be >= 1");
    if (channels < 1) throw ConfigError("scene: channels must be >= 1");
    if (height < 1 || width < 1) throw ConfigError("scene: image dimensions must be positive");
    if (min_objects < 0 || max_objects < min_objects)
      throw ConfigError("scene: bad objects-per-image range");
    if (min_size <= 0 || max_size < min_size) throw ConfigError("scene: bad object size range");
    if (max_size > std::min(height, width))
      throw ConfigError("scene: objects cannot fit within image bounds");
    if (noise_sigma < 0) throw ConfigError("scene: noise_sigma must be >= 0");
    if (!class_signatures.empty()) {
      if (static_cast<int>(class_signatures.size()) != num_classes)
        throw ConfigError("scene: class_signatures must have one row per class");
      for (const auto& sig : class_signatures)
        if (static_cast<int>(sig.size()) != channels)
          throw ConfigError("scene: class signature length must equal channels");
    }
  }

  // Channel 0 is an objectness indicator common to all classes; the remaining
  // channels form a distinct binary-ish pattern per class.
  std::vector<std::vector<double>> signatures() const {
    if (!class_signatures.empty()) return class_signatures;
    std::vector<std::vector<double>> sigs(num_classes, std::vector<double>(channels, 0.0));
    for (int k = 0; k < num_classes; ++k) {
      sigs[k][0] = 1.0;
      for (int c = 1; c < channels; ++c) {
        const unsigned bit = static_cast<unsigned>(k + 1) >> (c - 1);
        sigs[k][c] = (bit & 1u) ? 0.9 : 0.0;
      }
    }
    return sigs;
  }
};

// Deterministic in (spec.seed, index). Objects are painted in draw order, so
// a later object overwrites earlier ones where they overlap.
inline std::pair<ImageTensor, GroundTruth> generate_scene(const SceneSpec& spec, std::int64_t index) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, rng_stream::kScene, static_cast<std::uint64_t>(index)));
  const auto sigs = spec.signatures();

  ImageTensor img(spec.channels, spec.height, spec.width);
  GroundTruth gt;

  const int n_objects = static_cast<int>(rng.uniform_int(spec.min_objects, spec.max_objects));
  for (int n = 0; n < n_objects; ++n) {
    const int k = static_cast<int>(rng.uniform_int(0, spec.num_classes - 1));
    const double w = rng.uniform(spec.min_size, spec.max_size);
    const double h = rng.uniform(spec.min_size, spec.max_size);
    const double x1 = rng.uniform(0.0, spec.width - w);
    const double y1 = rng.uniform(0.0, spec.height - h);
    const Box box(x1, y1, x1 + w, y1 + h);
    gt.push_back({box, k});

    // Paint pixels whose centers fall inside the box.
    const int ix1 = std::max(0, static_cast<int>(std::ceil(box.x1 - 0.5)));
    const int ix2 = std::min(spec.width - 1, static_cast<int>(std::ceil(box.x2 - 0.5)) - 1);
    const int iy1 = std::max(0, static_cast<int>(std::ceil(box.y1 - 0.5)));
    const int iy2 = std::min(spec.height - 1, static_cast<int>(std::ceil(box.y2 - 0.5)) - 1);
    for (int c = 0; c < spec.channels; ++c)
      for (int y = iy1; y <= iy2; ++y)
        for (int x = ix1; x <= ix2; ++x) img.at(c, y, x) = sigs[k][c];
  }

  if (spec.noise_sigma > 0) {
    for (double& p : img.v) p += rng.normal(0.0, spec.noise_sigma);
  }
  return {std::move(img), std::move(gt)};
}

// Stochastic stand-in for a region proposal network: jittered copies of each
// ground-truth box plus uniform random negatives.
struct ProposalGenConfig {
  double jitter_sigma = 1.6;  // std of Gaussian deltas in weighted encoded space
  int jitters_per_gt = 8;
  int negatives_per_image = 16;
  DeltaWeights weights;
};

inline ProposalSet generate_proposals(const GroundTruth& gt, const Box& bounds,
                                      const ProposalGenConfig& cfg, Rng& rng) {
  if (cfg.jitter_sigma < 0) throw ConfigError("proposals: jitter_sigma must be >= 0");
  ProposalSet out;
  out.scores.emplace();
  out.provenance.emplace();

  for (const auto& inst : gt) {
    for (int j = 0; j < cfg.jitters_per_gt; ++j) {
      Box box = inst.box;
      double mag = 0.0;
      // Redraw on the rare jitter that lands fully outside the image.
      for (int attempt = 0; attempt < 100; ++attempt) {
        BoxDeltas d;
        d.tx = rng.normal(0.0, cfg.jitter_sigma);
        d.ty = rng.normal(0.0, cfg.jitter_sigma);
        d.tw = rng.normal(0.0, cfg.jitter_sigma);
        d.th = rng.normal(0.0, cfg.jitter_sigma);
        const Box candidate = decode_deltas(inst.box, d, cfg.weights, bounds);
        if (candidate.positive_area()) {
          box = candidate;
          mag = std::sqrt(d.tx * d.tx + d.ty * d.ty + d.tw * d.tw + d.th * d.th);
          break;
        }
      }
      const double score = std::clamp(1.0 / (1.0 + 0.5 * mag) + rng.normal(0.0, 0.05), 0.0, 1.0);
      out.boxes.push_back(box);
      out.scores->push_back(score);
      out.provenance->push_back(Provenance::kOriginal);
    }
  }

  for (int n = 0; n < cfg.negatives_per_image; ++n) {
    const double wmax = std::max(4.0, bounds.width() / 2.0);
    const double hmax = std::max(4.0, bounds.height() / 2.0);
    const double w = std::min(rng.uniform(4.0, wmax), bounds.width());
    const double h = std::min(rng.uniform(4.0, hmax), bounds.height());
    const double x1 = rng.uniform(bounds.x1, bounds.x2 - w);
    const double y1 = rng.uniform(bounds.y1, bounds.y2 - h);
    out.boxes.emplace_back(x1, y1, x1 + w, y1 + h);
    out.scores->push_back(std::clamp(rng.uniform(0.0, 0.25) + rng.normal(0.0, 0.05), 0.0, 1.0));
    out.provenance->push_back(Provenance::kOriginal);
  }
  return out;
}

}  // namespace detkit
