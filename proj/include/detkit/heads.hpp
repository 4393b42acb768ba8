#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "detkit/errors.hpp"
#include "detkit/features.hpp"
#include "detkit/geometry.hpp"

namespace detkit {

// Linear RoI head with three branches over shared pooled features:
// classification (K+1 rows, background last), class-agnostic box deltas
// (4 rows), and a single IoU logit row.
struct HeadModel {
  int num_classes = 0;  // K; classifier has K+1 outputs
  int grid_size = 0;
  int channels = 0;
  DeltaWeights delta_weights;
  Eigen::MatrixXd w_cls;     // (K+1) x D
  Eigen::MatrixXd w_reg;     // 4 x D
  Eigen::RowVectorXd w_iou;  // 1 x D

  HeadModel() = default;
  HeadModel(int num_classes_, int grid_size_, int channels_, const DeltaWeights& weights = {})
      : num_classes(num_classes_), grid_size(grid_size_), channels(channels_), delta_weights(weights) {
    const int d = feature_dim(channels, grid_size);
    w_cls = Eigen::MatrixXd::Zero(num_classes + 1, d);
    w_reg = Eigen::MatrixXd::Zero(4, d);
    w_iou = Eigen::RowVectorXd::Zero(d);
  }

  int feature_len() const { return static_cast<int>(w_cls.cols()); }
  int background_class() const { return num_classes; }
};

struct HeadOutput {
  Eigen::VectorXd cls_logits;
  Eigen::VectorXd probs;  // softmax over K+1 entries
  BoxDeltas deltas;
  double iou_logit = 0.0;
  double iou_score = 0.5;  // sigmoid(iou_logit)
};

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Numerically stable fused BCE(sigmoid(z), t); finite for any finite z.
inline double bce_with_logit(double z, double t) {
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

inline HeadOutput forward(const HeadModel& m, const FeatureVector& f) {
  if (f.size() != m.feature_len()) throw std::invalid_argument("forward: feature dimension mismatch");
  HeadOutput out;
  out.cls_logits = m.w_cls * f;
  const double zmax = out.cls_logits.maxCoeff();
  Eigen::VectorXd e = (out.cls_logits.array() - zmax).exp();
  out.probs = e / e.sum();
  const Eigen::Vector4d d = m.w_reg * f;
  out.deltas = BoxDeltas{d[0], d[1], d[2], d[3]};
  out.iou_logit = m.w_iou.dot(f);
  out.iou_score = sigmoid(out.iou_logit);
  return out;
}

// Cross-entropy from the logits (log-sum-exp form). target in [0, K].
inline double loss_cls(const HeadOutput& out, int target_class) {
  if (target_class < 0 || target_class >= out.cls_logits.size())
    throw std::invalid_argument("loss_cls: target class out of range");
  const double zmax = out.cls_logits.maxCoeff();
  const double lse = zmax + std::log((out.cls_logits.array() - zmax).exp().sum());
  return lse - out.cls_logits[target_class];
}

// Elementwise L1, averaged over the four coordinates.
inline double loss_reg(const BoxDeltas& pred, const BoxDeltas& target) {
  return (std::abs(pred.tx - target.tx) + std::abs(pred.ty - target.ty) +
          std::abs(pred.tw - target.tw) + std::abs(pred.th - target.th)) / 4.0;
}

// Binary cross-entropy on the IoU branch; evaluated from the logit.
inline double loss_iou(const HeadOutput& out, double target_iou) {
  if (!(target_iou >= 0.0 && target_iou <= 1.0))
    throw std::invalid_argument("loss_iou: target must be in [0, 1]");
  return bce_with_logit(out.iou_logit, target_iou);
}

// Accumulated batch gradients for one SGD step, averaged per branch over the
// branch's own participating samples.
struct HeadGradients {
  Eigen::MatrixXd g_cls;
  Eigen::MatrixXd g_reg;
  Eigen::RowVectorXd g_iou;
  std::size_t n_cls = 0, n_reg = 0, n_iou = 0;

  explicit HeadGradients(const HeadModel& m)
      : g_cls(Eigen::MatrixXd::Zero(m.w_cls.rows(), m.w_cls.cols())),
        g_reg(Eigen::MatrixXd::Zero(4, m.w_reg.cols())),
        g_iou(Eigen::RowVectorXd::Zero(m.w_iou.cols())) {}

  void add_cls(const HeadOutput& out, const FeatureVector& f, int target_class) {
    Eigen::VectorXd d = out.probs;
    d[target_class] -= 1.0;
    g_cls.noalias() += d * f.transpose();
    ++n_cls;
  }

  void add_reg(const HeadOutput& out, const FeatureVector& f, const BoxDeltas& target) {
    const double s[4] = {sgn(out.deltas.tx - target.tx), sgn(out.deltas.ty - target.ty),
                         sgn(out.deltas.tw - target.tw), sgn(out.deltas.th - target.th)};
    for (int r = 0; r < 4; ++r) g_reg.row(r).noalias() += (s[r] / 4.0) * f.transpose();
    ++n_reg;
  }

  void add_iou(const HeadOutput& out, const FeatureVector& f, double target_iou) {
    g_iou.noalias() += (sigmoid(out.iou_logit) - target_iou) * f.transpose();
    ++n_iou;
  }

 private:
  static double sgn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }
};

// One plain gradient-descent update. Branch gradients are divided by their
// own sample counts; loss weights scale the update per branch.
inline void sgd_step(HeadModel& m, const HeadGradients& g, double lr, double w_cls_loss = 1.0,
                     double w_reg_loss = 1.0, double w_iou_loss = 1.0) {
  if (g.n_cls > 0) m.w_cls.noalias() -= (lr * w_cls_loss / static_cast<double>(g.n_cls)) * g.g_cls;
  if (g.n_reg > 0) m.w_reg.noalias() -= (lr * w_reg_loss / static_cast<double>(g.n_reg)) * g.g_reg;
  if (g.n_iou > 0) m.w_iou.noalias() -= (lr * w_iou_loss / static_cast<double>(g.n_iou)) * g.g_iou;
}

// Closed-form ridge fit of the regression branch: argmin sum ||W f - t||^2 +
// lambda ||W||^2 via the normal equations.
inline Eigen::MatrixXd fit_reg_ridge(const std::vector<FeatureVector>& features,
                                     const std::vector<BoxDeltas>& targets, double lambda) {
  if (features.empty()) throw std::invalid_argument("fit_reg_ridge: no samples");
  if (features.size() != targets.size())
    throw std::invalid_argument("fit_reg_ridge: feature/target count mismatch");
  if (lambda < 0) throw std::invalid_argument("fit_reg_ridge: lambda must be >= 0");

  const Eigen::Index d = features[0].size();
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd xtt = Eigen::MatrixXd::Zero(d, 4);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const FeatureVector& f = features[i];
    if (f.size() != d) throw std::invalid_argument("fit_reg_ridge: inconsistent feature dims");
    const Eigen::Vector4d t(targets[i].tx, targets[i].ty, targets[i].tw, targets[i].th);
    xtx.noalias() += f * f.transpose();
    xtt.noalias() += f * t.transpose();
  }
  xtx.diagonal().array() += lambda;

  if (lambda == 0.0) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
    if (!lu.isInvertible())
      throw std::runtime_error(
          "fit_reg_ridge: singular normal equations at lambda = 0; use lambda > 0");
    return lu.solve(xtt).transpose();
  }
  return xtx.ldlt().solve(xtt).transpose();
}

// ---- checkpoint serialization -------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows,
                                        Eigen::Index cols, const char* name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw SchemaError(std::string("checkpoint: bad shape for ") + name);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw SchemaError(std::string("checkpoint: bad shape for ") + name);
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw SchemaError(std::string("checkpoint: non-numeric entry in ") + name);
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

}  // namespace detail

inline constexpr const char* kCheckpointSchema = "checkpoint/v1";

// JSON checkpoint; double values round-trip exactly. Holds one stage for the
// plain pipeline and three for the cascade.
inline nlohmann::json checkpoint_to_json(const std::vector<HeadModel>& stages) {
  if (stages.empty()) throw std::invalid_argument("checkpoint: no stages");
  const HeadModel& first = stages.front();
  nlohmann::json j;
  j["schema"] = kCheckpointSchema;
  j["num_classes"] = first.num_classes;
  j["grid_size"] = first.grid_size;
  j["channels"] = first.channels;
  j["feature_dim"] = first.feature_len();
  j["delta_weights"] = {first.delta_weights.wx, first.delta_weights.wy, first.delta_weights.ww,
                        first.delta_weights.wh};
  nlohmann::json st = nlohmann::json::array();
  for (const HeadModel& m : stages) {
    nlohmann::json s;
    s["w_cls"] = detail::matrix_to_json(m.w_cls);
    s["w_reg"] = detail::matrix_to_json(m.w_reg);
    s["w_iou"] = detail::matrix_to_json(m.w_iou);
    st.push_back(std::move(s));
  }
  j["stages"] = std::move(st);
  return j;
}

inline std::vector<HeadModel> checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema") || j["schema"] != kCheckpointSchema)
    throw SchemaError("checkpoint: missing or unsupported schema");
  for (const char* key : {"num_classes", "grid_size", "channels", "feature_dim", "delta_weights", "stages"})
    if (!j.contains(key)) throw SchemaError(std::string("checkpoint: missing key '") + key + "'");

  const int k = j["num_classes"].get<int>();
  const int s = j["grid_size"].get<int>();
  const int c = j["channels"].get<int>();
  const auto dw = j["delta_weights"];
  if (!dw.is_array() || dw.size() != 4) throw SchemaError("checkpoint: delta_weights must have 4 entries");
  DeltaWeights weights{dw[0].get<double>(), dw[1].get<double>(), dw[2].get<double>(), dw[3].get<double>()};

  const int d = feature_dim(c, s);
  if (j["feature_dim"].get<int>() != d) throw SchemaError("checkpoint: feature_dim inconsistent with channels/grid_size");

  std::vector<HeadModel> stages;
  for (const auto& sj : j["stages"]) {
    HeadModel m(k, s, c, weights);
    m.w_cls = detail::matrix_from_json(sj.at("w_cls"), k + 1, d, "w_cls");
    m.w_reg = detail::matrix_from_json(sj.at("w_reg"), 4, d, "w_reg");
    m.w_iou = detail::matrix_from_json(sj.at("w_iou"), 1, d, "w_iou");
    stages.push_back(std::move(m));
  }
  if (stages.empty()) throw SchemaError("checkpoint: no stages");
  return stages;
}

inline std::string checkpoint_to_string(const std::vector<HeadModel>& stages) {
  return checkpoint_to_json(stages).dump();
}

inline void save_checkpoint(const std::vector<HeadModel>& stages, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint file for writing: " + path);
  out << checkpoint_to_string(stages) << "\n";
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline std::vector<HeadModel> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("checkpoint parse error in " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace detkit
