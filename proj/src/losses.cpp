#include "catreid/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "catreid/error.hpp"

namespace catreid::loss {
namespace {

void check_labels(std::span<const int> labels, Eigen::Index rows, Eigen::Index classes) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw Error(ErrorKind::validation, "label count does not match batch size");
  }
  for (int l : labels) {
    if (l < 0 || (classes >= 0 && l >= classes)) {
      throw Error(ErrorKind::validation, "label " + std::to_string(l) + " outside [0, " +
                                             std::to_string(classes) + ")");
    }
  }
}

// Rows scaled to unit length; throws on a zero row.
Matrix normalized_rows(const Matrix& m, Vector& norms, const char* what) {
  norms = m.rowwise().norm();
  Matrix out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (!(norms(i) > 0.0) || !std::isfinite(norms(i))) {
      throw Error(ErrorKind::numeric, std::string("arcface: zero-norm ") + what + " row " +
                                          std::to_string(i));
    }
    out.row(i) /= norms(i);
  }
  return out;
}

// Back-propagates through row normalisation x / |x|.
Matrix normalize_backward(const Matrix& unit, const Vector& norms, const Matrix& grad_unit) {
  Matrix out(unit.rows(), unit.cols());
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    const double along = unit.row(i).dot(grad_unit.row(i));
    out.row(i) = (grad_unit.row(i) - along * unit.row(i)) / norms(i);
  }
  return out;
}

struct MarginTerm {
  double value;       // cos(theta + m) or its fallback
  double derivative;  // d value / d cos
};

MarginTerm margin_term(double cosine, double margin) {
  if (margin == 0.0) return {cosine, 1.0};
  const double lo = -1.0 + kAngleEpsilon;
  const double hi = 1.0 - kAngleEpsilon;
  const bool clamped = cosine < lo || cosine > hi;
  const double c = std::clamp(cosine, lo, hi);
  const double threshold = std::cos(std::numbers::pi - margin);
  if (c <= threshold) {
    // theta + m >= pi: keep the logit monotone with a linear penalty.
    return {c - margin * std::sin(margin), clamped ? 0.0 : 1.0};
  }
  const double sin_theta = std::sqrt(1.0 - c * c);
  const double value = c * std::cos(margin) - sin_theta * std::sin(margin);
  const double derivative = std::cos(margin) + c * std::sin(margin) / sin_theta;
  return {value, clamped ? 0.0 : derivative};
}

}  // namespace

LossValue id_loss(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  const Eigen::Index batch = logits.rows();
  LossValue out{0.0, Matrix::Zero(logits.rows(), logits.cols())};
  if (batch == 0) return out;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double peak = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd shifted = (logits.row(i).array() - peak).exp().matrix();
    const double sum = shifted.sum();
    const double log_sum = peak + std::log(sum);
    out.value += log_sum - logits(i, labels[i]);
    out.grad.row(i) = shifted / sum;
    out.grad(i, labels[i]) -= 1.0;
  }
  out.value /= static_cast<double>(batch);
  out.grad /= static_cast<double>(batch);
  return out;
}

LossValue triplet_batch_hard(const Matrix& embeddings, std::span<const int> labels, double margin) {
  check_labels(labels, embeddings.rows(), -1);
  const Eigen::Index batch = embeddings.rows();
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) {
    throw Error(ErrorKind::validation, "triplet: batch needs at least two labels");
  }
  for (const auto& [label, count] : counts) {
    if (count < 2) {
      throw Error(ErrorKind::validation,
                  "triplet: label " + std::to_string(label) + " appears only once in the batch");
    }
  }

  Matrix dist(batch, batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    for (Eigen::Index j = 0; j < batch; ++j) {
      dist(i, j) = (embeddings.row(i) - embeddings.row(j)).norm();
    }
  }

  LossValue out{0.0, Matrix::Zero(embeddings.rows(), embeddings.cols())};
  auto accumulate = [&](Eigen::Index a, Eigen::Index b, double sign) {
    const double d = dist(a, b);
    if (d <= 1e-12) return;  // subgradient 0 at coincident points
    const Eigen::RowVectorXd g = sign * (embeddings.row(a) - embeddings.row(b)) / d;
    out.grad.row(a) += g;
    out.grad.row(b) -= g;
  };
  for (Eigen::Index a = 0; a < batch; ++a) {
    Eigen::Index hardest_pos = -1, hardest_neg = -1;
    for (Eigen::Index j = 0; j < batch; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (hardest_pos < 0 || dist(a, j) > dist(a, hardest_pos)) hardest_pos = j;
      } else if (hardest_neg < 0 || dist(a, j) < dist(a, hardest_neg)) {
        hardest_neg = j;
      }
    }
    const double hinge = dist(a, hardest_pos) - dist(a, hardest_neg) + margin;
    if (hinge <= 0.0) continue;
    out.value += hinge;
    accumulate(a, hardest_pos, 1.0);
    accumulate(a, hardest_neg, -1.0);
  }
  out.value /= static_cast<double>(batch);
  out.grad /= static_cast<double>(batch);
  return out;
}

Matrix arcface_logits(const Matrix& embeddings, const Matrix& class_weights,
                      std::span<const int> labels, double scale, double margin) {
  check_labels(labels, embeddings.rows(), class_weights.rows());
  Vector e_norm, w_norm;
  const Matrix e = normalized_rows(embeddings, e_norm, "embedding");
  const Matrix w = normalized_rows(class_weights, w_norm, "class weight");
  Matrix logits = scale * (e * w.transpose());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double cosine = logits(i, labels[i]) / scale;
    logits(i, labels[i]) = scale * margin_term(cosine, margin).value;
  }
  return logits;
}

ArcFaceGradient arcface_backward(const Matrix& embeddings, const Matrix& class_weights,
                                 std::span<const int> labels, double scale, double margin,
                                 const Matrix& grad_logits) {
  check_labels(labels, embeddings.rows(), class_weights.rows());
  Vector e_norm, w_norm;
  const Matrix e = normalized_rows(embeddings, e_norm, "embedding");
  const Matrix w = normalized_rows(class_weights, w_norm, "class weight");
  const Matrix cosine = e * w.transpose();
  Matrix grad_cos = scale * grad_logits;
  for (Eigen::Index i = 0; i < grad_cos.rows(); ++i) {
    grad_cos(i, labels[i]) *= margin_term(cosine(i, labels[i]), margin).derivative;
  }
  const Matrix grad_e = grad_cos * w;
  const Matrix grad_w = grad_cos.transpose() * e;
  return {normalize_backward(e, e_norm, grad_e), normalize_backward(w, w_norm, grad_w)};
}

std::string to_string(Head head) {
  switch (head) {
    case Head::full: return "full";
    case Head::trunk_fused: return "ft";
    case Head::limb_fused: return "fl";
  }
  return "unknown";
}

void LossConfig::validate() const {
  if (!(arcface_scale > 0.0)) throw Error(ErrorKind::config, "arcface scale must be > 0");
  if (!(arcface_margin >= 0.0 && arcface_margin < std::numbers::pi / 2)) {
    throw Error(ErrorKind::config, "arcface margin must lie in [0, pi/2)");
  }
  if (!(triplet_margin >= 0.0)) throw Error(ErrorKind::config, "triplet margin must be >= 0");
  for (const auto& w : head_weights) {
    if (!(w.id >= 0.0) || !(w.triplet >= 0.0)) {
      throw Error(ErrorKind::config, "head weights must be >= 0");
    }
  }
}

TotalLoss total_loss(const std::array<HeadInput, 3>& heads, std::span<const int> labels,
                     const LossConfig& config) {
  TotalLoss out;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const HeadInput& in = heads[h];
    const HeadWeights& weight = config.head_weights[h];
    HeadGradient& grad = out.grads[h];
    grad.embeddings = Matrix::Zero(in.embeddings.rows(), in.embeddings.cols());
    grad.class_weights = Matrix::Zero(in.class_weights.rows(), in.class_weights.cols());
    grad.class_bias = Vector::Zero(in.class_weights.rows());

    Matrix logits;
    if (config.use_arcface) {
      logits = arcface_logits(in.embeddings, in.class_weights, labels, config.arcface_scale,
                              config.arcface_margin);
    } else {
      logits = in.embeddings * in.class_weights.transpose();
      if (in.class_bias) logits.rowwise() += in.class_bias->transpose();
    }
    const LossValue id = id_loss(logits, labels);
    const LossValue triplet = triplet_batch_hard(in.embeddings, labels, config.triplet_margin);
    out.breakdown.heads[h] = {id.value, triplet.value};
    out.breakdown.total += weight.id * id.value + weight.triplet * triplet.value;

    if (weight.id != 0.0) {
      const Matrix grad_logits = weight.id * id.grad;
      if (config.use_arcface) {
        const ArcFaceGradient g =
            arcface_backward(in.embeddings, in.class_weights, labels, config.arcface_scale,
                             config.arcface_margin, grad_logits);
        grad.embeddings += g.embeddings;
        grad.class_weights += g.class_weights;
      } else {
        grad.embeddings += grad_logits * in.class_weights;
        grad.class_weights += grad_logits.transpose() * in.embeddings;
        if (in.class_bias) grad.class_bias += grad_logits.colwise().sum().transpose();
      }
    }
    if (weight.triplet != 0.0) grad.embeddings += weight.triplet * triplet.grad;
  }
  return out;
}

}  // namespace catreid::loss
