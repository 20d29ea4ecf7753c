#pragma once

// Identification (cross-entropy), batch-hard triplet and ArcFace heads, each
// returning its analytic gradient, plus the weighted sum over the three
// embedding heads (d_full, z_ft, z_fl).

#include <array>
#include <optional>
#include <span>
#include <string>

#include <Eigen/Dense>

namespace catreid::loss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LossValue {
  double value = 0.0;
  /// Gradient w.r.t. the primary input (logits or embeddings), same shape.
  Matrix grad;
};

/// Mean of -log softmax(logits)[label]. Throws Error(validation) for labels
/// outside [0, C).
LossValue id_loss(const Matrix& logits, std::span<const int> labels);

/// Batch-hard triplet loss with Euclidean distances: mean over anchors of
/// max(0, max_pos d - min_neg d + margin). Requires every label at least
/// twice and at least two labels; throws Error(validation) naming the label.
LossValue triplet_batch_hard(const Matrix& embeddings, std::span<const int> labels, double margin);

/// Cosines are clamped to [-1 + kAngleEpsilon, 1 - kAngleEpsilon] wherever
/// an angle is involved.
inline constexpr double kAngleEpsilon = 1e-7;

/// s * cos(theta_ic + m [c == label_i]). When theta + m would pass pi the true
/// logit uses s * (cos theta - m sin m) so the margin never raises it.
Matrix arcface_logits(const Matrix& embeddings, const Matrix& class_weights,
                      std::span<const int> labels, double scale, double margin);

struct ArcFaceGradient {
  Matrix embeddings;
  Matrix class_weights;
};

ArcFaceGradient arcface_backward(const Matrix& embeddings, const Matrix& class_weights,
                                 std::span<const int> labels, double scale, double margin,
                                 const Matrix& grad_logits);

enum class Head { full = 0, trunk_fused = 1, limb_fused = 2 };
inline constexpr std::array<Head, 3> kHeads{Head::full, Head::trunk_fused, Head::limb_fused};
std::string to_string(Head head);

struct HeadWeights {
  double id = 1.0;
  double triplet = 1.0;
};

struct LossConfig {
  double triplet_margin = 0.3;
  double arcface_scale = 30.0;
  double arcface_margin = 0.5;
  std::array<HeadWeights, 3> head_weights{};
  bool use_arcface = false;

  /// Throws Error(config) unless s > 0, 0 <= m < pi/2 and margin >= 0.
  void validate() const;
};

struct HeadTerms {
  double id = 0.0;
  double triplet = 0.0;
};

struct LossBreakdown {
  std::array<HeadTerms, 3> heads{};
  double total = 0.0;
};

/// One head's inputs: B x E embeddings and the C x E identity classifier
/// (with optional bias; ignored under ArcFace).
struct HeadInput {
  Matrix embeddings;
  Matrix class_weights;
  std::optional<Vector> class_bias;
};

struct HeadGradient {
  Matrix embeddings;
  Matrix class_weights;
  Vector class_bias;
};

struct TotalLoss {
  LossBreakdown breakdown;
  std::array<HeadGradient, 3> grads;
};

/// Weighted sum of the six head terms. Terms with zero weight are still
/// reported but contribute no gradient.
TotalLoss total_loss(const std::array<HeadInput, 3>& heads, std::span<const int> labels,
                     const LossConfig& config);

}  // namespace catreid::loss
