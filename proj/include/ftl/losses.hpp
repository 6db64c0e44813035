#pragma once

#include <span>
#include <vector>

#include "ftl/common.hpp"

namespace ftl {

/// Probability clamp for both log-losses.
inline constexpr double kProbEpsilon = 1e-7;

/// `plus` hinges on d(a,p) - d(a,n) + m, which enforces a margin between the pairs.
/// `printed_minus` hinges on d(a,p) - d(a,n) - m and is kept for comparison runs.
enum class MarginSign { plus, printed_minus };

struct LossBreakdown {
  double bce = 0.0;
  double triplet = 0.0;
  double forgery = 0.0;
  double total = 0.0;
  double alpha = 1.0;
  double beta = 1.0;
  double lambda = 1.0;
  double margin = 1.0;

  bool operator==(const LossBreakdown&) const = default;
};

/// Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps].
double bce_loss(std::span<const double> probs, std::span<const int> labels);
/// d(bce)/d(probs); zero where the clamp is active.
std::vector<double> bce_gradient(std::span<const double> probs, std::span<const int> labels);
/// d(bce)/d(logits) for probs = sigmoid(logits): (p - y) / N.
std::vector<double> bce_logit_gradient(std::span<const double> probs, std::span<const int> labels);

/// Mean hinge on squared Euclidean distances. Rows of a, p, n are matched triplets.
double triplet_loss(const Matrix& a, const Matrix& p, const Matrix& n, double margin,
                    MarginSign sign = MarginSign::plus);

struct TripletGradient {
  Matrix anchor;
  Matrix positive;
  Matrix negative;
};
TripletGradient triplet_gradient(const Matrix& a, const Matrix& p, const Matrix& n, double margin,
                                 MarginSign sign = MarginSign::plus);

/// Mean negative log-probability of each row's target class (clamped at eps).
double forgery_ce_loss(const Matrix& category_probs, std::span<const int> targets);
/// d(loss)/d(probs).
Matrix forgery_ce_gradient(const Matrix& category_probs, std::span<const int> targets);
/// d(loss)/d(logits) for probs = softmax(logits): (p - onehot) / N.
Matrix forgery_ce_logit_gradient(const Matrix& category_probs, std::span<const int> targets);

/// total = bce + alpha * triplet + beta * forgery.
LossBreakdown total_loss(double bce, double triplet, double forgery, double alpha, double beta, double lambda = 1.0,
                         double margin = 1.0);

}  // namespace ftl
