#include "ftl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ftl {
namespace {

void check_binary(std::span<const double> probs, std::span<const int> labels, const char* who) {
  if (probs.size() != labels.size()) {
    throw ValidationError(std::string(who) + ": length mismatch (" + std::to_string(probs.size()) + " probs, " +
                          std::to_string(labels.size()) + " labels)");
  }
  if (probs.empty()) throw ValidationError(std::string(who) + ": empty batch");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError(std::string(who) + ": labels must be 0 or 1");
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) {
      throw ValidationError(std::string(who) + ": probability outside [0, 1]");
    }
  }
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

void check_triplet_shapes(const Matrix& a, const Matrix& p, const Matrix& n) {
  if (a.rows == 0) throw ValidationError("triplet_loss: empty batch");
  if (a.rows != p.rows || a.rows != n.rows || a.cols != p.cols || a.cols != n.cols) {
    throw ValidationError("triplet_loss: anchor/positive/negative shape mismatch");
  }
}

double squared_distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = x[k] - y[k];
    s += d * d;
  }
  return s;
}

double hinge_argument(const Matrix& a, const Matrix& p, const Matrix& n, std::size_t i, double margin,
                      MarginSign sign) {
  const double m = sign == MarginSign::plus ? margin : -margin;
  return squared_distance(a.row(i), p.row(i)) - squared_distance(a.row(i), n.row(i)) + m;
}

void check_categorical(const Matrix& probs, std::span<const int> targets) {
  if (probs.rows == 0) throw ValidationError("forgery_ce_loss: empty batch");
  if (probs.rows != targets.size()) throw ValidationError("forgery_ce_loss: length mismatch");
  for (std::size_t i = 0; i < probs.rows; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= probs.cols) {
      throw ValidationError("forgery_ce_loss: target " + std::to_string(targets[i]) + " out of range [0, " +
                            std::to_string(probs.cols) + ")");
    }
    double sum = 0.0;
    for (double v : probs.row(i)) {
      if (!(v >= 0.0)) throw ValidationError("forgery_ce_loss: negative or NaN probability in row " + std::to_string(i));
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError("forgery_ce_loss: row " + std::to_string(i) + " is not a distribution (sums to " +
                            std::to_string(sum) + ")");
    }
  }
}

}  // namespace

double bce_loss(std::span<const double> probs, std::span<const int> labels) {
  check_binary(probs, labels, "bce_loss");
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    sum += labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return -sum / static_cast<double>(probs.size());
}

std::vector<double> bce_gradient(std::span<const double> probs, std::span<const int> labels) {
  check_binary(probs, labels, "bce_gradient");
  const double inv_n = 1.0 / static_cast<double>(probs.size());
  std::vector<double> g(probs.size(), 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (p < kProbEpsilon || p > 1.0 - kProbEpsilon) continue;
    g[i] = (labels[i] == 1 ? -1.0 / p : 1.0 / (1.0 - p)) * inv_n;
  }
  return g;
}

std::vector<double> bce_logit_gradient(std::span<const double> probs, std::span<const int> labels) {
  check_binary(probs, labels, "bce_logit_gradient");
  const double inv_n = 1.0 / static_cast<double>(probs.size());
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = (probs[i] - labels[i]) * inv_n;
  return g;
}

double triplet_loss(const Matrix& a, const Matrix& p, const Matrix& n, double margin, MarginSign sign) {
  check_triplet_shapes(a, p, n);
  if (!(margin >= 0.0)) throw ValidationError("triplet_loss: margin must be non-negative");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    // written so that a NaN argument propagates instead of clamping to zero
    const double h = hinge_argument(a, p, n, i, margin, sign);
    if (!(h <= 0.0)) sum += h;
  }
  return sum / static_cast<double>(a.rows);
}

TripletGradient triplet_gradient(const Matrix& a, const Matrix& p, const Matrix& n, double margin, MarginSign sign) {
  check_triplet_shapes(a, p, n);
  if (!(margin >= 0.0)) throw ValidationError("triplet_loss: margin must be non-negative");
  TripletGradient g{Matrix(a.rows, a.cols), Matrix(a.rows, a.cols), Matrix(a.rows, a.cols)};
  const double scale = 2.0 / static_cast<double>(a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    if (hinge_argument(a, p, n, i, margin, sign) <= 0.0) continue;
    for (std::size_t k = 0; k < a.cols; ++k) {
      g.anchor(i, k) = scale * (n(i, k) - p(i, k));
      g.positive(i, k) = scale * (p(i, k) - a(i, k));
      g.negative(i, k) = scale * (a(i, k) - n(i, k));
    }
  }
  return g;
}

double forgery_ce_loss(const Matrix& probs, std::span<const int> targets) {
  check_categorical(probs, targets);
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.rows; ++i) sum += std::log(std::max(probs(i, targets[i]), kProbEpsilon));
  return -sum / static_cast<double>(probs.rows);
}

Matrix forgery_ce_gradient(const Matrix& probs, std::span<const int> targets) {
  check_categorical(probs, targets);
  Matrix g(probs.rows, probs.cols);
  const double inv_n = 1.0 / static_cast<double>(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const double pt = probs(i, targets[i]);
    if (pt >= kProbEpsilon) g(i, targets[i]) = -inv_n / pt;
  }
  return g;
}

Matrix forgery_ce_logit_gradient(const Matrix& probs, std::span<const int> targets) {
  check_categorical(probs, targets);
  Matrix g = probs;
  const double inv_n = 1.0 / static_cast<double>(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    g(i, targets[i]) -= 1.0;
    for (auto& v : g.row(i)) v *= inv_n;
  }
  return g;
}

LossBreakdown total_loss(double bce, double triplet, double forgery, double alpha, double beta, double lambda,
                         double margin) {
  for (double v : {bce, triplet, forgery, alpha, beta, lambda, margin}) {
    if (!std::isfinite(v)) throw ValidationError("total_loss: non-finite input");
  }
  if (alpha < 0.0 || beta < 0.0) throw ValidationError("total_loss: weights must be non-negative");
  LossBreakdown b;
  b.bce = bce;
  b.triplet = triplet;
  b.forgery = forgery;
  b.alpha = alpha;
  b.beta = beta;
  b.lambda = lambda;
  b.margin = margin;
  b.total = bce + alpha * triplet + beta * forgery;
  return b;
}

}  // namespace ftl
