#include "shiftkit/ft_kernels.hpp"

#include <algorithm>
#include <cmath>

#include "shiftkit/error.hpp"

namespace shiftkit {

namespace {

std::string layer_label(const std::string& name) { return name.empty() ? "layer" : "layer '" + name + "'"; }

void check_lengths(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const std::string& what) {
  if (a.size() != b.size()) {
    throw Error(Errc::LengthMismatch,
                what + ": lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()) + " differ");
  }
}

}  // namespace

void LayerState::validate() const {
  const auto label = layer_label(name);
  check_lengths(theta0, theta, label);
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw Error(Errc::InvalidConfig, label + ": gamma must be finite and >= 0");
  }
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (!std::isfinite(theta[i]) || !std::isfinite(theta0[i])) {
      throw Error(Errc::NonFiniteEntry, label + ": non-finite weight at " + std::to_string(i),
                  static_cast<std::size_t>(i));
    }
  }
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::VanillaFT: return "vanilla";
    case Method::LinearProbe: return "linear_probe";
    case Method::LPFT: return "lp_ft";
    case Method::WiSE: return "wise";
    case Method::L2SP: return "l2sp";
    case Method::TPGM: return "tpgm";
    case Method::FTP: return "ftp";
    case Method::SPD: return "spd";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  for (auto m : kAllMethods) {
    if (to_string(m) == text) return m;
  }
  throw Error(Errc::InvalidConfig, "unknown method '" + std::string(text) + "'");
}

void MethodConfig::validate() const {
  auto finite = [](double x) { return std::isfinite(x); };
  if (!finite(alpha) || alpha < 0.0 || alpha > 1.0) {
    throw Error(Errc::AlphaOutOfRange, "alpha must lie in [0, 1]");
  }
  if (!finite(lambda) || lambda < 0.0) throw Error(Errc::InvalidConfig, "lambda must be finite and >= 0");
  if (!finite(kappa) || kappa < 0.0 || kappa > 1.0) throw Error(Errc::InvalidConfig, "kappa must lie in [0, 1]");
  if (!finite(spd_contraction) || spd_contraction <= 0.0 || spd_contraction > 1.0) {
    throw Error(Errc::InvalidConfig, "spd_contraction must lie in (0, 1]");
  }
  if (!finite(gamma_lr) || gamma_lr <= 0.0) throw Error(Errc::InvalidConfig, "gamma_lr must be > 0");
}

MethodConfig MethodConfig::defaults(Method m) {
  MethodConfig c;
  c.method = m;
  if (m == Method::SPD) c.lambda = 0.5;
  if (m == Method::L2SP) c.lambda = 0.1;
  return c;
}

double deviation_norm(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0) {
  return (theta - theta0).norm();
}

double initial_gamma(std::size_t n_params) { return 1e-8 * std::sqrt(static_cast<double>(n_params)); }

bool projection_active(const LayerState& s) { return deviation_norm(s) > s.gamma * (1.0 + kProjectionSlack); }

Eigen::VectorXd wise_interpolate(const Eigen::VectorXd& theta0, const Eigen::VectorXd& theta_t, double alpha) {
  check_lengths(theta0, theta_t, "wise_interpolate");
  if (!std::isfinite(alpha) || alpha < 0.0 || alpha > 1.0) {
    throw Error(Errc::AlphaOutOfRange, "alpha must lie in [0, 1]");
  }
  if (alpha == 1.0) return theta_t;
  if (alpha == 0.0) return theta0;
  return alpha * theta_t + (1.0 - alpha) * theta0;
}

Eigen::VectorXd l2sp_grad(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0, double lambda) {
  check_lengths(theta, theta0, "l2sp_grad");
  if (!std::isfinite(lambda) || lambda < 0.0) throw Error(Errc::InvalidConfig, "lambda must be finite and >= 0");
  return lambda * (theta - theta0);
}

Eigen::VectorXd pgm_project(const LayerState& s) {
  s.validate();
  if (s.gamma == 0.0) {
    throw Error(Errc::ZeroGamma, layer_label(s.name) + ": gamma is 0, freeze the layer instead of projecting");
  }
  const double limit = s.gamma * (1.0 + kProjectionSlack);
  const Eigen::VectorXd d = s.theta - s.theta0;
  const double norm = d.norm();
  if (norm <= limit) return s.theta;

  // Rounding in theta0 + scale * d can land a hair outside the ball; shrink
  // until the stored result is inside so that re-projection is the identity.
  double scale = s.gamma / norm;
  for (int attempt = 0; attempt < 64; ++attempt) {
    Eigen::VectorXd out = s.theta0 + scale * d;
    if (deviation_norm(out, s.theta0) <= limit) return out;
    scale *= 1.0 - 1e-13 * static_cast<double>(1 << std::min(attempt, 20));
  }
  return s.theta0;
}

double tpgm_gamma_grad(const LayerState& s, const Eigen::VectorXd& task_grad_at_proj) {
  s.validate();
  check_lengths(s.theta, task_grad_at_proj, layer_label(s.name) + " gradient");
  if (!projection_active(s)) {
    throw Error(Errc::InactiveProjection, layer_label(s.name) + ": deviation is inside gamma, dL/dgamma is 0");
  }
  const Eigen::VectorXd d = s.theta - s.theta0;
  return d.dot(task_grad_at_proj) / d.norm();
}

double ftp_gamma_update(const LayerState& s, double gamma_grad, const MethodConfig& cfg) {
  const double g = gamma_grad <= 0.0 ? gamma_grad : cfg.kappa * gamma_grad;
  return std::max(s.gamma, s.gamma - cfg.gamma_lr * g);
}

double spd_condition(const LayerState& s, const Eigen::VectorXd& grad_next) {
  check_lengths(s.theta, s.theta0, layer_label(s.name));
  check_lengths(s.theta, grad_next, layer_label(s.name) + " gradient");
  return -grad_next.dot(s.theta - s.theta0);
}

std::vector<SpdOutcome> spd_apply(const std::vector<LayerState>& states, const std::vector<Eigen::VectorXd>& grads,
                                  const MethodConfig& cfg) {
  if (states.size() != grads.size()) {
    throw Error(Errc::LengthMismatch, "spd_apply: " + std::to_string(states.size()) + " layers but " +
                                          std::to_string(grads.size()) + " gradients");
  }
  std::vector<SpdOutcome> out(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    const LayerState& s = states[i];
    s.validate();
    SpdOutcome& o = out[i];
    o.condition = spd_condition(s, grads[i]);
    const double norm = deviation_norm(s);
    if (o.condition > 0.0) {
      o.gamma = std::max(s.gamma, norm);
      o.theta = s.theta;
      continue;
    }
    o.contracted = true;
    o.gamma = cfg.spd_contraction * norm;
    if (norm == 0.0) {
      o.theta = s.theta;
      continue;
    }
    LayerState tight = s;
    tight.gamma = o.gamma;
    o.theta = pgm_project(tight);
  }
  return out;
}

}  // namespace shiftkit
