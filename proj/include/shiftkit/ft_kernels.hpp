#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace shiftkit {

/// One layer's weights flattened: pre-trained theta0, current theta and its
/// deviation bound gamma.
struct LayerState {
  std::string name;
  Eigen::VectorXd theta0;
  Eigen::VectorXd theta;
  double gamma = 0.0;

  /// Throws LengthMismatch, NonFiniteEntry or InvalidConfig (negative gamma).
  void validate() const;
};

enum class Method { VanillaFT, LinearProbe, LPFT, WiSE, L2SP, TPGM, FTP, SPD };

inline constexpr Method kAllMethods[] = {Method::VanillaFT, Method::LinearProbe, Method::LPFT, Method::WiSE,
                                         Method::L2SP,      Method::TPGM,        Method::FTP,  Method::SPD};

/// Short names: vanilla, linear_probe, lp_ft, wise, l2sp, tpgm, ftp, spd.
std::string_view to_string(Method m);
Method parse_method(std::string_view text);

struct MethodConfig {
  Method method = Method::VanillaFT;
  double lambda = 0.0;
  double alpha = 0.5;
  double kappa = 0.0;
  double spd_contraction = 0.9;
  double gamma_lr = 0.01;
  std::size_t lp_epochs = 10;

  /// Every field is checked whatever the method. AlphaOutOfRange for alpha,
  /// InvalidConfig for the rest.
  void validate() const;
  /// Operating points: WiSE alpha 0.5, FTP kappa 0, SPD decay 0.5, L2-SP 0.1.
  static MethodConfig defaults(Method m);
};

/// Relative slack below which a deviation counts as inside the gamma ball.
inline constexpr double kProjectionSlack = 1e-12;

/// ||theta - theta0||_2, the one norm every kernel uses.
double deviation_norm(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0);
inline double deviation_norm(const LayerState& s) { return deviation_norm(s.theta, s.theta0); }

/// Starting bound for learned constraints: 1e-8 * sqrt(n).
double initial_gamma(std::size_t n_params);

/// True when projecting `s` would move it.
bool projection_active(const LayerState& s);

Eigen::VectorXd wise_interpolate(const Eigen::VectorXd& theta0, const Eigen::VectorXd& theta_t, double alpha);

/// lambda * (theta - theta0).
Eigen::VectorXd l2sp_grad(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0, double lambda);

/// Rescales the deviation onto the gamma ball. Returns theta unchanged when
/// already inside; the result always satisfies the bound so a second
/// projection is the identity. Throws ZeroGamma.
Eigen::VectorXd pgm_project(const LayerState& s);

/// dL/dgamma = u . grad with u the unit deviation. Throws InactiveProjection.
double tpgm_gamma_grad(const LayerState& s, const Eigen::VectorXd& task_grad_at_proj);

/// Non-decreasing gamma step with positive gradients scaled by kappa.
double ftp_gamma_update(const LayerState& s, double gamma_grad, const MethodConfig& cfg);

/// c = -grad_next . (theta - theta0).
double spd_condition(const LayerState& s, const Eigen::VectorXd& grad_next);

struct SpdOutcome {
  Eigen::VectorXd theta;
  double gamma = 0.0;
  double condition = 0.0;
  bool contracted = false;
};

/// Layers with c <= 0 are contracted to spd_contraction of their deviation,
/// the rest keep theta and widen gamma to cover it.
std::vector<SpdOutcome> spd_apply(const std::vector<LayerState>& states, const std::vector<Eigen::VectorXd>& grads,
                                  const MethodConfig& cfg);

}  // namespace shiftkit
