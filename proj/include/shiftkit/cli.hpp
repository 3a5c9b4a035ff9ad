#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace shiftkit {

/// Every knob the command line exposes, with its default.
struct RunConfig {
  std::string command;
  std::string manifest_path;
  std::string output_dir = ".";
  std::string shrinkage = "auto";
  double tv = 45.0;
  double tq = 50.0;
  double tj = 60.0;
  double mmd_gamma = 1.0;
  double mmd_scale = 1e4;
  std::uint64_t seed = 0;
  std::size_t bin_count = 50;
  unsigned threads = 1;
  bool standardize = false;

  std::vector<std::string> tags;
  std::vector<std::string> datasets;
  std::string heatmap_path;
  std::vector<std::string> methods;
  std::string v_tag;
  std::string q_tag;
  std::string joint_tag;
  std::size_t k = 10;
  std::size_t max_samples = 1000;
  std::string estimator = "biased";

  std::string task = "default";
  std::size_t epochs = 50;
  double lr = 0.1;
  double alpha = 0.5;
  double kappa = 0.0;
  double l2sp_lambda = 0.1;
  double spd_lambda = 0.5;
  double spd_contraction = 0.9;
  double gamma_lr = 0.01;
  std::size_t lp_epochs = 10;
};

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitInternal = 2 };

/// Runs the `shiftkit` command line. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace shiftkit
