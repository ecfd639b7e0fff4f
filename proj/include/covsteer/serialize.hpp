#pragma once

// JSON persistence of datasets, estimates and policies, plus the CSV and SVG
// emitters used by the validation stage. Matrices are written as nested
// row-major arrays; doubles use shortest round-trip formatting, so
// load(save(x)) == x bit for bit.

#include "covsteer/error.hpp"
#include "covsteer/estimate.hpp"
#include "covsteer/policy.hpp"
#include "covsteer/sysdata.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace covsteer {

/// Malformed or inconsistent file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

std::string to_json(const Dataset& d);
std::string to_json(const NoiseEstimate& e);
std::string to_json(const Policy& p);

Dataset dataset_from_json(const std::string& text);
NoiseEstimate estimate_from_json(const std::string& text);
Policy policy_from_json(const std::string& text);

/// Writes text, creating parent directories. Throws Error on I/O failure.
void write_file(const std::filesystem::path& path, const std::string& text);
/// Throws Error when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Header k, mu_1..mu_n, sigma_ij for i <= j in row-major order; one row per
/// step, starting at k = first_k.
std::string moments_csv(const std::vector<Vec>& means, const std::vector<SymMat>& covs, int first_k = 0);

/// Header trial, k, x_1..x_n; one row per (trial, step).
std::string trajectories_csv(const std::vector<std::vector<Vec>>& trajectories);

struct SvgPanel {
  std::string title;
  std::vector<Vec> means;
  std::vector<SymMat> covs;
  std::vector<std::vector<Vec>> trajectories;
  GaussianMoments target;
};

/// Standalone SVG with one panel per entry, side by side. Each panel shows the
/// 3-sigma ellipse (x^T Sigma^-1 x = 9) at every step, the mean path, sample
/// trajectories and the terminal target ellipse, in the first two state
/// coordinates.
std::string steering_svg(const std::vector<SvgPanel>& panels);

/// Points of the 3-sigma ellipse of a 2 x 2 covariance around `center`.
std::vector<Vec> ellipse_points(const Vec& center, const SymMat& cov, int segments = 64);

}  // namespace covsteer
