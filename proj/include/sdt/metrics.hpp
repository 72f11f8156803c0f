#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "sdt/gesture.hpp"
#include "sdt/templates.hpp"

namespace sdt {

class GestureVae;

struct MetricsReport {
  double l2 = 0.0;
  double lip_error = 0.0;
  double ftd = 0.0;
  int n_samples = 0;

  std::string to_json() const;
};

// Mean over frames of the Euclidean norm of the 2K-dim coordinate error.
double l2_distance(const GestureSequence& pred, const GestureSequence& gt);

// Per-frame distance between the upper and lower lip centres.
std::vector<double> lip_distances(const GestureSequence& seq);

// (1/F sum_i |d_i - d^_i|) / max_n d^_n, with d^ from the ground truth.
double lip_sync_error(const GestureSequence& pred, const GestureSequence& gt);

struct Gaussian {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
};

// Mean and population covariance.
Gaussian fit_gaussian(const std::vector<TemplateVector>& templates);

// Symmetric PSD square root via eigendecomposition. Negative eigenvalues
// (numerical noise) are clamped to zero.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& s);

// |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}), clamped at zero.
double frechet_distance(const Gaussian& a, const Gaussian& b);

// Frechet distance between VAE-template Gaussians of two sequence sets.
double ftd(const std::vector<GestureSequence>& pred, const std::vector<GestureSequence>& gt,
           GestureVae& vae);

}  // namespace sdt
