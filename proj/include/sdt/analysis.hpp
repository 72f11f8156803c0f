#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdt/gesture.hpp"
#include "sdt/templates.hpp"
#include "sdt/vae.hpp"

namespace sdt {

class GestureModel;

struct PcaResult {
  int dims = 0;  // may be below the request for rank-deficient data
  std::vector<std::vector<double>> points;  // one row per input vector
  std::vector<double> explained_ratio;      // per kept axis, non-increasing
  std::vector<double> mean;
};

PcaResult pca_project(const std::vector<TemplateVector>& vectors, int dims = 2);

struct SemanticDirections {
  std::vector<double> top;  // unit norm, largest-magnitude entry positive
  std::vector<double> eigenvalues;                // descending
  std::vector<std::vector<double>> directions;    // ranked like eigenvalues
  bool degenerate = false;  // top two eigenvalues within 1e-9
};

// Eigenvectors of W^T W for a weight W mapping R^C.
SemanticDirections semantic_directions(const Eigen::MatrixXd& w);
// Uses the decoder's first affine map (bias excluded). VAE must be frozen.
SemanticDirections top_semantic_direction(const GestureVae& vae);

std::pair<GestureSequence, GestureSequence> decode_opposites(GestureVae& vae,
                                                             std::span<const double> direction,
                                                             double magnitude);

struct InterpolationSweep {
  std::vector<double> alphas;
  std::vector<GestureSequence> outputs;
  std::vector<double> adjacent_diff;  // mean |coordinate change| between neighbours
};

InterpolationSweep interpolation_sweep(GestureVae& vae, std::span<const double> t0,
                                       std::span<const double> t1, int steps);
// Generator sweep on fixed audio (mel (M, T)); clip-mode templates only.
InterpolationSweep interpolation_sweep(GestureModel& model, const Tensor& mel,
                                       std::span<const double> t0, std::span<const double> t1,
                                       int steps);

double mean_abs_difference(const GestureSequence& a, const GestureSequence& b);

// SVG output (presentation only).
std::string pca_svg(const PcaResult& pca, const std::vector<std::string>& labels);
// Strip of skeleton drawings, one per sequence, sampled every `stride` frames.
std::string skeleton_strip_svg(const std::vector<GestureSequence>& rows, int stride = 8);

}  // namespace sdt
