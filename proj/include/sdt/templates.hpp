#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sdt/generator.hpp"
#include "sdt/nn.hpp"
#include "sdt/tensor.hpp"

namespace sdt {

using TemplateVector = std::vector<double>;

// Learned condition vectors keyed by clip id. Clip mode stores one C-vector
// per clip, frame mode an F x C block per clip. The table is a Param so it
// shares the optimizer with the network.
class TemplateBank {
 public:
  TemplateBank() = default;
  // All entries start at exactly zero.
  static TemplateBank init(const std::vector<std::string>& clip_ids, int dim,
                           TemplateMode mode, int frames = 0);

  TemplateMode mode() const { return mode_; }
  int dim() const { return dim_; }
  int frames() const { return frames_; }
  int size() const { return static_cast<int>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  int index_of(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  // Clip mode: C values. Frame mode: F x C values (frame-major).
  std::span<const double> entry(int index) const;
  std::span<const double> entry(const std::string& id) const { return entry(index_of(id)); }
  std::span<double> entry_mut(int index);

  // Template features for a batch of entries: (B, C, F). In clip mode the
  // vector is tiled over `frames`.
  Tensor features(std::span<const int> idx, int frames) const;
  // Raw vectors for the KL term: clip (B, C); frame (B*F, C).
  Tensor vectors(std::span<const int> idx) const;
  // Accumulate dL/d(features) into the table gradient.
  void accumulate_feature_grad(std::span<const int> idx, const Tensor& g_feat);
  // Accumulate dL/d(vectors) (layout as returned by vectors()).
  void accumulate_vector_grad(std::span<const int> idx, const Tensor& g_vec);

  Param& table() { return table_; }
  const Param& table() const { return table_; }

  std::string to_json() const;
  static TemplateBank from_json(const std::string& text, const std::string& where);

 private:
  TemplateMode mode_ = TemplateMode::clip;
  int dim_ = 0;
  int frames_ = 1;
  bool frozen_ = false;
  std::vector<std::string> ids_;
  std::map<std::string, int> index_;
  Param table_;

  std::size_t stride() const { return static_cast<std::size_t>(frames_) * dim_; }
};

// Returns an index chosen uniformly at random, deterministic per seed.
int sample_template_index(const TemplateBank& bank, std::uint64_t seed);
TemplateVector sample_template(const TemplateBank& bank, std::uint64_t seed);

TemplateVector interpolate(std::span<const double> t0, std::span<const double> t1,
                           double alpha);

// KL(N(mu, var) || N(0, 1)) summed over dimensions, with mu and var the
// per-dimension batch mean and population variance of the rows of `batch`
// (N, C). var is floored at 1e-8 before the logarithm. If grad is non-null
// it receives dL/d(batch).
double kl_regularizer(const Tensor& batch, Tensor* grad = nullptr);
inline constexpr double kKlVarianceFloor = 1e-8;

}  // namespace sdt
