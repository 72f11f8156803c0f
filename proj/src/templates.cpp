#include "sdt/templates.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "sdt/error.hpp"
#include "sdt/rng.hpp"

namespace sdt {

using nlohmann::json;

TemplateBank TemplateBank::init(const std::vector<std::string>& clip_ids, int dim,
                                TemplateMode mode, int frames) {
  if (clip_ids.empty()) fail_usage("template bank needs at least one clip");
  if (dim < 1) fail_usage("template dimension must be >= 1");
  if (mode == TemplateMode::none) fail_usage("template bank mode must be clip or frame");
  if (mode == TemplateMode::frame && frames < 1) {
    fail_usage("frame-mode template bank needs F >= 1");
  }
  TemplateBank b;
  b.mode_ = mode;
  b.dim_ = dim;
  b.frames_ = mode == TemplateMode::frame ? frames : 1;
  b.ids_ = clip_ids;
  for (std::size_t i = 0; i < clip_ids.size(); ++i) {
    if (!b.index_.emplace(clip_ids[i], static_cast<int>(i)).second) {
      fail_data("duplicate clip_id '" + clip_ids[i] + "' in template bank");
    }
  }
  const int n = static_cast<int>(clip_ids.size());
  b.table_ = Param("templates",
                   mode == TemplateMode::frame ? Tensor({n, frames, dim}) : Tensor({n, dim}));
  return b;
}

int TemplateBank::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) fail_usage("unknown template id '" + id + "'");
  return it->second;
}

std::span<const double> TemplateBank::entry(int index) const {
  if (index < 0 || index >= size()) fail_usage("template index out of range");
  return {table_.value.data() + index * stride(), stride()};
}

std::span<double> TemplateBank::entry_mut(int index) {
  if (index < 0 || index >= size()) fail_usage("template index out of range");
  return {table_.value.data() + index * stride(), stride()};
}

Tensor TemplateBank::features(std::span<const int> idx, int frames) const {
  const int batch = static_cast<int>(idx.size());
  Tensor out({batch, dim_, frames});
  for (int n = 0; n < batch; ++n) {
    auto e = entry(idx[n]);
    for (int c = 0; c < dim_; ++c) {
      for (int f = 0; f < frames; ++f) {
        // Frame mode wraps cyclically when F differs from the stored length.
        const double v = mode_ == TemplateMode::clip
                             ? e[c]
                             : e[static_cast<std::size_t>(f % frames_) * dim_ + c];
        out.at(n, c, f) = v;
      }
    }
  }
  return out;
}

Tensor TemplateBank::vectors(std::span<const int> idx) const {
  const int batch = static_cast<int>(idx.size());
  Tensor out({batch * frames_, dim_});
  for (int n = 0; n < batch; ++n) {
    auto e = entry(idx[n]);
    std::copy(e.begin(), e.end(), out.data() + n * stride());
  }
  return out;
}

void TemplateBank::accumulate_feature_grad(std::span<const int> idx, const Tensor& g) {
  const int frames = g.dim(2);
  for (std::size_t n = 0; n < idx.size(); ++n) {
    double* dst = table_.grad.data() + idx[n] * stride();
    for (int c = 0; c < dim_; ++c) {
      for (int f = 0; f < frames; ++f) {
        const double v = g.at(static_cast<int>(n), c, f);
        if (mode_ == TemplateMode::clip) dst[c] += v;
        else dst[static_cast<std::size_t>(f % frames_) * dim_ + c] += v;
      }
    }
  }
}

void TemplateBank::accumulate_vector_grad(std::span<const int> idx, const Tensor& g) {
  for (std::size_t n = 0; n < idx.size(); ++n) {
    double* dst = table_.grad.data() + idx[n] * stride();
    const double* src = g.data() + n * stride();
    for (std::size_t i = 0; i < stride(); ++i) dst[i] += src[i];
  }
}

std::string TemplateBank::to_json() const {
  json templates = json::object();
  for (int i = 0; i < size(); ++i) {
    auto e = entry(i);
    templates[ids_[i]] = std::vector<double>(e.begin(), e.end());
  }
  json j = {{"C", dim_}, {"mode", to_string(mode_)}, {"templates", std::move(templates)}};
  if (mode_ == TemplateMode::frame) j["F"] = frames_;
  return j.dump() + "\n";
}

TemplateBank TemplateBank::from_json(const std::string& text, const std::string& where) {
  json j;
  try {
    j = json::parse(text);
    const int dim = j.at("C").get<int>();
    const TemplateMode mode = parse_template_mode(j.at("mode").get<std::string>());
    const int frames = mode == TemplateMode::frame ? j.at("F").get<int>() : 0;
    std::vector<std::string> ids;
    for (auto& [k, v] : j.at("templates").items()) ids.push_back(k);
    TemplateBank b = init(ids, dim, mode, frames);
    for (int i = 0; i < b.size(); ++i) {
      const auto v = j["templates"][ids[i]].get<std::vector<double>>();
      if (v.size() != b.stride()) fail_data(where + ": template '" + ids[i] + "' has wrong length");
      for (double x : v) {
        if (!std::isfinite(x)) fail_data(where + ": non-finite template value");
      }
      std::copy(v.begin(), v.end(), b.entry_mut(i).begin());
    }
    return b;
  } catch (const json::exception& e) {
    fail_data(where + ": " + e.what());
  }
}

int sample_template_index(const TemplateBank& bank, std::uint64_t seed) {
  if (bank.size() == 0) fail_usage("cannot sample from an empty template bank");
  Rng rng = Rng::derive(seed, 0x7e3d);
  return static_cast<int>(rng.index(static_cast<std::size_t>(bank.size())));
}

TemplateVector sample_template(const TemplateBank& bank, std::uint64_t seed) {
  auto e = bank.entry(sample_template_index(bank, seed));
  return {e.begin(), e.end()};
}

TemplateVector interpolate(std::span<const double> t0, std::span<const double> t1,
                           double alpha) {
  if (t0.size() != t1.size()) fail_usage("interpolate: template dimensions differ");
  TemplateVector out(t0.size());
  for (std::size_t i = 0; i < t0.size(); ++i) out[i] = (1.0 - alpha) * t0[i] + alpha * t1[i];
  return out;
}

double kl_regularizer(const Tensor& batch, Tensor* grad) {
  if (batch.rank() != 2) fail_usage("kl_regularizer expects an (N, C) batch");
  const int n = batch.dim(0), c = batch.dim(1);
  if (n < 2) fail_usage("kl_regularizer needs a batch of at least 2 templates");
  if (grad) *grad = Tensor(batch.shape());
  double loss = 0.0;
  for (int j = 0; j < c; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += batch[static_cast<std::size_t>(i) * c + j];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = batch[static_cast<std::size_t>(i) * c + j] - mean;
      var += d * d;
    }
    var /= n;
    const bool floored = var < kKlVarianceFloor;
    const double v = floored ? kKlVarianceFloor : var;
    loss += 0.5 * (v + mean * mean - 1.0 - std::log(v));
    if (grad) {
      // dL/dvar is zero where the floor is active.
      const double dvar = floored ? 0.0 : 0.5 * (1.0 - 1.0 / var);
      for (int i = 0; i < n; ++i) {
        const double d = batch[static_cast<std::size_t>(i) * c + j] - mean;
        (*grad)[static_cast<std::size_t>(i) * c + j] = mean / n + dvar * 2.0 * d / n;
      }
    }
  }
  return loss;
}

}  // namespace sdt
