#include "sdt/vae.hpp"

#include <algorithm>
#include <cmath>

#include "sdt/error.hpp"

namespace sdt {

int VaeConfig::keypoints() const { return layout_by_name(layout)->keypoints; }

void VaeConfig::validate() const {
  layout_by_name(layout);
  if (template_dim < 1) fail_usage("VAE template_dim must be >= 1");
  if (frames < 1) fail_usage("VAE frames must be >= 1");
  if (base_channels < 1 || max_channels < base_channels) fail_usage("invalid VAE widths");
  if (!(beta >= 0.0)) fail_usage("VAE beta must be >= 0");
}

double gaussian_kl(const LatentStats& s) {
  const int batch = s.mu.dim(0), c = s.mu.dim(1);
  double kl = 0.0;
  for (int i = 0; i < batch * c; ++i) {
    const double lv = s.log_var[i], mu = s.mu[i];
    kl += 0.5 * (std::exp(lv) + mu * mu - 1.0 - lv);
  }
  return kl / batch;
}

Tensor stack_sequences(const std::vector<GestureSequence>& seqs) {
  if (seqs.empty()) fail_usage("stack_sequences: empty set");
  const int k2 = 2 * seqs.front().keypoints(), frames = seqs.front().frames;
  Tensor out({static_cast<int>(seqs.size()), k2, frames});
  for (std::size_t n = 0; n < seqs.size(); ++n) {
    if (seqs[n].frames != frames || 2 * seqs[n].keypoints() != k2) {
      fail_usage("stack_sequences: sequences differ in shape");
    }
    Tensor ch = seqs[n].to_channels();
    std::copy(ch.values().begin(), ch.values().end(), out.data() + n * ch.size());
  }
  return out;
}

std::vector<GestureSequence> unstack_sequences(const LayoutPtr& layout, const Tensor& t,
                                               double fps) {
  std::vector<GestureSequence> out;
  for (int n = 0; n < t.dim(0); ++n) {
    out.push_back(GestureSequence::from_channels(layout, t, n, fps));
  }
  return out;
}

GestureVae::GestureVae(VaeConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  layout_ = layout_by_name(cfg_.layout);
  const int k2 = 2 * layout_->keypoints;
  lengths_.push_back(cfg_.frames);
  widths_.push_back(cfg_.base_channels);
  enc_.emplace_back("vae.enc.0", k2, widths_[0], 3, 1, NormKind::none);
  while (lengths_.back() > 1) {
    const int level = static_cast<int>(lengths_.size());
    lengths_.push_back((lengths_.back() + 1) / 2);
    widths_.push_back(std::min(cfg_.max_channels, cfg_.base_channels << std::min(level, 20)));
    enc_.emplace_back("vae.enc." + std::to_string(level), widths_[level - 1], widths_[level],
                      3, 2, NormKind::none);
  }
  const int top = widths_.back();
  mu_head_ = Linear("vae.mu", top, cfg_.template_dim);
  lv_head_ = Linear("vae.log_var", top, cfg_.template_dim);
  dec_in_ = Linear("vae.dec.in", cfg_.template_dim, top);
  for (int level = static_cast<int>(lengths_.size()) - 2; level >= 0; --level) {
    dec_up_.emplace_back();
    dec_.emplace_back("vae.dec." + std::to_string(level), widths_[level + 1], widths_[level], 3,
                      1, NormKind::none);
  }
  dec_head_ = Conv1d("vae.dec.head", widths_[0], k2, 1, 1, 0);
}

void GestureVae::init(Rng& rng) {
  for (auto& b : enc_) b.init(rng);
  mu_head_.init(rng);
  lv_head_.init(rng);
  dec_in_.init(rng);
  for (auto& b : dec_) b.init(rng);
  dec_head_.init(rng);
}

Tensor GestureVae::to_representation(const Tensor& x) const {
  if (!cfg_.hierarchical) return x;
  Tensor rep(x.shape());
  const int frames = x.dim(2);
  const std::size_t block = static_cast<std::size_t>(x.dim(1)) * frames;
  for (int n = 0; n < x.dim(0); ++n) {
    hierarchical_encode(*layout_, frames, std::span(x.data() + n * block, block),
                        std::span(rep.data() + n * block, block));
  }
  return rep;
}

Tensor GestureVae::from_representation(const Tensor& rep) const {
  if (!cfg_.hierarchical) return rep;
  Tensor x(rep.shape());
  const int frames = rep.dim(2);
  const std::size_t block = static_cast<std::size_t>(rep.dim(1)) * frames;
  for (int n = 0; n < rep.dim(0); ++n) {
    hierarchical_decode(*layout_, frames, std::span(rep.data() + n * block, block),
                        std::span(x.data() + n * block, block));
  }
  return x;
}

LatentStats GestureVae::encode_representation(const Tensor& rep) {
  const int k2 = 2 * layout_->keypoints;
  if (rep.rank() != 3 || rep.dim(1) != k2 || rep.dim(2) != cfg_.frames) {
    fail_usage("VAE expects (B, " + std::to_string(k2) + ", " + std::to_string(cfg_.frames) +
               ") input, got " + rep.shape_str());
  }
  Tensor x = rep;
  for (auto& b : enc_) x = b.forward(x);
  x.reshape({x.dim(0), x.dim(1)});
  return {mu_head_.forward(x), lv_head_.forward(x)};
}

LatentStats GestureVae::encode(const Tensor& x) {
  return encode_representation(to_representation(x));
}

void GestureVae::encode_backward(const Tensor& g_mu, const Tensor& g_log_var) {
  Tensor g = mu_head_.backward(g_mu);
  add_inplace(g, lv_head_.backward(g_log_var));
  g.reshape({g.dim(0), g.dim(1), 1});
  for (auto it = enc_.rbegin(); it != enc_.rend(); ++it) g = it->backward(g);
}

Tensor GestureVae::decode_representation(const Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != cfg_.template_dim) {
    fail_usage("VAE decode expects (B, " + std::to_string(cfg_.template_dim) +
               ") templates, got " + z.shape_str());
  }
  Tensor x = dec_in_act_.forward(dec_in_.forward(z));
  x.reshape({x.dim(0), x.dim(1), 1});
  const int levels = static_cast<int>(dec_.size());
  for (int i = 0; i < levels; ++i) {
    const int level = levels - 1 - i;
    x = dec_[i].forward(dec_up_[i].forward(x, lengths_[level]));
  }
  return dec_head_.forward(x);
}

Tensor GestureVae::decode(const Tensor& z) { return from_representation(decode_representation(z)); }

Tensor GestureVae::decode_backward(const Tensor& g_rep) {
  Tensor g = dec_head_.backward(g_rep);
  for (int i = static_cast<int>(dec_.size()) - 1; i >= 0; --i) {
    g = dec_up_[i].backward(dec_[i].backward(g));
  }
  g.reshape({g.dim(0), g.dim(1)});
  return dec_in_.backward(dec_in_act_.backward(g));
}

double GestureVae::reconstruction_loss(const Tensor& z, const Tensor& target_rep, Tensor* g_z) {
  Tensor y = decode_representation(z);
  if (!y.same_shape(target_rep)) fail_usage("reconstruction target shape mismatch");
  const int batch = y.dim(0), frames = y.dim(2);
  const double scale = 1.0 / (static_cast<double>(batch) * frames);
  double loss = 0.0;
  Tensor g(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - target_rep[i];
    loss += std::abs(d);
    g[i] = d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
  }
  if (g_z) *g_z = decode_backward(g);
  return loss * scale;
}

VaeLoss GestureVae::loss(const Tensor& x, const Tensor& noise, bool backward) {
  const Tensor rep = to_representation(x);
  LatentStats s = encode_representation(rep);
  if (!noise.same_shape(s.mu)) fail_usage("VAE noise must match (B, C)");
  const int batch = s.mu.dim(0);
  Tensor z(s.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = s.mu[i] + std::exp(0.5 * s.log_var[i]) * noise[i];
  }
  VaeLoss out;
  Tensor g_z;
  out.recon = reconstruction_loss(z, rep, backward ? &g_z : nullptr);
  out.kl = gaussian_kl(s);
  out.total = out.recon + cfg_.beta * out.kl;
  if (backward) {
    Tensor g_mu(s.mu.shape()), g_lv(s.mu.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double sd = std::exp(0.5 * s.log_var[i]);
      g_mu[i] = g_z[i] + cfg_.beta * s.mu[i] / batch;
      g_lv[i] = g_z[i] * noise[i] * 0.5 * sd +
                cfg_.beta * 0.5 * (std::exp(s.log_var[i]) - 1.0) / batch;
    }
    encode_backward(g_mu, g_lv);
  }
  return out;
}

TemplateVector GestureVae::extract_template(const GestureSequence& seq) {
  return extract_templates({seq}).front();
}

std::vector<TemplateVector> GestureVae::extract_templates(const std::vector<GestureSequence>& seqs) {
  if (!frozen_) fail_usage("extract_template requires a frozen VAE");
  std::vector<TemplateVector> out;
  // Fixed-size chunks keep memory bounded; results do not depend on chunking.
  constexpr std::size_t chunk = 64;
  for (std::size_t start = 0; start < seqs.size(); start += chunk) {
    const std::size_t end = std::min(seqs.size(), start + chunk);
    std::vector<GestureSequence> part(seqs.begin() + start, seqs.begin() + end);
    for (const auto& s : part) {
      if (s.layout->name != layout_->name) fail_usage("sequence layout differs from the VAE layout");
    }
    LatentStats st = encode(stack_sequences(part));
    const int c = cfg_.template_dim;
    for (std::size_t n = 0; n < part.size(); ++n) {
      out.emplace_back(st.mu.data() + n * c, st.mu.data() + (n + 1) * c);
    }
  }
  return out;
}

std::vector<Param*> GestureVae::parameters() {
  std::vector<Param*> p;
  for (auto& b : enc_) b.collect(p);
  mu_head_.collect(p);
  lv_head_.collect(p);
  dec_in_.collect(p);
  for (auto& b : dec_) b.collect(p);
  dec_head_.collect(p);
  return p;
}

void GestureVae::zero_grad() {
  for (Param* p : parameters()) p->zero_grad();
}

}  // namespace sdt
