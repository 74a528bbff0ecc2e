#include "rgbdmae/optim.hpp"

#include <cmath>

namespace rgbdmae {

double cosine_warmup_lr(i64 step, i64 warmup_steps, i64 total_steps, double base_lr) {
  if (total_steps < 1) throw ConfigError("schedule needs at least one step");
  if (step < warmup_steps) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  i64 decay_steps = std::max<i64>(total_steps - warmup_steps, 1);
  double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(decay_steps);
  progress = std::min(progress, 1.0);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

AdamW::AdamW(const std::vector<Param>& params, AdamWConfig cfg) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.value.rows, p.value.cols);
    v_.emplace_back(p.value.rows, p.value.cols);
  }
}

void AdamW::step(std::vector<Param>& params, double lr, const std::vector<std::uint8_t>* trainable,
                 const std::vector<double>* lr_scales) {
  if (params.size() != m_.size()) throw ConfigError("optimizer state does not match parameter list");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  double clip_coef = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (size_t i = 0; i < params.size(); ++i) {
      if (trainable && !(*trainable)[i]) continue;
      for (double g : params[i].grad.d) sq += g * g;
    }
    double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip_coef = cfg_.grad_clip / norm;
  }

  for (size_t i = 0; i < params.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    Param& p = params[i];
    double plr = lr * (lr_scales ? (*lr_scales)[i] : 1.0);
    bool decay = p.value.rows > 1;  // matrices only
    Mat& m = m_[i];
    Mat& v = v_[i];
    for (i64 j = 0; j < p.value.numel(); ++j) {
      size_t k = static_cast<size_t>(j);
      double g = p.grad.d[k] * clip_coef;
      m.d[k] = cfg_.beta1 * m.d[k] + (1.0 - cfg_.beta1) * g;
      v.d[k] = cfg_.beta2 * v.d[k] + (1.0 - cfg_.beta2) * g * g;
      double update = (m.d[k] / bc1) / (std::sqrt(v.d[k] / bc2) + cfg_.eps);
      if (decay) update += cfg_.weight_decay * p.value.d[k];
      p.value.d[k] -= plr * update;
    }
  }
}

}  // namespace rgbdmae
