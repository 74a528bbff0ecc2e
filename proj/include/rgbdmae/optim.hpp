#pragma once

#include <vector>

#include "rgbdmae/autograd.hpp"

namespace rgbdmae {

// Linear warmup from ~0 to base over warmup_steps, then cosine decay to 0 at
// total_steps. Non-increasing after warmup, non-negative throughout.
double cosine_warmup_lr(i64 step, i64 warmup_steps, i64 total_steps, double base_lr);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double grad_clip = 0.0;  // global norm; 0 disables
};

// Decoupled weight decay; decay is applied only to matrices (rows > 1), never
// to biases, norm parameters, mask tokens or embeddings.
class AdamW {
 public:
  AdamW(const std::vector<Param>& params, AdamWConfig cfg);

  // trainable[i] == 0 leaves params[i] untouched (and its moments frozen);
  // lr_scales, when given, multiplies lr per parameter (layer-wise decay)
  void step(std::vector<Param>& params, double lr, const std::vector<std::uint8_t>* trainable = nullptr,
            const std::vector<double>* lr_scales = nullptr);

  const AdamWConfig& config() const { return cfg_; }
  i64 steps_taken() const { return t_; }
  std::vector<Mat>& moments_m() { return m_; }
  std::vector<Mat>& moments_v() { return v_; }
  void set_steps_taken(i64 t) { t_ = t; }

 private:
  AdamWConfig cfg_;
  std::vector<Mat> m_, v_;
  i64 t_ = 0;
};

}  // namespace rgbdmae
