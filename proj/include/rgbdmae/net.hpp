#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rgbdmae/autograd.hpp"
#include "rgbdmae/masking.hpp"
#include "rgbdmae/objectives.hpp"
#include "rgbdmae/tokenizer.hpp"

namespace rgbdmae {

enum class EncoderMode { Specific, Shared };

struct EncoderConfig {
  int depth = 4;
  int width = 128;
  int heads = 4;
  double mlp_ratio = 4.0;
  EncoderMode mode = EncoderMode::Specific;

  void validate() const;
  i64 hidden() const { return static_cast<i64>(std::lround(mlp_ratio * width)); }
};

struct DecoderConfig {
  int depth = 2;
  int width = 64;
  int heads = 4;
  double mlp_ratio = 4.0;

  void validate() const;
  i64 hidden() const { return static_cast<i64>(std::lround(mlp_ratio * width)); }
};

// Paper-scale presets (kept for reference; the desk-scale defaults above are
// what the tests train).
EncoderConfig vit_base_encoder();        // 12 blocks, width 768, 12 heads
DecoderConfig paper_video_decoder();     // 4 blocks, 6 heads, width = encoder/2
DecoderConfig paper_image_decoder();     // 8 blocks, 16 heads, width 512

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  int patch = 16;
  int tubelet = 1;  // 1 = image model, >1 = video model

  void validate() const;
  i64 input_dim(Modality m) const {
    return static_cast<i64>(tubelet) * patch * patch * (m == Modality::Rgb ? 3 : 1);
  }
  i64 pred_dim(Modality m) const { return input_dim(m); }
  std::string encoder_prefix(Modality m) const;
};

// All learnable tensors, in a stable manifest order. The per-config entry
// count has a closed form asserted at construction (see expected_param_entries).
class ModelState {
 public:
  ModelState(ModelConfig cfg, u64 seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool has(const std::string& name) const;
  void zero_grads();
  i64 total_entries() const;

  static i64 expected_param_entries(const ModelConfig& cfg);

 private:
  ModelConfig cfg_;
  std::vector<Param> params_;
};

// Optional capture of attention probabilities (one Mat per (block, sample,
// head) in call order) for inspection in tests.
using AttnCapture = std::vector<Mat>;

// Per-block keep masks for stochastic depth; disabled when p == 0.
struct DropPathPlan {
  double p = 0.0;
  u64 seed = 0;
};

// Pre-norm transformer stack over (batch*seq, width) tokens, final layernorm
// included. Parameters are looked up under `prefix` (e.g. "encoder.").
Var transformer_stack(Tape& tape, std::vector<Param>& params, const std::string& prefix, Var x, i64 batch,
                      i64 seq, int depth, int heads, AttnCapture* capture = nullptr,
                      const DropPathPlan* drop = nullptr);

struct EncodeResult {
  Var rgb;    // (B * n_vis_rgb, D)
  Var depth;  // (B * n_vis_depth, D)
  i64 n_vis_rgb = 0;
  i64 n_vis_depth = 0;
};

// Positional content must already be added to the tokens; selection happens
// before this call. Shared mode adds the learned modality embedding and runs
// one parameter set; specific mode runs disjoint sets.
EncodeResult encode(Tape& tape, ModelState& state, Var visible_rgb, Var visible_depth, i64 batch,
                    i64 n_vis_rgb, i64 n_vis_depth, AttnCapture* capture = nullptr);

struct DecodeResult {
  Var rgb_pred;    // (B*N, tubelet*P^2*3)
  Var depth_pred;  // (B*N, tubelet*P^2*1)
};

// Scatters visible latents into the full grid, fills masked slots with the
// modality's mask token, adds decoder positions and modality embeddings, runs
// the shared decoder over each sample's concatenated rgb+depth sequence, and
// applies the two prediction heads.
DecodeResult decode(Tape& tape, ModelState& state, Var latent_rgb, Var latent_depth, const MaskPlan& plan,
                    i64 batch);

// Mean-pools each modality's visible latents per sample, pairs rgb i with
// depth pairing.depth_of[i], concatenates and applies the matching head.
Var matching_logits(Tape& tape, ModelState& state, Var latent_rgb, Var latent_depth, i64 batch, i64 n_vis_rgb,
                    i64 n_vis_depth, const std::vector<i64>& depth_of);

struct BatchInputs {
  GridGeometry geom;
  i64 batch = 0;
  Mat rgb_patches;    // (B*N, in_rgb), raw pixel values
  Mat depth_patches;  // (B*N, in_depth), normalized depth
};

struct ForwardOptions {
  LossWeights weights;
  DepthLossMode depth_mode = DepthLossMode::VideoMse;
  u64 matching_seed = 0;
  MatchMode match_mode = MatchMode::Random;
  bool compute_grads = true;
};

// Full training objective. Loss terms with zero weight are skipped entirely,
// so parameters only they reach receive zero gradient. Gradients accumulate
// into ModelState (zeroed first).
LossReport forward_backward(ModelState& state, const BatchInputs& inputs, const MaskPlan& plan,
                            const ForwardOptions& opts);

// Fine-tuning probes: encoder + task head, decoder discarded.
enum class ProbeTask { Classification, Segmentation, Depth };

struct ProbeConfig {
  ProbeTask task = ProbeTask::Classification;
  int classes = 8;  // classification / segmentation
  bool freeze_encoder = false;
  double drop_path = 0.0;
};

class ProbeModel {
 public:
  // Structure mirrors the pretrain encoder so checkpoints load by name.
  ProbeModel(ModelConfig cfg, ProbeConfig probe, u64 seed);

  const ModelConfig& config() const { return cfg_; }
  const ProbeConfig& probe() const { return probe_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param& at(const std::string& name);
  void zero_grads();

  // rgb-only forward: patches -> tokens -> encoder -> head.
  // classification: (B, classes); segmentation: (B*N*P^2, classes); depth: (B*N, P^2)
  Var forward(Tape& tape, const Mat& rgb_patches, const GridGeometry& geom, i64 batch,
              const DropPathPlan* drop = nullptr);

  // whether a parameter belongs to the frozen backbone under freeze_encoder
  bool is_backbone(const std::string& name) const;
  // layer-wise lr multiplier: head gets 1, each block towards the input gets
  // an extra factor of `decay`
  std::vector<double> layer_lr_scales(double decay) const;

 private:
  ModelConfig cfg_;
  ProbeConfig probe_;
  std::vector<Param> params_;
};

}  // namespace rgbdmae
