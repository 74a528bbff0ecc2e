#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "rgbdmae/datagen.hpp"
#include "rgbdmae/net.hpp"

namespace rgbdmae {

struct OptimSettings {
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;  // pretrain default; fine-tune uses 0.999
  double grad_clip = 0.0;
  i64 warmup_epochs = 2;
};

struct PretrainConfig {
  bool video = true;
  std::string dataset;
  std::string out_dir = "run";
  std::string init_checkpoint;  // optional warm start
  std::string resume_from;      // optional checkpoint with train state
  u64 seed = 0;
  i64 batch = 8;
  i64 epochs = 20;         // video pipeline
  i64 stage1_epochs = 4;   // image pipeline
  i64 stage2_epochs = 16;  // image pipeline
  i64 max_steps = 0;       // 0 = run to schedule end; used by tests
  int patch = 16;
  int tubelet = 2;  // video only; image pipeline forces 1
  EncoderConfig encoder;
  DecoderConfig decoder;
  MaskConfig mask;
  LossWeights weights;  // image pipeline uses alpha/beta (stage 2) and tau (stage 1)
  OptimSettings optim;
  i64 checkpoint_interval = 0;  // steps; 0 = final only
  int threads = 0;

  static PretrainConfig from_json(const nlohmann::json& j, bool video);
  nlohmann::json to_json() const;
  void validate() const;
  ModelConfig model_config() const;
};

struct PretrainResult {
  std::string final_checkpoint;
  i64 steps = 0;
  double first_total = 0.0;
  double last_total = 0.0;
  // image pipeline
  std::string stage1_checkpoint;
  u64 stage1_encoder_checksum = 0;
  u64 stage2_init_encoder_checksum = 0;
  std::vector<std::string> stage1_grad_params;  // touched by the first stage-1 step
  i64 stage1_steps = 0;
};

PretrainResult pretrain_video(const PretrainConfig& cfg);
PretrainResult pretrain_image(const PretrainConfig& cfg);

struct FinetuneConfig {
  std::string dataset;
  std::string eval_dataset;  // defaults to dataset
  std::string out_dir = "finetune";
  ProbeConfig probe;
  u64 seed = 0;
  i64 batch = 8;
  i64 epochs = 20;
  double label_fraction = 1.0;
  double layer_decay = 0.75;
  OptimSettings optim{1e-3, 0.05, 0.9, 0.999, 0.0, 1};
  int threads = 0;
  // model geometry; overridden by checkpoint meta when fine-tuning from one
  EncoderConfig encoder;
  int patch = 16;
  int tubelet = 2;

  static FinetuneConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

struct FinetuneResult {
  std::string metric_name;
  double metric = 0.0;
  std::string checkpoint_dir;
  i64 steps = 0;
};

// Empty checkpoint string trains the identically-configured from-scratch
// baseline.
FinetuneResult finetune(const std::string& checkpoint, const FinetuneConfig& cfg);

struct EvalResult {
  std::string metric_name;
  double value = 0.0;
};

EvalResult evaluate_checkpoint(const std::string& checkpoint, const std::string& dataset_manifest,
                               const std::string& out_dir);

// side-by-side mask overlay raster for a sample under a plan
void visualize_masks(const std::string& dataset_manifest, size_t index, const MaskConfig& mask_cfg, int patch,
                     int tubelet, u64 seed, const std::string& out_path);

// shortest round-trip decimal formatting; metrics.csv relies on it being
// bit-stable
std::string format_double(double v);

int cli_main(const std::vector<std::string>& args);

}  // namespace rgbdmae
