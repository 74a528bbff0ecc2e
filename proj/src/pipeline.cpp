#include "rgbdmae/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rgbdmae/checkpoint.hpp"
#include "rgbdmae/metrics.hpp"
#include "rgbdmae/optim.hpp"
#include "rgbdmae/png_io.hpp"
#include "rgbdmae/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace rgbdmae {

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

// ---- config <-> json ----------------------------------------------------

EncoderConfig encoder_from_json(const json& j, EncoderConfig base) {
  base.depth = j.value("depth", base.depth);
  base.width = j.value("width", base.width);
  base.heads = j.value("heads", base.heads);
  base.mlp_ratio = j.value("mlp_ratio", base.mlp_ratio);
  if (j.contains("mode")) {
    std::string m = j["mode"].get<std::string>();
    if (m == "shared") base.mode = EncoderMode::Shared;
    else if (m == "specific") base.mode = EncoderMode::Specific;
    else throw ConfigError("encoder mode must be 'shared' or 'specific', got " + m);
  }
  return base;
}

json encoder_to_json(const EncoderConfig& e) {
  return {{"depth", e.depth},
          {"width", e.width},
          {"heads", e.heads},
          {"mlp_ratio", e.mlp_ratio},
          {"mode", e.mode == EncoderMode::Shared ? "shared" : "specific"}};
}

DecoderConfig decoder_from_json(const json& j, DecoderConfig base) {
  base.depth = j.value("depth", base.depth);
  base.width = j.value("width", base.width);
  base.heads = j.value("heads", base.heads);
  base.mlp_ratio = j.value("mlp_ratio", base.mlp_ratio);
  return base;
}

json decoder_to_json(const DecoderConfig& d) {
  return {{"depth", d.depth}, {"width", d.width}, {"heads", d.heads}, {"mlp_ratio", d.mlp_ratio}};
}

MaskConfig mask_from_json(const json& j, MaskConfig base) {
  if (j.contains("rgb_strategy")) base.rgb_strategy = parse_mask_strategy(j["rgb_strategy"].get<std::string>());
  if (j.contains("depth_strategy")) base.depth_strategy = parse_mask_strategy(j["depth_strategy"].get<std::string>());
  base.rgb_ratio = j.value("rgb_ratio", base.rgb_ratio);
  base.depth_ratio = j.value("depth_ratio", base.depth_ratio);
  base.correlated = j.value("correlated", base.correlated);
  return base;
}

json mask_to_json(const MaskConfig& m) {
  return {{"rgb_strategy", mask_strategy_name(m.rgb_strategy)},
          {"rgb_ratio", m.rgb_ratio},
          {"depth_strategy", mask_strategy_name(m.depth_strategy)},
          {"depth_ratio", m.depth_ratio},
          {"correlated", m.correlated}};
}

LossWeights loss_from_json(const json& j, LossWeights base) {
  base.alpha = j.value("alpha", base.alpha);
  base.beta = j.value("beta", base.beta);
  base.gamma = j.value("gamma", base.gamma);
  base.eta = j.value("eta", base.eta);
  base.tau = j.value("tau", base.tau);
  base.symmetric_contrastive = j.value("symmetric_contrastive", base.symmetric_contrastive);
  return base;
}

json loss_to_json(const LossWeights& w) {
  return {{"alpha", w.alpha}, {"beta", w.beta},       {"gamma", w.gamma},
          {"eta", w.eta},     {"tau", w.tau},         {"symmetric_contrastive", w.symmetric_contrastive}};
}

OptimSettings optim_from_json(const json& j, OptimSettings base) {
  base.lr = j.value("lr", base.lr);
  base.weight_decay = j.value("weight_decay", base.weight_decay);
  base.beta1 = j.value("beta1", base.beta1);
  base.beta2 = j.value("beta2", base.beta2);
  base.grad_clip = j.value("grad_clip", base.grad_clip);
  base.warmup_epochs = j.value("warmup_epochs", base.warmup_epochs);
  return base;
}

json optim_to_json(const OptimSettings& o) {
  return {{"lr", o.lr},           {"weight_decay", o.weight_decay}, {"beta1", o.beta1},
          {"beta2", o.beta2},     {"grad_clip", o.grad_clip},       {"warmup_epochs", o.warmup_epochs}};
}

json model_config_to_json(const ModelConfig& m) {
  return {{"encoder", encoder_to_json(m.encoder)},
          {"decoder", decoder_to_json(m.decoder)},
          {"patch", m.patch},
          {"tubelet", m.tubelet}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  m.encoder = encoder_from_json(j.value("encoder", json::object()), m.encoder);
  m.decoder = decoder_from_json(j.value("decoder", json::object()), m.decoder);
  m.patch = j.value("patch", m.patch);
  m.tubelet = j.value("tubelet", m.tubelet);
  return m;
}

// ---- in-memory dataset ---------------------------------------------------

struct LoadedDataset {
  bool video = false;
  GridGeometry geom;
  std::vector<Mat> rgb_tokens;    // per sample (N, in_rgb)
  std::vector<Mat> depth_tokens;  // per sample (N, in_depth), normalized depth
  std::vector<int> labels;        // -1 when absent
  std::vector<RgbDepthSample> images;  // image datasets only (dense probe targets)
  int h = 0, w = 0;

  i64 size() const { return static_cast<i64>(rgb_tokens.size()); }
};

LoadedDataset load_tokens(const std::string& manifest_path, int patch, int tubelet) {
  DatasetManifest m = load_dataset(manifest_path);
  LoadedDataset d;
  d.video = m.video;
  if (m.records.empty()) throw ValidationError("dataset " + manifest_path + " has no records");
  for (size_t i = 0; i < m.records.size(); ++i) {
    if (m.video) {
      VideoSample v = load_video_sample(m, i);
      if (i == 0) {
        d.geom = video_geometry(v.t, v.h, v.w, patch, tubelet);
        d.h = v.h;
        d.w = v.w;
      } else if (v.h != d.h || v.w != d.w) {
        throw ValidationError("record " + m.records[i].id + ": resolution differs from the rest of the dataset");
      }
      d.rgb_tokens.push_back(tubify(v, patch, tubelet, Modality::Rgb));
      std::vector<double> nd = normalize_depth(v.depth, depth_norm_params(v.depth));
      d.depth_tokens.push_back(tubify_clip(nd.data(), 1, v.t, v.h, v.w, patch, tubelet));
      d.labels.push_back(v.label.value_or(-1));
    } else {
      RgbDepthSample s = load_image_sample(m, i);
      if (i == 0) {
        d.geom = image_geometry(s.h, s.w, patch);
        d.h = s.h;
        d.w = s.w;
      } else if (s.h != d.h || s.w != d.w) {
        throw ValidationError("record " + m.records[i].id + ": resolution differs from the rest of the dataset");
      }
      d.rgb_tokens.push_back(patchify(s, patch, Modality::Rgb));
      std::vector<double> nd = normalize_depth(s.depth, depth_norm_params(s.depth));
      d.depth_tokens.push_back(patchify_image(nd.data(), 1, s.h, s.w, patch));
      d.labels.push_back(s.label.value_or(-1));
      d.images.push_back(std::move(s));
    }
  }
  return d;
}

BatchInputs gather_batch(const LoadedDataset& d, const std::vector<i64>& order, i64 pos, i64 batch) {
  const i64 n = d.geom.tokens();
  BatchInputs in;
  in.geom = d.geom;
  in.batch = batch;
  in.rgb_patches = Mat(batch * n, d.rgb_tokens[0].cols);
  in.depth_patches = Mat(batch * n, d.depth_tokens[0].cols);
  for (i64 b = 0; b < batch; ++b) {
    i64 s = order[static_cast<size_t>(pos * batch + b)];
    std::memcpy(in.rgb_patches.row(b * n), d.rgb_tokens[static_cast<size_t>(s)].d.data(),
                sizeof(double) * static_cast<size_t>(in.rgb_patches.cols * n));
    std::memcpy(in.depth_patches.row(b * n), d.depth_tokens[static_cast<size_t>(s)].d.data(),
                sizeof(double) * static_cast<size_t>(in.depth_patches.cols * n));
  }
  return in;
}

std::vector<i64> epoch_order(i64 n, u64 seed, i64 epoch) {
  std::vector<i64> order(static_cast<size_t>(n));
  for (i64 i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(mix_seed(seed, static_cast<u64>(epoch), 0xda7a));
  rng.shuffle(order);
  return order;
}

// ---- metrics csv ----------------------------------------------------------

class MetricsCsv {
 public:
  MetricsCsv() = default;
  void open(const std::string& path) {
    bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    out_.open(path, std::ios::app);
    if (!out_) throw IoError("cannot open metrics log: " + path);
    if (fresh) out_ << "step,total,rgb,depth,contrastive,matching,lr\n";
  }
  void row(i64 step, const LossReport& r, double lr) {
    out_ << step << ',' << format_double(r.total) << ',' << format_double(r.rgb) << ',' << format_double(r.depth)
         << ',' << format_double(r.contrastive) << ',' << format_double(r.matching) << ',' << format_double(lr)
         << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

// ---- pretrain loops --------------------------------------------------------

struct StageSpec {
  std::string name;
  LossWeights weights;
  DepthLossMode depth_mode = DepthLossMode::VideoMse;
  bool masked = true;
  i64 epochs = 0;
  std::vector<std::uint8_t> trainable;
};

std::vector<std::uint8_t> trainable_by_prefix(const ModelState& model,
                                              const std::vector<std::string>& include_prefixes,
                                              const std::vector<std::string>& exclude_prefixes) {
  std::vector<std::uint8_t> mask(model.params().size(), include_prefixes.empty() ? 1 : 0);
  for (size_t i = 0; i < model.params().size(); ++i) {
    const std::string& name = model.params()[i].name;
    for (const auto& p : include_prefixes)
      if (name.rfind(p, 0) == 0) mask[i] = 1;
    for (const auto& p : exclude_prefixes)
      if (name.rfind(p, 0) == 0) mask[i] = 0;
  }
  return mask;
}

struct StageOutcome {
  i64 steps_run = 0;
  double first_total = 0.0;
  double last_total = 0.0;
  std::vector<std::string> first_step_grad_params;
};

// One optimization stage. `global_step` advances across stages; resume skips
// steps below the restored counter.
StageOutcome run_stage(const PretrainConfig& cfg, const StageSpec& stage, const LoadedDataset& data,
                       ModelState& model, AdamW& opt, MetricsCsv& csv, i64& global_step, i64 resume_step,
                       std::string& last_checkpoint) {
  StageOutcome out;
  const i64 spe = std::max<i64>(data.size() / cfg.batch, 1);
  const i64 total_steps = stage.epochs * spe;
  const i64 warmup_steps = cfg.optim.warmup_epochs * spe;
  const i64 stage_start = global_step;

  for (i64 step = 0; step < total_steps; ++step, ++global_step) {
    if (global_step < resume_step) continue;  // already done before resume
    if (cfg.max_steps > 0 && global_step >= cfg.max_steps) break;

    i64 epoch = step / spe;
    std::vector<i64> order = epoch_order(data.size(), mix_seed(cfg.seed, static_cast<u64>(stage_start)), epoch);
    BatchInputs in = gather_batch(data, order, step % spe, cfg.batch);

    MaskPlan plan = stage.masked ? make_plan(data.geom, cfg.mask, mix_seed(cfg.seed, static_cast<u64>(global_step), 0x3145))
                                 : all_visible_plan(data.geom);
    ForwardOptions fo;
    fo.weights = stage.weights;
    fo.depth_mode = stage.depth_mode;
    fo.matching_seed = mix_seed(cfg.seed, static_cast<u64>(global_step), 0x3a7c);

    LossReport report;
    try {
      report = forward_backward(model, in, plan, fo);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(global_step) +
                         " (last good checkpoint: " + (last_checkpoint.empty() ? "none" : last_checkpoint) + ")");
    }
    if (out.steps_run == 0) {
      out.first_total = report.total;
      for (const auto& p : model.params()) {
        for (double g : p.grad.d)
          if (g != 0.0) {
            out.first_step_grad_params.push_back(p.name);
            break;
          }
      }
    }
    double lr = cosine_warmup_lr(step, warmup_steps, total_steps, cfg.optim.lr);
    opt.step(model.params(), lr, &stage.trainable);
    csv.row(global_step, report, lr);
    out.last_total = report.total;
    ++out.steps_run;

    if (cfg.checkpoint_interval > 0 && (global_step + 1) % cfg.checkpoint_interval == 0) {
      std::string dir = cfg.out_dir + "/step_" + std::to_string(global_step + 1);
      json meta = {{"kind", "pretrain"},
                   {"stage", stage.name},
                   {"model", model_config_to_json(model.config())},
                   {"seed", cfg.seed}};
      save_params(dir, model.params(), meta);
      save_train_state(dir, TrainState{global_step + 1, (global_step + 1) / spe}, opt, model.params());
      last_checkpoint = dir;
    }
  }
  return out;
}

AdamWConfig adamw_config(const OptimSettings& o) {
  AdamWConfig a;
  a.lr = o.lr;
  a.beta1 = o.beta1;
  a.beta2 = o.beta2;
  a.weight_decay = o.weight_decay;
  a.grad_clip = o.grad_clip;
  return a;
}

}  // namespace

ModelConfig PretrainConfig::model_config() const {
  ModelConfig m;
  m.encoder = encoder;
  m.decoder = decoder;
  m.patch = patch;
  m.tubelet = video ? tubelet : 1;
  return m;
}

void PretrainConfig::validate() const {
  model_config().validate();
  weights.validate();
  if (dataset.empty()) throw ConfigError("dataset manifest path is required");
  if (batch < 1) throw ConfigError("batch size must be positive");
  if (video && epochs < 1) throw ConfigError("video pipeline needs epochs >= 1");
  if (!video && (stage1_epochs < 0 || stage2_epochs < 1))
    throw ConfigError("image pipeline needs stage1_epochs >= 0 and stage2_epochs >= 1");
  if (optim.lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (optim.warmup_epochs < 0) throw ConfigError("warmup epochs must be non-negative");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint interval must be non-negative");
}

PretrainConfig PretrainConfig::from_json(const json& j, bool video) {
  PretrainConfig c;
  c.video = video;
  if (video) {
    c.encoder.mode = EncoderMode::Shared;
    c.mask = default_video_mask();
    c.weights = video_loss_defaults();
    c.tubelet = 2;
  } else {
    c.encoder.mode = EncoderMode::Specific;
    c.mask = default_image_mask();
    c.weights = video_loss_defaults();
    image_stage2_defaults(c.weights.alpha, c.weights.beta);
    c.weights.gamma = 1.0;  // stage-1 trains on the contrastive loss alone
    c.weights.eta = 0.0;    // matching is video-only
    c.tubelet = 1;
  }
  c.dataset = j.value("dataset", c.dataset);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.init_checkpoint = j.value("init_checkpoint", c.init_checkpoint);
  c.resume_from = j.value("resume_from", c.resume_from);
  c.seed = j.value("seed", c.seed);
  c.batch = j.value("batch_size", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.stage1_epochs = j.value("stage1_epochs", c.stage1_epochs);
  c.stage2_epochs = j.value("stage2_epochs", c.stage2_epochs);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.patch = j.value("patch", c.patch);
  if (video) c.tubelet = j.value("tubelet", c.tubelet);
  c.encoder = encoder_from_json(j.value("encoder", json::object()), c.encoder);
  c.decoder = decoder_from_json(j.value("decoder", json::object()), c.decoder);
  c.mask = mask_from_json(j.value("mask", json::object()), c.mask);
  c.weights = loss_from_json(j.value("loss", json::object()), c.weights);
  c.optim = optim_from_json(j.value("optim", json::object()), c.optim);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.threads = j.value("threads", c.threads);
  return c;
}

json PretrainConfig::to_json() const {
  json j;
  j["pipeline"] = video ? "video" : "image";
  j["dataset"] = dataset;
  j["out_dir"] = out_dir;
  j["init_checkpoint"] = init_checkpoint;
  j["resume_from"] = resume_from;
  j["seed"] = seed;
  j["batch_size"] = batch;
  if (video) {
    j["epochs"] = epochs;
    j["tubelet"] = tubelet;
  } else {
    j["stage1_epochs"] = stage1_epochs;
    j["stage2_epochs"] = stage2_epochs;
  }
  if (max_steps > 0) j["max_steps"] = max_steps;
  j["patch"] = patch;
  j["encoder"] = encoder_to_json(encoder);
  j["decoder"] = decoder_to_json(decoder);
  j["mask"] = mask_to_json(mask);
  j["loss"] = loss_to_json(weights);
  j["optim"] = optim_to_json(optim);
  j["checkpoint_interval"] = checkpoint_interval;
  j["threads"] = threads;
  return j;
}

namespace {

void prepare_run_dir(const PretrainConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_json_file(cfg.out_dir + "/config_resolved.json", cfg.to_json());
  set_num_threads(cfg.threads);
}

i64 maybe_resume(const PretrainConfig& cfg, ModelState& model, AdamW& opt) {
  if (cfg.resume_from.empty()) return 0;
  if (!has_train_state(cfg.resume_from))
    throw ConfigError("resume checkpoint " + cfg.resume_from + " carries no train state");
  load_params(cfg.resume_from, model.params());
  TrainState ts = load_train_state(cfg.resume_from, opt, model.params());
  return ts.step;
}

}  // namespace

PretrainResult pretrain_video(const PretrainConfig& cfg) {
  cfg.validate();
  prepare_run_dir(cfg);
  LoadedDataset data = load_tokens(cfg.dataset, cfg.patch, cfg.tubelet);
  if (!data.video) throw ValidationError("video pipeline requires a video dataset");
  if (data.size() < cfg.batch) throw ConfigError("dataset smaller than one batch");

  ModelState model(cfg.model_config(), cfg.seed);
  if (!cfg.init_checkpoint.empty()) load_params(cfg.init_checkpoint, model.params());
  AdamW opt(model.params(), adamw_config(cfg.optim));
  i64 resume_step = maybe_resume(cfg, model, opt);

  MetricsCsv csv;
  csv.open(cfg.out_dir + "/metrics.csv");

  StageSpec stage;
  stage.name = "video";
  stage.weights = cfg.weights;
  stage.depth_mode = DepthLossMode::VideoMse;
  stage.masked = true;
  stage.epochs = cfg.epochs;
  stage.trainable.assign(model.params().size(), 1);

  std::string last_ckpt;
  i64 global_step = 0;
  StageOutcome so = run_stage(cfg, stage, data, model, opt, csv, global_step, resume_step, last_ckpt);

  PretrainResult r;
  r.steps = so.steps_run;
  r.first_total = so.first_total;
  r.last_total = so.last_total;
  r.final_checkpoint = cfg.out_dir + "/final";
  json meta = {{"kind", "pretrain"},
               {"stage", "video"},
               {"model", model_config_to_json(model.config())},
               {"seed", cfg.seed}};
  save_params(r.final_checkpoint, model.params(), meta);
  save_train_state(r.final_checkpoint, TrainState{global_step, 0}, opt, model.params());
  return r;
}

PretrainResult pretrain_image(const PretrainConfig& cfg) {
  cfg.validate();
  if (!cfg.resume_from.empty()) throw ConfigError("resume is supported for the video pipeline");
  prepare_run_dir(cfg);
  LoadedDataset data = load_tokens(cfg.dataset, cfg.patch, 1);
  if (data.video) throw ValidationError("image pipeline requires an image dataset");
  if (data.size() < cfg.batch) throw ConfigError("dataset smaller than one batch");

  ModelState model(cfg.model_config(), cfg.seed);
  if (!cfg.init_checkpoint.empty()) load_params(cfg.init_checkpoint, model.params());
  AdamW opt_stage1(model.params(), adamw_config(cfg.optim));
  MetricsCsv csv;
  csv.open(cfg.out_dir + "/metrics.csv");

  PretrainResult r;
  std::string last_ckpt;
  i64 global_step = 0;

  // stage 1: contrastive alone, full grids, encoder(s) + projections only
  if (cfg.stage1_epochs > 0) {
    StageSpec s1;
    s1.name = "stage1";
    s1.weights = LossWeights{0.0, 0.0, cfg.weights.gamma > 0.0 ? cfg.weights.gamma : 1.0, 0.0, cfg.weights.tau,
                             cfg.weights.symmetric_contrastive};
    s1.masked = false;
    s1.epochs = cfg.stage1_epochs;
    s1.trainable = trainable_by_prefix(model, {"proj.", "encoder."}, {});
    StageOutcome so1 = run_stage(cfg, s1, data, model, opt_stage1, csv, global_step, 0, last_ckpt);
    r.stage1_steps = so1.steps_run;
    r.stage1_grad_params = so1.first_step_grad_params;

    r.stage1_checkpoint = cfg.out_dir + "/stage1";
    json meta1 = {{"kind", "pretrain"},
                  {"stage", "stage1"},
                  {"model", model_config_to_json(model.config())},
                  {"seed", cfg.seed}};
    save_params(r.stage1_checkpoint, model.params(), meta1);
    last_ckpt = r.stage1_checkpoint;
  }
  r.stage1_encoder_checksum = params_checksum(model.params(), "encoder.");
  r.stage2_init_encoder_checksum = r.stage1_encoder_checksum;  // same parameters carry over

  // stage 2: masked reconstruction, encoder + decoder, never matching
  StageSpec s2;
  s2.name = "stage2";
  s2.weights = LossWeights{cfg.weights.alpha, cfg.weights.beta, 0.0, 0.0, cfg.weights.tau, false};
  s2.depth_mode = DepthLossMode::ImageL1;
  s2.masked = true;
  s2.epochs = cfg.stage2_epochs;
  s2.trainable = trainable_by_prefix(model, {}, {"match_head."});
  AdamW opt_stage2(model.params(), adamw_config(cfg.optim));
  StageOutcome so2 = run_stage(cfg, s2, data, model, opt_stage2, csv, global_step, 0, last_ckpt);
  // first/last track the stage-2 objective (alpha*rgb + beta*depth)
  r.first_total = so2.first_total;
  r.last_total = so2.last_total;
  r.steps = global_step;

  r.final_checkpoint = cfg.out_dir + "/final";
  json meta = {{"kind", "pretrain"},
               {"stage", "stage2"},
               {"model", model_config_to_json(model.config())},
               {"seed", cfg.seed},
               {"stage1_encoder_checksum", r.stage1_encoder_checksum},
               {"stage2_init_encoder_checksum", r.stage2_init_encoder_checksum}};
  save_params(r.final_checkpoint, model.params(), meta);
  save_train_state(r.final_checkpoint, TrainState{global_step, 0}, opt_stage2, model.params());
  return r;
}

// ---- fine-tuning -----------------------------------------------------------

void FinetuneConfig::validate() const {
  if (dataset.empty()) throw ConfigError("fine-tune dataset is required");
  if (batch < 1 || epochs < 1) throw ConfigError("fine-tune batch/epochs out of range");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0))
    throw ConfigError("label_fraction must lie in (0,1]");
  if (layer_decay <= 0.0 || layer_decay > 1.0) throw ConfigError("layer_decay must lie in (0,1]");
  if (probe.classes < 2 && probe.task != ProbeTask::Depth) throw ConfigError("probes need at least two classes");
}

FinetuneConfig FinetuneConfig::from_json(const json& j) {
  FinetuneConfig c;
  std::string task = j.value("task", "classification");
  if (task == "classification") c.probe.task = ProbeTask::Classification;
  else if (task == "segmentation") c.probe.task = ProbeTask::Segmentation;
  else if (task == "depth") c.probe.task = ProbeTask::Depth;
  else throw ConfigError("unknown probe task: " + task);
  c.probe.classes = j.value("classes", c.probe.classes);
  c.probe.freeze_encoder = j.value("freeze_encoder", c.probe.freeze_encoder);
  c.probe.drop_path = j.value("drop_path", c.probe.drop_path);
  c.dataset = j.value("dataset", c.dataset);
  c.eval_dataset = j.value("eval_dataset", c.eval_dataset);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.seed = j.value("seed", c.seed);
  c.batch = j.value("batch_size", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.label_fraction = j.value("label_fraction", c.label_fraction);
  c.layer_decay = j.value("layer_decay", c.layer_decay);
  c.optim = optim_from_json(j.value("optim", json::object()), c.optim);
  c.threads = j.value("threads", c.threads);
  c.encoder = encoder_from_json(j.value("encoder", json::object()), c.encoder);
  c.patch = j.value("patch", c.patch);
  c.tubelet = j.value("tubelet", c.tubelet);
  return c;
}

json FinetuneConfig::to_json() const {
  const char* task = probe.task == ProbeTask::Classification ? "classification"
                     : probe.task == ProbeTask::Segmentation ? "segmentation"
                                                             : "depth";
  return {{"task", task},
          {"classes", probe.classes},
          {"freeze_encoder", probe.freeze_encoder},
          {"drop_path", probe.drop_path},
          {"dataset", dataset},
          {"eval_dataset", eval_dataset},
          {"out_dir", out_dir},
          {"seed", seed},
          {"batch_size", batch},
          {"epochs", epochs},
          {"label_fraction", label_fraction},
          {"layer_decay", layer_decay},
          {"optim", optim_to_json(optim)},
          {"encoder", encoder_to_json(encoder)},
          {"patch", patch},
          {"tubelet", tubelet}};
}

namespace {

Mat gather_rgb_batch(const LoadedDataset& d, const std::vector<i64>& samples) {
  const i64 n = d.geom.tokens();
  Mat out(static_cast<i64>(samples.size()) * n, d.rgb_tokens[0].cols);
  for (size_t b = 0; b < samples.size(); ++b)
    std::memcpy(out.row(static_cast<i64>(b) * n), d.rgb_tokens[static_cast<size_t>(samples[b])].d.data(),
                sizeof(double) * static_cast<size_t>(out.cols * n));
  return out;
}

// per-pixel targets in token-row order, built by patchifying the dense map
Mat dense_targets(const LoadedDataset& d, const std::vector<i64>& samples, bool segmentation) {
  const i64 n = d.geom.tokens();
  const i64 pixels = static_cast<i64>(d.geom.patch) * d.geom.patch;
  Mat out(static_cast<i64>(samples.size()) * n, pixels);
  std::vector<double> buf(static_cast<size_t>(d.h) * d.w);
  for (size_t b = 0; b < samples.size(); ++b) {
    const RgbDepthSample& s = d.images[static_cast<size_t>(samples[b])];
    if (segmentation) {
      if (s.seg.empty()) throw ValidationError("segmentation probe needs seg maps in the dataset");
      for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<double>(s.seg[i]);
    } else {
      std::copy(s.depth.begin(), s.depth.end(), buf.begin());
    }
    Mat p = patchify_image(buf.data(), 1, d.h, d.w, d.geom.patch);
    std::memcpy(out.row(static_cast<i64>(b) * n), p.d.data(), sizeof(double) * static_cast<size_t>(p.numel()));
  }
  return out;
}

Var probe_loss(Tape& tape, ProbeModel& model, Var out, const LoadedDataset& d, const std::vector<i64>& samples,
               const std::vector<int>& labels) {
  const ProbeConfig& pc = model.probe();
  if (pc.task == ProbeTask::Classification) {
    Mat w(static_cast<i64>(samples.size()), pc.classes);
    double coeff = -1.0 / static_cast<double>(samples.size());
    for (size_t b = 0; b < samples.size(); ++b) {
      int y = labels[static_cast<size_t>(samples[b])];
      if (y < 0 || y >= pc.classes)
        throw ValidationError("classification probe: sample lacks a label in [0," + std::to_string(pc.classes) + ")");
      w.at(static_cast<i64>(b), y) = coeff;
    }
    return tape.weighted_sum(tape.log_softmax_rows(out), std::move(w));
  }
  if (pc.task == ProbeTask::Segmentation) {
    Mat targets = dense_targets(d, samples, true);  // (B*N, P^2), class ids
    const i64 rows = tape.value(out).rows;          // B*N*P^2
    Mat w(rows, pc.classes);
    i64 scored = 0;
    for (i64 r = 0; r < rows; ++r) {
      int y = static_cast<int>(targets.d[static_cast<size_t>(r)]);
      if (y == kIgnoreIndex) continue;
      if (y < 0 || y >= pc.classes) throw ValidationError("segmentation label out of range");
      w.at(r, y) = 1.0;
      ++scored;
    }
    if (scored == 0) throw ValidationError("segmentation probe: no scorable pixels");
    double coeff = -1.0 / static_cast<double>(scored);
    for (double& v : w.d) v *= coeff;
    return tape.weighted_sum(tape.log_softmax_rows(out), std::move(w));
  }
  // depth: L1 against meters over every pixel
  Mat targets = dense_targets(d, samples, false);
  const i64 rows = tape.value(out).rows, cols = tape.value(out).cols;
  Var resid = tape.sub(out, tape.input(std::move(targets)));
  return tape.weighted_sum(tape.abs(resid), Mat::full(rows, cols, 1.0 / static_cast<double>(rows * cols)));
}

EvalResult run_probe_eval(ProbeModel& model, const LoadedDataset& d, i64 batch) {
  const ProbeConfig& pc = model.probe();
  const i64 n = d.geom.tokens();
  EvalResult res;
  if (pc.task == ProbeTask::Classification) {
    std::vector<int> pred, gt;
    for (i64 start = 0; start < d.size(); start += batch) {
      std::vector<i64> samples;
      for (i64 s = start; s < std::min(start + batch, d.size()); ++s) samples.push_back(s);
      Tape tape;
      Var out = model.forward(tape, gather_rgb_batch(d, samples), d.geom, static_cast<i64>(samples.size()));
      const Mat& logits = tape.value(out);
      for (i64 b = 0; b < logits.rows; ++b) {
        const double* row = logits.row(b);
        int best = 0;
        for (int c = 1; c < pc.classes; ++c)
          if (row[c] > row[best]) best = c;
        pred.push_back(best);
        int y = d.labels[static_cast<size_t>(samples[static_cast<size_t>(b)])];
        if (y < 0) throw ValidationError("evaluation sample lacks a label");
        gt.push_back(y);
      }
    }
    res.metric_name = "top1";
    res.value = top1(pred, gt);
    return res;
  }

  const i64 pixels = static_cast<i64>(d.geom.patch) * d.geom.patch;
  if (pc.task == ProbeTask::Segmentation) {
    ConfusionMatrix confusion(pc.classes);
    for (i64 s = 0; s < d.size(); ++s) {
      Tape tape;
      Var out = model.forward(tape, gather_rgb_batch(d, {s}), d.geom, 1);
      const Mat& probs = tape.value(out);  // (N*P^2, classes)
      const RgbDepthSample& img = d.images[static_cast<size_t>(s)];
      if (img.seg.empty()) throw ValidationError("segmentation eval needs seg maps");
      Mat pred_patches(n, pixels);
      for (i64 r = 0; r < probs.rows; ++r) {
        const double* row = probs.row(r);
        int best = 0;
        for (int c = 1; c < pc.classes; ++c)
          if (row[c] > row[best]) best = c;
        pred_patches.d[static_cast<size_t>(r)] = static_cast<double>(best);
      }
      std::vector<double> pred_map(static_cast<size_t>(d.h) * d.w);
      unpatchify_image(pred_patches, 1, d.h, d.w, d.geom.patch, pred_map.data());
      std::vector<int> pred_i(pred_map.size()), gt_i(pred_map.size());
      for (size_t i = 0; i < pred_map.size(); ++i) {
        pred_i[i] = static_cast<int>(pred_map[i]);
        gt_i[i] = img.seg[i];
      }
      confusion.add_map(gt_i, pred_i);
    }
    res.metric_name = "miou";
    res.value = miou(confusion);
    return res;
  }

  // depth probe: delta1 over all pixels with positive ground truth
  double hit_pct;
  {
    std::vector<double> pred_all, gt_all;
    std::vector<std::uint8_t> valid_all;
    for (i64 s = 0; s < d.size(); ++s) {
      Tape tape;
      Var out = model.forward(tape, gather_rgb_batch(d, {s}), d.geom, 1);
      std::vector<double> pred_map(static_cast<size_t>(d.h) * d.w);
      unpatchify_image(tape.value(out), 1, d.h, d.w, d.geom.patch, pred_map.data());
      const RgbDepthSample& img = d.images[static_cast<size_t>(s)];
      for (size_t i = 0; i < pred_map.size(); ++i) {
        pred_all.push_back(pred_map[i]);
        gt_all.push_back(img.depth[i]);
        valid_all.push_back(img.depth[i] > 0.0 ? 1 : 0);
      }
    }
    hit_pct = delta1(pred_all, gt_all, valid_all);
  }
  res.metric_name = "delta1";
  res.value = hit_pct;
  return res;
}

ProbeModel build_probe(const std::string& checkpoint, const FinetuneConfig& cfg) {
  ModelConfig mc;
  if (!checkpoint.empty()) {
    json meta = checkpoint_meta(checkpoint);
    if (meta.contains("model")) {
      mc = model_config_from_json(meta["model"]);
    } else {
      mc.encoder = cfg.encoder;
      mc.patch = cfg.patch;
      mc.tubelet = cfg.tubelet;
    }
  } else {
    mc.encoder = cfg.encoder;
    mc.patch = cfg.patch;
    mc.tubelet = cfg.tubelet;
  }
  ProbeModel probe(mc, cfg.probe, mix_seed(cfg.seed, 0x9806e2));
  if (!checkpoint.empty()) {
    load_params(checkpoint, probe.params(), /*allow_missing_params=*/true);
    json manifest = read_manifest(checkpoint);
    std::vector<std::string> available;
    for (const auto& e : manifest["params"]) available.push_back(e["name"].get<std::string>());
    std::vector<std::string> missing;
    for (const auto& p : probe.params()) {
      if (p.name.rfind("probe.", 0) == 0) continue;  // head trains from scratch
      if (std::find(available.begin(), available.end(), p.name) == available.end()) missing.push_back(p.name);
    }
    if (!missing.empty())
      throw ValidationError("checkpoint " + checkpoint + " is incompatible with the probe encoder: missing " +
                            missing.front() +
                            (missing.size() > 1 ? " and " + std::to_string(missing.size() - 1) + " more parameters"
                                                : ""));
  }
  return probe;
}

}  // namespace

FinetuneResult finetune(const std::string& checkpoint, const FinetuneConfig& cfg) {
  cfg.validate();
  set_num_threads(cfg.threads);
  fs::create_directories(cfg.out_dir);
  write_json_file(cfg.out_dir + "/config_resolved.json", cfg.to_json());

  ProbeModel model = build_probe(checkpoint, cfg);
  const ModelConfig& mc = model.config();
  LoadedDataset train = load_tokens(cfg.dataset, mc.patch, mc.tubelet);
  if (cfg.probe.task == ProbeTask::Classification && train.video == false && mc.tubelet > 1)
    throw ValidationError("video probe on an image dataset");

  // labeled subset, stable across runs with the same seed
  std::vector<i64> pool(static_cast<size_t>(train.size()));
  for (i64 i = 0; i < train.size(); ++i) pool[static_cast<size_t>(i)] = i;
  Rng subset_rng(mix_seed(cfg.seed, 0x1abe1));
  subset_rng.shuffle(pool);
  i64 labeled = std::max<i64>(1, round_half_up(cfg.label_fraction * static_cast<double>(train.size())));
  pool.resize(static_cast<size_t>(std::min(labeled, train.size())));
  i64 batch = std::min<i64>(cfg.batch, static_cast<i64>(pool.size()));

  AdamW opt(model.params(), adamw_config(cfg.optim));
  std::vector<double> scales = model.layer_lr_scales(cfg.layer_decay);
  std::vector<std::uint8_t> trainable(model.params().size(), 1);
  if (cfg.probe.freeze_encoder)
    for (size_t i = 0; i < model.params().size(); ++i)
      if (model.is_backbone(model.params()[i].name)) trainable[i] = 0;

  MetricsCsv csv;
  csv.open(cfg.out_dir + "/metrics.csv");

  const i64 spe = std::max<i64>(static_cast<i64>(pool.size()) / batch, 1);
  const i64 total_steps = cfg.epochs * spe;
  const i64 warmup_steps = cfg.optim.warmup_epochs * spe;

  FinetuneResult result;
  for (i64 step = 0; step < total_steps; ++step) {
    i64 epoch = step / spe;
    std::vector<i64> order = pool;
    Rng rng(mix_seed(cfg.seed, static_cast<u64>(epoch), 0xf17e));
    rng.shuffle(order);
    std::vector<i64> samples(order.begin() + static_cast<i64>((step % spe) * batch),
                             order.begin() + static_cast<i64>((step % spe) * batch + batch));

    Tape tape;
    DropPathPlan drop{cfg.probe.drop_path, mix_seed(cfg.seed, static_cast<u64>(step), 0xd209)};
    Var out = model.forward(tape, gather_rgb_batch(train, samples), train.geom, batch,
                            cfg.probe.drop_path > 0.0 ? &drop : nullptr);
    Var loss = probe_loss(tape, model, out, train, samples, train.labels);
    double loss_v = tape.scalar(loss);
    if (!std::isfinite(loss_v)) throw NumericError("non-finite probe loss at step " + std::to_string(step));
    model.zero_grads();
    tape.backward(loss);
    double lr = cosine_warmup_lr(step, warmup_steps, total_steps, cfg.optim.lr);
    opt.step(model.params(), lr, &trainable, &scales);
    LossReport lrpt;
    lrpt.total = loss_v;
    csv.row(step, lrpt, lr);
    ++result.steps;
  }

  LoadedDataset eval_data =
      cfg.eval_dataset.empty() ? std::move(train) : load_tokens(cfg.eval_dataset, mc.patch, mc.tubelet);
  EvalResult ev = run_probe_eval(model, eval_data, batch);
  result.metric_name = ev.metric_name;
  result.metric = ev.value;

  result.checkpoint_dir = cfg.out_dir + "/final";
  json meta = {{"kind", "probe"},
               {"model", model_config_to_json(mc)},
               {"probe", cfg.to_json()},
               {"metric", {{ev.metric_name, ev.value}}}};
  save_params(result.checkpoint_dir, model.params(), meta);
  write_json_file(cfg.out_dir + "/results.json", json{{ev.metric_name, ev.value}});
  return result;
}

EvalResult evaluate_checkpoint(const std::string& checkpoint, const std::string& dataset_manifest,
                               const std::string& out_dir) {
  json meta = checkpoint_meta(checkpoint);
  if (meta.value("kind", "") != "probe")
    throw ValidationError("eval expects a fine-tuned probe checkpoint, got kind '" + meta.value("kind", "?") + "'");
  ModelConfig mc = model_config_from_json(meta.at("model"));
  FinetuneConfig fc = FinetuneConfig::from_json(meta.at("probe"));
  ProbeModel model(mc, fc.probe, 0);
  load_params(checkpoint, model.params());
  LoadedDataset data = load_tokens(dataset_manifest, mc.patch, mc.tubelet);
  EvalResult ev = run_probe_eval(model, data, 8);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_json_file(out_dir + "/results.json", json{{ev.metric_name, ev.value}});
  }
  return ev;
}

// ---- mask visualization -----------------------------------------------------

void visualize_masks(const std::string& dataset_manifest, size_t index, const MaskConfig& mask_cfg, int patch,
                     int tubelet, u64 seed, const std::string& out_path) {
  DatasetManifest m = load_dataset(dataset_manifest);
  std::vector<RgbDepthSample> frames;  // one per rendered temporal slice
  GridGeometry geom;
  if (m.video) {
    VideoSample v = load_video_sample(m, index);
    geom = video_geometry(v.t, v.h, v.w, patch, tubelet);
    const i64 plane = static_cast<i64>(v.h) * v.w;
    for (int ti = 0; ti < geom.n_t; ++ti) {
      RgbDepthSample s;
      s.h = v.h;
      s.w = v.w;
      int f = ti * tubelet;
      s.rgb.assign(v.rgb.begin() + static_cast<i64>(f) * 3 * plane, v.rgb.begin() + (static_cast<i64>(f) + 1) * 3 * plane);
      s.depth.assign(v.depth.begin() + static_cast<i64>(f) * plane, v.depth.begin() + (static_cast<i64>(f) + 1) * plane);
      frames.push_back(std::move(s));
    }
  } else {
    RgbDepthSample s = load_image_sample(m, index);
    geom = image_geometry(s.h, s.w, patch);
    frames.push_back(std::move(s));
  }
  MaskPlan plan = make_plan(geom, mask_cfg, seed);

  const int h = frames[0].h, w = frames[0].w;
  const int gap = 4;
  const int canvas_w = 2 * w + gap;
  const int canvas_h = (2 * h + gap) * static_cast<int>(frames.size());
  PngImage img;
  img.width = canvas_w;
  img.height = canvas_h;
  img.channels = 3;
  img.bit_depth = 8;
  img.samples.assign(img.sample_count(), 32);

  auto put = [&](int y, int x, double r, double g, double b) {
    size_t base = (static_cast<size_t>(y) * canvas_w + x) * 3;
    img.samples[base] = static_cast<std::uint16_t>(std::lround(std::clamp(r, 0.0, 1.0) * 255));
    img.samples[base + 1] = static_cast<std::uint16_t>(std::lround(std::clamp(g, 0.0, 1.0) * 255));
    img.samples[base + 2] = static_cast<std::uint16_t>(std::lround(std::clamp(b, 0.0, 1.0) * 255));
  };

  for (size_t fi = 0; fi < frames.size(); ++fi) {
    const RgbDepthSample& s = frames[fi];
    double dmin = *std::min_element(s.depth.begin(), s.depth.end());
    double dmax = *std::max_element(s.depth.begin(), s.depth.end());
    double drange = std::max(dmax - dmin, 1e-9);
    int oy = static_cast<int>(fi) * (2 * h + gap);
    const i64 plane = static_cast<i64>(h) * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        i64 p = static_cast<i64>(y) * w + x;
        i64 tok = geom.token_index(static_cast<int>(fi), y / patch, x / patch);
        bool vis_rgb = plan.visible_rgb[static_cast<size_t>(tok)] != 0;
        bool vis_depth = plan.visible_depth[static_cast<size_t>(tok)] != 0;
        double r = s.rgb[p], g = s.rgb[plane + p], b = s.rgb[2 * plane + p];
        double d = (s.depth[p] - dmin) / drange;
        // left column: rgb with masked patches grayed; right: depth likewise
        if (vis_rgb) put(oy + y, x, r, g, b);
        else put(oy + y, x, 0.5, 0.5, 0.5);
        if (vis_depth) put(oy + h + gap + y, x, d, d, d);
        else put(oy + h + gap + y, x, 0.5, 0.5, 0.5);
        // unmasked references on the right
        put(oy + y, w + gap + x, r, g, b);
        put(oy + h + gap + y, w + gap + x, d, d, d);
      }
  }
  write_png(out_path, img);
}

}  // namespace rgbdmae
