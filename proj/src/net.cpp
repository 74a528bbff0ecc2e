#include "rgbdmae/net.hpp"

#include <cmath>
#include <unordered_map>

#include "rgbdmae/rng.hpp"

namespace rgbdmae {

void EncoderConfig::validate() const {
  if (depth < 1 || width < 8 || heads < 1) throw ConfigError("encoder config out of range");
  if (width % heads != 0) throw ConfigError("encoder width " + std::to_string(width) +
                                            " not divisible by heads " + std::to_string(heads));
  if (mlp_ratio <= 0.0) throw ConfigError("encoder mlp_ratio must be positive");
}

void DecoderConfig::validate() const {
  if (depth < 1 || width < 8 || heads < 1) throw ConfigError("decoder config out of range");
  if (width % heads != 0) throw ConfigError("decoder width " + std::to_string(width) +
                                            " not divisible by heads " + std::to_string(heads));
  if (mlp_ratio <= 0.0) throw ConfigError("decoder mlp_ratio must be positive");
}

EncoderConfig vit_base_encoder() { return EncoderConfig{12, 768, 12, 4.0, EncoderMode::Specific}; }
DecoderConfig paper_video_decoder() { return DecoderConfig{4, 384, 6, 4.0}; }
DecoderConfig paper_image_decoder() { return DecoderConfig{8, 512, 16, 4.0}; }

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (patch < 1) throw ConfigError("patch size must be positive");
  if (tubelet < 1) throw ConfigError("tubelet size must be positive");
}

std::string ModelConfig::encoder_prefix(Modality m) const {
  if (encoder.mode == EncoderMode::Shared) return "encoder.";
  return m == Modality::Rgb ? "encoder.rgb." : "encoder.depth.";
}

namespace {

void add_param(std::vector<Param>& out, Rng& rng, const std::string& name, i64 rows, i64 cols, double init_std) {
  Mat m(rows, cols);
  if (init_std > 0.0)
    for (double& v : m.d) v = rng.normal(0.0, init_std);
  out.emplace_back(name, std::move(m));
}

void add_ones(std::vector<Param>& out, const std::string& name, i64 cols) {
  out.emplace_back(name, Mat::full(1, cols, 1.0));
}

void add_stack_params(std::vector<Param>& out, Rng& rng, const std::string& prefix, int depth, i64 width,
                      i64 hidden) {
  constexpr double kStd = 0.02;
  for (int i = 0; i < depth; ++i) {
    std::string b = prefix + "blk" + std::to_string(i) + ".";
    add_ones(out, b + "ln1.gamma", width);
    add_param(out, rng, b + "ln1.beta", 1, width, 0.0);
    add_param(out, rng, b + "attn.wq", width, width, kStd);
    add_param(out, rng, b + "attn.bq", 1, width, 0.0);
    add_param(out, rng, b + "attn.wk", width, width, kStd);
    add_param(out, rng, b + "attn.bk", 1, width, 0.0);
    add_param(out, rng, b + "attn.wv", width, width, kStd);
    add_param(out, rng, b + "attn.bv", 1, width, 0.0);
    add_param(out, rng, b + "attn.wo", width, width, kStd);
    add_param(out, rng, b + "attn.bo", 1, width, 0.0);
    add_ones(out, b + "ln2.gamma", width);
    add_param(out, rng, b + "ln2.beta", 1, width, 0.0);
    add_param(out, rng, b + "mlp.w1", width, hidden, kStd);
    add_param(out, rng, b + "mlp.b1", 1, hidden, 0.0);
    add_param(out, rng, b + "mlp.w2", hidden, width, kStd);
    add_param(out, rng, b + "mlp.b2", 1, width, 0.0);
  }
  add_ones(out, prefix + "norm.gamma", width);
  add_param(out, rng, prefix + "norm.beta", 1, width, 0.0);
}

i64 stack_entries(int depth, i64 width, i64 hidden) {
  i64 per_block = 4 * width                      // two layernorms
                  + 4 * (width * width + width)  // q,k,v,out projections
                  + width * hidden + hidden      // mlp in
                  + hidden * width + width;      // mlp out
  return depth * per_block + 2 * width;          // + final norm
}

}  // namespace

// Manifest entry count, asserted against the actual construction:
//   proj:       in_r*D + D + in_d*D + D
//   encoder:    stack(depth,D,M) x (1 shared | 2 specific) [+ 2D modality embed if shared]
//   adapter:    D*d + d
//   mask/mod:   2d mask tokens + 2d decoder modality embeds
//   decoder:    stack(dec_depth,d,Md)
//   heads:      d*out_r + out_r + d*out_d + out_d
//   matching:   2D*2 + 2
i64 ModelState::expected_param_entries(const ModelConfig& cfg) {
  const i64 d_enc = cfg.encoder.width, d_dec = cfg.decoder.width;
  const i64 in_r = cfg.input_dim(Modality::Rgb), in_d = cfg.input_dim(Modality::Depth);
  i64 total = in_r * d_enc + d_enc + in_d * d_enc + d_enc;
  i64 enc = stack_entries(cfg.encoder.depth, d_enc, cfg.encoder.hidden());
  total += cfg.encoder.mode == EncoderMode::Shared ? enc + 2 * d_enc : 2 * enc;
  total += d_enc * d_dec + d_dec;           // adapter
  total += 2 * d_dec + 2 * d_dec;           // mask tokens + decoder modality embeds
  total += stack_entries(cfg.decoder.depth, d_dec, cfg.decoder.hidden());
  total += d_dec * in_r + in_r + d_dec * in_d + in_d;  // prediction heads
  total += 2 * d_enc * 2 + 2;               // matching head
  return total;
}

ModelState::ModelState(ModelConfig cfg, u64 seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(mix_seed(seed, 0x90de1));
  constexpr double kStd = 0.02;
  const i64 d_enc = cfg_.encoder.width, d_dec = cfg_.decoder.width;

  add_param(params_, rng, "proj.rgb.weight", cfg_.input_dim(Modality::Rgb), d_enc, kStd);
  add_param(params_, rng, "proj.rgb.bias", 1, d_enc, 0.0);
  add_param(params_, rng, "proj.depth.weight", cfg_.input_dim(Modality::Depth), d_enc, kStd);
  add_param(params_, rng, "proj.depth.bias", 1, d_enc, 0.0);

  if (cfg_.encoder.mode == EncoderMode::Shared) {
    add_stack_params(params_, rng, "encoder.", cfg_.encoder.depth, d_enc, cfg_.encoder.hidden());
    add_param(params_, rng, "encoder.modality_embed", 2, d_enc, kStd);
  } else {
    add_stack_params(params_, rng, "encoder.rgb.", cfg_.encoder.depth, d_enc, cfg_.encoder.hidden());
    add_stack_params(params_, rng, "encoder.depth.", cfg_.encoder.depth, d_enc, cfg_.encoder.hidden());
  }

  add_param(params_, rng, "adapter.weight", d_enc, d_dec, kStd);
  add_param(params_, rng, "adapter.bias", 1, d_dec, 0.0);
  add_param(params_, rng, "mask_token.rgb", 1, d_dec, kStd);
  add_param(params_, rng, "mask_token.depth", 1, d_dec, kStd);
  add_param(params_, rng, "decoder.modality_embed", 2, d_dec, kStd);
  add_stack_params(params_, rng, "decoder.", cfg_.decoder.depth, d_dec, cfg_.decoder.hidden());
  add_param(params_, rng, "head.rgb.weight", d_dec, cfg_.pred_dim(Modality::Rgb), kStd);
  add_param(params_, rng, "head.rgb.bias", 1, cfg_.pred_dim(Modality::Rgb), 0.0);
  add_param(params_, rng, "head.depth.weight", d_dec, cfg_.pred_dim(Modality::Depth), kStd);
  add_param(params_, rng, "head.depth.bias", 1, cfg_.pred_dim(Modality::Depth), 0.0);
  add_param(params_, rng, "match_head.weight", 2 * d_enc, 2, kStd);
  add_param(params_, rng, "match_head.bias", 1, 2, 0.0);

  if (total_entries() != expected_param_entries(cfg_))
    throw ConfigError("parameter manifest does not match the documented count formula");
}

Param& ModelState::at(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("unknown parameter: " + name);
}

const Param& ModelState::at(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("unknown parameter: " + name);
}

bool ModelState::has(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return true;
  return false;
}

void ModelState::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

i64 ModelState::total_entries() const {
  i64 n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

namespace {

struct ParamLookup {
  // name -> Var, so each Param becomes a single tape leaf even when reused
  std::unordered_map<std::string, Var> cache;
  Tape& tape;
  std::vector<Param>& params;

  Var operator()(const std::string& name) {
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    for (auto& p : params)
      if (p.name == name) {
        Var v = tape.param(p);
        cache.emplace(name, v);
        return v;
      }
    throw ConfigError("unknown parameter: " + name);
  }
};

Var attention(Tape& tape, ParamLookup& P, const std::string& b, Var x, i64 batch, i64 seq, int heads,
              AttnCapture* capture) {
  const i64 width = tape.value(x).cols;
  const i64 head_dim = width / heads;
  Var q = tape.add_rowvec(tape.matmul(x, P(b + "attn.wq")), P(b + "attn.bq"));
  Var k = tape.add_rowvec(tape.matmul(x, P(b + "attn.wk")), P(b + "attn.bk"));
  Var v = tape.add_rowvec(tape.matmul(x, P(b + "attn.wv")), P(b + "attn.bv"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<Var> sample_outs;
  sample_outs.reserve(static_cast<size_t>(batch));
  for (i64 s = 0; s < batch; ++s) {
    Var qs = tape.slice_rows(q, s * seq, seq);
    Var ks = tape.slice_rows(k, s * seq, seq);
    Var vs = tape.slice_rows(v, s * seq, seq);
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Var qh = tape.slice_cols(qs, h * head_dim, head_dim);
      Var kh = tape.slice_cols(ks, h * head_dim, head_dim);
      Var vh = tape.slice_cols(vs, h * head_dim, head_dim);
      Var scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt);
      Var probs = tape.softmax_rows(scores);
      if (capture) capture->push_back(tape.value(probs));
      head_outs.push_back(tape.matmul(probs, vh));
    }
    sample_outs.push_back(heads == 1 ? head_outs[0] : tape.concat_cols(head_outs));
  }
  Var ctx = batch == 1 ? sample_outs[0] : tape.concat_rows(sample_outs);
  return tape.add_rowvec(tape.matmul(ctx, P(b + "attn.wo")), P(b + "attn.bo"));
}

Mat drop_path_mask(double p, u64 seed, i64 batch, i64 seq, i64 width, int block) {
  // stochastic depth: residual branch kept with prob 1-p, scaled by 1/(1-p)
  Mat mask(batch * seq, width);
  Rng rng(mix_seed(seed, 0xd309 + static_cast<u64>(block)));
  for (i64 b = 0; b < batch; ++b) {
    double keep = rng.uniform() >= p ? 1.0 / (1.0 - p) : 0.0;
    for (i64 r = b * seq; r < (b + 1) * seq; ++r)
      for (i64 j = 0; j < width; ++j) mask.at(r, j) = keep;
  }
  return mask;
}

}  // namespace

Var transformer_stack(Tape& tape, std::vector<Param>& params, const std::string& prefix, Var x, i64 batch,
                      i64 seq, int depth, int heads, AttnCapture* capture, const DropPathPlan* drop) {
  ParamLookup P{{}, tape, params};
  const i64 width = tape.value(x).cols;
  if (tape.value(x).rows != batch * seq) throw DimensionError("transformer_stack: token rows != batch*seq");
  for (int i = 0; i < depth; ++i) {
    std::string b = prefix + "blk" + std::to_string(i) + ".";
    Var branch = attention(tape, P, b, tape.layernorm_rows(x, P(b + "ln1.gamma"), P(b + "ln1.beta")), batch, seq,
                           heads, capture);
    if (drop && drop->p > 0.0)
      branch = tape.mul(branch, tape.input(drop_path_mask(drop->p, drop->seed, batch, seq, width, 2 * i)));
    x = tape.add(x, branch);
    Var h = tape.layernorm_rows(x, P(b + "ln2.gamma"), P(b + "ln2.beta"));
    h = tape.add_rowvec(tape.matmul(h, P(b + "mlp.w1")), P(b + "mlp.b1"));
    h = tape.gelu(h);
    h = tape.add_rowvec(tape.matmul(h, P(b + "mlp.w2")), P(b + "mlp.b2"));
    if (drop && drop->p > 0.0)
      h = tape.mul(h, tape.input(drop_path_mask(drop->p, drop->seed, batch, seq, width, 2 * i + 1)));
    x = tape.add(x, h);
  }
  return tape.layernorm_rows(x, P(prefix + "norm.gamma"), P(prefix + "norm.beta"));
}

EncodeResult encode(Tape& tape, ModelState& state, Var visible_rgb, Var visible_depth, i64 batch, i64 n_vis_rgb,
                    i64 n_vis_depth, AttnCapture* capture) {
  const ModelConfig& cfg = state.config();
  const i64 width = cfg.encoder.width;
  if (tape.value(visible_rgb).cols != width || tape.value(visible_depth).cols != width)
    throw DimensionError("encode: token width does not match encoder width " + std::to_string(width));
  if (n_vis_rgb < 1 || n_vis_depth < 1)
    throw ValidationError("encode: mask plan leaves no visible tokens in one modality");

  EncodeResult out;
  out.n_vis_rgb = n_vis_rgb;
  out.n_vis_depth = n_vis_depth;
  if (cfg.encoder.mode == EncoderMode::Shared) {
    ParamLookup P{{}, tape, state.params()};
    Var embed = P("encoder.modality_embed");
    Var rgb_in = tape.add_rowvec(visible_rgb, tape.slice_rows(embed, 0, 1));
    Var depth_in = tape.add_rowvec(visible_depth, tape.slice_rows(embed, 1, 1));
    out.rgb = transformer_stack(tape, state.params(), "encoder.", rgb_in, batch, n_vis_rgb, cfg.encoder.depth,
                                cfg.encoder.heads, capture);
    out.depth = transformer_stack(tape, state.params(), "encoder.", depth_in, batch, n_vis_depth,
                                  cfg.encoder.depth, cfg.encoder.heads, capture);
  } else {
    out.rgb = transformer_stack(tape, state.params(), "encoder.rgb.", visible_rgb, batch, n_vis_rgb,
                                cfg.encoder.depth, cfg.encoder.heads, capture);
    out.depth = transformer_stack(tape, state.params(), "encoder.depth.", visible_depth, batch, n_vis_depth,
                                  cfg.encoder.depth, cfg.encoder.heads, capture);
  }
  return out;
}

namespace {

// full-grid decoder input for one modality: visible latents scattered into
// place, mask tokens elsewhere, positions + modality embedding added
Var decoder_canvas(Tape& tape, ParamLookup& P, Var adapted, const MaskPlan& plan, Modality m, i64 batch,
                   const Mat& pos_table, Var modality_embed_row) {
  const i64 n = plan.geometry.tokens();
  TokenSelection sel = selection_for(plan, m, batch);
  std::vector<i64> masked = plan.masked_indices(m);

  Var canvas = tape.scatter_rows(adapted, sel.row_map, batch * n);
  if (!masked.empty()) {
    std::vector<i64> masked_rows;
    masked_rows.reserve(static_cast<size_t>(batch) * masked.size());
    for (i64 b = 0; b < batch; ++b)
      for (i64 i : masked) masked_rows.push_back(b * n + i);
    Var tokens = tape.broadcast_row(P(m == Modality::Rgb ? "mask_token.rgb" : "mask_token.depth"),
                                    static_cast<i64>(masked_rows.size()));
    canvas = tape.add(canvas, tape.scatter_rows(tokens, masked_rows, batch * n));
  }
  canvas = tape.add_tiled(canvas, pos_table, batch);
  return tape.add_rowvec(canvas, modality_embed_row);
}

}  // namespace

DecodeResult decode(Tape& tape, ModelState& state, Var latent_rgb, Var latent_depth, const MaskPlan& plan,
                    i64 batch) {
  const ModelConfig& cfg = state.config();
  ParamLookup P{{}, tape, state.params()};
  const i64 n = plan.geometry.tokens();

  TokenSelection sel_rgb = selection_for(plan, Modality::Rgb, batch);
  TokenSelection sel_depth = selection_for(plan, Modality::Depth, batch);
  if (tape.value(latent_rgb).rows != batch * sel_rgb.per_sample ||
      tape.value(latent_depth).rows != batch * sel_depth.per_sample)
    throw DimensionError("decode: latent row counts inconsistent with the mask plan");

  Var ad_rgb = tape.add_rowvec(tape.matmul(latent_rgb, P("adapter.weight")), P("adapter.bias"));
  Var ad_depth = tape.add_rowvec(tape.matmul(latent_depth, P("adapter.weight")), P("adapter.bias"));

  Mat pos_table = positional_embedding(plan.geometry, cfg.decoder.width);
  Var mod_embed = P("decoder.modality_embed");
  Var canvas_rgb = decoder_canvas(tape, P, ad_rgb, plan, Modality::Rgb, batch, pos_table,
                                  tape.slice_rows(mod_embed, 0, 1));
  Var canvas_depth = decoder_canvas(tape, P, ad_depth, plan, Modality::Depth, batch, pos_table,
                                    tape.slice_rows(mod_embed, 1, 1));

  // per-sample [rgb tokens | depth tokens] so the shared decoder attends
  // across modalities within each sample
  std::vector<Var> seq_parts;
  seq_parts.reserve(static_cast<size_t>(2 * batch));
  for (i64 b = 0; b < batch; ++b) {
    seq_parts.push_back(tape.slice_rows(canvas_rgb, b * n, n));
    seq_parts.push_back(tape.slice_rows(canvas_depth, b * n, n));
  }
  Var seq = tape.concat_rows(seq_parts);
  Var decoded = transformer_stack(tape, state.params(), "decoder.", seq, batch, 2 * n, cfg.decoder.depth,
                                  cfg.decoder.heads);

  std::vector<i64> rgb_rows, depth_rows;
  rgb_rows.reserve(static_cast<size_t>(batch * n));
  depth_rows.reserve(static_cast<size_t>(batch * n));
  for (i64 b = 0; b < batch; ++b)
    for (i64 i = 0; i < n; ++i) {
      rgb_rows.push_back(b * 2 * n + i);
      depth_rows.push_back(b * 2 * n + n + i);
    }
  Var dec_rgb = tape.gather_rows(decoded, rgb_rows);
  Var dec_depth = tape.gather_rows(decoded, depth_rows);

  DecodeResult out;
  out.rgb_pred = tape.add_rowvec(tape.matmul(dec_rgb, P("head.rgb.weight")), P("head.rgb.bias"));
  out.depth_pred = tape.add_rowvec(tape.matmul(dec_depth, P("head.depth.weight")), P("head.depth.bias"));
  return out;
}

Var matching_logits(Tape& tape, ModelState& state, Var latent_rgb, Var latent_depth, i64 batch, i64 n_vis_rgb,
                    i64 n_vis_depth, const std::vector<i64>& depth_of) {
  if (n_vis_rgb < 1 || n_vis_depth < 1) throw ValidationError("matching_logits: empty visible set");
  if (static_cast<i64>(depth_of.size()) != batch)
    throw ValidationError("matching_logits: pairing size != batch");
  ParamLookup P{{}, tape, state.params()};
  std::vector<Var> pooled_rgb, pooled_depth;
  for (i64 b = 0; b < batch; ++b) {
    pooled_rgb.push_back(tape.mean_rows(tape.slice_rows(latent_rgb, b * n_vis_rgb, n_vis_rgb)));
    pooled_depth.push_back(tape.mean_rows(tape.slice_rows(latent_depth, b * n_vis_depth, n_vis_depth)));
  }
  Var rgb_feat = batch == 1 ? pooled_rgb[0] : tape.concat_rows(pooled_rgb);
  Var depth_feat = batch == 1 ? pooled_depth[0] : tape.concat_rows(pooled_depth);
  Var depth_paired = tape.gather_rows(depth_feat, depth_of);
  Var joint = tape.concat_cols({rgb_feat, depth_paired});
  return tape.add_rowvec(tape.matmul(joint, P("match_head.weight")), P("match_head.bias"));
}

LossReport forward_backward(ModelState& state, const BatchInputs& inputs, const MaskPlan& plan,
                            const ForwardOptions& opts) {
  opts.weights.validate();
  const ModelConfig& cfg = state.config();
  const GridGeometry& geom = inputs.geom;
  const i64 n = geom.tokens(), batch = inputs.batch;
  if (plan.geometry != geom) throw DimensionError("forward_backward: plan geometry differs from batch geometry");
  if (inputs.rgb_patches.rows != batch * n || inputs.depth_patches.rows != batch * n)
    throw DimensionError("forward_backward: patch rows inconsistent with batch*tokens");

  Tape tape;
  ParamLookup P{{}, tape, state.params()};

  Var raw_rgb = tape.input(inputs.rgb_patches);
  Var raw_depth = tape.input(inputs.depth_patches);
  Var tok_rgb = project(tape, raw_rgb, P("proj.rgb.weight"), P("proj.rgb.bias"));
  Var tok_depth = project(tape, raw_depth, P("proj.depth.weight"), P("proj.depth.bias"));
  Mat enc_pos = positional_embedding(geom, cfg.encoder.width);
  tok_rgb = tape.add_tiled(tok_rgb, enc_pos, batch);
  tok_depth = tape.add_tiled(tok_depth, enc_pos, batch);

  TokenSelection sel_rgb = selection_for(plan, Modality::Rgb, batch);
  TokenSelection sel_depth = selection_for(plan, Modality::Depth, batch);
  Var vis_rgb = select_visible(tape, tok_rgb, sel_rgb);
  Var vis_depth = select_visible(tape, tok_depth, sel_depth);
  EncodeResult latents = encode(tape, state, vis_rgb, vis_depth, batch, sel_rgb.per_sample, sel_depth.per_sample);

  LossReport report;
  const LossWeights& w = opts.weights;
  Var total = tape.zero_scalar();
  Var term_rgb, term_depth, term_con, term_match;

  if (w.alpha > 0.0 || w.beta > 0.0) {
    DecodeResult dec = decode(tape, state, latents.rgb, latents.depth, plan, batch);
    auto batch_rows = [&](Modality m) {
      std::vector<i64> rows;
      for (i64 b = 0; b < batch; ++b)
        for (i64 i : plan.masked_indices(m)) rows.push_back(b * n + i);
      return rows;
    };
    if (w.alpha > 0.0) {
      std::vector<i64> rows = batch_rows(Modality::Rgb);
      report.masked_rgb = static_cast<i64>(rows.size());
      term_rgb = masked_recon_loss(tape, dec.rgb_pred, normalize_patch_targets(inputs.rgb_patches), rows,
                                   /*l1=*/false);
      total = tape.add(total, tape.scale(term_rgb, w.alpha));
    }
    if (w.beta > 0.0) {
      std::vector<i64> rows = batch_rows(Modality::Depth);
      report.masked_depth = static_cast<i64>(rows.size());
      term_depth = masked_recon_loss(tape, dec.depth_pred, normalize_patch_targets(inputs.depth_patches), rows,
                                     opts.depth_mode == DepthLossMode::ImageL1);
      total = tape.add(total, tape.scale(term_depth, w.beta));
    }
  }

  if (w.gamma > 0.0) {
    std::vector<i64> inter = plan.intersection_visible();
    report.contrastive_pairs = static_cast<i64>(inter.size());
    if (!inter.empty()) {
      // latent row of grid position i = rank of i within the modality's
      // visible list, per sample
      auto rank_rows = [&](const std::vector<i64>& visible, i64 per_sample) {
        std::vector<i64> rank(static_cast<size_t>(n), -1);
        for (size_t r = 0; r < visible.size(); ++r) rank[static_cast<size_t>(visible[r])] = static_cast<i64>(r);
        std::vector<i64> rows;
        rows.reserve(static_cast<size_t>(batch) * inter.size());
        for (i64 b = 0; b < batch; ++b)
          for (i64 i : inter) rows.push_back(b * per_sample + rank[static_cast<size_t>(i)]);
        return rows;
      };
      Var feat_rgb = tape.gather_rows(latents.rgb, rank_rows(plan.visible_indices(Modality::Rgb), sel_rgb.per_sample));
      Var feat_depth =
          tape.gather_rows(latents.depth, rank_rows(plan.visible_indices(Modality::Depth), sel_depth.per_sample));
      term_con = contrastive_loss(tape, feat_rgb, feat_depth, batch, static_cast<i64>(inter.size()), w.tau,
                                  w.symmetric_contrastive);
      total = tape.add(total, tape.scale(term_con, w.gamma));
    }
  }

  if (w.eta > 0.0) {
    MatchingBatch mb = make_matching_batch(batch, opts.matching_seed, opts.match_mode);
    report.matching_pairs = batch;
    Var logits = matching_logits(tape, state, latents.rgb, latents.depth, batch, sel_rgb.per_sample,
                                 sel_depth.per_sample, mb.depth_of);
    term_match = matching_loss(tape, logits, mb.labels);
    total = tape.add(total, tape.scale(term_match, w.eta));
  }

  report.rgb = term_rgb.valid() ? tape.scalar(term_rgb) : 0.0;
  report.depth = term_depth.valid() ? tape.scalar(term_depth) : 0.0;
  report.contrastive = term_con.valid() ? tape.scalar(term_con) : 0.0;
  report.matching = term_match.valid() ? tape.scalar(term_match) : 0.0;
  report.total = tape.scalar(total);

  auto check = [](double v, const char* name) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + name + " loss");
  };
  check(report.rgb, "rgb");
  check(report.depth, "depth");
  check(report.contrastive, "contrastive");
  check(report.matching, "matching");
  check(report.total, "total");

  if (opts.compute_grads) {
    state.zero_grads();
    tape.backward(total);
  }
  return report;
}

ProbeModel::ProbeModel(ModelConfig cfg, ProbeConfig probe, u64 seed) : cfg_(std::move(cfg)), probe_(probe) {
  cfg_.validate();
  if (probe_.task != ProbeTask::Classification && cfg_.tubelet != 1)
    throw ConfigError("dense probes are defined for image models only");
  Rng rng(mix_seed(seed, 0x9806e));
  constexpr double kStd = 0.02;
  const i64 d = cfg_.encoder.width;

  add_param(params_, rng, "proj.rgb.weight", cfg_.input_dim(Modality::Rgb), d, kStd);
  add_param(params_, rng, "proj.rgb.bias", 1, d, 0.0);
  std::string prefix = cfg_.encoder_prefix(Modality::Rgb);
  add_stack_params(params_, rng, prefix, cfg_.encoder.depth, d, cfg_.encoder.hidden());
  if (cfg_.encoder.mode == EncoderMode::Shared) add_param(params_, rng, "encoder.modality_embed", 2, d, kStd);

  i64 out_dim = 0;
  switch (probe_.task) {
    case ProbeTask::Classification: out_dim = probe_.classes; break;
    case ProbeTask::Segmentation: out_dim = static_cast<i64>(cfg_.patch) * cfg_.patch * probe_.classes; break;
    case ProbeTask::Depth: out_dim = static_cast<i64>(cfg_.patch) * cfg_.patch; break;
  }
  add_param(params_, rng, "probe.head.weight", d, out_dim, kStd);
  add_param(params_, rng, "probe.head.bias", 1, out_dim, 0.0);
}

Param& ProbeModel::at(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("unknown parameter: " + name);
}

void ProbeModel::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

bool ProbeModel::is_backbone(const std::string& name) const { return name.rfind("probe.", 0) != 0; }

Var ProbeModel::forward(Tape& tape, const Mat& rgb_patches, const GridGeometry& geom, i64 batch,
                        const DropPathPlan* drop) {
  const i64 n = geom.tokens();
  if (rgb_patches.rows != batch * n)
    throw DimensionError("probe forward: patch rows inconsistent with batch*tokens");
  ParamLookup P{{}, tape, params_};
  Var tok = project(tape, tape.input(rgb_patches), P("proj.rgb.weight"), P("proj.rgb.bias"));
  tok = tape.add_tiled(tok, positional_embedding(geom, cfg_.encoder.width), batch);
  if (cfg_.encoder.mode == EncoderMode::Shared)
    tok = tape.add_rowvec(tok, tape.slice_rows(P("encoder.modality_embed"), 0, 1));
  std::string prefix = cfg_.encoder_prefix(Modality::Rgb);
  Var enc = transformer_stack(tape, params_, prefix, tok, batch, n, cfg_.encoder.depth, cfg_.encoder.heads,
                              nullptr, drop);
  if (probe_.task == ProbeTask::Classification) {
    std::vector<Var> pooled;
    for (i64 b = 0; b < batch; ++b) pooled.push_back(tape.mean_rows(tape.slice_rows(enc, b * n, n)));
    Var feat = batch == 1 ? pooled[0] : tape.concat_rows(pooled);
    return tape.add_rowvec(tape.matmul(feat, P("probe.head.weight")), P("probe.head.bias"));
  }
  Var out = tape.add_rowvec(tape.matmul(enc, P("probe.head.weight")), P("probe.head.bias"));
  if (probe_.task == ProbeTask::Segmentation) {
    // head emits [pixel][class]; expose rows = pixels for the per-pixel loss
    const i64 pixels = static_cast<i64>(cfg_.patch) * cfg_.patch;
    return tape.reshape_rows(out, batch * n * pixels, probe_.classes);
  }
  return out;
}

std::vector<double> ProbeModel::layer_lr_scales(double decay) const {
  // head and final norm at 1.0; block i gets decay^(depth-i); embeddings get
  // decay^(depth+1)
  const int depth = cfg_.encoder.depth;
  std::vector<double> scales(params_.size(), 1.0);
  for (size_t i = 0; i < params_.size(); ++i) {
    const std::string& name = params_[i].name;
    int layer;
    if (name.rfind("probe.", 0) == 0 || name.find(".norm.") != std::string::npos) {
      layer = depth + 1;
    } else if (name.rfind("proj.", 0) == 0 || name == "encoder.modality_embed") {
      layer = 0;
    } else {
      size_t pos = name.find("blk");
      layer = pos == std::string::npos ? 0 : 1 + std::stoi(name.substr(pos + 3));
    }
    scales[i] = std::pow(decay, static_cast<double>(depth + 1 - layer));
  }
  return scales;
}

}  // namespace rgbdmae
