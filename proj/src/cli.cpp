#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rgbdmae/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace rgbdmae {
namespace {

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " does not parse: " + e.what());
  }
}

struct CommonOverrides {
  std::string out;
  i64 seed = -1;
};

void apply_overrides(PretrainConfig& cfg, const CommonOverrides& ov) {
  if (!ov.out.empty()) cfg.out_dir = ov.out;
  if (ov.seed >= 0) cfg.seed = static_cast<u64>(ov.seed);
}

int run_pretrain(const std::string& config_path, const CommonOverrides& ov, bool video) {
  PretrainConfig cfg = PretrainConfig::from_json(read_config_file(config_path), video);
  apply_overrides(cfg, ov);
  cfg.validate();
  PretrainResult r = video ? pretrain_video(cfg) : pretrain_image(cfg);
  std::cout << "pretrain finished: steps=" << r.steps << " first_loss=" << format_double(r.first_total)
            << " last_loss=" << format_double(r.last_total) << "\ncheckpoint: " << r.final_checkpoint << "\n";
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"RGB-D masked-autoencoder pretraining, fine-tuning and evaluation"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic RGB-D dataset");
  std::string synth_out, synth_kind = "image";
  int synth_n = 16, synth_h = 64, synth_w = 64, synth_frames = 8;
  i64 synth_seed = 0;
  synth->add_option("--out", synth_out, "dataset root directory")->required();
  synth->add_option("--n", synth_n, "number of samples");
  synth->add_option("--kind", synth_kind, "image | video")->check(CLI::IsMember({"image", "video"}));
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--height", synth_h, "height");
  synth->add_option("--width", synth_w, "width");
  synth->add_option("--frames", synth_frames, "frames per clip (video)");

  // pretrain-video / pretrain-image
  std::string cfg_path_video, cfg_path_image;
  CommonOverrides ov_video, ov_image;
  auto* pv = app.add_subcommand("pretrain-video", "single-stage video pretraining");
  pv->add_option("--config", cfg_path_video, "config json")->required();
  pv->add_option("--out", ov_video.out, "output directory override");
  pv->add_option("--seed", ov_video.seed, "seed override");
  auto* pi = app.add_subcommand("pretrain-image", "two-stage image pretraining");
  pi->add_option("--config", cfg_path_image, "config json")->required();
  pi->add_option("--out", ov_image.out, "output directory override");
  pi->add_option("--seed", ov_image.seed, "seed override");

  // finetune
  auto* ft = app.add_subcommand("finetune", "fine-tune a probe from a checkpoint (or from scratch)");
  std::string ft_config, ft_checkpoint, ft_dataset, ft_eval_dataset, ft_out;
  i64 ft_seed = -1;
  ft->add_option("--config", ft_config, "probe config json")->required();
  ft->add_option("--checkpoint", ft_checkpoint, "pretrained checkpoint dir (omit for scratch)");
  ft->add_option("--dataset", ft_dataset, "training manifest override");
  ft->add_option("--eval-dataset", ft_eval_dataset, "evaluation manifest override");
  ft->add_option("--out", ft_out, "output directory override");
  ft->add_option("--seed", ft_seed, "seed override");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
  std::string ev_checkpoint, ev_dataset, ev_out;
  ev->add_option("--checkpoint", ev_checkpoint, "probe checkpoint dir")->required();
  ev->add_option("--dataset", ev_dataset, "evaluation manifest")->required();
  ev->add_option("--out", ev_out, "where to write results.json");

  // visualize-masks
  auto* vm = app.add_subcommand("visualize-masks", "emit a mask overlay raster for one sample");
  std::string vm_dataset, vm_out, vm_rgb_strat = "random", vm_depth_strat = "random";
  i64 vm_index = 0, vm_seed = 0;
  int vm_patch = 16, vm_tubelet = 2;
  double vm_rgb_ratio = 0.8, vm_depth_ratio = 0.8;
  vm->add_option("--dataset", vm_dataset, "manifest path")->required();
  vm->add_option("--index", vm_index, "sample index");
  vm->add_option("--out", vm_out, "output png path")->required();
  vm->add_option("--seed", vm_seed, "plan seed");
  vm->add_option("--rgb-strategy", vm_rgb_strat, "random | tube | frame");
  vm->add_option("--rgb-ratio", vm_rgb_ratio, "rgb mask ratio");
  vm->add_option("--depth-strategy", vm_depth_strat, "random | tube | frame");
  vm->add_option("--depth-ratio", vm_depth_ratio, "depth mask ratio");
  vm->add_option("--patch", vm_patch, "patch size");
  vm->add_option("--tubelet", vm_tubelet, "tubelet size (video)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help() << std::endl;
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::endl;
    return 2;
  }

  try {
    if (synth->parsed()) {
      if (synth_kind == "image")
        write_image_dataset(synth_out, synth_n, static_cast<u64>(synth_seed), synth_h, synth_w);
      else
        write_video_dataset(synth_out, synth_n, static_cast<u64>(synth_seed), synth_frames, synth_h, synth_w);
      std::cout << "wrote " << synth_n << " " << synth_kind << " samples under " << synth_out << "\n";
      return 0;
    }
    if (pv->parsed()) return run_pretrain(cfg_path_video, ov_video, true);
    if (pi->parsed()) return run_pretrain(cfg_path_image, ov_image, false);
    if (ft->parsed()) {
      FinetuneConfig cfg = FinetuneConfig::from_json(read_config_file(ft_config));
      if (!ft_dataset.empty()) cfg.dataset = ft_dataset;
      if (!ft_eval_dataset.empty()) cfg.eval_dataset = ft_eval_dataset;
      if (!ft_out.empty()) cfg.out_dir = ft_out;
      if (ft_seed >= 0) cfg.seed = static_cast<u64>(ft_seed);
      cfg.validate();
      FinetuneResult r = finetune(ft_checkpoint, cfg);
      std::cout << r.metric_name << ": " << format_double(r.metric) << "\ncheckpoint: " << r.checkpoint_dir << "\n";
      return 0;
    }
    if (ev->parsed()) {
      EvalResult r = evaluate_checkpoint(ev_checkpoint, ev_dataset, ev_out);
      std::cout << "metric            value\n";
      std::cout << r.metric_name;
      for (size_t i = r.metric_name.size(); i < 18; ++i) std::cout << ' ';
      std::cout << format_double(r.value) << "\n";
      return 0;
    }
    if (vm->parsed()) {
      MaskConfig mc;
      mc.rgb_strategy = parse_mask_strategy(vm_rgb_strat);
      mc.depth_strategy = parse_mask_strategy(vm_depth_strat);
      mc.rgb_ratio = vm_rgb_ratio;
      mc.depth_ratio = vm_depth_ratio;
      visualize_masks(vm_dataset, static_cast<size_t>(vm_index), mc, vm_patch, vm_tubelet,
                      static_cast<u64>(vm_seed), vm_out);
      std::cout << "wrote " << vm_out << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << std::endl;
    return 1;
  }
  return 2;
}

}  // namespace rgbdmae
