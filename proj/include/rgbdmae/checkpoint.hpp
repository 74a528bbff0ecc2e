#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "rgbdmae/autograd.hpp"
#include "rgbdmae/optim.hpp"

namespace rgbdmae {

// Checkpoint directory layout:
//   manifest.json            ordered name -> shape -> dtype, plus a meta blob
//   <param-name>.bin         one flat little-endian f64 blob per parameter
//   train_state.json, optim.m.<name>.bin / optim.v.<name>.bin   (optional)
void save_params(const std::string& dir, const std::vector<Param>& params, const nlohmann::json& meta);

nlohmann::json read_manifest(const std::string& dir);
nlohmann::json checkpoint_meta(const std::string& dir);

// Loads every manifest entry into the matching Param (by name); every shape is
// validated. `allow_missing_params` lets a probe pull just its subset.
void load_params(const std::string& dir, std::vector<Param>& params, bool allow_missing_params = false);

struct TrainState {
  i64 step = 0;
  i64 epoch = 0;
};

void save_train_state(const std::string& dir, const TrainState& ts, AdamW& opt,
                      const std::vector<Param>& params);
TrainState load_train_state(const std::string& dir, AdamW& opt, const std::vector<Param>& params);
bool has_train_state(const std::string& dir);

// FNV-1a over the value bytes of parameters whose name starts with `prefix`.
u64 params_checksum(const std::vector<Param>& params, const std::string& prefix);

}  // namespace rgbdmae
