#include "rgbdmae/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace rgbdmae {
namespace {

void write_blob(const std::string& path, const Mat& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write blob: " + path);
  out.write(reinterpret_cast<const char*>(m.d.data()),
            static_cast<std::streamsize>(m.d.size() * sizeof(double)));
  if (!out) throw IoError("short write: " + path);
}

void read_blob(const std::string& path, Mat& m) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot read blob: " + path);
  auto bytes = static_cast<size_t>(in.tellg());
  if (bytes != m.d.size() * sizeof(double))
    throw ValidationError("blob " + path + " holds " + std::to_string(bytes / sizeof(double)) +
                          " values, manifest expects " + std::to_string(m.d.size()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(m.d.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("short read: " + path);
}

}  // namespace

void save_params(const std::string& dir, const std::vector<Param>& params, const json& meta) {
  fs::create_directories(dir);
  json manifest;
  json plist = json::array();
  for (const auto& p : params) {
    plist.push_back({{"name", p.name}, {"shape", {p.value.rows, p.value.cols}}, {"dtype", "f64"}});
    write_blob(dir + "/" + p.name + ".bin", p.value);
  }
  manifest["params"] = plist;
  manifest["meta"] = meta;
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw IoError("cannot write manifest under " + dir);
  out << manifest.dump(2) << "\n";
}

json read_manifest(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw IoError("cannot open checkpoint manifest: " + dir + "/manifest.json");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint manifest " + dir + " does not parse: " + e.what());
  }
  return j;
}

json checkpoint_meta(const std::string& dir) {
  json j = read_manifest(dir);
  return j.value("meta", json::object());
}

void load_params(const std::string& dir, std::vector<Param>& params, bool allow_missing_params) {
  json manifest = read_manifest(dir);
  if (!manifest.contains("params")) throw ValidationError("checkpoint " + dir + ": manifest lacks params");

  std::vector<std::uint8_t> filled(params.size(), 0);
  for (const auto& entry : manifest["params"]) {
    std::string name = entry.at("name").get<std::string>();
    i64 rows = entry.at("shape")[0].get<i64>();
    i64 cols = entry.at("shape")[1].get<i64>();
    Param* target = nullptr;
    for (size_t i = 0; i < params.size(); ++i)
      if (params[i].name == name) {
        target = &params[i];
        filled[i] = 1;
        break;
      }
    if (!target) continue;  // checkpoint may carry more than the consumer needs
    if (target->value.rows != rows || target->value.cols != cols)
      throw ValidationError("checkpoint " + dir + ": parameter " + name + " has shape (" + std::to_string(rows) +
                            "," + std::to_string(cols) + "), model expects " + target->value.shape_str());
    read_blob(dir + "/" + name + ".bin", target->value);
  }
  if (!allow_missing_params)
    for (size_t i = 0; i < params.size(); ++i)
      if (!filled[i])
        throw ValidationError("checkpoint " + dir + " is incompatible: parameter " + params[i].name +
                              " absent from manifest");
}

void save_train_state(const std::string& dir, const TrainState& ts, AdamW& opt,
                      const std::vector<Param>& params) {
  json j;
  j["step"] = ts.step;
  j["epoch"] = ts.epoch;
  j["adam_steps"] = opt.steps_taken();
  std::ofstream out(dir + "/train_state.json");
  if (!out) throw IoError("cannot write train state under " + dir);
  out << j.dump(2) << "\n";
  for (size_t i = 0; i < params.size(); ++i) {
    write_blob(dir + "/optim.m." + params[i].name + ".bin", opt.moments_m()[i]);
    write_blob(dir + "/optim.v." + params[i].name + ".bin", opt.moments_v()[i]);
  }
}

TrainState load_train_state(const std::string& dir, AdamW& opt, const std::vector<Param>& params) {
  std::ifstream in(dir + "/train_state.json");
  if (!in) throw IoError("cannot open train state: " + dir + "/train_state.json");
  json j;
  in >> j;
  TrainState ts;
  ts.step = j.at("step").get<i64>();
  ts.epoch = j.at("epoch").get<i64>();
  opt.set_steps_taken(j.at("adam_steps").get<i64>());
  for (size_t i = 0; i < params.size(); ++i) {
    read_blob(dir + "/optim.m." + params[i].name + ".bin", opt.moments_m()[i]);
    read_blob(dir + "/optim.v." + params[i].name + ".bin", opt.moments_v()[i]);
  }
  return ts;
}

bool has_train_state(const std::string& dir) { return fs::exists(dir + "/train_state.json"); }

u64 params_checksum(const std::vector<Param>& params, const std::string& prefix) {
  u64 h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.d.data());
    for (size_t i = 0; i < p.value.d.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace rgbdmae
