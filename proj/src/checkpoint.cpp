#include "pkml/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "pkml/errors.hpp"

namespace pkml {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json j;
  j["format_version"] = ckpt.format_version;
  j["module_name"] = ckpt.module_name;
  json shapes = json::object();
  json arrays = json::object();
  for (const auto& [name, tensor] : ckpt.params) {
    shapes[name] = tensor.shape();
    arrays[name] = std::vector<double>(tensor.data().begin(), tensor.data().end());
  }
  j["shapes"] = std::move(shapes);
  j["arrays"] = std::move(arrays);
  if (ckpt.has_optimizer) {
    json opt;
    opt["type"] = "adam";
    opt["step"] = ckpt.opt_step;
    opt["lr"] = ckpt.opt_config.lr;
    opt["beta1"] = ckpt.opt_config.beta1;
    opt["beta2"] = ckpt.opt_config.beta2;
    opt["eps"] = ckpt.opt_config.eps;
    opt["m"] = ckpt.opt_m;
    opt["v"] = ckpt.opt_v;
    j["optimizer"] = std::move(opt);
  }
  j["extra_scalars"] = ckpt.extra_scalars;
  j["extra_arrays"] = ckpt.extra_arrays;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out << j.dump();
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  Checkpoint ckpt;
  ckpt.format_version = j.at("format_version").get<int>();
  if (ckpt.format_version != 1) {
    throw IoError("unsupported checkpoint format_version in " + path.string());
  }
  ckpt.module_name = j.at("module_name").get<std::string>();
  const auto& shapes = j.at("shapes");
  const auto& arrays = j.at("arrays");
  for (auto it = shapes.begin(); it != shapes.end(); ++it) {
    const auto shape = it.value().get<ad::Shape>();
    auto data = arrays.at(it.key()).get<std::vector<double>>();
    ckpt.params.emplace_back(it.key(),
                             ad::Tensor::from_data(shape, std::move(data), /*requires_grad=*/true));
  }
  if (j.contains("optimizer")) {
    const auto& opt = j.at("optimizer");
    ckpt.has_optimizer = true;
    ckpt.opt_step = opt.at("step").get<std::int64_t>();
    ckpt.opt_config.lr = opt.at("lr").get<double>();
    ckpt.opt_config.beta1 = opt.at("beta1").get<double>();
    ckpt.opt_config.beta2 = opt.at("beta2").get<double>();
    ckpt.opt_config.eps = opt.at("eps").get<double>();
    ckpt.opt_m = opt.at("m").get<std::map<std::string, std::vector<double>>>();
    ckpt.opt_v = opt.at("v").get<std::map<std::string, std::vector<double>>>();
  }
  ckpt.extra_scalars = j.at("extra_scalars").get<std::map<std::string, double>>();
  ckpt.extra_arrays = j.at("extra_arrays").get<std::map<std::string, std::vector<double>>>();
  return ckpt;
}

void restore_params(const Checkpoint& ckpt, nn::NamedParams& live) {
  if (ckpt.params.size() != live.size()) {
    throw IoError("checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, model has " +
                  std::to_string(live.size()));
  }
  for (auto& [name, tensor] : live) {
    const auto it =
        std::find_if(ckpt.params.begin(), ckpt.params.end(),
                     [&name = name](const auto& kv) { return kv.first == name; });
    if (it == ckpt.params.end()) throw IoError("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != tensor.shape()) {
      throw IoError("checkpoint shape mismatch for '" + name + "'");
    }
    auto dst = tensor.data_mut();
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void capture_adam(Checkpoint& ckpt, const ad::Adam& adam, const nn::NamedParams& live) {
  ckpt.has_optimizer = true;
  ckpt.opt_step = adam.step_count();
  ckpt.opt_config = adam.config();
  for (std::size_t i = 0; i < live.size(); ++i) {
    ckpt.opt_m[live[i].first] = adam.first_moments()[i];
    ckpt.opt_v[live[i].first] = adam.second_moments()[i];
  }
}

void restore_adam(const Checkpoint& ckpt, const nn::NamedParams& live, ad::Adam& adam) {
  if (!ckpt.has_optimizer) return;
  std::vector<std::vector<double>> m, v;
  for (const auto& [name, tensor] : live) {
    (void)tensor;
    const auto im = ckpt.opt_m.find(name);
    const auto iv = ckpt.opt_v.find(name);
    if (im == ckpt.opt_m.end() || iv == ckpt.opt_v.end()) {
      throw IoError("checkpoint optimizer state is missing '" + name + "'");
    }
    m.push_back(im->second);
    v.push_back(iv->second);
  }
  adam.restore(ckpt.opt_step, std::move(m), std::move(v));
}

}  // namespace pkml
