#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pkml/adam.hpp"
#include "pkml/nn.hpp"
#include "pkml/tensor.hpp"

namespace pkml {

// Self-describing model snapshot. Doubles are serialized in shortest
// round-trip form, so save/load is bit-exact for finite values.
struct Checkpoint {
  int format_version = 1;
  std::string module_name;
  nn::NamedParams params;
  // Optimizer state, keyed like params. Empty when saved without an optimizer.
  std::int64_t opt_step = 0;
  ad::AdamConfig opt_config;
  std::map<std::string, std::vector<double>> opt_m;
  std::map<std::string, std::vector<double>> opt_v;
  bool has_optimizer = false;
  // Model-specific scalars and arrays (normalization stats, grids, ...).
  std::map<std::string, double> extra_scalars;
  std::map<std::string, std::vector<double>> extra_arrays;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies loaded values into live tensors, matching by name and shape.
void restore_params(const Checkpoint& ckpt, nn::NamedParams& live);
// Rebuilds Adam moments for the given live parameter list.
void restore_adam(const Checkpoint& ckpt, const nn::NamedParams& live, ad::Adam& adam);
// Captures optimizer state into a checkpoint being assembled.
void capture_adam(Checkpoint& ckpt, const ad::Adam& adam, const nn::NamedParams& live);

}  // namespace pkml
