#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pkml/adam.hpp"
#include "pkml/nn.hpp"
#include "pkml/synthdata.hpp"
#include "pkml/tensor.hpp"

namespace pkml {

struct TransformerConfig {
  int n_layers = 2;
  int n_heads = 2;
  int d_model = 32;
  int input_len = 5;
  int output_len = 45;
  int epochs = 50;
  double lr = 0.001;
  int ff_width = 64;
  int batch_size = 32;

  int seq_len() const { return input_len + output_len; }
  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

// Sinusoidal positional encoding row (even dims sin, odd dims cos).
std::vector<double> positional_encoding(int pos, int d_model);

// Additive attention mask: 0 on and below the diagonal, -1e9 above, so the
// softmax weight of every future position underflows to exactly zero.
ad::Tensor causal_mask(int len);

// Scaled dot-product attention. Pass an undefined mask for the unmasked case.
ad::Tensor attention(ad::Tape& tape, const ad::Tensor& q, const ad::Tensor& k,
                     const ad::Tensor& v, const ad::Tensor& mask = {});

// Decoder-only forecaster over normalized log-concentrations: at every
// position it predicts the next value under a causal mask.
class ForecastModel {
 public:
  ForecastModel(const TransformerConfig& cfg, std::uint64_t init_seed);

  const TransformerConfig& config() const { return cfg_; }

  // values are normalized; returns next-value predictions, one per position.
  ad::Tensor forward(ad::Tape& tape, std::span<const double> values) const;

  // Greedy autoregression in normalized space.
  std::vector<double> generate_normalized(std::span<const double> prefix, int steps) const;

  // Raw-concentration interface: log-standardizes the prefix, rolls out
  // output_len steps, returns de-normalized concentrations.
  std::vector<double> generate(std::span<const double> prefix_raw) const;

  struct TrainReport {
    std::vector<std::pair<int, double>> epoch_train_mse;  // 1-based epoch
    double test_mse_raw = 0.0;
    double test_mse_norm = 0.0;
    double baseline_locf_mse_raw = 0.0;
  };
  TrainReport train(const data::Dataset1& dataset, std::uint64_t seed);

  // Normalization (log then standardize with train-split statistics).
  double normalize(double conc) const;
  double denormalize(double value) const;
  void set_norm_stats(double mu, double sd);
  double norm_mu() const { return norm_mu_; }
  double norm_sd() const { return norm_sd_; }

  nn::NamedParams named_params() const;
  // Present after train() (or after loading a checkpoint that carried state).
  const ad::Adam* optimizer() const { return adam_.get(); }
  void save(const std::filesystem::path& path) const;
  static ForecastModel load(const std::filesystem::path& path);

 private:
  struct Head {
    nn::Linear wq, wk, wv;
  };
  struct Layer {
    std::vector<Head> heads;
    nn::Linear wo;
    nn::Linear ff1, ff2;
  };

  TransformerConfig cfg_;
  nn::Linear embed_;
  std::vector<Layer> layers_;
  nn::Linear head_;
  ad::Tensor pe_;  // [seq_len x d_model], constant
  double norm_mu_ = 0.0;
  double norm_sd_ = 1.0;
  std::shared_ptr<ad::Adam> adam_;
};

}  // namespace pkml
