#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "pkml/adam.hpp"
#include "pkml/nn.hpp"
#include "pkml/synthdata.hpp"
#include "pkml/tensor.hpp"

namespace pkml {

// Linear noise schedule with T steps; t is 1-based throughout.
struct DiffusionSchedule {
  int T = 0;
  std::vector<double> beta;       // beta_t, index t-1
  std::vector<double> alpha;      // 1 - beta_t
  std::vector<double> alpha_bar;  // cumulative product

  static DiffusionSchedule linear(int steps = 100, double beta_1 = 1e-4, double beta_T = 0.02);

  void check_t(int t) const;
  double beta_at(int t) const { check_t(t); return beta[static_cast<std::size_t>(t - 1)]; }
  double alpha_at(int t) const { check_t(t); return alpha[static_cast<std::size_t>(t - 1)]; }
  double alpha_bar_at(int t) const { check_t(t); return alpha_bar[static_cast<std::size_t>(t - 1)]; }
};

using PhysioArray = std::array<double, 5>;

// Per-dimension standardization statistics of the training population.
struct PhysioStats {
  PhysioArray mean{};
  PhysioArray sd{};
  static PhysioStats from(std::span<const data::PhysioVector> pop);
  PhysioArray normalize(const PhysioArray& x) const;
  PhysioArray denormalize(const PhysioArray& x) const;
};

struct DiffusionConfig {
  int steps = 100;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  double lambda = 1.0;
  int hidden = 128;
  int hidden_layers = 3;
  int time_embed_dim = 16;
  int epochs = 2000;
  int batch_size = 128;
  double lr = 0.001;
  int sample_n = 2000;
};

// --- module operations (plain-double forms) --------------------------------

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
PhysioArray forward_noising(const PhysioArray& x0, int t, const PhysioArray& eps,
                            const DiffusionSchedule& sched);

// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
PhysioArray predict_x0(const PhysioArray& xt, int t, const PhysioArray& eps_hat,
                       const DiffusionSchedule& sched);

// Constraint residual in physical units.
double physics_g(const data::PhysioVector& v);

// Fraction of samples with g(x) > 0.
double violation_rate(std::span<const data::PhysioVector> samples);

// --- tape forms used by the training loss ----------------------------------

// Row-wise predict_x0 for a batch with per-row timesteps.
ad::Tensor predict_x0(ad::Tape& tape, const ad::Tensor& xt, std::span<const int> ts,
                      const ad::Tensor& eps_hat, const DiffusionSchedule& sched);

// mean_i relu(g(denormalize(x0_hat_i)))^2; differentiable through the
// de-normalization, zero on the compliant region.
ad::Tensor physics_penalty(ad::Tape& tape, const ad::Tensor& x0_hat_norm, const PhysioStats& stats);

// Denoiser evaluated on a normalized noisy batch with per-row timesteps.
using DenoiseFn =
    std::function<ad::Tensor(ad::Tape&, const ad::Tensor& xt_norm, std::span<const int> ts)>;

// Eq-style objective: mean_i ||eps_i - eps_hat_i||^2 (+ lambda * penalty).
// When lambda == 0 the penalty subgraph is not even built, so the
// unconstrained path is bit-identical to a penalty-free implementation.
ad::Tensor training_loss(ad::Tape& tape, std::span<const PhysioArray> batch_norm,
                         const DenoiseFn& denoise, const DiffusionSchedule& sched,
                         const PhysioStats& stats, double lambda, Rng& rng);

// MLP denoiser over [x_t (5) | sinusoidal time embedding].
class DiffusionModel {
 public:
  DiffusionModel(const DiffusionConfig& cfg, std::uint64_t init_seed);

  const DiffusionConfig& config() const { return cfg_; }
  const DiffusionSchedule& schedule() const { return sched_; }
  const PhysioStats& stats() const { return stats_; }
  void set_stats(const PhysioStats& stats) { stats_ = stats; }

  ad::Tensor denoise(ad::Tape& tape, const ad::Tensor& xt_norm, std::span<const int> ts) const;

  struct TrainReport {
    std::vector<std::pair<int, double>> epoch_loss;  // 1-based epoch
  };
  TrainReport train(std::span<const data::PhysioVector> population, std::uint64_t seed);

  // Ancestral sampling; returns de-normalized physiological vectors.
  std::vector<data::PhysioVector> sample(int n, std::uint64_t seed) const;

  nn::NamedParams named_params() const;
  const ad::Adam* optimizer() const { return adam_.get(); }
  void save(const std::filesystem::path& path) const;
  static DiffusionModel load(const std::filesystem::path& path);

 private:
  DiffusionConfig cfg_;
  DiffusionSchedule sched_;
  PhysioStats stats_;
  std::vector<nn::Linear> net_;
  std::shared_ptr<ad::Adam> adam_;
};

struct AblationReport {
  double rate_lambda0 = 0.0;
  double rate_lambda1 = 0.0;
  std::vector<data::PhysioVector> samples_lambda0;
  std::vector<data::PhysioVector> samples_lambda1;
  DiffusionModel::TrainReport log_lambda0;
  DiffusionModel::TrainReport log_lambda1;
};

// Trains two models identical except lambda in {0, 1} from the same
// initialization seed, samples both, reports violation rates.
AblationReport run_ablation(std::span<const data::PhysioVector> dataset2,
                            const DiffusionConfig& cfg, std::uint64_t seed,
                            bool parallel = false,
                            DiffusionModel* out_model0 = nullptr,
                            DiffusionModel* out_model1 = nullptr);

}  // namespace pkml
