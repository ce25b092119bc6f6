#include "pkml/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "pkml/checkpoint.hpp"

namespace pkml {

using ad::Tape;
using ad::Tensor;

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_1, double beta_T) {
  if (steps < 2) throw ConfigError("diffusion schedule needs at least 2 steps");
  DiffusionSchedule s;
  s.T = steps;
  s.beta.resize(static_cast<std::size_t>(steps));
  s.alpha.resize(static_cast<std::size_t>(steps));
  s.alpha_bar.resize(static_cast<std::size_t>(steps));
  double prod = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const std::size_t i = static_cast<std::size_t>(t - 1);
    // Endpoints are exact: beta(1) = beta_1, beta(T) = beta_T.
    s.beta[i] = beta_1 + (beta_T - beta_1) * static_cast<double>(t - 1) /
                             static_cast<double>(steps - 1);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

void DiffusionSchedule::check_t(int t) const {
  if (t < 1 || t > T) {
    throw ContractError("diffusion step t=" + std::to_string(t) + " outside [1, " +
                        std::to_string(T) + "]");
  }
}

PhysioStats PhysioStats::from(std::span<const data::PhysioVector> pop) {
  if (pop.empty()) throw ContractError("PhysioStats: empty population");
  PhysioStats s;
  for (const auto& v : pop) {
    const auto a = v.as_array();
    for (int d = 0; d < 5; ++d) s.mean[static_cast<std::size_t>(d)] += a[static_cast<std::size_t>(d)];
  }
  for (auto& m : s.mean) m /= static_cast<double>(pop.size());
  for (const auto& v : pop) {
    const auto a = v.as_array();
    for (int d = 0; d < 5; ++d) {
      const double diff = a[static_cast<std::size_t>(d)] - s.mean[static_cast<std::size_t>(d)];
      s.sd[static_cast<std::size_t>(d)] += diff * diff;
    }
  }
  for (auto& v : s.sd) v = std::sqrt(std::max(v / static_cast<double>(pop.size()), 1e-12));
  return s;
}

PhysioArray PhysioStats::normalize(const PhysioArray& x) const {
  PhysioArray out;
  for (std::size_t d = 0; d < 5; ++d) out[d] = (x[d] - mean[d]) / sd[d];
  return out;
}

PhysioArray PhysioStats::denormalize(const PhysioArray& x) const {
  PhysioArray out;
  for (std::size_t d = 0; d < 5; ++d) out[d] = x[d] * sd[d] + mean[d];
  return out;
}

PhysioArray forward_noising(const PhysioArray& x0, int t, const PhysioArray& eps,
                            const DiffusionSchedule& sched) {
  const double ab = sched.alpha_bar_at(t);
  const double sa = std::sqrt(ab);
  const double sn = std::sqrt(1.0 - ab);
  PhysioArray out;
  for (std::size_t d = 0; d < 5; ++d) out[d] = sa * x0[d] + sn * eps[d];
  return out;
}

PhysioArray predict_x0(const PhysioArray& xt, int t, const PhysioArray& eps_hat,
                       const DiffusionSchedule& sched) {
  const double ab = sched.alpha_bar_at(t);
  const double sa = std::sqrt(ab);
  const double sn = std::sqrt(1.0 - ab);
  PhysioArray out;
  for (std::size_t d = 0; d < 5; ++d) out[d] = (xt[d] - sn * eps_hat[d]) / sa;
  return out;
}

double physics_g(const data::PhysioVector& v) { return v.constraint_g(); }

double violation_rate(std::span<const data::PhysioVector> samples) {
  if (samples.empty()) throw ContractError("violation_rate: no samples");
  std::size_t n = 0;
  for (const auto& v : samples) {
    if (physics_g(v) > 0.0) ++n;
  }
  return static_cast<double>(n) / static_cast<double>(samples.size());
}

Tensor predict_x0(Tape& tape, const Tensor& xt, std::span<const int> ts, const Tensor& eps_hat,
                  const DiffusionSchedule& sched) {
  const int b = eps_hat.shape()[0];
  if (static_cast<int>(ts.size()) != b || xt.shape() != eps_hat.shape()) {
    throw ShapeError("predict_x0: batch size mismatch");
  }
  // Row-wise constants: xt / sqrt(abar) and sqrt(1-abar)/sqrt(abar).
  Tensor xt_scaled = Tensor::zeros(xt.shape());
  Tensor noise_scale = Tensor::zeros(xt.shape());
  for (int r = 0; r < b; ++r) {
    const double ab = sched.alpha_bar_at(ts[static_cast<std::size_t>(r)]);
    const double sa = std::sqrt(ab);
    const double ratio = std::sqrt(1.0 - ab) / sa;
    for (int c = 0; c < 5; ++c) {
      xt_scaled.set(r, c, xt(r, c) / sa);
      noise_scale.set(r, c, ratio);
    }
  }
  return tape.sub(xt_scaled, tape.mul(eps_hat, noise_scale));
}

Tensor physics_penalty(Tape& tape, const Tensor& x0_hat_norm, const PhysioStats& stats) {
  const int b = x0_hat_norm.shape()[0];
  if (x0_hat_norm.shape()[1] != 5) throw ShapeError("physics_penalty: expected 5 columns");
  // De-normalize on the tape so the penalty gradient reaches the denoiser.
  Tensor sd_tile = Tensor::zeros({b, 5});
  Tensor mean_tile = Tensor::zeros({b, 5});
  for (int r = 0; r < b; ++r) {
    for (int c = 0; c < 5; ++c) {
      sd_tile.set(r, c, stats.sd[static_cast<std::size_t>(c)]);
      mean_tile.set(r, c, stats.mean[static_cast<std::size_t>(c)]);
    }
  }
  Tensor physical = tape.add(tape.mul(x0_hat_norm, sd_tile), mean_tile);
  // g(x) = liver + heart - 0.04 * weight, columns (age,height,weight,liver,heart).
  Tensor g_weights = Tensor::from_data({5, 1}, {0.0, 0.0, -0.04, 1.0, 1.0});
  Tensor g = tape.matmul(physical, g_weights);
  Tensor r = tape.relu(g);
  return tape.mean(tape.mul(r, r));
}

Tensor training_loss(Tape& tape, std::span<const PhysioArray> batch_norm, const DenoiseFn& denoise,
                     const DiffusionSchedule& sched, const PhysioStats& stats, double lambda,
                     Rng& rng) {
  if (batch_norm.empty()) throw ContractError("training_loss: empty batch");
  const int b = static_cast<int>(batch_norm.size());
  std::vector<int> ts(static_cast<std::size_t>(b));
  std::vector<double> xt_data, eps_data;
  xt_data.reserve(static_cast<std::size_t>(b) * 5);
  eps_data.reserve(static_cast<std::size_t>(b) * 5);
  for (int r = 0; r < b; ++r) {
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T)));
    ts[static_cast<std::size_t>(r)] = t;
    PhysioArray eps;
    for (auto& e : eps) e = rng.normal();
    const PhysioArray xt = forward_noising(batch_norm[static_cast<std::size_t>(r)], t, eps, sched);
    for (std::size_t d = 0; d < 5; ++d) {
      xt_data.push_back(xt[d]);
      eps_data.push_back(eps[d]);
    }
  }
  Tensor xt = Tensor::from_data({b, 5}, std::move(xt_data));
  Tensor eps = Tensor::from_data({b, 5}, std::move(eps_data));

  Tensor eps_hat = denoise(tape, xt, ts);
  Tensor diff = tape.sub(eps_hat, eps);
  // mean over the batch of the squared noise-residual norm.
  Tensor noise_term = tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / static_cast<double>(b));
  if (lambda == 0.0) return noise_term;

  Tensor x0_hat = predict_x0(tape, xt, ts, eps_hat, sched);
  Tensor penalty = physics_penalty(tape, x0_hat, stats);
  return tape.add(noise_term, tape.scale(penalty, lambda));
}

// ---------------------------------------------------------------------------
// DiffusionModel
// ---------------------------------------------------------------------------

DiffusionModel::DiffusionModel(const DiffusionConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  if (cfg_.hidden_layers < 1) throw ConfigError("diffusion: hidden_layers must be >= 1");
  sched_ = DiffusionSchedule::linear(cfg_.steps, cfg_.beta_min, cfg_.beta_max);
  Rng rng(derive_seed(init_seed, "diffusion/init"));
  const int in_dim = 5 + cfg_.time_embed_dim;
  net_.emplace_back(in_dim, cfg_.hidden, rng);
  for (int l = 1; l < cfg_.hidden_layers; ++l) net_.emplace_back(cfg_.hidden, cfg_.hidden, rng);
  net_.emplace_back(cfg_.hidden, 5, rng);
  stats_.sd.fill(1.0);
}

Tensor DiffusionModel::denoise(Tape& tape, const Tensor& xt_norm, std::span<const int> ts) const {
  const int b = xt_norm.shape()[0];
  if (static_cast<int>(ts.size()) != b) throw ShapeError("denoise: ts size mismatch");
  std::vector<double> emb_data;
  emb_data.reserve(static_cast<std::size_t>(b) * cfg_.time_embed_dim);
  for (int r = 0; r < b; ++r) {
    const auto row = nn::sinusoidal_encoding(ts[static_cast<std::size_t>(r)], cfg_.time_embed_dim);
    emb_data.insert(emb_data.end(), row.begin(), row.end());
  }
  Tensor emb = Tensor::from_data({b, cfg_.time_embed_dim}, std::move(emb_data));
  const Tensor parts[] = {xt_norm, emb};
  Tensor x = tape.concat_cols(parts);
  for (std::size_t l = 0; l + 1 < net_.size(); ++l) x = tape.relu(net_[l](tape, x));
  return net_.back()(tape, x);
}

DiffusionModel::TrainReport DiffusionModel::train(std::span<const data::PhysioVector> population,
                                                  std::uint64_t seed) {
  if (population.empty()) throw ContractError("diffusion train: empty population");
  stats_ = PhysioStats::from(population);
  std::vector<PhysioArray> norm;
  norm.reserve(population.size());
  for (const auto& v : population) norm.push_back(stats_.normalize(v.as_array()));

  std::vector<Tensor> params;
  for (auto& [name, t] : named_params()) params.push_back(t);
  adam_ = std::make_shared<ad::Adam>(params, ad::AdamConfig{.lr = cfg_.lr});

  DenoiseFn denoise_fn = [this](Tape& tape, const Tensor& xt, std::span<const int> ts) {
    return denoise(tape, xt, ts);
  };

  Rng rng(derive_seed(seed, "diffusion/train"));
  std::vector<int> order(norm.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  std::vector<PhysioArray> batch;
  batch.reserve(static_cast<std::size_t>(cfg_.batch_size));
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t i = 0; i < order.size();) {
      batch.clear();
      const std::size_t take = std::min<std::size_t>(cfg_.batch_size, order.size() - i);
      for (std::size_t j = 0; j < take; ++j, ++i) {
        batch.push_back(norm[static_cast<std::size_t>(order[i])]);
      }
      Tape tape;
      Tensor loss = training_loss(tape, batch, denoise_fn, sched_, stats_, cfg_.lambda, rng);
      const double loss_val = loss.value();
      if (!std::isfinite(loss_val)) {
        throw DivergenceError("diffusion train: loss diverged at epoch " + std::to_string(epoch),
                              static_cast<double>(epoch));
      }
      epoch_loss += loss_val;
      ++n_batches;
      tape.backward(loss);
      adam_->step();
    }
    report.epoch_loss.emplace_back(epoch, epoch_loss / static_cast<double>(n_batches));
  }
  return report;
}

std::vector<data::PhysioVector> DiffusionModel::sample(int n, std::uint64_t seed) const {
  if (n <= 0) throw ContractError("sample: n must be positive");
  Rng rng(derive_seed(seed, "diffusion/sample"));
  std::vector<double> x(static_cast<std::size_t>(n) * 5);
  for (auto& v : x) v = rng.normal();

  std::vector<int> ts(static_cast<std::size_t>(n));
  for (int t = sched_.T; t >= 1; --t) {
    std::fill(ts.begin(), ts.end(), t);
    Tape tape;
    Tensor xt = Tensor::from_data({n, 5}, x);
    Tensor eps_hat = denoise(tape, xt, ts);
    const auto eh = eps_hat.data();
    const double beta = sched_.beta_at(t);
    const double alpha = sched_.alpha_at(t);
    const double ab = sched_.alpha_bar_at(t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    const double noise_coef = beta / std::sqrt(1.0 - ab);
    const double sigma = std::sqrt(beta);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double mu = inv_sqrt_alpha * (x[i] - noise_coef * eh[i]);
      if (!std::isfinite(mu)) {
        throw DivergenceError("sample: non-finite state at t=" + std::to_string(t),
                              static_cast<double>(t));
      }
      x[i] = (t > 1) ? mu + sigma * rng.normal() : mu;
    }
  }

  std::vector<data::PhysioVector> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    PhysioArray row;
    for (std::size_t d = 0; d < 5; ++d) row[d] = x[static_cast<std::size_t>(r) * 5 + d];
    out.push_back(data::PhysioVector::from_array(stats_.denormalize(row)));
  }
  return out;
}

nn::NamedParams DiffusionModel::named_params() const {
  nn::NamedParams out;
  for (std::size_t l = 0; l < net_.size(); ++l) {
    net_[l].collect(out, "mlp" + std::to_string(l));
  }
  return out;
}

void DiffusionModel::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.module_name = "diffusion";
  ckpt.params = named_params();
  ckpt.extra_scalars = {
      {"steps", static_cast<double>(cfg_.steps)},
      {"beta_min", cfg_.beta_min},
      {"beta_max", cfg_.beta_max},
      {"lambda", cfg_.lambda},
      {"hidden", static_cast<double>(cfg_.hidden)},
      {"hidden_layers", static_cast<double>(cfg_.hidden_layers)},
      {"time_embed_dim", static_cast<double>(cfg_.time_embed_dim)},
  };
  ckpt.extra_arrays["stats_mean"] = {stats_.mean.begin(), stats_.mean.end()};
  ckpt.extra_arrays["stats_sd"] = {stats_.sd.begin(), stats_.sd.end()};
  if (adam_) capture_adam(ckpt, *adam_, ckpt.params);
  save_checkpoint(path, ckpt);
}

DiffusionModel DiffusionModel::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.module_name != "diffusion") {
    throw IoError("checkpoint module is '" + ckpt.module_name + "', expected 'diffusion'");
  }
  DiffusionConfig cfg;
  cfg.steps = static_cast<int>(ckpt.extra_scalars.at("steps"));
  cfg.beta_min = ckpt.extra_scalars.at("beta_min");
  cfg.beta_max = ckpt.extra_scalars.at("beta_max");
  cfg.lambda = ckpt.extra_scalars.at("lambda");
  cfg.hidden = static_cast<int>(ckpt.extra_scalars.at("hidden"));
  cfg.hidden_layers = static_cast<int>(ckpt.extra_scalars.at("hidden_layers"));
  cfg.time_embed_dim = static_cast<int>(ckpt.extra_scalars.at("time_embed_dim"));
  DiffusionModel model(cfg, /*init_seed=*/0);
  auto live = model.named_params();
  restore_params(ckpt, live);
  const auto& mean = ckpt.extra_arrays.at("stats_mean");
  const auto& sd = ckpt.extra_arrays.at("stats_sd");
  std::copy(mean.begin(), mean.end(), model.stats_.mean.begin());
  std::copy(sd.begin(), sd.end(), model.stats_.sd.begin());
  if (ckpt.has_optimizer) {
    std::vector<Tensor> params;
    for (auto& [name, t] : live) params.push_back(t);
    model.adam_ = std::make_shared<ad::Adam>(params, ckpt.opt_config);
    restore_adam(ckpt, live, *model.adam_);
  }
  return model;
}

AblationReport run_ablation(std::span<const data::PhysioVector> dataset2,
                            const DiffusionConfig& cfg, std::uint64_t seed, bool parallel,
                            DiffusionModel* out_model0, DiffusionModel* out_model1) {
  DiffusionConfig cfg0 = cfg;
  cfg0.lambda = 0.0;
  DiffusionConfig cfg1 = cfg;
  cfg1.lambda = 1.0;

  // Same initialization seed: the two arms start from identical weights and
  // consume identical (t, eps) draws; only the penalty term differs.
  DiffusionModel model0(cfg0, seed);
  DiffusionModel model1(cfg1, seed);

  AblationReport report;
  auto train_arm = [&](DiffusionModel& model, DiffusionModel::TrainReport& log,
                       std::vector<data::PhysioVector>& samples) {
    log = model.train(dataset2, seed);
    samples = model.sample(cfg.sample_n, derive_seed(seed, "diffusion/ablation-samples"));
  };

  if (parallel) {
    std::thread t0([&] { train_arm(model0, report.log_lambda0, report.samples_lambda0); });
    train_arm(model1, report.log_lambda1, report.samples_lambda1);
    t0.join();
  } else {
    train_arm(model0, report.log_lambda0, report.samples_lambda0);
    train_arm(model1, report.log_lambda1, report.samples_lambda1);
  }

  report.rate_lambda0 = violation_rate(report.samples_lambda0);
  report.rate_lambda1 = violation_rate(report.samples_lambda1);
  if (out_model0) *out_model0 = std::move(model0);
  if (out_model1) *out_model1 = std::move(model1);
  return report;
}

}  // namespace pkml
