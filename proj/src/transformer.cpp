#include "pkml/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pkml/checkpoint.hpp"

namespace pkml {

using ad::Tape;
using ad::Tensor;

void TransformerConfig::validate() const {
  if (d_model % n_heads != 0) {
    throw ConfigError("transformer: d_model must be divisible by n_heads");
  }
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || ff_width < 1) {
    throw ConfigError("transformer: layer sizes must be positive");
  }
  if (input_len < 1 || output_len < 1) {
    throw ConfigError("transformer: input_len and output_len must be positive");
  }
}

std::vector<double> positional_encoding(int pos, int d_model) {
  if (pos < 0) throw ContractError("positional_encoding: pos must be nonnegative");
  return nn::sinusoidal_encoding(pos, d_model);
}

ad::Tensor causal_mask(int len) {
  Tensor mask = Tensor::zeros({len, len});
  for (int r = 0; r < len; ++r)
    for (int c = r + 1; c < len; ++c) mask.set(r, c, -1e9);
  return mask;
}

ad::Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                     const Tensor& mask) {
  const int dk = q.shape()[1];
  Tensor scores = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(dk));
  if (mask.defined()) scores = tape.add(scores, mask);
  return tape.matmul(tape.softmax_rows(scores), v);
}

ForecastModel::ForecastModel(const TransformerConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(init_seed, "transformer/init"));
  embed_ = nn::Linear(1, cfg_.d_model, rng);
  layers_.resize(static_cast<std::size_t>(cfg_.n_layers));
  for (auto& layer : layers_) {
    layer.heads.resize(static_cast<std::size_t>(cfg_.n_heads));
    for (auto& head : layer.heads) {
      head.wq = nn::Linear(cfg_.d_model, cfg_.head_dim(), rng, /*bias=*/false);
      head.wk = nn::Linear(cfg_.d_model, cfg_.head_dim(), rng, /*bias=*/false);
      head.wv = nn::Linear(cfg_.d_model, cfg_.head_dim(), rng, /*bias=*/false);
    }
    layer.wo = nn::Linear(cfg_.d_model, cfg_.d_model, rng);
    layer.ff1 = nn::Linear(cfg_.d_model, cfg_.ff_width, rng);
    layer.ff2 = nn::Linear(cfg_.ff_width, cfg_.d_model, rng);
  }
  head_ = nn::Linear(cfg_.d_model, 1, rng);

  std::vector<double> pe(static_cast<std::size_t>(cfg_.seq_len()) * cfg_.d_model);
  for (int pos = 0; pos < cfg_.seq_len(); ++pos) {
    const auto row = positional_encoding(pos, cfg_.d_model);
    std::copy(row.begin(), row.end(), pe.begin() + static_cast<std::ptrdiff_t>(pos) * cfg_.d_model);
  }
  pe_ = Tensor::from_data({cfg_.seq_len(), cfg_.d_model}, std::move(pe));
}

Tensor ForecastModel::forward(Tape& tape, std::span<const double> values) const {
  const int len = static_cast<int>(values.size());
  if (len < 1) throw ContractError("forward: empty sequence");
  if (len > cfg_.seq_len()) {
    throw ContractError("forward: sequence longer than the positional table");
  }

  Tensor tokens = Tensor::from_data({len, 1}, {values.begin(), values.end()});
  Tensor x = embed_(tape, tokens);
  x = tape.add(x, tape.slice_rows(pe_, 0, len));

  const Tensor mask = causal_mask(len);
  for (const auto& layer : layers_) {
    std::vector<Tensor> head_outs;
    head_outs.reserve(layer.heads.size());
    for (const auto& head : layer.heads) {
      head_outs.push_back(attention(tape, head.wq(tape, x), head.wk(tape, x),
                                    head.wv(tape, x), mask));
    }
    x = tape.add(x, layer.wo(tape, tape.concat_cols(head_outs)));
    Tensor ff = layer.ff2(tape, tape.relu(layer.ff1(tape, x)));
    x = tape.add(x, ff);
  }
  return head_(tape, x);
}

std::vector<double> ForecastModel::generate_normalized(std::span<const double> prefix,
                                                       int steps) const {
  std::vector<double> sequence(prefix.begin(), prefix.end());
  std::vector<double> generated;
  generated.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    Tape tape;
    Tensor preds = forward(tape, sequence);
    const double next = preds[preds.size() - 1];
    if (!std::isfinite(next)) {
      throw DivergenceError("generate: non-finite prediction at step " + std::to_string(s),
                            static_cast<double>(s));
    }
    sequence.push_back(next);
    generated.push_back(next);
  }
  return generated;
}

std::vector<double> ForecastModel::generate(std::span<const double> prefix_raw) const {
  if (static_cast<int>(prefix_raw.size()) != cfg_.input_len) {
    throw ContractError("generate: prefix length must equal input_len");
  }
  std::vector<double> prefix;
  prefix.reserve(prefix_raw.size());
  for (double c : prefix_raw) prefix.push_back(normalize(c));
  auto out = generate_normalized(prefix, cfg_.output_len);
  for (auto& v : out) v = denormalize(v);
  return out;
}

double ForecastModel::normalize(double conc) const {
  return (std::log(conc) - norm_mu_) / norm_sd_;
}

double ForecastModel::denormalize(double value) const {
  return std::exp(norm_mu_ + norm_sd_ * value);
}

void ForecastModel::set_norm_stats(double mu, double sd) {
  if (!(sd > 0.0) || !std::isfinite(mu)) throw ContractError("bad normalization stats");
  norm_mu_ = mu;
  norm_sd_ = sd;
}

ForecastModel::TrainReport ForecastModel::train(const data::Dataset1& dataset,
                                                std::uint64_t seed) {
  if (dataset.train.empty()) throw ContractError("train: empty training split");
  const int len = cfg_.seq_len();
  for (const auto& prof : dataset.train) {
    if (static_cast<int>(prof.conc.size()) != len) {
      throw ContractError("train: profile length does not match input_len + output_len");
    }
  }

  // Normalization statistics from the training split only.
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (const auto& prof : dataset.train) {
    for (double c : prof.conc) {
      const double l = std::log(c);
      sum += l;
      sum2 += l * l;
      ++count;
    }
  }
  const double mu = sum / static_cast<double>(count);
  const double var = sum2 / static_cast<double>(count) - mu * mu;
  set_norm_stats(mu, std::sqrt(std::max(var, 1e-12)));

  std::vector<std::vector<double>> norm_train;
  norm_train.reserve(dataset.train.size());
  for (const auto& prof : dataset.train) {
    std::vector<double> row;
    row.reserve(prof.conc.size());
    for (double c : prof.conc) row.push_back(normalize(c));
    norm_train.push_back(std::move(row));
  }

  std::vector<Tensor> params;
  for (auto& [name, t] : named_params()) params.push_back(t);
  adam_ = std::make_shared<ad::Adam>(params, ad::AdamConfig{.lr = cfg_.lr});
  ad::Adam& adam = *adam_;

  Rng rng(derive_seed(seed, "transformer/train"));
  std::vector<int> order(norm_train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batch_fill = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& row = norm_train[static_cast<std::size_t>(order[i])];
      const std::size_t remaining = order.size() - (i - batch_fill);
      const std::size_t batch_n = std::min<std::size_t>(cfg_.batch_size, remaining);

      Tape tape;
      // Teacher forcing: positions 0..len-2 predict values 1..len-1.
      std::span<const double> inputs(row.data(), row.size() - 1);
      Tensor preds = forward(tape, inputs);
      Tensor target = Tensor::from_data({static_cast<int>(row.size()) - 1, 1},
                                        {row.begin() + 1, row.end()});
      Tensor loss = tape.mse_loss(preds, target);
      const double loss_val = loss.value();
      if (!std::isfinite(loss_val)) {
        throw DivergenceError("train: loss diverged at epoch " + std::to_string(epoch),
                              static_cast<double>(epoch));
      }
      epoch_loss += loss_val;
      tape.backward(tape.scale(loss, 1.0 / static_cast<double>(batch_n)));

      if (++batch_fill == batch_n) {
        adam.step();
        batch_fill = 0;
      }
    }
    report.epoch_train_mse.emplace_back(epoch, epoch_loss / static_cast<double>(order.size()));
  }

  // Autoregressive evaluation on the held-out split, against the
  // last-observed-value-carried-forward baseline.
  double sse_raw = 0.0, sse_norm = 0.0, sse_locf = 0.0;
  std::size_t n_pts = 0;
  for (const auto& prof : dataset.test) {
    std::span<const double> prefix(prof.conc.data(), static_cast<std::size_t>(cfg_.input_len));
    const auto pred = generate(prefix);
    const double locf = prof.conc[static_cast<std::size_t>(cfg_.input_len) - 1];
    for (int j = 0; j < cfg_.output_len; ++j) {
      const double truth = prof.conc[static_cast<std::size_t>(cfg_.input_len + j)];
      const double d = pred[static_cast<std::size_t>(j)] - truth;
      sse_raw += d * d;
      const double dn = normalize(pred[static_cast<std::size_t>(j)]) - normalize(truth);
      sse_norm += dn * dn;
      const double dl = locf - truth;
      sse_locf += dl * dl;
      ++n_pts;
    }
  }
  if (n_pts > 0) {
    report.test_mse_raw = sse_raw / static_cast<double>(n_pts);
    report.test_mse_norm = sse_norm / static_cast<double>(n_pts);
    report.baseline_locf_mse_raw = sse_locf / static_cast<double>(n_pts);
  }
  return report;
}

nn::NamedParams ForecastModel::named_params() const {
  nn::NamedParams out;
  embed_.collect(out, "embed");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string lp = "layer" + std::to_string(l);
    for (std::size_t h = 0; h < layers_[l].heads.size(); ++h) {
      const std::string hp = lp + ".head" + std::to_string(h);
      layers_[l].heads[h].wq.collect(out, hp + ".wq");
      layers_[l].heads[h].wk.collect(out, hp + ".wk");
      layers_[l].heads[h].wv.collect(out, hp + ".wv");
    }
    layers_[l].wo.collect(out, lp + ".wo");
    layers_[l].ff1.collect(out, lp + ".ff1");
    layers_[l].ff2.collect(out, lp + ".ff2");
  }
  head_.collect(out, "head");
  return out;
}

void ForecastModel::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.module_name = "transformer";
  ckpt.params = named_params();
  ckpt.extra_scalars = {
      {"n_layers", static_cast<double>(cfg_.n_layers)},
      {"n_heads", static_cast<double>(cfg_.n_heads)},
      {"d_model", static_cast<double>(cfg_.d_model)},
      {"input_len", static_cast<double>(cfg_.input_len)},
      {"output_len", static_cast<double>(cfg_.output_len)},
      {"ff_width", static_cast<double>(cfg_.ff_width)},
      {"norm_mu", norm_mu_},
      {"norm_sd", norm_sd_},
  };
  if (adam_) capture_adam(ckpt, *adam_, ckpt.params);
  save_checkpoint(path, ckpt);
}

ForecastModel ForecastModel::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.module_name != "transformer") {
    throw IoError("checkpoint module is '" + ckpt.module_name + "', expected 'transformer'");
  }
  TransformerConfig cfg;
  cfg.n_layers = static_cast<int>(ckpt.extra_scalars.at("n_layers"));
  cfg.n_heads = static_cast<int>(ckpt.extra_scalars.at("n_heads"));
  cfg.d_model = static_cast<int>(ckpt.extra_scalars.at("d_model"));
  cfg.input_len = static_cast<int>(ckpt.extra_scalars.at("input_len"));
  cfg.output_len = static_cast<int>(ckpt.extra_scalars.at("output_len"));
  cfg.ff_width = static_cast<int>(ckpt.extra_scalars.at("ff_width"));
  ForecastModel model(cfg, /*init_seed=*/0);
  auto live = model.named_params();
  restore_params(ckpt, live);
  model.set_norm_stats(ckpt.extra_scalars.at("norm_mu"), ckpt.extra_scalars.at("norm_sd"));
  if (ckpt.has_optimizer) {
    std::vector<Tensor> params;
    for (auto& [name, t] : live) params.push_back(t);
    model.adam_ = std::make_shared<ad::Adam>(params, ckpt.opt_config);
    restore_adam(ckpt, live, *model.adam_);
  }
  return model;
}

}  // namespace pkml
