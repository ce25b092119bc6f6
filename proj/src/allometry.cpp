#include "pkml/allometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pkml/checkpoint.hpp"

namespace pkml {

using ad::Tape;
using ad::Tensor;

// ---------------------------------------------------------------------------
// GNNEncoder
// ---------------------------------------------------------------------------

GNNEncoder::GNNEncoder(const AllometryConfig& cfg, Rng& rng) {
  // Eq-form message passing has no bias: h = sigma(W agg(h)).
  rounds_.emplace_back(cfg.node_feat_dim, cfg.z_drug_dim, rng, /*bias=*/false);
  for (int k = 1; k < cfg.gnn_rounds; ++k) {
    rounds_.emplace_back(cfg.z_drug_dim, cfg.z_drug_dim, rng, /*bias=*/false);
  }
}

Tensor GNNEncoder::encode(Tape& tape, const data::MoleculeGraph& graph) const {
  if (graph.n_nodes < 1) throw ContractError("gnn_encode: empty graph");
  const int n = graph.n_nodes;
  const int f = static_cast<int>(graph.features.front().size());

  std::vector<double> feat;
  feat.reserve(static_cast<std::size_t>(n) * f);
  for (const auto& row : graph.features) feat.insert(feat.end(), row.begin(), row.end());
  Tensor h = Tensor::from_data({n, f}, std::move(feat));

  // Mean aggregation over the closed neighborhood as a constant row-stochastic
  // matrix; permutation invariance follows from the symmetric construction.
  const auto nbr = graph.neighbor_lists();
  Tensor agg = Tensor::zeros({n, n});
  for (int v = 0; v < n; ++v) {
    const auto& lst = nbr[static_cast<std::size_t>(v)];
    const double w = 1.0 / static_cast<double>(lst.size());
    for (int u : lst) agg.set(v, u, w);
  }

  for (const auto& round : rounds_) {
    h = tape.relu(round(tape, tape.matmul(agg, h)));
  }

  // Mean-pool readout to [1 x z_drug_dim].
  Tensor pool = Tensor::full({1, n}, 1.0 / static_cast<double>(n));
  return tape.matmul(pool, h);
}

void GNNEncoder::collect(nn::NamedParams& out, const std::string& prefix) const {
  for (std::size_t k = 0; k < rounds_.size(); ++k) {
    rounds_[k].collect(out, prefix + ".round" + std::to_string(k));
  }
}

// ---------------------------------------------------------------------------
// SpeciesTable
// ---------------------------------------------------------------------------

SpeciesTable::SpeciesTable(int n_species, int dim) {
  // Zero initialization: a held-out species keeps the neutral embedding.
  table_ = Tensor::zeros({n_species, dim}, /*requires_grad=*/true);
}

Tensor SpeciesTable::lookup(Tape& tape, int species_index) const {
  if (species_index < 0 || species_index >= size()) {
    throw ContractError("species lookup: unknown index " + std::to_string(species_index));
  }
  return tape.slice_rows(table_, species_index, 1);
}

void SpeciesTable::collect(nn::NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".embeddings", table_);
}

// ---------------------------------------------------------------------------
// NeuralOdeRhs
// ---------------------------------------------------------------------------

NeuralOdeRhs::NeuralOdeRhs(const AllometryConfig& cfg, Rng& rng) {
  const int in_dim = 1 + 1 + cfg.z_drug_dim + cfg.z_species_dim;
  layers_.emplace_back(in_dim, cfg.hidden, rng);
  layers_.emplace_back(cfg.hidden, cfg.hidden, rng);
  layers_.emplace_back(cfg.hidden, cfg.hidden, rng);
  layers_.emplace_back(cfg.hidden, 1, rng);
}

Tensor NeuralOdeRhs::eval(Tape& tape, const Tensor& c, double t, const Tensor& z_drug,
                          const Tensor& z_species) const {
  const int b = c.shape()[0];
  Tensor t_col = Tensor::full({b, 1}, t);
  const Tensor parts[] = {c, t_col, z_drug, z_species};
  Tensor x = tape.concat_cols(parts);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) x = tape.relu(layers_[l](tape, x));
  return layers_.back()(tape, x);
}

void NeuralOdeRhs::zero_init_output() { layers_.back().zero_init(); }

void NeuralOdeRhs::collect(nn::NamedParams& out, const std::string& prefix) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].collect(out, prefix + ".fc" + std::to_string(l));
  }
}

// ---------------------------------------------------------------------------
// integrate_neural
// ---------------------------------------------------------------------------

namespace {

void check_state(const Tensor& y, double t) {
  for (double v : y.data()) {
    if (!std::isfinite(v) || std::abs(v) > 1e6) {
      throw DivergenceError("integrate_neural: state blew up at t=" + std::to_string(t), t);
    }
  }
}

}  // namespace

Tensor integrate_neural(Tape& tape, const TapeRhsFn& rhs, const Tensor& c0,
                        std::span<const double> grid, const pk::SolverConfig& cfg) {
  pk::detail::check_grid(grid);
  if (!(cfg.step > 0.0)) throw ContractError("integrate_neural: step must be positive");
  for (double v : c0.data()) {
    if (!std::isfinite(v)) throw ContractError("integrate_neural: non-finite initial state");
  }

  Tensor y = c0;
  std::vector<Tensor> columns = {y};
  for (std::size_t g = 1; g < grid.size(); ++g) {
    const double gap = grid[g] - grid[g - 1];
    const int n = pk::detail::substep_count(gap, cfg.step);
    const double h = gap / static_cast<double>(n);
    double t = grid[g - 1];
    for (int s = 0; s < n; ++s) {
      if (cfg.method == pk::Method::Euler) {
        Tensor k1 = rhs(tape, y, t);
        y = tape.add(y, tape.scale(k1, h));
      } else {
        // Same arithmetic sequence as the scalar RK4 in pkode, so an injected
        // linear RHS reproduces that solver to machine precision.
        Tensor k1 = rhs(tape, y, t);
        Tensor k2 = rhs(tape, tape.add(y, tape.scale(k1, h / 2.0)), t + h / 2.0);
        Tensor k3 = rhs(tape, tape.add(y, tape.scale(k2, h / 2.0)), t + h / 2.0);
        Tensor k4 = rhs(tape, tape.add(y, tape.scale(k3, h)), t + h);
        Tensor acc = tape.add(k1, tape.scale(k2, 2.0));
        acc = tape.add(acc, tape.scale(k3, 2.0));
        acc = tape.add(acc, k4);
        y = tape.add(y, tape.scale(acc, h / 6.0));
      }
      t += h;
      check_state(y, t);
    }
    columns.push_back(y);
  }
  return tape.concat_cols(columns);
}

// ---------------------------------------------------------------------------
// AllometryModel
// ---------------------------------------------------------------------------

AllometryModel::AllometryModel(const AllometryConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  Rng rng(derive_seed(init_seed, "allometry/init"));
  gnn_ = GNNEncoder(cfg_, rng);
  species_ = SpeciesTable(static_cast<int>(data::species_table().size()), cfg_.z_species_dim);
  rhs_ = NeuralOdeRhs(cfg_, rng);
  // Zero-initialized derivative head: the untrained model predicts constant
  // profiles, which keeps the first unrolled steps well-conditioned.
  rhs_.zero_init_output();
}

std::vector<double> AllometryModel::predict_with_embedding(const data::MoleculeGraph& graph,
                                                           const Tensor& z_species,
                                                           std::span<const double> grid_norm) const {
  Tape tape;
  Tensor z_drug = gnn_.encode(tape, graph);
  Tensor c0 = Tensor::full({1, 1}, 1.0);
  pk::SolverConfig cfg;
  cfg.step = grid_norm[1] - grid_norm[0];
  TapeRhsFn fn = [&](Tape& t, const Tensor& c, double time) {
    return rhs_.eval(t, c, time, z_drug, z_species);
  };
  Tensor traj = integrate_neural(tape, fn, c0, grid_norm, cfg);
  return {traj.data().begin(), traj.data().end()};
}

std::vector<double> AllometryModel::predict_normalized(const data::MoleculeGraph& graph,
                                                       int species_index,
                                                       std::span<const double> grid_norm) const {
  Tape tape;
  Tensor z = species_.lookup(tape, species_index);
  Tensor z_const = Tensor::from_data(z.shape(), {z.data().begin(), z.data().end()});
  return predict_with_embedding(graph, z_const, grid_norm);
}

pk::PKProfile AllometryModel::predict_profile(const data::MoleculeGraph& graph, int species_index,
                                              std::span<const double> grid_hours) const {
  if (species_index < 0 || species_index >= species_.size()) {
    throw ContractError("predict_profile: unknown species " + std::to_string(species_index));
  }
  const double t0 = grid_hours.front();
  const double span = grid_hours.back() - t0;
  std::vector<double> grid_norm;
  grid_norm.reserve(grid_hours.size());
  for (double t : grid_hours) grid_norm.push_back((t - t0) / span);

  pk::PKProfile prof;
  prof.times.assign(grid_hours.begin(), grid_hours.end());
  prof.conc = predict_normalized(graph, species_index, grid_norm);
  prof.meta.drug = graph.drug_id;
  prof.meta.species = data::species_table()[static_cast<std::size_t>(species_index)].name;
  return prof;
}

AllometryModel::LosoReport AllometryModel::train_loso(const data::Dataset3& dataset,
                                                      int held_out_species, std::uint64_t seed) {
  // The training view is materialized before anything else touches the
  // dataset; held-out rows are never read again below.
  struct Row {
    const data::MoleculeGraph* graph;
    int species;
    const std::vector<double>* conc;
  };
  std::vector<Row> view;
  bool saw_held_out = false;
  for (const auto& xp : dataset.profiles) {
    if (xp.species == held_out_species) {
      saw_held_out = true;
      continue;
    }
    view.push_back({&dataset.drugs[static_cast<std::size_t>(xp.drug_id)].graph, xp.species,
                    &xp.profile.conc});
  }
  if (!saw_held_out) {
    throw ContractError("train_loso: held-out species not present in the dataset");
  }
  if (view.empty()) throw ContractError("train_loso: empty training view");

  const std::size_t grid_len = view.front().conc->size();
  std::vector<double> grid_norm(grid_len);
  for (std::size_t i = 0; i < grid_len; ++i) {
    grid_norm[i] = static_cast<double>(i) / static_cast<double>(grid_len - 1);
  }
  pk::SolverConfig solver;
  solver.step = grid_norm[1] - grid_norm[0];

  std::vector<Tensor> params;
  for (auto& [name, t] : named_params()) params.push_back(t);
  adam_ = std::make_shared<ad::Adam>(params, ad::AdamConfig{.lr = cfg_.lr});

  Rng rng(derive_seed(seed, "allometry/train"));
  std::vector<int> order(view.size());
  std::iota(order.begin(), order.end(), 0);

  LosoReport report;
  report.held_out = held_out_species;
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t i = 0; i < order.size();) {
      const std::size_t take = std::min<std::size_t>(cfg_.batch_size, order.size() - i);
      Tape tape;
      std::vector<Tensor> zd_rows, zs_rows;
      std::vector<double> truth;
      truth.reserve(take * grid_len);
      for (std::size_t j = 0; j < take; ++j, ++i) {
        const Row& row = view[static_cast<std::size_t>(order[i])];
        zd_rows.push_back(gnn_.encode(tape, *row.graph));
        zs_rows.push_back(species_.lookup(tape, row.species));
        truth.insert(truth.end(), row.conc->begin(), row.conc->end());
      }
      Tensor z_drug = tape.concat_rows(zd_rows);
      Tensor z_species = tape.concat_rows(zs_rows);
      Tensor c0 = Tensor::full({static_cast<int>(take), 1}, 1.0);
      TapeRhsFn fn = [&](Tape& t, const Tensor& c, double time) {
        return rhs_.eval(t, c, time, z_drug, z_species);
      };
      Tensor traj = integrate_neural(tape, fn, c0, grid_norm, solver);
      Tensor target =
          Tensor::from_data({static_cast<int>(take), static_cast<int>(grid_len)}, std::move(truth));
      Tensor loss = tape.mse_loss(traj, target);
      const double loss_val = loss.value();
      if (!std::isfinite(loss_val)) {
        throw DivergenceError("train_loso: loss diverged at epoch " + std::to_string(epoch),
                              static_cast<double>(epoch));
      }
      epoch_loss += loss_val;
      ++n_batches;
      tape.backward(loss);
      adam_->step();
    }
    report.epoch_loss.emplace_back(epoch, epoch_loss / static_cast<double>(n_batches));
  }

  // Held-out evaluation: true initial condition C(0)=1, untouched species
  // embedding; baseline is the per-timepoint mean across all training rows.
  std::vector<double> baseline(grid_len, 0.0);
  for (const Row& row : view) {
    for (std::size_t i = 0; i < grid_len; ++i) baseline[i] += (*row.conc)[i];
  }
  for (auto& b : baseline) b /= static_cast<double>(view.size());

  // Log-body-weight interpolated embedding between the trained species.
  const auto& species = data::species_table();
  std::vector<int> trained;
  for (const auto& sp : species) {
    if (sp.index != held_out_species) trained.push_back(sp.index);
  }
  Tensor z_interp;
  {
    Tape tape;
    const double w_held = species[static_cast<std::size_t>(held_out_species)].weight_kg;
    const double w0 = species[static_cast<std::size_t>(trained[0])].weight_kg;
    const double w1 = species[static_cast<std::size_t>(trained[1])].weight_kg;
    const double frac = (std::log(w_held) - std::log(w0)) / (std::log(w1) - std::log(w0));
    Tensor z0 = species_.lookup(tape, trained[0]);
    Tensor z1 = species_.lookup(tape, trained[1]);
    Tensor mix = tape.add(tape.scale(z0, 1.0 - frac), tape.scale(z1, frac));
    z_interp = Tensor::from_data(mix.shape(), {mix.data().begin(), mix.data().end()});
  }

  double sse = 0.0, sse_base = 0.0, sse_interp = 0.0;
  std::size_t n_pts = 0;
  for (const auto& xp : dataset.profiles) {
    if (xp.species != held_out_species) continue;
    const auto& graph = dataset.drugs[static_cast<std::size_t>(xp.drug_id)].graph;
    const auto pred = predict_normalized(graph, held_out_species, grid_norm);
    const auto pred_interp = predict_with_embedding(graph, z_interp, grid_norm);
    for (std::size_t i = 0; i < grid_len; ++i) {
      const double truth = xp.profile.conc[i];
      sse += (pred[i] - truth) * (pred[i] - truth);
      sse_base += (baseline[i] - truth) * (baseline[i] - truth);
      sse_interp += (pred_interp[i] - truth) * (pred_interp[i] - truth);
      ++n_pts;
    }
  }
  report.test_mse = sse / static_cast<double>(n_pts);
  report.baseline_mse = sse_base / static_cast<double>(n_pts);
  report.test_mse_weight_interp = sse_interp / static_cast<double>(n_pts);
  return report;
}

nn::NamedParams AllometryModel::named_params() const {
  nn::NamedParams out;
  gnn_.collect(out, "gnn");
  species_.collect(out, "species");
  rhs_.collect(out, "rhs");
  return out;
}

void AllometryModel::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.module_name = "allometry";
  ckpt.params = named_params();
  ckpt.extra_scalars = {
      {"gnn_rounds", static_cast<double>(cfg_.gnn_rounds)},
      {"node_feat_dim", static_cast<double>(cfg_.node_feat_dim)},
      {"z_drug_dim", static_cast<double>(cfg_.z_drug_dim)},
      {"z_species_dim", static_cast<double>(cfg_.z_species_dim)},
      {"hidden", static_cast<double>(cfg_.hidden)},
  };
  if (adam_) capture_adam(ckpt, *adam_, ckpt.params);
  save_checkpoint(path, ckpt);
}

AllometryModel AllometryModel::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.module_name != "allometry") {
    throw IoError("checkpoint module is '" + ckpt.module_name + "', expected 'allometry'");
  }
  AllometryConfig cfg;
  cfg.gnn_rounds = static_cast<int>(ckpt.extra_scalars.at("gnn_rounds"));
  cfg.node_feat_dim = static_cast<int>(ckpt.extra_scalars.at("node_feat_dim"));
  cfg.z_drug_dim = static_cast<int>(ckpt.extra_scalars.at("z_drug_dim"));
  cfg.z_species_dim = static_cast<int>(ckpt.extra_scalars.at("z_species_dim"));
  cfg.hidden = static_cast<int>(ckpt.extra_scalars.at("hidden"));
  AllometryModel model(cfg, /*init_seed=*/0);
  auto live = model.named_params();
  restore_params(ckpt, live);
  if (ckpt.has_optimizer) {
    std::vector<Tensor> params;
    for (auto& [name, t] : live) params.push_back(t);
    model.adam_ = std::make_shared<ad::Adam>(params, ckpt.opt_config);
    restore_adam(ckpt, live, *model.adam_);
  }
  return model;
}

}  // namespace pkml
