#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "pkml/adam.hpp"
#include "pkml/nn.hpp"
#include "pkml/pkode.hpp"
#include "pkml/synthdata.hpp"
#include "pkml/tensor.hpp"

namespace pkml {

struct AllometryConfig {
  int gnn_rounds = 2;
  int node_feat_dim = 8;
  int z_drug_dim = 16;
  int z_species_dim = 8;
  int hidden = 64;
  int epochs = 300;
  double lr = 0.001;
  int batch_size = 8;
};

// Message-passing encoder: K rounds of h_v <- relu(W mean{h_u : u in N(v) or
// u = v}), then mean-pool over nodes to a fixed-size drug embedding.
class GNNEncoder {
 public:
  GNNEncoder() = default;
  GNNEncoder(const AllometryConfig& cfg, Rng& rng);

  ad::Tensor encode(ad::Tape& tape, const data::MoleculeGraph& graph) const;  // [1 x z_drug_dim]
  void collect(nn::NamedParams& out, const std::string& prefix) const;

 private:
  std::vector<nn::Linear> rounds_;
};

// One trainable embedding row per species.
class SpeciesTable {
 public:
  SpeciesTable() = default;
  SpeciesTable(int n_species, int dim);

  ad::Tensor lookup(ad::Tape& tape, int species_index) const;  // [1 x dim]
  int size() const { return table_.defined() ? table_.shape()[0] : 0; }
  const ad::Tensor& table() const { return table_; }
  void collect(nn::NamedParams& out, const std::string& prefix) const;

 private:
  ad::Tensor table_;
};

// MLP right-hand side of the neural ODE: (C, t, z_drug, z_species) -> dC/dt.
class NeuralOdeRhs {
 public:
  NeuralOdeRhs() = default;
  NeuralOdeRhs(const AllometryConfig& cfg, Rng& rng);

  // c: [B x 1], z_drug: [B x z_drug_dim], z_species: [B x z_species_dim].
  ad::Tensor eval(ad::Tape& tape, const ad::Tensor& c, double t, const ad::Tensor& z_drug,
                  const ad::Tensor& z_species) const;
  void zero_init_output();
  void collect(nn::NamedParams& out, const std::string& prefix) const;

 private:
  std::vector<nn::Linear> layers_;
};

// Batched state-space right-hand side on the tape.
using TapeRhsFn = std::function<ad::Tensor(ad::Tape&, const ad::Tensor& c, double t)>;

// Fixed-step integration unrolled through the tape (discretize-then-
// differentiate): gradients flow to everything the RHS closure touches.
// Returns the trajectory as a [B x grid.size()] tensor whose first column is
// exactly c0. Aborts with DivergenceError when |C| exceeds 1e6.
ad::Tensor integrate_neural(ad::Tape& tape, const TapeRhsFn& rhs, const ad::Tensor& c0,
                            std::span<const double> grid, const pk::SolverConfig& cfg);

class AllometryModel {
 public:
  AllometryModel(const AllometryConfig& cfg, std::uint64_t init_seed);

  const AllometryConfig& config() const { return cfg_; }
  const GNNEncoder& gnn() const { return gnn_; }
  const SpeciesTable& species() const { return species_; }
  const NeuralOdeRhs& rhs() const { return rhs_; }
  NeuralOdeRhs& rhs_mut() { return rhs_; }

  // Normalized-profile prediction for one (drug, species) on a normalized
  // time grid, starting from C(0) = 1.
  std::vector<double> predict_normalized(const data::MoleculeGraph& graph, int species_index,
                                         std::span<const double> grid_norm) const;

  // Public profile interface on an hour grid; concentrations are normalized
  // units with C(0) = 1 (metadata records the species).
  pk::PKProfile predict_profile(const data::MoleculeGraph& graph, int species_index,
                                std::span<const double> grid_hours) const;

  struct LosoReport {
    int held_out = -1;
    double test_mse = 0.0;
    double baseline_mse = 0.0;
    // Secondary diagnostic: held-out embedding interpolated between the
    // trained species along log body weight.
    double test_mse_weight_interp = 0.0;
    std::vector<std::pair<int, double>> epoch_loss;
  };
  LosoReport train_loso(const data::Dataset3& dataset, int held_out_species, std::uint64_t seed);

  nn::NamedParams named_params() const;
  const ad::Adam* optimizer() const { return adam_.get(); }
  void save(const std::filesystem::path& path) const;
  static AllometryModel load(const std::filesystem::path& path);

 private:
  std::vector<double> predict_with_embedding(const data::MoleculeGraph& graph,
                                             const ad::Tensor& z_species,
                                             std::span<const double> grid_norm) const;

  AllometryConfig cfg_;
  GNNEncoder gnn_;
  SpeciesTable species_;
  NeuralOdeRhs rhs_;
  std::shared_ptr<ad::Adam> adam_;
};

}  // namespace pkml
