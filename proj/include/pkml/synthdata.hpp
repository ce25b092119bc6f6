#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pkml/pkode.hpp"
#include "pkml/rng.hpp"

namespace pkml::data {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// Column order matches physio.csv: age,height_cm,weight_kg,liver_L,heart_L.
struct PhysioVector {
  double age = 0.0;
  double height_cm = 0.0;
  double weight_kg = 0.0;
  double liver_L = 0.0;
  double heart_L = 0.0;

  std::array<double, 5> as_array() const { return {age, height_cm, weight_kg, liver_L, heart_L}; }
  static PhysioVector from_array(const std::array<double, 5>& a) {
    return {a[0], a[1], a[2], a[3], a[4]};
  }
  // Constraint residual g(x) = V_liver + V_heart - 0.04 W; compliant iff <= 0.
  double constraint_g() const { return liver_L + heart_L - 0.04 * weight_kg; }
};

struct SpeciesSpec {
  std::string name;
  double weight_kg = 0.0;
  int index = -1;
};

// Rat, Dog, Human with reference body weights.
const std::vector<SpeciesSpec>& species_table();
inline constexpr int kRat = 0;
inline constexpr int kDog = 1;
inline constexpr int kHuman = 2;
inline constexpr double kHumanWeightKg = 70.0;

struct MoleculeGraph {
  int drug_id = -1;
  int n_nodes = 0;
  std::vector<std::array<double, 8>> features;   // one row per node
  std::vector<std::pair<int, int>> edges;        // undirected, u < v, no self-loops
  bool connected() const;
  std::vector<std::vector<int>> neighbor_lists() const;  // includes self
};

struct DrugSpec {
  int id = -1;
  MoleculeGraph graph;
  double cl_human = 0.0;  // baseline clearance at the 70 kg reference, L/h
  double v_human = 0.0;   // baseline volume at the reference, L
};

// ---------------------------------------------------------------------------
// Dataset 1: forecasting profiles
// ---------------------------------------------------------------------------

struct GridSpec {
  int points = 50;
  double t_end_h = 24.0;
  std::vector<double> make() const { return pk::uniform_grid(points, t_end_h); }
};

struct Dataset1Config {
  int n = 1000;
  double dose_mg = 100.0;
  GridSpec grid;
  double cv = 0.3;
  double train_frac = 0.8;
  int solver_substeps = 10;
};

struct Dataset1 {
  std::vector<pk::PKProfile> train;
  std::vector<pk::PKProfile> test;
};

// Log-normal medians for the virtual population.
inline constexpr double kMedianCL = 5.0;   // L/h
inline constexpr double kMedianV1 = 30.0;  // L
inline constexpr double kMedianV2 = 50.0;  // L
inline constexpr double kMedianQ = 8.0;    // L/h

// Independent log-normal draws around the medians with the given coefficient
// of variation. cv = 0 degenerates to the medians (test hook).
std::vector<pk::TwoCompartmentParams> sample_patients(int n, std::uint64_t seed, double cv = 0.3);

Dataset1 gen_dataset1(const Dataset1Config& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset 2: physiological vectors
// ---------------------------------------------------------------------------

// Nominal organ volumes as fractions of body weight.
inline constexpr double kLiverFraction = 0.0295;
inline constexpr double kHeartFraction = 0.0059;

// Deterministic core of one physiological vector given weight and the two
// relative volume perturbations (exposed for direct testing).
PhysioVector make_physio(double weight_kg, double height_cm, double age, double eps_liver,
                         double eps_heart);

// Rejection-sampled population: every returned vector satisfies g(x) <= 0.
std::vector<PhysioVector> gen_physio(int n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset 3: cross-species scaling profiles
// ---------------------------------------------------------------------------

struct Dataset3Config {
  int n_drugs = 50;
  GridSpec grid;
  double dose_mg_per_kg = 1.0;
  int solver_substeps = 10;
};

struct XSpeciesProfile {
  int drug_id = -1;
  int species = -1;
  pk::PKProfile profile;  // concentrations normalized to C(0) = 1
};

struct Dataset3 {
  std::vector<DrugSpec> drugs;
  std::vector<XSpeciesProfile> profiles;  // n_drugs x 3 species
};

MoleculeGraph make_drug_graph(int drug_index, std::uint64_t seed);

// Baseline human-scale (CL_h, V_h) as fixed smooth functions of the mean node
// feature vector, so the graph genuinely determines the kinetics.
std::pair<double, double> drug_base_params(const MoleculeGraph& graph);

// Allometric scaling to a species body weight: CL W^0.75, V W^1.0.
std::pair<double, double> scale_to_species(double cl_human, double v_human, double weight_kg);

Dataset3 gen_crossspecies(const Dataset3Config& cfg, std::uint64_t seed);

}  // namespace pkml::data
