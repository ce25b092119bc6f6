#include "pkml/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pkml::data {

const std::vector<SpeciesSpec>& species_table() {
  static const std::vector<SpeciesSpec> table = {
      {"Rat", 0.25, kRat},
      {"Dog", 10.0, kDog},
      {"Human", kHumanWeightKg, kHuman},
  };
  return table;
}

bool MoleculeGraph::connected() const {
  if (n_nodes == 0) return false;
  std::vector<char> seen(static_cast<std::size_t>(n_nodes), 0);
  std::vector<int> stack = {0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (const auto& [a, b] : edges) {
      const int other = (a == v) ? b : (b == v) ? a : -1;
      if (other >= 0 && !seen[static_cast<std::size_t>(other)]) {
        seen[static_cast<std::size_t>(other)] = 1;
        ++count;
        stack.push_back(other);
      }
    }
  }
  return count == n_nodes;
}

std::vector<std::vector<int>> MoleculeGraph::neighbor_lists() const {
  std::vector<std::vector<int>> nbr(static_cast<std::size_t>(n_nodes));
  for (int v = 0; v < n_nodes; ++v) nbr[static_cast<std::size_t>(v)].push_back(v);
  for (const auto& [a, b] : edges) {
    nbr[static_cast<std::size_t>(a)].push_back(b);
    nbr[static_cast<std::size_t>(b)].push_back(a);
  }
  return nbr;
}

// ---------------------------------------------------------------------------
// Dataset 1
// ---------------------------------------------------------------------------

std::vector<pk::TwoCompartmentParams> sample_patients(int n, std::uint64_t seed, double cv) {
  if (n <= 0) throw ContractError("sample_patients: n must be positive");
  Rng rng(derive_seed(seed, "synthdata/patients"));
  std::vector<pk::TwoCompartmentParams> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    pk::TwoCompartmentParams p;
    p.CL = rng.lognormal_median_cv(kMedianCL, cv);
    p.V1 = rng.lognormal_median_cv(kMedianV1, cv);
    p.V2 = rng.lognormal_median_cv(kMedianV2, cv);
    p.Q = rng.lognormal_median_cv(kMedianQ, cv);
    out.push_back(p);
  }
  return out;
}

Dataset1 gen_dataset1(const Dataset1Config& cfg, std::uint64_t seed) {
  if (cfg.n <= 0) throw ContractError("gen_dataset1: n must be positive");
  const auto patients = sample_patients(cfg.n, seed, cfg.cv);
  const auto grid = cfg.grid.make();
  pk::SolverConfig solver;
  solver.step = (grid[1] - grid[0]) / static_cast<double>(cfg.solver_substeps);

  std::vector<pk::PKProfile> profiles;
  profiles.reserve(patients.size());
  for (std::size_t i = 0; i < patients.size(); ++i) {
    pk::PKProfile prof = pk::simulate_profile(patients[i], cfg.dose_mg, grid, solver);
    prof.meta.subject = static_cast<int>(i);
    profiles.push_back(std::move(prof));
  }

  // Seeded shuffle, then an 80/20 split by position.
  std::vector<int> order(profiles.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(seed, "synthdata/dataset1-split"));
  shuffle_rng.shuffle(order);

  const auto n_train =
      static_cast<std::size_t>(std::llround(cfg.train_frac * static_cast<double>(profiles.size())));
  Dataset1 ds;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& prof = profiles[static_cast<std::size_t>(order[i])];
    if (i < n_train) {
      ds.train.push_back(std::move(prof));
    } else {
      ds.test.push_back(std::move(prof));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset 2
// ---------------------------------------------------------------------------

PhysioVector make_physio(double weight_kg, double height_cm, double age, double eps_liver,
                         double eps_heart) {
  PhysioVector v;
  v.age = age;
  v.height_cm = height_cm;
  v.weight_kg = weight_kg;
  // Volume fractions place the population about 2 sigma inside the
  // liver+heart <= 4% of body weight boundary, so rejection sampling keeps
  // the ground truth compliant while generative smoothing can spill over.
  v.liver_L = kLiverFraction * weight_kg * (1.0 + eps_liver);
  v.heart_L = kHeartFraction * weight_kg * (1.0 + eps_heart);
  return v;
}

std::vector<PhysioVector> gen_physio(int n, std::uint64_t seed) {
  if (n <= 0) throw ContractError("gen_physio: n must be positive");
  Rng rng(derive_seed(seed, "synthdata/physio"));
  constexpr int kMaxAttempts = 1000;
  std::vector<PhysioVector> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    bool accepted = false;
    for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
      // Truncated normal weight: resample below the 40 kg floor.
      double w = rng.normal(70.0, 12.0);
      int w_tries = 0;
      while (w < 40.0) {
        if (++w_tries >= kMaxAttempts) {
          throw ConfigError("gen_physio: weight truncation failed to accept after 1000 draws");
        }
        w = rng.normal(70.0, 12.0);
      }
      const double height = 170.0 + 0.3 * (w - 70.0) + rng.normal(0.0, 5.0);
      const double age = rng.uniform(20.0, 70.0);
      const double e1 = rng.normal(0.0, 0.1);
      const double e2 = rng.normal(0.0, 0.1);
      const PhysioVector v = make_physio(w, height, age, e1, e2);
      if (v.constraint_g() <= 0.0) {
        out.push_back(v);
        accepted = true;
      }
    }
    if (!accepted) {
      throw ConfigError("gen_physio: rejection sampling exceeded 1000 attempts for sample " +
                        std::to_string(i));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset 3
// ---------------------------------------------------------------------------

MoleculeGraph make_drug_graph(int drug_index, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "synthdata/drug-" + std::to_string(drug_index)));
  MoleculeGraph g;
  g.drug_id = drug_index;
  g.n_nodes = 5 + static_cast<int>(rng.below(11));  // 5..15
  g.features.resize(static_cast<std::size_t>(g.n_nodes));
  for (auto& row : g.features) {
    for (auto& f : row) f = rng.uniform(-1.0, 1.0);
  }
  // Random spanning tree guarantees connectivity; a few extra edges add
  // structural variety.
  for (int v = 1; v < g.n_nodes; ++v) {
    const int u = static_cast<int>(rng.below(static_cast<std::uint64_t>(v)));
    g.edges.emplace_back(std::min(u, v), std::max(u, v));
  }
  const int extra = g.n_nodes / 2;
  for (int e = 0; e < extra; ++e) {
    const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.n_nodes)));
    const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.n_nodes)));
    if (a == b) continue;
    const auto edge = std::make_pair(std::min(a, b), std::max(a, b));
    if (std::find(g.edges.begin(), g.edges.end(), edge) == g.edges.end()) {
      g.edges.push_back(edge);
    }
  }
  return g;
}

std::pair<double, double> drug_base_params(const MoleculeGraph& graph) {
  // Mean node feature vector, split into two halves driving CL and V.
  double s_cl = 0.0, s_v = 0.0;
  for (const auto& row : graph.features) {
    s_cl += (row[0] + row[1] + row[2] + row[3]) / 4.0;
    s_v += (row[4] + row[5] + row[6] + row[7]) / 4.0;
  }
  s_cl /= static_cast<double>(graph.n_nodes);
  s_v /= static_cast<double>(graph.n_nodes);
  const double cl_human = kMedianCL * std::exp(1.0 * std::tanh(2.5 * s_cl));
  const double v_human = kMedianV1 * std::exp(0.6 * std::tanh(2.5 * s_v));
  return {cl_human, v_human};
}

std::pair<double, double> scale_to_species(double cl_human, double v_human, double weight_kg) {
  const double w_rel = weight_kg / kHumanWeightKg;
  return {cl_human * std::pow(w_rel, 0.75), v_human * std::pow(w_rel, 1.0)};
}

Dataset3 gen_crossspecies(const Dataset3Config& cfg, std::uint64_t seed) {
  if (cfg.n_drugs <= 0) throw ContractError("gen_crossspecies: n_drugs must be positive");
  const auto grid = cfg.grid.make();
  pk::SolverConfig solver;
  solver.step = (grid[1] - grid[0]) / static_cast<double>(cfg.solver_substeps);

  Dataset3 ds;
  ds.drugs.reserve(static_cast<std::size_t>(cfg.n_drugs));
  for (int d = 0; d < cfg.n_drugs; ++d) {
    DrugSpec spec;
    spec.id = d;
    spec.graph = make_drug_graph(d, seed);
    std::tie(spec.cl_human, spec.v_human) = drug_base_params(spec.graph);
    ds.drugs.push_back(std::move(spec));
  }

  for (const auto& drug : ds.drugs) {
    for (const auto& species : species_table()) {
      const auto [cl_s, v_s] = scale_to_species(drug.cl_human, drug.v_human, species.weight_kg);
      // One-compartment kinetics: the two-compartment model with Q = 0 keeps
      // the peripheral compartment empty.
      pk::TwoCompartmentParams p{cl_s, v_s, 1.0, 0.0};
      const double dose = cfg.dose_mg_per_kg * species.weight_kg;
      pk::PKProfile prof = pk::simulate_profile(p, dose, grid, solver);
      const double c0 = prof.conc.front();
      for (auto& c : prof.conc) c /= c0;
      prof.meta.drug = drug.id;
      prof.meta.species = species.name;
      XSpeciesProfile xp;
      xp.drug_id = drug.id;
      xp.species = species.index;
      xp.profile = std::move(prof);
      ds.profiles.push_back(std::move(xp));
    }
  }
  return ds;
}

}  // namespace pkml::data
