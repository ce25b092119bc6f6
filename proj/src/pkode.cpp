#include "pkml/pkode.hpp"

namespace pkml::pk {

PKProfile simulate_profile(const TwoCompartmentParams& params, double dose,
                           std::span<const double> grid, const SolverConfig& cfg) {
  params.validate();
  if (!(dose > 0.0)) throw ParameterError("simulate_profile: dose must be positive");

  auto rhs = [&params](double /*t*/, std::span<const double> y, std::span<double> dydt) {
    const auto d = two_compartment_rhs({y[0], y[1]}, params);
    dydt[0] = d[0];
    dydt[1] = d[1];
  };
  const auto traj = integrate(rhs, std::vector<double>{dose, 0.0}, grid, cfg);

  PKProfile profile;
  profile.times.assign(grid.begin(), grid.end());
  profile.conc.reserve(traj.size());
  for (const auto& state : traj) profile.conc.push_back(state[0] / params.V1);
  profile.dose = dose;
  return profile;
}

std::vector<double> uniform_grid(int points, double t_end) {
  if (points < 2) throw ContractError("uniform_grid: need at least two points");
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    grid[static_cast<std::size_t>(i)] =
        t_end * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  return grid;
}

}  // namespace pkml::pk
