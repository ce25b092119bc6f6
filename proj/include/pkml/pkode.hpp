#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pkml/errors.hpp"

namespace pkml::pk {

// Parameters of the two-compartment disposition model.
struct TwoCompartmentParams {
  double CL = 0.0;  // clearance, L/h
  double V1 = 0.0;  // central volume, L
  double V2 = 0.0;  // peripheral volume, L
  double Q = 0.0;   // inter-compartmental clearance, L/h

  void validate() const {
    if (!(std::isfinite(CL) && std::isfinite(V1) && std::isfinite(V2) && std::isfinite(Q))) {
      throw ParameterError("two-compartment parameters must be finite");
    }
    if (V1 <= 0.0 || V2 <= 0.0) {
      throw ParameterError("volumes must be positive: V1=" + std::to_string(V1) +
                           " V2=" + std::to_string(V2));
    }
    if (CL < 0.0 || Q < 0.0) {
      throw ParameterError("clearances must be nonnegative: CL=" + std::to_string(CL) +
                           " Q=" + std::to_string(Q));
    }
  }
};

struct ProfileMeta {
  int subject = -1;
  int drug = -1;
  std::string species;
};

// One concentration-time course: times in hours, concentrations in mg/L
// (or normalized units for the cross-species dataset).
struct PKProfile {
  std::vector<double> times;
  std::vector<double> conc;
  double dose = 0.0;  // mg
  ProfileMeta meta;
};

enum class Method { Euler, RK4 };

struct SolverConfig {
  Method method = Method::RK4;
  // Internal step (h). Each inter-grid gap is covered by round(gap/step)
  // equal substeps, so the trajectory lands exactly on the output grid.
  double step = 0.05;
};

// Mass-balance right-hand side for amounts (A1, A2) in mg:
//   dA1/dt = -(CL/V1) A1 - (Q/V1) A1 + (Q/V2) A2
//   dA2/dt =  (Q/V1) A1 - (Q/V2) A2
// Central concentration is A1/V1.
inline std::array<double, 2> two_compartment_rhs(const std::array<double, 2>& state,
                                                 const TwoCompartmentParams& p) {
  p.validate();
  const double a1 = state[0], a2 = state[1];
  const double d1 = -(p.CL / p.V1) * a1 - (p.Q / p.V1) * a1 + (p.Q / p.V2) * a2;
  const double d2 = (p.Q / p.V1) * a1 - (p.Q / p.V2) * a2;
  return {d1, d2};
}

namespace detail {

inline void check_grid(std::span<const double> grid) {
  if (grid.size() < 2) throw ContractError("integrate: grid needs at least two points");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) {
      throw ContractError("integrate: grid must be strictly increasing at index " +
                          std::to_string(i));
    }
  }
}

inline int substep_count(double gap, double step) {
  const double ratio = gap / step;
  int n = static_cast<int>(std::llround(ratio));
  if (n < 1) n = 1;
  return n;
}

}  // namespace detail

// Fixed-step integration sampled exactly on the grid points. The callable is
// rhs(t, y, dydt) with y and dydt spans of equal length.
template <class Rhs>
std::vector<std::vector<double>> integrate(Rhs&& rhs, std::vector<double> y0,
                                           std::span<const double> grid,
                                           const SolverConfig& cfg) {
  detail::check_grid(grid);
  if (!(cfg.step > 0.0)) throw ContractError("integrate: step must be positive");
  if (cfg.step > grid.back() - grid.front()) {
    throw ContractError("integrate: step exceeds the span of the output grid");
  }

  const std::size_t dim = y0.size();
  std::vector<std::vector<double>> out;
  out.reserve(grid.size());
  out.push_back(y0);

  std::vector<double> k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
  std::vector<double> y = std::move(y0);

  for (std::size_t g = 1; g < grid.size(); ++g) {
    const double gap = grid[g] - grid[g - 1];
    const int n = detail::substep_count(gap, cfg.step);
    const double h = gap / static_cast<double>(n);
    double t = grid[g - 1];
    for (int s = 0; s < n; ++s) {
      if (cfg.method == Method::Euler) {
        rhs(t, std::span<const double>(y), std::span<double>(k1));
        for (std::size_t i = 0; i < dim; ++i) y[i] += h * k1[i];
      } else {
        rhs(t, std::span<const double>(y), std::span<double>(k1));
        for (std::size_t i = 0; i < dim; ++i) tmp[i] = y[i] + (h / 2.0) * k1[i];
        rhs(t + h / 2.0, std::span<const double>(tmp), std::span<double>(k2));
        for (std::size_t i = 0; i < dim; ++i) tmp[i] = y[i] + (h / 2.0) * k2[i];
        rhs(t + h / 2.0, std::span<const double>(tmp), std::span<double>(k3));
        for (std::size_t i = 0; i < dim; ++i) tmp[i] = y[i] + h * k3[i];
        rhs(t + h, std::span<const double>(tmp), std::span<double>(k4));
        for (std::size_t i = 0; i < dim; ++i) {
          double acc = k1[i] + 2.0 * k2[i];
          acc = acc + 2.0 * k3[i];
          acc = acc + k4[i];
          y[i] += (h / 6.0) * acc;
        }
      }
      t += h;
      for (std::size_t i = 0; i < dim; ++i) {
        if (!std::isfinite(y[i])) {
          throw DivergenceError("integrate: non-finite state at t=" + std::to_string(t), t);
        }
      }
    }
    out.push_back(y);
  }
  return out;
}

// IV bolus into the central compartment: A1(0)=dose, A2(0)=0; returns the
// central concentration A1(t)/V1 on the grid.
PKProfile simulate_profile(const TwoCompartmentParams& params, double dose,
                           std::span<const double> grid, const SolverConfig& cfg);

// Uniform grid helper: `points` samples on [0, t_end].
std::vector<double> uniform_grid(int points, double t_end);

}  // namespace pkml::pk
