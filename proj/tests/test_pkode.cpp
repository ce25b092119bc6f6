#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pkml/pkode.hpp"
#include "pkml/synthdata.hpp"
#include "testutil.hpp"

using namespace pkml;
using pk::Method;
using pk::SolverConfig;
using pk::TwoCompartmentParams;

namespace {

// Global error of the solver on dy/dt = -y, y(0) = 1 over [0, 1].
double exp_decay_error(Method method, double step) {
  auto rhs = [](double, std::span<const double> y, std::span<double> d) { d[0] = -y[0]; };
  const std::vector<double> grid = {0.0, 1.0};
  SolverConfig cfg{method, step};
  const auto traj = pk::integrate(rhs, {1.0}, grid, cfg);
  return std::abs(traj.back()[0] - std::exp(-1.0));
}

}  // namespace

TEST_CASE("two_compartment_rhs conserves mass when CL=0") {
  TwoCompartmentParams p{0.0, 30.0, 50.0, 8.0};
  const auto d = pk::two_compartment_rhs({40.0, 25.0}, p);
  CHECK(d[0] + d[1] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("two_compartment_rhs zero state gives zero derivatives") {
  TwoCompartmentParams p{5.0, 30.0, 50.0, 8.0};
  const auto d = pk::two_compartment_rhs({0.0, 0.0}, p);
  CHECK(d[0] == 0.0);
  CHECK(d[1] == 0.0);
}

TEST_CASE("two_compartment_rhs rejects nonpositive volumes") {
  CHECK_THROWS_AS(pk::two_compartment_rhs({1.0, 0.0}, {5.0, 0.0, 50.0, 8.0}), ParameterError);
  CHECK_THROWS_AS(pk::two_compartment_rhs({1.0, 0.0}, {5.0, 30.0, -1.0, 8.0}), ParameterError);
}

TEST_CASE("Q=0 reduces to the mono-exponential solution") {
  TwoCompartmentParams p{5.0, 30.0, 50.0, 0.0};
  const auto grid = pk::uniform_grid(25, 12.0);
  const auto prof = pk::simulate_profile(p, 100.0, grid, SolverConfig{Method::RK4, 0.01});
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double analytic = (100.0 / p.V1) * std::exp(-(p.CL / p.V1) * grid[i]);
    CHECK(prof.conc[i] == doctest::Approx(analytic).epsilon(1e-6));
  }
}

TEST_CASE("integrate: zero vector field stays constant") {
  auto rhs = [](double, std::span<const double>, std::span<double> d) { d[0] = 0.0; d[1] = 0.0; };
  const auto grid = pk::uniform_grid(7, 3.0);
  const auto traj = pk::integrate(rhs, {2.5, -1.25}, grid, SolverConfig{});
  for (const auto& y : traj) {
    CHECK(y[0] == 2.5);
    CHECK(y[1] == -1.25);
  }
}

TEST_CASE("integrate: RK4 hits exp(-1) to 1e-8 at step 0.01") {
  CHECK(exp_decay_error(Method::RK4, 0.01) <= 1e-8);
}

TEST_CASE("integrate: RK4 empirical order is 4, Euler order 1") {
  const double e1 = exp_decay_error(Method::RK4, 0.02);
  const double e2 = exp_decay_error(Method::RK4, 0.01);
  const double ratio = e1 / e2;
  CHECK(ratio >= 12.0);
  CHECK(ratio <= 20.0);
  const double order_rk4 = testutil::convergence_order(e1, e2);
  CHECK(order_rk4 >= 3.5);
  CHECK(order_rk4 <= 4.5);

  const double euler_order =
      testutil::convergence_order(exp_decay_error(Method::Euler, 0.01),
                                  exp_decay_error(Method::Euler, 0.005));
  CHECK(euler_order >= 0.8);
  CHECK(euler_order <= 1.2);
}

TEST_CASE("integrate: rejects a non-monotone grid") {
  auto rhs = [](double, std::span<const double> y, std::span<double> d) { d[0] = -y[0]; };
  const std::vector<double> grid = {0.0, 1.0, 0.5};
  CHECK_THROWS_AS(pk::integrate(rhs, {1.0}, grid, SolverConfig{}), ContractError);
}

TEST_CASE("integrate: divergence reports the failure time") {
  // dy/dt = y^2 from y=1 blows up at t=1.
  auto rhs = [](double, std::span<const double> y, std::span<double> d) { d[0] = y[0] * y[0]; };
  const std::vector<double> grid = {0.0, 2.0};
  try {
    pk::integrate(rhs, {1.0}, grid, SolverConfig{Method::RK4, 0.001});
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.when() > 0.9);
    CHECK(e.when() <= 2.0);
  }
}

TEST_CASE("simulate_profile: bolus initial concentration is dose/V1") {
  TwoCompartmentParams p{5.0, 30.0, 50.0, 8.0};
  const auto grid = pk::uniform_grid(50, 24.0);
  const auto prof = pk::simulate_profile(p, 100.0, grid, SolverConfig{});
  CHECK(prof.conc[0] == 100.0 / 30.0);
  CHECK(prof.dose == 100.0);
}

TEST_CASE("simulate_profile: positive and monotonically decreasing central concentration") {
  const auto patients = data::sample_patients(25, 99);
  const auto grid = pk::uniform_grid(50, 24.0);
  SolverConfig cfg{Method::RK4, (grid[1] - grid[0]) / 10.0};
  for (const auto& p : patients) {
    const auto prof = pk::simulate_profile(p, 100.0, grid, cfg);
    for (std::size_t i = 0; i < prof.conc.size(); ++i) {
      CHECK(prof.conc[i] >= 0.0);
      if (i > 0) CHECK(prof.conc[i] < prof.conc[i - 1]);
    }
  }
}

TEST_CASE("simulate_profile: pure function of its arguments") {
  TwoCompartmentParams p{4.2, 28.0, 55.0, 7.0};
  const auto grid = pk::uniform_grid(50, 24.0);
  const auto a = pk::simulate_profile(p, 100.0, grid, SolverConfig{});
  const auto b = pk::simulate_profile(p, 100.0, grid, SolverConfig{});
  CHECK(std::equal(a.conc.begin(), a.conc.end(), b.conc.begin()));
}

TEST_CASE("mass conservation with CL=0 over the full grid") {
  TwoCompartmentParams p{0.0, 30.0, 50.0, 8.0};
  auto rhs = [&p](double, std::span<const double> y, std::span<double> d) {
    const auto dd = pk::two_compartment_rhs({y[0], y[1]}, p);
    d[0] = dd[0];
    d[1] = dd[1];
  };
  const auto grid = pk::uniform_grid(50, 24.0);
  const auto traj = pk::integrate(rhs, {100.0, 0.0}, grid, SolverConfig{Method::RK4, 0.01});
  for (const auto& y : traj) {
    CHECK(std::abs((y[0] + y[1]) - 100.0) / 100.0 <= 1e-9);
  }
}
