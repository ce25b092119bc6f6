#pragma once

// Finite-difference coverage of every differentiable tape operation. Shared
// by the unit tests and the acceptance suite.

#include <string>
#include <vector>

#include "testutil.hpp"

namespace pkml::testutil {

struct OpCheck {
  std::string name;
  GradCheckResult result;
};

// Runs `cases` random gradient checks per operation and reports the worst
// relative error seen for each.
inline std::vector<OpCheck> check_all_ops(int cases, std::uint64_t seed) {
  using ad::Tape;
  using ad::Tensor;
  std::vector<OpCheck> out;

  auto run = [&](const std::string& name, auto make_leaves, LossFn f) {
    GradCheckResult worst;
    for (int c = 0; c < cases; ++c) {
      Rng rng(derive_seed(seed, name + "-" + std::to_string(c)));
      std::vector<Tensor> leaves = make_leaves(rng);
      const GradCheckResult r = grad_check(f, std::move(leaves));
      worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
      worst.checked += r.checked;
    }
    out.push_back({name, worst});
  };

  run(
      "matmul",
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
      },
      [](Tape& t, std::span<const Tensor> w) { return t.sum(t.matmul(w[0], w[1])); });

  run(
      "softmax_rows",
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({2, 5}, rng), random_tensor({2, 5}, rng, false)};
      },
      [](Tape& t, std::span<const Tensor> w) {
        // Project onto a fixed random direction so every Jacobian entry matters.
        return t.sum(t.mul(t.softmax_rows(w[0]), w[1]));
      });

  run(
      "relu",
      [](Rng& rng) {
        // Keep inputs away from the kink where finite differences are invalid.
        Tensor x = random_tensor({3, 3}, rng);
        for (auto& v : x.data_mut())
          if (std::abs(v) < 1e-3) v = 0.1;
        return std::vector<Tensor>{x};
      },
      [](Tape& t, std::span<const Tensor> w) { return t.sum(t.relu(w[0])); });

  run(
      "mse_loss",
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({4, 3}, rng), random_tensor({4, 3}, rng)};
      },
      [](Tape& t, std::span<const Tensor> w) { return t.mse_loss(w[0], w[1]); });

  run(
      "add",
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)};
      },
      [](Tape& t, std::span<const Tensor> w) { return t.mean(t.mul(t.add(w[0], w[1]), w[0])); });

  run(
      "sub",
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)};
      },
      [](Tape& t, std::span<const Tensor> w) { return t.mean(t.mul(t.sub(w[0], w[1]), w[1])); });

  run(
      "mul",
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({2, 4}, rng), random_tensor({2, 4}, rng)};
      },
      [](Tape& t, std::span<const Tensor> w) { return t.sum(t.mul(w[0], w[1])); });

  run(
      "scale",
      [](Rng& rng) { return std::vector<Tensor>{random_tensor({5}, rng)}; },
      [](Tape& t, std::span<const Tensor> w) { return t.sum(t.scale(w[0], -1.7)); });

  run(
      "add_row_vector",
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({4, 3}, rng), random_tensor({3}, rng)};
      },
      [](Tape& t, std::span<const Tensor> w) {
        return t.mse_loss(t.add_row_vector(w[0], w[1]), t.scale(w[0], 0.0));
      });

  run(
      "transpose",
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({3, 4}, rng), random_tensor({4, 3}, rng, false)};
      },
      [](Tape& t, std::span<const Tensor> w) { return t.sum(t.mul(t.transpose(w[0]), w[1])); });

  run(
      "concat_rows",
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({2, 3}, rng), random_tensor({1, 3}, rng),
                                   random_tensor({3, 3}, rng, false)};
      },
      [](Tape& t, std::span<const Tensor> w) {
        const Tensor parts[] = {w[0], w[1]};
        return t.sum(t.mul(t.concat_rows(parts), w[2]));
      });

  run(
      "concat_cols",
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({2, 2}, rng), random_tensor({2, 3}, rng),
                                   random_tensor({2, 5}, rng, false)};
      },
      [](Tape& t, std::span<const Tensor> w) {
        const Tensor parts[] = {w[0], w[1]};
        return t.sum(t.mul(t.concat_cols(parts), w[2]));
      });

  run(
      "slice_rows",
      [](Rng& rng) { return std::vector<Tensor>{random_tensor({5, 3}, rng)}; },
      [](Tape& t, std::span<const Tensor> w) {
        return t.sum(t.mul(t.slice_rows(w[0], 1, 3), t.slice_rows(w[0], 2, 3)));
      });

  run(
      "sum",
      [](Rng& rng) { return std::vector<Tensor>{random_tensor({2, 3}, rng)}; },
      [](Tape& t, std::span<const Tensor> w) { return t.sum(t.mul(w[0], w[0])); });

  run(
      "mean",
      [](Rng& rng) { return std::vector<Tensor>{random_tensor({4, 2}, rng)}; },
      [](Tape& t, std::span<const Tensor> w) { return t.mean(t.mul(w[0], w[0])); });

  return out;
}

}  // namespace pkml::testutil
