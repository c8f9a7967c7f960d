/**
 * Copyright 2026 The Sevcl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Independent reference computations shared by the unit and acceptance tests.
// Nothing here calls into the library code it is used to check, apart from
// the tensor container and graph used to drive gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sevcl/autodiff.hpp"

namespace sevcl::oracle {

// ---------------------------------------------------------------------------
// Central finite differences

struct GradCheck {
  std::size_t coordinates = 0;
  std::size_t within_tight = 0;  // relative error <= 1e-4
  double max_rel = 0.0;

  double tight_fraction() const {
    return coordinates == 0 ? 1.0 : static_cast<double>(within_tight) / static_cast<double>(coordinates);
  }
  bool passes() const { return tight_fraction() >= 0.99 && max_rel <= 1e-3; }
  void merge(const GradCheck& o) {
    coordinates += o.coordinates;
    within_tight += o.within_tight;
    max_rel = std::max(max_rel, o.max_rel);
  }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-7});
}

/// Compares reverse-mode gradients of `build` against central differences for
/// every coordinate of `params`.
inline GradCheck grad_check(std::vector<ad::Tensor> params, const std::function<ad::Tensor(ad::Graph&)>& build,
                            double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  {
    ad::Graph g;
    ad::Tensor loss = build(g);
    g.backward(loss);
  }
  auto value = [&] {
    ad::Graph g(false);
    return build(g).item();
  };
  GradCheck out;
  for (auto& p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + h;
      const double up = value();
      w[i] = saved - h;
      const double down = value();
      w[i] = saved;
      const double rel = relative_error(analytic[i], (up - down) / (2.0 * h));
      ++out.coordinates;
      if (rel <= 1e-4) ++out.within_tight;
      out.max_rel = std::max(out.max_rel, rel);
    }
  }
  return out;
}

/// Reduces any rank-2 tensor to a scalar through a fixed random linear
/// functional, so that every output coordinate contributes to the gradient.
class Probe {
 public:
  Probe(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> w(cols), u(rows);
    for (double& x : w) x = n(gen);
    for (double& x : u) x = n(gen);
    w_ = ad::Tensor::from({cols, 1}, w);
    u_ = ad::Tensor::from({rows, 1}, u);
  }

  ad::Tensor operator()(ad::Graph& g, const ad::Tensor& y) const {
    return g.matmul(g.matmul(y, w_), u_, true, false);
  }

 private:
  ad::Tensor w_, u_;
};

inline ad::Tensor random_tensor(ad::Shape shape, std::uint64_t seed, double scale = 1.0, bool grad = true) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = n(gen);
  return ad::Tensor::from(std::move(shape), std::move(v), grad);
}

// ---------------------------------------------------------------------------
// Metric oracles

/// Token F1 via explicit count tables.
inline double oracle_token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;
  std::map<std::string, int> cp, cr;
  for (const auto& t : pred) ++cp[t];
  for (const auto& t : ref) ++cr[t];
  int overlap = 0;
  for (const auto& [tok, c] : cp) {
    auto it = cr.find(tok);
    if (it != cr.end()) overlap += std::min(c, it->second);
  }
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

/// LCS length by memoized recursion over suffixes.
inline std::size_t oracle_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = a[i] == b[j] ? 1 + rec(i + 1, j + 1) : std::max(rec(i + 1, j), rec(i, j + 1));
    memo[key] = best;
    return best;
  };
  return rec(0, 0);
}

}  // namespace sevcl::oracle
