// Copyright 2026 The mlmc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "mlmc/counting.hpp"

#include <vector>

#include "mlmc/core.hpp"

namespace mlmc::counting {

namespace {

void check_vl(std::size_t v, std::size_t l) {
  if (v < 2) throw InvalidArgument("vocabulary size must be >= 2");
  if (l < 1) throw InvalidArgument("sequence length must be >= 1");
}

BigInt power(std::size_t base, std::size_t exp) {
  return boost::multiprecision::pow(BigInt(base), static_cast<unsigned>(exp));
}

}  // namespace

BigInt binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  if (k > n - k) k = n - k;
  BigInt r = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    r *= n - k + i;
    r /= i;
  }
  return r;
}

BigInt joint_dof(std::size_t v, std::size_t l) {
  check_vl(v, l);
  return power(v, l) - 1;
}

BigInt mlm_count_single(std::size_t v, std::size_t l) {
  check_vl(v, l);
  return BigInt(l) * (power(v, l) - power(v, l - 1));
}

BigInt mlm_count_k(std::size_t v, std::size_t l, std::size_t k) {
  check_vl(v, l);
  if (k < 1 || k > l) throw InvalidArgument("masked count k must lie in [1, L]");
  return binomial(l, k) * power(v, l - k) * power(v - 1, k);
}

BigInt brute_force_enumerate(std::size_t v, std::size_t l, std::size_t k) {
  check_vl(v, l);
  if (k < 1 || k > l) throw InvalidArgument("masked count k must lie in [1, L]");
  if (power(v, l) > 1'000'000) {
    throw InvalidArgument("brute-force enumeration infeasible: v^l exceeds 10^6");
  }
  const BigInt free_per_marginal = power(v - 1, k);
  BigInt total = 0;
  std::vector<std::size_t> context;
  for (std::uint32_t mask = 0; mask < (1u << l); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    // Odometer over the l - k unmasked positions.
    context.assign(l - k, 0);
    while (true) {
      total += free_per_marginal;
      std::size_t pos = 0;
      while (pos < context.size() && ++context[pos] == v) context[pos++] = 0;
      if (pos == context.size()) break;
    }
  }
  return total;
}

CountReport count_report(std::size_t v, std::size_t l, std::size_t k) {
  CountReport r;
  r.v = v;
  r.l = l;
  r.k = k;
  r.d_joint = joint_dof(v, l);
  r.n_mlm = mlm_count_k(v, l, k);
  const BigInt g = boost::multiprecision::gcd(r.n_mlm, r.d_joint);
  r.excess_num = r.n_mlm / g;
  r.excess_den = r.d_joint / g;
  return r;
}

std::string CountReport::excess_decimal(int digits) const {
  BigInt scale = 1;
  for (int i = 0; i < digits; ++i) scale *= 10;
  // Round half up at the requested precision.
  const BigInt scaled = (excess_num * scale * 2 + excess_den) / (excess_den * 2);
  const BigInt whole = scaled / scale;
  std::string frac = BigInt(scaled % scale).str();
  if (digits == 0) return whole.str();
  frac.insert(0, static_cast<std::size_t>(digits) - frac.size(), '0');
  return whole.str() + "." + frac;
}

nlohmann::ordered_json to_json(const CountReport& r) {
  return nlohmann::ordered_json{
      {"v", r.v},
      {"l", r.l},
      {"k", r.k},
      {"d_joint", r.d_joint.str()},
      {"n_mlm", r.n_mlm.str()},
      {"excess", {{"num", r.excess_num.str()}, {"den", r.excess_den.str()}}},
      {"excess_decimal", r.excess_decimal()},
  };
}

}  // namespace mlmc::counting
