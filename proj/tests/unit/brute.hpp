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


#pragma once

// Reference computations for tests. Everything here enumerates sequences
// directly and shares no code with the library beyond reading table entries.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <vector>

namespace brute {

using Seq = std::vector<std::uint32_t>;

inline Seq decode(std::size_t index, std::size_t v, std::size_t l) {
  Seq s(l);
  for (std::size_t p = l; p-- > 0;) {
    s[p] = static_cast<std::uint32_t>(index % v);
    index /= v;
  }
  return s;
}

// p(seq[targets] = values | seq[p] = fixed[p] for every fixed position).
inline double conditional(const std::vector<double>& probs, std::size_t v, std::size_t l,
                          const std::map<std::size_t, std::uint32_t>& fixed,
                          const std::map<std::size_t, std::uint32_t>& target) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const Seq s = decode(i, v, l);
    bool match = true;
    for (const auto& [p, t] : fixed) match &= s[p] == t;
    if (!match) continue;
    den += probs[i];
    bool hit = true;
    for (const auto& [p, t] : target) hit &= s[p] == t;
    if (hit) num += probs[i];
  }
  return num / den;
}

// Positive random table normalized to 1, from the standard library RNG.
inline std::vector<double> random_table(std::size_t v, std::size_t l, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::size_t n = 1;
  for (std::size_t i = 0; i < l; ++i) n *= v;
  std::vector<double> p(n);
  double sum = 0.0;
  for (double& x : p) sum += x = u(gen);
  for (double& x : p) x /= sum;
  return p;
}

}  // namespace brute
