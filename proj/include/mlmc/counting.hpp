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

// Exact counts of joint degrees of freedom versus the free conditionals an
// MLM can specify, with a brute-force enumerator as an independent check.

#include <cstddef>
#include <string>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "mlmc/core.hpp"

namespace mlmc::counting {

using BigInt = boost::multiprecision::cpp_int;

struct CountReport {
  std::size_t v = 0;
  std::size_t l = 0;
  std::size_t k = 1;
  BigInt d_joint;
  BigInt n_mlm;
  // n_mlm / d_joint, reduced.
  BigInt excess_num;
  BigInt excess_den;

  std::string excess_decimal(int digits = 6) const;
};

// |V|^L - 1
BigInt joint_dof(std::size_t v, std::size_t l);

// L * (|V|^L - |V|^(L-1))
BigInt mlm_count_single(std::size_t v, std::size_t l);

// C(L, k) * |V|^(L-k) * (|V|-1)^k
BigInt mlm_count_k(std::size_t v, std::size_t l, std::size_t k);

// Walks every mask-position set of size k and every assignment of the
// unmasked positions, adding (|V|-1)^k free entries for each. Rejects inputs
// with v^l > 10^6.
BigInt brute_force_enumerate(std::size_t v, std::size_t l, std::size_t k);

BigInt binomial(std::size_t n, std::size_t k);

CountReport count_report(std::size_t v, std::size_t l, std::size_t k = 1);

nlohmann::ordered_json to_json(const CountReport& report);

}  // namespace mlmc::counting
