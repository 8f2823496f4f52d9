// Copyright 2026 The stlseeker Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "stlseeker/policy_opt.hpp"

namespace stlseeker::testing {

using policy_opt::central_difference;
using policy_opt::relative_error;
using GradientInstance = policy_opt::OracleInstance;

inline GradientInstance make_gradient_instance(std::uint64_t seed) { return policy_opt::make_oracle_instance(seed); }

}  // namespace stlseeker::testing
