// Copyright 2026 The ftis Authors
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

#ifndef FTIS_TYPES_H_
#define FTIS_TYPES_H_

#include <cstdint>
#include <string>
#include <vector>

namespace ftis {

using Token = std::uint32_t;
using TokenSeq = std::vector<Token>;
using NodeId = std::uint32_t;
using PromptId = std::uint32_t;

// One sampled response together with the per-token log-probabilities of the
// policy that generated it. This is the unit exchanged between nodes.
struct Completion {
  PromptId prompt_id = 0;
  TokenSeq tokens;
  // Natural-log probabilities at wire precision.
  std::vector<float> gen_logprobs;
  NodeId origin_node = 0;
  // Free-form label of the generating policy. Not transmitted.
  std::string origin_policy_tag;

  friend bool operator==(const Completion&, const Completion&) = default;
};

}  // namespace ftis

#endif  // FTIS_TYPES_H_
