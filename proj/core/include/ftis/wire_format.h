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

#ifndef FTIS_WIRE_FORMAT_H_
#define FTIS_WIRE_FORMAT_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ftis/types.h"

namespace ftis::wire {

// Layout (all integers little-endian):
//
//   offset size field
//   0      1    version (= 1)
//   1      4    origin_node
//   5      4    prompt_id
//   9      2    slot_index
//   11     4    token_count
//   15     1    reserved (= 0)
//   16     8*n  n records of {u32 token_id, f32 logprob}
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 16;
inline constexpr std::size_t kBytesPerToken = 8;

constexpr std::size_t encoded_size(std::size_t token_count) {
  return kHeaderSize + kBytesPerToken * token_count;
}

struct DecodedMessage {
  Completion completion;
  std::uint16_t slot_index = 0;
};

// Throws EncodeError on a positive or non-finite log-prob or on a token
// count that does not fit the header.
std::vector<std::uint8_t> encode(const Completion& completion,
                                 std::uint16_t slot_index);

// Throws DecodeError naming the offending field.
DecodedMessage decode(std::span<const std::uint8_t> bytes);

}  // namespace ftis::wire

#endif  // FTIS_WIRE_FORMAT_H_
