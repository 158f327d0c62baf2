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

#include "ftis/wire_format.h"

#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "ftis/errors.h"

namespace ftis::wire {
namespace {

void put_u16(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
}

void put_u32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode(const Completion& completion,
                                 std::uint16_t slot_index) {
  const std::size_t n = completion.tokens.size();
  if (completion.gen_logprobs.size() != n) {
    throw EncodeError("encode: " + std::to_string(n) + " tokens but " +
                      std::to_string(completion.gen_logprobs.size()) +
                      " log-probs");
  }
  if (n > std::numeric_limits<std::uint32_t>::max()) {
    throw EncodeError("encode: token_count does not fit in 32 bits");
  }
  std::vector<std::uint8_t> out(encoded_size(n));
  std::uint8_t* p = out.data();
  p[0] = kVersion;
  put_u32(p + 1, completion.origin_node);
  put_u32(p + 5, completion.prompt_id);
  put_u16(p + 9, slot_index);
  put_u32(p + 11, static_cast<std::uint32_t>(n));
  p[15] = 0;
  p += kHeaderSize;
  for (std::size_t t = 0; t < n; ++t, p += kBytesPerToken) {
    const float lp = completion.gen_logprobs[t];
    if (!std::isfinite(lp) || lp > 0.0f) {
      throw EncodeError("encode: logprob " + std::to_string(t) + " = " +
                        std::to_string(lp) + " is not a finite value <= 0");
    }
    put_u32(p, completion.tokens[t]);
    put_u32(p + 4, std::bit_cast<std::uint32_t>(lp));
  }
  return out;
}

DecodedMessage decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) {
    throw DecodeError("header", "buffer of " + std::to_string(bytes.size()) +
                                    " bytes is shorter than the header");
  }
  const std::uint8_t* p = bytes.data();
  if (p[0] != kVersion) {
    throw DecodeError("version",
                      "unsupported version " + std::to_string(p[0]));
  }
  if (p[15] != 0) throw DecodeError("reserved", "reserved byte is not zero");
  const std::uint32_t n = get_u32(p + 11);
  if (bytes.size() != encoded_size(n)) {
    throw DecodeError("token_count",
                      "length mismatch: " + std::to_string(n) +
                          " tokens need " + std::to_string(encoded_size(n)) +
                          " bytes, buffer has " + std::to_string(bytes.size()));
  }

  DecodedMessage msg;
  msg.completion.origin_node = get_u32(p + 1);
  msg.completion.prompt_id = get_u32(p + 5);
  msg.slot_index = get_u16(p + 9);
  msg.completion.tokens.resize(n);
  msg.completion.gen_logprobs.resize(n);
  p += kHeaderSize;
  for (std::uint32_t t = 0; t < n; ++t, p += kBytesPerToken) {
    const float lp = std::bit_cast<float>(get_u32(p + 4));
    if (!std::isfinite(lp) || lp > 0.0f) {
      throw DecodeError("logprob", "record " + std::to_string(t) +
                                       " holds " + std::to_string(lp) +
                                       ", expected a finite value <= 0");
    }
    msg.completion.tokens[t] = get_u32(p);
    msg.completion.gen_logprobs[t] = lp;
  }
  return msg;
}

}  // namespace ftis::wire
