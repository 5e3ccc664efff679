// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-level helpers for building malformed trace files in tests.

#pragma once

#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>

namespace dtr::testing {

inline std::uint32_t u32_at(const std::string& b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[off + i]);
  return v;
}

inline std::string put_u32(std::uint32_t v) {
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  return s;
}

inline std::size_t body_offset(const std::string& bytes) {
  return 12 + u32_at(bytes, 8);
}

// Re-serializes the JSON header after `edit`, keeping the body as is.
inline std::string edit_header(const std::string& bytes,
                               const std::function<void(nlohmann::json&)>& edit) {
  const std::uint32_t len = u32_at(bytes, 8);
  nlohmann::json h = nlohmann::json::parse(bytes.substr(12, len));
  edit(h);
  const std::string text = h.dump();
  return bytes.substr(0, 8) + put_u32(static_cast<std::uint32_t>(text.size())) +
         text + bytes.substr(12 + len);
}

}  // namespace dtr::testing
