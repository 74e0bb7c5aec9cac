#pragma once

#include "flowmill/strict_json.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace flowmill {

// An artifact is the unit of data flow: an immutable value addressed by the
// SHA-256 of its canonical encoding. Two kinds exist: structured JSON values
// and opaque byte strings.
//
// Canonical encoding (bit-exact, the basis of every ContentHash):
//   ASCII tag ("json" or "bytes"), one 0x0A byte, then the payload.
//   JSON payload canonical form: UTF-8, object keys sorted bytewise, no
//   insignificant whitespace, integers in minimal decimal, floats in
//   shortest round-trip decimal (with ".0" appended when the
//   representation would otherwise read as an integer), strings minimally
//   escaped (only `"`, `\` and control characters).
struct ArtifactValue {
  enum class Tag { Json, Bytes };

  Tag tag = Tag::Json;
  Json json;          // meaningful when tag == Json
  std::string bytes;  // meaningful when tag == Bytes

  static ArtifactValue from_json(Json value) {
    return ArtifactValue{Tag::Json, std::move(value), {}};
  }
  static ArtifactValue from_bytes(std::string data) {
    return ArtifactValue{Tag::Bytes, {}, std::move(data)};
  }
};

// 64 lowercase hex chars of a SHA-256 digest.
struct ContentHash {
  std::string hex;

  bool operator==(const ContentHash&) const = default;
  auto operator<=>(const ContentHash&) const = default;

  static bool valid(std::string_view hex);
};

// Throws Error(EncodingError) on NaN/Infinity floats or invalid UTF-8.
std::string canonical_encode(const ArtifactValue& value);

// Inverse of canonical_encode; input must start with a known tag line.
// Throws Error(CorruptObject) when the framing or payload is malformed.
ArtifactValue decode_artifact(std::string_view encoded);

// Writes the canonical JSON form of a payload (no tag prefix).
std::string canonical_json(const Json& value);

// Semantic equality: the equivalence that canonical_encode is injective
// over. Integer-valued and floating-point numbers are distinct kinds;
// floats compare by bit pattern (so -0.0 != 0.0); objects ignore key order.
bool artifact_equal(const ArtifactValue& a, const ArtifactValue& b);

ContentHash sha256_hex(std::string_view data);

inline ContentHash hash_of(const ArtifactValue& value) {
  return sha256_hex(canonical_encode(value));
}

}  // namespace flowmill
