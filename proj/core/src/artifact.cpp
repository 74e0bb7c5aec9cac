#include "flowmill/artifact.hpp"

#include "flowmill/errors.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <cstring>

namespace flowmill {

namespace {

bool valid_utf8(std::string_view s) {
  size_t i = 0;
  while (i < s.size()) {
    unsigned char c = s[i];
    size_t extra;
    unsigned cp_min;
    if (c < 0x80) {
      i += 1;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp_min = 0x80;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp_min = 0x800;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp_min = 0x10000;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    unsigned cp = c & (0x3F >> extra);
    for (size_t k = 1; k <= extra; ++k) {
      unsigned char cc = s[i + k];
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (cp < cp_min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

void encode_string(const std::string& s, std::string& out) {
  if (!valid_utf8(s)) {
    raise(Errc::EncodingError, "string is not valid UTF-8");
  }
  out += '"';
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\f': out += "\\f"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  out += '"';
}

void encode_double(double d, std::string& out) {
  if (std::isnan(d) || std::isinf(d)) {
    raise(Errc::EncodingError, "non-finite float has no canonical form");
  }
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), d);
  std::string_view sv(buf, res.ptr - buf);
  out.append(sv);
  // shortest form of an integral double reads as an integer; keep the kinds
  // distinguishable on the wire
  if (sv.find('.') == std::string_view::npos &&
      sv.find('e') == std::string_view::npos) {
    out += ".0";
  }
}

void encode_json(const Json& v, std::string& out) {
  switch (v.type()) {
    case Json::value_t::null: out += "null"; break;
    case Json::value_t::boolean: out += v.get<bool>() ? "true" : "false"; break;
    case Json::value_t::number_integer: {
      char buf[24];
      auto res = std::to_chars(buf, buf + sizeof(buf), v.get<int64_t>());
      out.append(buf, res.ptr);
      break;
    }
    case Json::value_t::number_unsigned: {
      char buf[24];
      auto res = std::to_chars(buf, buf + sizeof(buf), v.get<uint64_t>());
      out.append(buf, res.ptr);
      break;
    }
    case Json::value_t::number_float:
      encode_double(v.get<double>(), out);
      break;
    case Json::value_t::string:
      encode_string(v.get_ref<const std::string&>(), out);
      break;
    case Json::value_t::array: {
      out += '[';
      bool first = true;
      for (const auto& item : v) {
        if (!first) out += ',';
        first = false;
        encode_json(item, out);
      }
      out += ']';
      break;
    }
    case Json::value_t::object: {
      // nlohmann objects iterate in std::map order: bytewise-sorted keys
      out += '{';
      bool first = true;
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (!first) out += ',';
        first = false;
        encode_string(it.key(), out);
        out += ':';
        encode_json(it.value(), out);
      }
      out += '}';
      break;
    }
    default:
      raise(Errc::EncodingError, "value kind has no canonical form");
  }
}

bool integral_number(const Json& v) {
  return v.is_number_integer() || v.is_number_unsigned();
}

bool json_equal(const Json& a, const Json& b) {
  if (integral_number(a) && integral_number(b)) {
    if (a.is_number_unsigned() && b.is_number_unsigned()) {
      return a.get<uint64_t>() == b.get<uint64_t>();
    }
    if (a.get<int64_t>() < 0 || b.get<int64_t>() < 0) {
      return !a.is_number_unsigned() && !b.is_number_unsigned() &&
             a.get<int64_t>() == b.get<int64_t>();
    }
    return a.get<uint64_t>() == b.get<uint64_t>();
  }
  if (a.type() != b.type()) return false;
  switch (a.type()) {
    case Json::value_t::number_float: {
      double x = a.get<double>(), y = b.get<double>();
      return std::memcmp(&x, &y, sizeof(double)) == 0;
    }
    case Json::value_t::array: {
      if (a.size() != b.size()) return false;
      for (size_t i = 0; i < a.size(); ++i) {
        if (!json_equal(a[i], b[i])) return false;
      }
      return true;
    }
    case Json::value_t::object: {
      if (a.size() != b.size()) return false;
      for (auto it = a.begin(); it != a.end(); ++it) {
        auto jt = b.find(it.key());
        if (jt == b.end() || !json_equal(it.value(), jt.value())) return false;
      }
      return true;
    }
    default:
      return a == b;
  }
}

}  // namespace

bool ContentHash::valid(std::string_view hex) {
  if (hex.size() != 64) return false;
  for (char c : hex) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

std::string canonical_json(const Json& value) {
  std::string out;
  encode_json(value, out);
  return out;
}

std::string canonical_encode(const ArtifactValue& value) {
  std::string out;
  if (value.tag == ArtifactValue::Tag::Bytes) {
    out = "bytes\n";
    out += value.bytes;
  } else {
    out = "json\n";
    encode_json(value.json, out);
  }
  return out;
}

ArtifactValue decode_artifact(std::string_view encoded) {
  auto nl = encoded.find('\n');
  if (nl == std::string_view::npos) {
    raise(Errc::CorruptObject, "missing tag line");
  }
  std::string_view tag = encoded.substr(0, nl);
  std::string_view payload = encoded.substr(nl + 1);
  if (tag == "bytes") {
    return ArtifactValue::from_bytes(std::string(payload));
  }
  if (tag == "json") {
    try {
      return ArtifactValue::from_json(strict_parse_json(payload));
    } catch (const Error& e) {
      raise(Errc::CorruptObject, std::string("bad json payload: ") + e.what());
    }
  }
  raise(Errc::CorruptObject, "unknown tag \"" + std::string(tag) + "\"");
}

bool artifact_equal(const ArtifactValue& a, const ArtifactValue& b) {
  if (a.tag != b.tag) return false;
  if (a.tag == ArtifactValue::Tag::Bytes) return a.bytes == b.bytes;
  return json_equal(a.json, b.json);
}

ContentHash sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr ||
      EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    raise(Errc::StoreIOError, "SHA-256 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* kHex = "0123456789abcdef";
  std::string hex;
  hex.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xF];
  }
  return ContentHash{std::move(hex)};
}

}  // namespace flowmill
