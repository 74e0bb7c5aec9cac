#include "flowmill/cas.hpp"

#include "flowmill/errors.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <system_error>

namespace flowmill {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) {
    raise(Errc::StoreIOError, "cannot open " + p.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in.good() && !in.eof()) {
    raise(Errc::StoreIOError, "read failed for " + p.string());
  }
  return std::move(ss).str();
}

void write_file(const fs::path& p, std::string_view data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) {
    raise(Errc::StoreIOError, "cannot create " + p.string());
  }
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.close();
  if (!out.good()) {
    raise(Errc::StoreIOError, "write failed for " + p.string());
  }
}

std::string unique_suffix() {
  static std::atomic<uint64_t> counter{0};
  thread_local std::mt19937_64 rng{std::random_device{}()};
  std::ostringstream ss;
  ss << ::getpid() << "." << counter.fetch_add(1) << "." << rng();
  return ss.str();
}

void append_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

void append_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

uint32_t take_u32(std::string_view data, size_t& off) {
  if (off + 4 > data.size()) raise(Errc::CorruptObject, "archive truncated");
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(data[off + i]);
  }
  off += 4;
  return v;
}

uint64_t take_u64(std::string_view data, size_t& off) {
  if (off + 8 > data.size()) raise(Errc::CorruptObject, "archive truncated");
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(data[off + i]);
  }
  off += 8;
  return v;
}

constexpr std::string_view kMagic = "FMCP1\n";

// One '/'-separated relative path component.
bool safe_relative_path(const std::string& path) {
  if (path.empty() || path.front() == '/') return false;
  size_t start = 0;
  while (start <= path.size()) {
    size_t end = path.find('/', start);
    if (end == std::string::npos) end = path.size();
    std::string_view seg(path.data() + start, end - start);
    if (seg.empty() || seg == "." || seg == "..") return false;
    start = end + 1;
    if (end == path.size()) break;
  }
  return true;
}

std::vector<std::string> split_segments(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    size_t end = s.find('/', start);
    if (end == std::string::npos) end = s.size();
    out.emplace_back(s.substr(start, end - start));
    if (end == s.size()) break;
    start = end + 1;
  }
  return out;
}

bool segment_match(const std::string& pat, const std::string& seg) {
  // wildcards do not match hidden names unless the pattern spells the dot
  if (!seg.empty() && seg[0] == '.' && (pat.empty() || pat[0] != '.')) {
    return false;
  }
  size_t p = 0, s = 0, star_p = std::string::npos, star_s = 0;
  while (s < seg.size()) {
    if (p < pat.size() && (pat[p] == seg[s] || pat[p] == '?')) {
      ++p;
      ++s;
    } else if (p < pat.size() && pat[p] == '*') {
      star_p = p++;
      star_s = s;
    } else if (star_p != std::string::npos) {
      p = star_p + 1;
      s = ++star_s;
    } else {
      return false;
    }
  }
  while (p < pat.size() && pat[p] == '*') ++p;
  return p == pat.size();
}

bool segments_match(const std::vector<std::string>& pat, size_t pi,
                    const std::vector<std::string>& segs, size_t si) {
  if (pi == pat.size()) return si == segs.size();
  if (pat[pi] == "**") {
    // zero segments, or consume one non-hidden segment
    if (segments_match(pat, pi + 1, segs, si)) return true;
    if (si < segs.size() && (segs[si].empty() || segs[si][0] != '.')) {
      return segments_match(pat, pi, segs, si + 1);
    }
    return false;
  }
  if (si == segs.size()) return false;
  if (!segment_match(pat[pi], segs[si])) return false;
  return segments_match(pat, pi + 1, segs, si + 1);
}

}  // namespace

bool glob_match(const std::string& pattern, const std::string& relpath) {
  return segments_match(split_segments(pattern), 0, split_segments(relpath),
                        0);
}

CasStore::CasStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "objects", ec);
  fs::create_directories(root_ / "tmp", ec);
  if (ec) {
    raise(Errc::StoreIOError, "cannot initialize store at " + root_.string());
  }
}

fs::path CasStore::object_path(const ContentHash& hash) const {
  return root_ / "objects" / hash.hex.substr(0, 2) / hash.hex.substr(2);
}

ContentHash CasStore::put(const ArtifactValue& value) const {
  std::string encoded = canonical_encode(value);
  ContentHash hash = sha256_hex(encoded);
  fs::path target = object_path(hash);
  std::error_code ec;
  if (fs::exists(target, ec)) {
    return hash;
  }
  fs::create_directories(target.parent_path(), ec);
  fs::path tmp = root_ / "tmp" / (hash.hex + "." + unique_suffix());
  write_file(tmp, encoded);
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    raise(Errc::StoreIOError,
          "rename into place failed: " + target.string() + ": " + ec.message());
  }
  return hash;
}

ArtifactValue CasStore::get(const ContentHash& hash) const {
  if (!ContentHash::valid(hash.hex)) {
    raise(Errc::NotFound, "malformed hash \"" + hash.hex + "\"");
  }
  fs::path target = object_path(hash);
  std::error_code ec;
  if (!fs::exists(target, ec)) {
    raise(Errc::NotFound, hash.hex);
  }
  std::string encoded = read_file(target);
  if (sha256_hex(encoded).hex != hash.hex) {
    raise(Errc::CorruptObject, "stored bytes do not hash to " + hash.hex);
  }
  return decode_artifact(encoded);
}

bool CasStore::contains(const ContentHash& hash) const {
  std::error_code ec;
  return ContentHash::valid(hash.hex) && fs::exists(object_path(hash), ec);
}

uint64_t CasStore::object_count() const {
  uint64_t n = 0;
  std::error_code ec;
  for (auto it = fs::recursive_directory_iterator(root_ / "objects", ec);
       it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_regular_file()) ++n;
  }
  return n;
}

CodePackage package_code(const CasStore& store, const fs::path& root,
                         const std::vector<std::string>& includes) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    raise(Errc::StoreIOError, "package root is not a directory: " +
                                  root.string());
  }
  for (const auto& pat : includes) {
    bool bad = pat.empty() || pat.front() == '/';
    for (const auto& seg : split_segments(pat)) {
      if (seg.empty() || seg == "." || seg == "..") bad = true;
    }
    if (bad) {
      raise(Errc::PathError, "pattern escapes root: \"" + pat + "\"");
    }
  }

  std::vector<std::pair<std::string, fs::path>> files;
  for (auto it = fs::recursive_directory_iterator(root);
       it != fs::recursive_directory_iterator(); ++it) {
    if (!it->is_regular_file() || it->is_symlink()) continue;
    std::string rel = fs::relative(it->path(), root).generic_string();
    bool matched = false;
    for (const auto& pat : includes) {
      if (glob_match(pat, rel)) {
        matched = true;
        break;
      }
    }
    if (matched) files.emplace_back(std::move(rel), it->path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::string archive(kMagic);
  append_u32(archive, static_cast<uint32_t>(files.size()));
  uint64_t total = 0;
  for (const auto& [rel, abs] : files) {
    std::string content = read_file(abs);
    auto perms = fs::status(abs).permissions();
    bool exec = (perms & fs::perms::owner_exec) != fs::perms::none;
    append_u32(archive, static_cast<uint32_t>(rel.size()));
    archive += rel;
    archive += static_cast<char>(exec ? 1 : 0);
    append_u64(archive, content.size());
    archive += content;
    total += content.size();
  }

  CodePackage pkg;
  pkg.hash = store.put(ArtifactValue::from_bytes(std::move(archive)));
  pkg.entry_count = files.size();
  pkg.total_bytes = total;
  return pkg;
}

uint64_t unpack_code(const CasStore& store, const ContentHash& pkg,
                     const fs::path& dest) {
  ArtifactValue value = store.get(pkg);
  if (value.tag != ArtifactValue::Tag::Bytes) {
    raise(Errc::CorruptObject, "package object is not a bytes artifact");
  }
  std::error_code ec;
  if (fs::exists(dest, ec)) {
    if (!fs::is_directory(dest, ec) || !fs::is_empty(dest, ec)) {
      raise(Errc::StoreIOError,
            "unpack destination not empty: " + dest.string());
    }
  } else {
    fs::create_directories(dest, ec);
    if (ec) {
      raise(Errc::StoreIOError, "cannot create " + dest.string());
    }
  }

  std::string_view data = value.bytes;
  if (data.substr(0, kMagic.size()) != kMagic) {
    raise(Errc::CorruptObject, "bad archive magic");
  }
  size_t off = kMagic.size();
  uint32_t count = take_u32(data, off);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t path_len = take_u32(data, off);
    if (off + path_len > data.size()) {
      raise(Errc::CorruptObject, "archive truncated");
    }
    std::string rel(data.substr(off, path_len));
    off += path_len;
    if (!safe_relative_path(rel)) {
      raise(Errc::CorruptObject, "archive entry escapes destination: " + rel);
    }
    if (off >= data.size()) raise(Errc::CorruptObject, "archive truncated");
    bool exec = data[off++] != 0;
    uint64_t len = take_u64(data, off);
    if (off + len > data.size()) {
      raise(Errc::CorruptObject, "archive truncated");
    }
    fs::path target = dest / fs::path(rel);
    fs::create_directories(target.parent_path(), ec);
    write_file(target, data.substr(off, len));
    off += len;
    if (exec) {
      fs::permissions(target,
                      fs::perms::owner_exec | fs::perms::group_exec |
                          fs::perms::others_exec,
                      fs::perm_options::add, ec);
    }
  }
  if (off != data.size()) {
    raise(Errc::CorruptObject, "trailing bytes after last archive entry");
  }
  return count;
}

}  // namespace flowmill
