#pragma once

#include "flowmill/artifact.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace flowmill {

// Handle to a stored code archive.
struct CodePackage {
  ContentHash hash;
  uint64_t entry_count = 0;
  uint64_t total_bytes = 0;
};

// Content-addressed, deduplicating object store on the local filesystem.
//
// Layout: <root>/objects/<first 2 hex>/<remaining 62 hex>, one file per
// object holding the canonical encoding. Writes go to <root>/tmp and are
// moved into place with rename(2), so concurrent writers of the same value
// race benignly: every winner leaves identical bytes under the same key.
// Safe for concurrent readers and writers across processes; no locks.
class CasStore {
 public:
  explicit CasStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  // Idempotent: a second put of an equal value writes nothing new.
  ContentHash put(const ArtifactValue& value) const;

  // Verifies the digest on read-back; a mismatch is CorruptObject.
  ArtifactValue get(const ContentHash& hash) const;

  bool contains(const ContentHash& hash) const;

  // Number of objects on disk. Used by dedup checks; O(store).
  uint64_t object_count() const;

 private:
  std::filesystem::path object_path(const ContentHash& hash) const;

  std::filesystem::path root_;
};

// Deterministic archive of a file tree. Matched regular files are sorted by
// relative path (bytewise) and stored with path, executable bit and content
// only. Byte format (little-endian):
//   "FMCP1\n"  (6-byte magic)
//   u32 entry count
//   per entry: u32 path length, path bytes ('/'-separated, relative),
//              u8 exec bit, u64 content length, content bytes
// The archive is stored through `store` as a "bytes" artifact.
//
// Glob patterns: '*' matches within one path segment, '**' matches any
// number of segments, '?' matches one character. Neither '*' nor '**'
// matches a segment starting with '.'. A pattern that is absolute or
// contains a '..' component is a PathError.
CodePackage package_code(const CasStore& store,
                         const std::filesystem::path& root,
                         const std::vector<std::string>& includes);

// Restores a packaged tree byte-identically into `dest`, which must be
// empty (or absent; it is created). Returns the number of entries written.
uint64_t unpack_code(const CasStore& store, const ContentHash& pkg,
                     const std::filesystem::path& dest);

// Exposed for tests: the matcher behind package_code's include patterns.
bool glob_match(const std::string& pattern, const std::string& relpath);

}  // namespace flowmill
