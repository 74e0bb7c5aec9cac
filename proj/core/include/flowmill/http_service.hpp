#pragma once

#include "flowmill/metadata.hpp"

#include <memory>
#include <string>

namespace flowmill {

// Read-only HTTP facade over a metadata store, serving JSON mirrors of the
// records:
//   GET /flows                     -> ["flow", ...]
//   GET /flows/{f}/runs            -> [run record, ...] (run_id descending)
//   GET /flows/{f}/runs/{r}        -> run record
//   GET /flows/{f}/runs/{r}/tasks  -> [task record, ...] (task_id ascending)
// Unknown paths and missing records answer 404 with {"error": message}.
// Requests re-read the event log, so live writer activity is visible.
class HttpService {
 public:
  explicit HttpService(const MetadataStore& meta);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Binds `host` and serves on a background thread. port 0 picks a free
  // port. Returns the bound port; throws Error(StoreIOError) when the
  // bind fails.
  int start(const std::string& host, int port);

  // Idempotent; joins the serving thread.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace flowmill
