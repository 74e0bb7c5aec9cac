#include "flowmill/backends.hpp"

#include <cstdio>
#include <string>

// Task-side harness behind the SIM_REMOTE backend. `supervise` builds the
// sandbox and relays status; `exec` runs the task command inside it.
int main(int argc, char** argv) {
  if (argc != 3) {
    std::fprintf(stderr, "usage: flowmill-worker supervise|exec <attempt-dir>\n");
    return 64;
  }
  const std::string mode = argv[1];
  const std::filesystem::path attempt_dir = argv[2];
  if (mode == "supervise") return flowmill::supervise_main(attempt_dir);
  if (mode == "exec") return flowmill::worker_exec_main(attempt_dir);
  std::fprintf(stderr, "flowmill-worker: unknown mode '%s'\n", mode.c_str());
  return 64;
}
