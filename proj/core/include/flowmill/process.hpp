#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <sys/types.h>

namespace flowmill {

// exited == false means the child was terminated by `signal`.
struct ExitStatus {
  bool exited = false;
  int code = -1;
  int signal = 0;
};

struct SpawnSpec {
  std::vector<std::string> argv;  // either argv or shell_command, not both
  std::string shell_command;      // run via /bin/sh -c
  std::filesystem::path cwd;
  // overlaid on the inherited environment; values here win
  std::map<std::string, std::string> env;
  std::filesystem::path stdout_file;  // empty: inherit
  std::filesystem::path stderr_file;
  bool stdin_null = false;  // redirect stdin from /dev/null
};

// fork/exec; throws Error(WorkerCrashed) when the process cannot be
// created. An exec failure inside the child surfaces as exit code 127.
pid_t spawn_process(const SpawnSpec& spec);

ExitStatus wait_process(pid_t pid);

}  // namespace flowmill
