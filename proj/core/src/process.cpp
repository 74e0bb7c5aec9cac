#include "flowmill/process.hpp"

#include "flowmill/errors.hpp"

#include <cstring>
#include <map>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace flowmill {
namespace {

// Inherited environment with the overlay applied, as a NUL-terminated
// block of "K=V" strings. Built before fork: only async-signal-safe calls
// are allowed afterwards in the child.
std::vector<std::string> merged_env(const std::map<std::string, std::string>& overlay) {
  std::map<std::string, std::string> merged;
  for (char** e = environ; e && *e; ++e) {
    const char* eq = std::strchr(*e, '=');
    if (!eq) continue;
    merged[std::string(*e, static_cast<std::size_t>(eq - *e))] = std::string(eq + 1);
  }
  for (const auto& [k, v] : overlay) merged[k] = v;
  std::vector<std::string> block;
  block.reserve(merged.size());
  for (const auto& [k, v] : merged) block.push_back(k + "=" + v);
  return block;
}

}  // namespace

pid_t spawn_process(const SpawnSpec& spec) {
  std::vector<std::string> argv_store;
  if (!spec.shell_command.empty()) {
    argv_store = {"/bin/sh", "-c", spec.shell_command};
  } else {
    argv_store = spec.argv;
  }
  if (argv_store.empty())
    raise(Errc::WorkerCrashed, "nothing to execute");

  std::vector<std::string> env_store = merged_env(spec.env);
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  argv.push_back(nullptr);
  std::vector<char*> envp;
  for (auto& e : env_store) envp.push_back(e.data());
  envp.push_back(nullptr);

  const std::string cwd = spec.cwd.string();
  const std::string out = spec.stdout_file.string();
  const std::string err = spec.stderr_file.string();

  pid_t pid = ::fork();
  if (pid < 0)
    raise(Errc::WorkerCrashed, "fork failed: " + std::string(std::strerror(errno)));
  if (pid == 0) {
    if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) _exit(126);
    if (spec.stdin_null) {
      int fd = ::open("/dev/null", O_RDONLY);
      if (fd < 0 || ::dup2(fd, STDIN_FILENO) < 0) _exit(126);
      ::close(fd);
    }
    if (!out.empty()) {
      int fd = ::open(out.c_str(), O_CREAT | O_WRONLY | O_TRUNC, 0644);
      if (fd < 0 || ::dup2(fd, STDOUT_FILENO) < 0) _exit(126);
      ::close(fd);
    }
    if (!err.empty()) {
      int fd = ::open(err.c_str(), O_CREAT | O_WRONLY | O_TRUNC, 0644);
      if (fd < 0 || ::dup2(fd, STDERR_FILENO) < 0) _exit(126);
      ::close(fd);
    }
    ::execvpe(argv[0], argv.data(), envp.data());
    _exit(127);
  }
  return pid;
}

ExitStatus wait_process(pid_t pid) {
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR)
      raise(Errc::WorkerCrashed, "waitpid failed for " + std::to_string(pid));
  }
  ExitStatus result;
  if (WIFEXITED(status)) {
    result.exited = true;
    result.code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exited = false;
    result.signal = WTERMSIG(status);
    result.code = 128 + result.signal;
  }
  return result;
}

}  // namespace flowmill
