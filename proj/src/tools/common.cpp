#include "common.hpp"

#include <signal.h>

#include <charconv>
#include <condition_variable>
#include <mutex>
#include <thread>

namespace scriptdbg::tools {

struct Watchdog::State {
  std::mutex mu;
  std::condition_variable cv;
  bool stop = false;
  std::thread thread;
};

Watchdog::Watchdog(std::optional<std::chrono::duration<double>> timeout) {
  if (!timeout) return;
  state_ = std::make_unique<State>();
  auto deadline = std::chrono::steady_clock::now() +
                  std::chrono::duration_cast<std::chrono::steady_clock::duration>(*timeout);
  state_->thread = std::thread([this, deadline] {
    std::unique_lock lock(state_->mu);
    if (state_->cv.wait_until(lock, deadline, [this] { return state_->stop; })) return;
    fired_.store(true);
    if (int pid = pid_.load(); pid > 0) ::kill(pid, SIGKILL);
  });
}

Watchdog::~Watchdog() {
  if (!state_) return;
  {
    std::lock_guard lock(state_->mu);
    state_->stop = true;
  }
  state_->cv.notify_all();
  state_->thread.join();
}

std::unique_ptr<Debugger> launch(const RunTarget& target, StdioMode stdio) {
  SpawnOptions opts;
  opts.argv = target.argv;
  opts.stdio = stdio;
  if (target.keep_aslr) opts.disable_aslr = false;
  return Debugger::spawn(target.binary, std::move(opts));
}

const LoadedObject& main_object(const std::vector<LoadedObject>& objects,
                                const std::string& binary) {
  std::error_code ec;
  auto want = std::filesystem::canonical(binary, ec);
  for (const auto& o : objects) {
    if (!ec && std::filesystem::equivalent(o.path, want, ec)) return o;
  }
  Error::raise(ErrorCode::BadLocation, "main object " + binary + " is not mapped");
}

void check_timeout(const Watchdog& dog) {
  if (dog.fired()) Error::raise(ErrorCode::ProcessLost, "timeout expired; tracee killed");
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string out(buf, end);
  // Keep integral values recognisable as fractions ("1.0", not "1").
  if (out.find_first_of(".en") == std::string::npos) out += ".0";
  return out;
}

std::string hex(std::uint64_t v) {
  char buf[24];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, 16);
  return "0x" + std::string(buf, end);
}

}  // namespace scriptdbg::tools
