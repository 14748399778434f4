#include "wait_demux.hpp"

#include <scriptdbg/error.hpp>

#include <sys/wait.h>

#include <cerrno>

namespace scriptdbg::detail {

WaitDemux& WaitDemux::instance() {
  static WaitDemux demux;
  return demux;
}

bool WaitDemux::take_parked(int tid, int& status) {
  std::lock_guard lock(mutex_);
  auto it = parked_.find(tid);
  if (it == parked_.end() || it->second.empty()) return false;
  status = it->second.front();
  it->second.pop_front();
  if (it->second.empty()) parked_.erase(it);
  return true;
}

void WaitDemux::forget(int tid) {
  std::lock_guard lock(mutex_);
  parked_.erase(tid);
}

int WaitDemux::wait_for(int tid) {
  int status = 0;
  if (take_parked(tid, status)) return status;
  for (;;) {
    int r = ::waitpid(tid, &status, __WALL);
    if (r == tid) return status;
    if (r < 0 && errno == EINTR) continue;
    Error::raise_errno("waitpid(" + std::to_string(tid) + ")", ErrorCode::ProcessLost);
  }
}

std::pair<int, int> WaitDemux::wait_any(const std::function<bool(int)>& wanted) {
  {
    std::lock_guard lock(mutex_);
    for (auto it = parked_.begin(); it != parked_.end(); ++it) {
      if (!it->second.empty() && wanted(it->first)) {
        int tid = it->first;
        int status = it->second.front();
        it->second.pop_front();
        if (it->second.empty()) parked_.erase(it);
        return {tid, status};
      }
    }
  }
  for (;;) {
    int status = 0;
    int r = ::waitpid(-1, &status, __WALL);
    if (r < 0) {
      if (errno == EINTR) continue;
      Error::raise_errno("waitpid(-1)", ErrorCode::ProcessLost);
    }
    if (wanted(r)) return {r, status};
    std::lock_guard lock(mutex_);
    parked_[r].push_back(status);
  }
}

}  // namespace scriptdbg::detail
