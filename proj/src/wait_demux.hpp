#pragma once

#include <deque>
#include <functional>
#include <mutex>
#include <unordered_map>
#include <utility>

namespace scriptdbg::detail {

// waitpid(-1) may return statuses for tids another tracee owns, or for a
// new clone child before its parent's clone event. Those are parked here
// until someone asks for that tid.
class WaitDemux {
 public:
  static WaitDemux& instance();

  // Blocks until `tid` reports. Returns the raw status.
  int wait_for(int tid);
  // Blocks until any tid accepted by `wanted` reports.
  std::pair<int, int> wait_any(const std::function<bool(int)>& wanted);
  // Non-blocking: a parked status for tid, if any.
  bool take_parked(int tid, int& status);
  void forget(int tid);

 private:
  std::mutex mutex_;
  std::unordered_map<int, std::deque<int>> parked_;
};

}  // namespace scriptdbg::detail
