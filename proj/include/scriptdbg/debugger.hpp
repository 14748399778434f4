#pragma once

#include <scriptdbg/backend.hpp>
#include <scriptdbg/breakpoints.hpp>
#include <scriptdbg/events.hpp>
#include <scriptdbg/maps.hpp>
#include <scriptdbg/process.hpp>
#include <scriptdbg/symbols.hpp>

#include <array>
#include <chrono>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scriptdbg {

struct SpawnOptions {
  std::vector<std::string> argv;  // arguments after argv[0]
  std::optional<std::map<std::string, std::string>> env;
  StdioMode stdio = StdioMode::Pipe;
  // Defaults to default_disable_aslr().
  std::optional<bool> disable_aslr;
};

using EventObserver = std::function<void(const DebugEvent&)>;

// One debuggee and the engine loop driving it.
//
// Tracee-facing calls must come from the thread that created the instance.
// The stdio calls are the exception; they may be used from any thread, which
// is how a caller talks to a tracee while another thread sits in wait().
class Debugger {
 public:
  static std::unique_ptr<Debugger> spawn(const std::string& path, SpawnOptions options = {});
  static std::unique_ptr<Debugger> attach(int pid);
  static std::unique_ptr<Debugger> adopt(std::unique_ptr<Backend> backend);

  Debugger(const Debugger&) = delete;
  Debugger& operator=(const Debugger&) = delete;
  ~Debugger();

  const TraceeHandle& handle() const;
  int pid() const { return handle().pid; }
  // RUNNING between resume() and the wait() that collects the next event.
  TraceeState state() const { return running_ ? TraceeState::Running : handle().state; }
  Arch arch() const { return handle().arch; }
  std::vector<Tid> threads() const { return handle().tids; }
  Backend& backend() { return *backend_; }

  void detach();
  void kill();

  // Process model.
  std::vector<MemoryMap> maps();
  ThreadContext snapshot(Tid tid);
  RegisterFile registers(Tid tid);
  void set_registers(Tid tid, const RegisterFile& regs);

  // Reads hide software-breakpoint patches; writes keep them armed.
  Bytes read_memory(Address addr, std::size_t len);
  void write_memory(Address addr, std::span<const std::uint8_t> data);
  Bytes read_memory_raw(Address addr, std::size_t len);
  void write_memory_raw(Address addr, std::span<const std::uint8_t> data);
  std::uint64_t read_u64(Address addr);

  // Breakpoints and watchpoints share one id space and one slot pool.
  const Breakpoint& set_breakpoint(const Location& location,
                                   BreakpointKind kind = BreakpointKind::Software,
                                   bool one_shot = false, BreakpointCallback callback = {});
  const Watchpoint& set_watchpoint(Address address, std::size_t length, WatchTrigger trigger,
                                   WatchpointCallback callback = {});
  void clear(TrapId id);
  void set_enabled(TrapId id, bool enabled);
  const Breakpoint& breakpoint(TrapId id) const;
  const Watchpoint& watchpoint(TrapId id) const;
  std::vector<TrapId> breakpoint_ids() const;
  std::size_t free_hw_slots() const;
  // Moves tid past the software breakpoint it is parked on.
  void step_over(Tid tid);

  // Syscalls.
  SubscriptionId trace_syscalls(const SyscallSelector& selector, SyscallHandler on_enter = {},
                                SyscallHandler on_exit = {});
  void untrace_syscalls(SubscriptionId id);
  void hijack_syscall(const SyscallRecord& at, std::optional<std::uint64_t> new_nr,
                      const std::array<std::optional<std::uint64_t>, 6>& new_args = {});
  RuleId inject_fault(FaultRule rule);
  void remove_fault(RuleId id);
  // Every syscall whose outcome was forced by a fault rule, ENTER and EXIT.
  const std::vector<SyscallRecord>& injected_records() const { return injected_; }

  void set_signal_policy(SignalPolicy policy);
  const SignalPolicy& signal_policy() const { return policy_; }

  // Sees every delivered event, including those consumed by callbacks.
  void set_event_observer(EventObserver observer) { observer_ = std::move(observer); }
  std::uint64_t events_delivered() const { return seq_; }

  // Execution control. resume() returns immediately; wait() blocks until an
  // event surfaces. Events whose callback asked to continue do not surface,
  // and neither do syscall boundaries no subscription selected.
  void resume();
  DebugEvent wait();
  DebugEvent cont();
  DebugEvent step(Tid tid);
  // Runs until the tracee is gone or a callback returns Directive::Stop.
  RunResult run_until_exit();

  // Tracee stdio (spawn with StdioMode::Pipe only).
  std::size_t stdin_write(std::span<const std::uint8_t> data);
  std::size_t stdin_write(std::string_view text);
  void stdin_close();
  // Blocks until some data is available; an expired timeout returns empty.
  Bytes stdout_read(std::size_t max,
                    std::optional<std::chrono::milliseconds> timeout = std::nullopt);
  Bytes stderr_read(std::size_t max,
                    std::optional<std::chrono::milliseconds> timeout = std::nullopt);
  // Drains until end of stream.
  std::string stdout_read_all();
  std::string stderr_read_all();

  // Symbols.
  std::vector<LoadedObject> objects();
  Address resolve_symbol(std::string_view name,
                         std::optional<std::string_view> object = std::nullopt);
  Address resolve(const Location& location);
  std::optional<AddressInfo> resolve_address(Address addr);
  std::vector<StackFrame> backtrace(Tid tid, std::size_t max_depth = 64);

 private:
  explicit Debugger(std::unique_ptr<Backend> backend);

  struct ThreadInfo {
    StopReason stop_reason = stop::Initial{};
    bool in_syscall = false;
    // Parked on the software breakpoint with this id; stepped over lazily.
    std::optional<TrapId> parked_on;
    std::optional<TrapId> parked_hw;
    std::uint64_t enter_nr = 0;    // as issued; selects subscriptions
    std::uint64_t syscall_nr = 0;  // as executed, after a hijack
    std::array<std::uint64_t, 6> syscall_args{};
    bool hijacked = false;
    std::optional<int> fault_errno;
    std::optional<int> pending_signal;
  };

  struct Subscription {
    SyscallSelector selector;
    std::vector<std::uint64_t> numbers;
    SyscallHandler on_enter;
    SyscallHandler on_exit;
  };

  struct ActiveFault {
    FaultRule rule;
    std::uint64_t nr = 0;
    std::uint64_t matches = 0;
    bool consumed = false;
  };

  struct DispatchScope;
  struct PendingHwHit {
    Tid tid;
    std::size_t slot;
  };

  enum class WaitMode { Surface, RunToExit };
  struct Outcome {
    std::optional<DebugEvent> event;
    // Hand the event to the caller instead of resuming.
    bool surface = false;
  };

  void require_stopped(const char* op) const;
  void require_outside_dispatch(const char* op) const;
  ThreadInfo& thread(Tid tid);

  const RegisterFile& cached_regs(Tid tid);
  void invalidate_regs() { regs_cache_.clear(); }

  void install_patch(Breakpoint& bp);
  void remove_patch(Breakpoint& bp);
  Breakpoint* software_at(Address addr);
  std::size_t allocate_slot();
  void release_slot(std::size_t slot);
  void check_executable(Address addr);

  ResumeMode resume_mode() const;
  void prepare_resume();
  void resume_backend();
  bool step_over_impl(Tid tid, Breakpoint& bp);
  void step_over_hw(Tid tid, TrapId id);
  DebugEvent next_event(WaitMode mode);
  Outcome handle_notice(const RawStopNotice& notice, WaitMode mode);
  Outcome handle_signal(Tid tid, const cause::Signal& sig, WaitMode mode);
  Outcome handle_hw_hit(Tid tid, std::size_t slot, WaitMode mode);
  Outcome handle_breakpoint(Tid tid, Breakpoint& bp, WaitMode mode);
  Outcome handle_syscall(Tid tid, WaitMode mode);
  Outcome handle_exit(const RawStopNotice& notice);
  DebugEvent deliver(Tid tid, StopReason reason);
  bool subscribed(const Subscription& s, std::uint64_t nr) const;
  void forget_exited_threads();
  void reprogram_after_exec();

  FileDescriptor& stream(int which);
  Bytes stream_read(int which, std::size_t max, std::optional<std::chrono::milliseconds> timeout);

  std::unique_ptr<Backend> backend_;
  std::map<Tid, ThreadInfo> threads_;
  std::map<Tid, RegisterFile> regs_cache_;

  TrapId next_trap_id_ = 1;
  std::map<TrapId, Breakpoint> breakpoints_;
  std::map<TrapId, Watchpoint> watchpoints_;
  std::vector<std::optional<TrapId>> slot_owner_;

  SubscriptionId next_subscription_ = 1;
  std::map<SubscriptionId, Subscription> subscriptions_;
  RuleId next_rule_ = 1;
  std::map<RuleId, ActiveFault> faults_;
  std::vector<SyscallRecord> injected_;

  SignalPolicy policy_;
  EventObserver observer_;
  std::uint64_t seq_ = 0;
  bool exited_delivered_ = false;

  // Engine-level run state: resume() can leave the backend stopped when a
  // notice was already collected during a step-over.
  bool running_ = false;
  std::deque<RawStopNotice> early_;
  std::optional<PendingHwHit> early_hw_;

  bool in_dispatch_ = false;
  // The ENTER record currently handed to a syscall handler.
  const SyscallRecord* dispatch_enter_ = nullptr;

  // One lock per stream so a blocked stdin write never holds up a reader.
  std::array<std::mutex, 3> stdio_mutex_;
  StdioChannels stdio_;
  bool piped_ = false;
};

}  // namespace scriptdbg
