#include <scriptdbg/debugger.hpp>
#include <scriptdbg/error.hpp>
#include <scriptdbg/syscalls.hpp>

#include <poll.h>
#include <pthread.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <ctime>

namespace scriptdbg {

namespace {

std::uint64_t now_ns() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                        std::chrono::steady_clock::now().time_since_epoch())
                                        .count());
}

std::size_t exec_trap_length(Arch arch) { return arch == Arch::Amd64 ? 1 : 4; }

HwTrigger to_hw(WatchTrigger t) {
  return t == WatchTrigger::Write ? HwTrigger::Write : HwTrigger::ReadWrite;
}

bool is_terminal(TraceeState s) {
  return s == TraceeState::Exited || s == TraceeState::Killed || s == TraceeState::Detached;
}

}  // namespace

struct Debugger::DispatchScope {
  explicit DispatchScope(Debugger& d) : d_(d), prev_(d.in_dispatch_) { d_.in_dispatch_ = true; }
  ~DispatchScope() { d_.in_dispatch_ = prev_; }
  Debugger& d_;
  bool prev_;
};

// ---------------------------------------------------------------- lifecycle

std::unique_ptr<Debugger> Debugger::spawn(const std::string& path, SpawnOptions options) {
  SpawnRequest req;
  req.path = path;
  req.argv = std::move(options.argv);
  req.env = std::move(options.env);
  req.stdio = options.stdio;
  req.disable_aslr = options.disable_aslr.value_or(default_disable_aslr());
  return adopt(spawn_ptrace(req));
}

std::unique_ptr<Debugger> Debugger::attach(int pid) { return adopt(attach_ptrace(pid)); }

std::unique_ptr<Debugger> Debugger::adopt(std::unique_ptr<Backend> backend) {
  return std::unique_ptr<Debugger>(new Debugger(std::move(backend)));
}

Debugger::Debugger(std::unique_ptr<Backend> backend) : backend_(std::move(backend)) {
  stdio_ = backend_->take_stdio();
  piped_ = static_cast<bool>(stdio_.out);
  for (Tid tid : backend_->handle().tids) threads_[tid];
  slot_owner_.resize(backend_->hw_slot_capacity());
}

Debugger::~Debugger() {
  try {
    if (backend_->handle().state == TraceeState::Running) backend_->halt();
    if (backend_->handle().state == TraceeState::Stopped) {
      // An attached process outlives us; leave its code as we found it.
      for (auto& [id, bp] : breakpoints_) {
        if (bp.enabled && bp.kind == BreakpointKind::Software) remove_patch(bp);
      }
    }
  } catch (...) {
  }
}

const TraceeHandle& Debugger::handle() const { return backend_->handle(); }

void Debugger::detach() {
  if (in_dispatch_) Error::raise(ErrorCode::InvalidContext, "detach from inside a callback");
  require_stopped("detach");
  for (auto& [id, bp] : breakpoints_) {
    if (!bp.enabled) continue;
    if (bp.kind == BreakpointKind::Software) remove_patch(bp);
    bp.enabled = false;
    bp.slot.reset();
  }
  for (auto& [id, wp] : watchpoints_) wp.enabled = false;
  for (auto& owner : slot_owner_) owner.reset();
  for (auto& [tid, ti] : threads_) {
    if (ti.pending_signal) backend_->queue_signal(tid, *ti.pending_signal);
  }
  backend_->detach();
  threads_.clear();
  invalidate_regs();
}

void Debugger::kill() {
  if (is_terminal(backend_->handle().state)) {
    Error::raise(ErrorCode::InvalidState,
                 "kill: tracee is " + std::string(to_string(backend_->handle().state)));
  }
  if (running_) {
    backend_->halt();
    running_ = false;
  }
  backend_->kill();
  threads_.clear();
  early_.clear();
  early_hw_.reset();
  invalidate_regs();
}

void Debugger::require_stopped(const char* op) const {
  if (running_) Error::raise(ErrorCode::InvalidState, std::string(op) + ": tracee is RUNNING");
  auto s = backend_->handle().state;
  if (s != TraceeState::Stopped) {
    Error::raise(ErrorCode::InvalidState,
                 std::string(op) + ": tracee is " + std::string(to_string(s)));
  }
}

void Debugger::require_outside_dispatch(const char* op) const {
  if (in_dispatch_) {
    Error::raise(ErrorCode::InvalidContext, std::string(op) + " cannot be called from a callback");
  }
}

Debugger::ThreadInfo& Debugger::thread(Tid tid) {
  if (!backend_->handle().has_thread(tid)) {
    Error::raise(ErrorCode::NoSuchThread, "unknown tid " + std::to_string(tid));
  }
  return threads_[tid];
}

// ------------------------------------------------------------ process model

std::vector<MemoryMap> Debugger::maps() {
  require_stopped("maps");
  return read_maps(pid());
}

ThreadContext Debugger::snapshot(Tid tid) {
  auto& ti = thread(tid);
  require_stopped("snapshot");
  ThreadContext ctx;
  ctx.tid = tid;
  ctx.stop_reason = ti.stop_reason;
  ctx.regs = cached_regs(tid);
  ctx.in_syscall = ti.in_syscall;
  return ctx;
}

const RegisterFile& Debugger::cached_regs(Tid tid) {
  auto it = regs_cache_.find(tid);
  if (it != regs_cache_.end()) return it->second;
  return regs_cache_.emplace(tid, backend_->read_registers(tid)).first->second;
}

RegisterFile Debugger::registers(Tid tid) {
  thread(tid);
  require_stopped("registers");
  return cached_regs(tid);
}

void Debugger::set_registers(Tid tid, const RegisterFile& regs) {
  thread(tid);
  require_stopped("set_registers");
  backend_->write_registers(tid, regs);
  regs_cache_.insert_or_assign(tid, regs);
}

Bytes Debugger::read_memory_raw(Address addr, std::size_t len) {
  require_stopped("read_memory");
  return backend_->read_memory_raw(addr, len);
}

void Debugger::write_memory_raw(Address addr, std::span<const std::uint8_t> data) {
  require_stopped("write_memory");
  backend_->write_memory_raw(addr, data);
}

Bytes Debugger::read_memory(Address addr, std::size_t len) {
  Bytes out = read_memory_raw(addr, len);
  Address end = addr + len;
  for (const auto& [id, bp] : breakpoints_) {
    if (!bp.enabled || bp.kind != BreakpointKind::Software) continue;
    for (std::size_t i = 0; i < bp.saved_bytes.size(); ++i) {
      Address a = bp.address + i;
      if (a >= addr && a < end) out[a - addr] = bp.saved_bytes[i];
    }
  }
  return out;
}

void Debugger::write_memory(Address addr, std::span<const std::uint8_t> data) {
  require_stopped("write_memory");
  Bytes patched(data.begin(), data.end());
  Address end = addr + data.size();
  const auto trap = arch_info(arch()).trap_instruction;
  for (auto& [id, bp] : breakpoints_) {
    if (!bp.enabled || bp.kind != BreakpointKind::Software) continue;
    for (std::size_t i = 0; i < bp.saved_bytes.size(); ++i) {
      Address a = bp.address + i;
      if (a < addr || a >= end) continue;
      bp.saved_bytes[i] = patched[a - addr];
      patched[a - addr] = trap[i];
    }
  }
  backend_->write_memory_raw(addr, patched);
}

std::uint64_t Debugger::read_u64(Address addr) {
  Bytes b = read_memory(addr, 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

// -------------------------------------------------------------- breakpoints

void Debugger::install_patch(Breakpoint& bp) {
  const auto trap = arch_info(arch()).trap_instruction;
  bp.saved_bytes = backend_->read_memory_raw(bp.address, trap.size());
  backend_->write_memory_raw(bp.address, trap);
}

void Debugger::remove_patch(Breakpoint& bp) {
  if (!bp.saved_bytes.empty()) backend_->write_memory_raw(bp.address, bp.saved_bytes);
  bp.saved_bytes.clear();
}

Breakpoint* Debugger::software_at(Address addr) {
  for (auto& [id, bp] : breakpoints_) {
    if (bp.address == addr && bp.enabled && bp.kind == BreakpointKind::Software) return &bp;
  }
  return nullptr;
}

std::size_t Debugger::allocate_slot() {
  for (std::size_t i = 0; i < slot_owner_.size(); ++i) {
    if (!slot_owner_[i]) return i;
  }
  Error::raise(ErrorCode::NoFreeSlot,
               "all " + std::to_string(slot_owner_.size()) + " hardware slots are in use");
}

void Debugger::release_slot(std::size_t slot) {
  backend_->set_hw_slot(slot, std::nullopt);
  slot_owner_[slot].reset();
}

std::size_t Debugger::free_hw_slots() const {
  return static_cast<std::size_t>(
      std::count_if(slot_owner_.begin(), slot_owner_.end(), [](const auto& o) { return !o; }));
}

void Debugger::check_executable(Address addr) {
  auto m = find_map(maps(), addr);
  if (!m) Error::raise(ErrorCode::BadLocation, "address is not mapped");
  if (!m->executable) Error::raise(ErrorCode::BadLocation, "address is not in executable memory");
}

const Breakpoint& Debugger::set_breakpoint(const Location& location, BreakpointKind kind,
                                           bool one_shot, BreakpointCallback callback) {
  require_stopped("set_breakpoint");
  Address addr = resolve(location);
  check_executable(addr);
  for (const auto& [id, other] : breakpoints_) {
    if (other.enabled && other.address == addr) {
      Error::raise(ErrorCode::BadLocation,
                   "breakpoint " + std::to_string(id) + " is already enabled at this address");
    }
  }
  Breakpoint bp;
  bp.id = next_trap_id_;
  bp.address = addr;
  bp.kind = kind;
  bp.one_shot = one_shot;
  bp.callback = std::move(callback);
  if (kind == BreakpointKind::Software) {
    install_patch(bp);
  } else {
    std::size_t slot = allocate_slot();
    backend_->set_hw_slot(slot, HardwareTrap{addr, exec_trap_length(arch()), HwTrigger::Execute});
    slot_owner_[slot] = bp.id;
    bp.slot = slot;
  }
  ++next_trap_id_;
  return breakpoints_.emplace(bp.id, std::move(bp)).first->second;
}

const Watchpoint& Debugger::set_watchpoint(Address address, std::size_t length,
                                           WatchTrigger trigger, WatchpointCallback callback) {
  require_stopped("set_watchpoint");
  if (length != 1 && length != 2 && length != 4 && length != 8) {
    Error::raise(ErrorCode::AlignmentError, "watchpoint length must be 1, 2, 4 or 8");
  }
  if (address % length != 0) {
    Error::raise(ErrorCode::AlignmentError, "watchpoint address is not aligned to its length");
  }
  std::size_t slot = allocate_slot();
  backend_->set_hw_slot(slot, HardwareTrap{address, length, to_hw(trigger)});
  Watchpoint wp;
  wp.id = next_trap_id_++;
  wp.address = address;
  wp.length = length;
  wp.trigger = trigger;
  wp.slot = slot;
  wp.callback = std::move(callback);
  slot_owner_[slot] = wp.id;
  return watchpoints_.emplace(wp.id, std::move(wp)).first->second;
}

void Debugger::clear(TrapId id) {
  require_stopped("clear");
  if (auto it = breakpoints_.find(id); it != breakpoints_.end()) {
    auto& bp = it->second;
    if (bp.enabled) {
      if (bp.kind == BreakpointKind::Software) {
        remove_patch(bp);
      } else if (bp.slot) {
        release_slot(*bp.slot);
      }
    }
    for (auto& [tid, ti] : threads_) {
      if (ti.parked_on == id) ti.parked_on.reset();
      if (ti.parked_hw == id) ti.parked_hw.reset();
    }
    breakpoints_.erase(it);
    return;
  }
  if (auto it = watchpoints_.find(id); it != watchpoints_.end()) {
    if (it->second.enabled) release_slot(it->second.slot);
    for (auto& [tid, ti] : threads_) {
      if (ti.parked_hw == id) ti.parked_hw.reset();
    }
    watchpoints_.erase(it);
    return;
  }
  Error::raise(ErrorCode::NoSuchTrap, "no breakpoint or watchpoint with id " + std::to_string(id));
}

void Debugger::set_enabled(TrapId id, bool enabled) {
  require_stopped("set_enabled");
  if (auto it = breakpoints_.find(id); it != breakpoints_.end()) {
    auto& bp = it->second;
    if (bp.enabled == enabled) return;
    if (enabled) {
      for (const auto& [oid, other] : breakpoints_) {
        if (oid != id && other.enabled && other.address == bp.address) {
          Error::raise(ErrorCode::BadLocation, "another breakpoint is enabled at this address");
        }
      }
      if (bp.kind == BreakpointKind::Software) {
        install_patch(bp);
      } else {
        std::size_t slot = allocate_slot();
        backend_->set_hw_slot(slot,
                              HardwareTrap{bp.address, exec_trap_length(arch()), HwTrigger::Execute});
        slot_owner_[slot] = id;
        bp.slot = slot;
      }
    } else {
      if (bp.kind == BreakpointKind::Software) {
        remove_patch(bp);
      } else if (bp.slot) {
        release_slot(*bp.slot);
        bp.slot.reset();
      }
    }
    bp.enabled = enabled;
    return;
  }
  if (auto it = watchpoints_.find(id); it != watchpoints_.end()) {
    auto& wp = it->second;
    if (wp.enabled == enabled) return;
    if (enabled) {
      std::size_t slot = allocate_slot();
      backend_->set_hw_slot(slot, HardwareTrap{wp.address, wp.length, to_hw(wp.trigger)});
      slot_owner_[slot] = id;
      wp.slot = slot;
    } else {
      release_slot(wp.slot);
    }
    wp.enabled = enabled;
    return;
  }
  Error::raise(ErrorCode::NoSuchTrap, "no breakpoint or watchpoint with id " + std::to_string(id));
}

const Breakpoint& Debugger::breakpoint(TrapId id) const {
  auto it = breakpoints_.find(id);
  if (it == breakpoints_.end()) {
    Error::raise(ErrorCode::NoSuchTrap, "no breakpoint with id " + std::to_string(id));
  }
  return it->second;
}

const Watchpoint& Debugger::watchpoint(TrapId id) const {
  auto it = watchpoints_.find(id);
  if (it == watchpoints_.end()) {
    Error::raise(ErrorCode::NoSuchTrap, "no watchpoint with id " + std::to_string(id));
  }
  return it->second;
}

std::vector<TrapId> Debugger::breakpoint_ids() const {
  std::vector<TrapId> out;
  for (const auto& [id, bp] : breakpoints_) out.push_back(id);
  return out;
}

void Debugger::step_over(Tid tid) {
  thread(tid);
  require_stopped("step_over");
  Breakpoint* bp = software_at(cached_regs(tid).pc());
  if (!bp) Error::raise(ErrorCode::InvalidState, "thread is not at an enabled software breakpoint");
  step_over_impl(tid, *bp);
}

// Restore the original instruction, retire it with a single step while every
// other thread stays stopped, then re-arm. Returns false when the step was
// interrupted by some other stop, which is kept for the next wait.
bool Debugger::step_over_impl(Tid tid, Breakpoint& bp) {
  const auto trap = arch_info(arch()).trap_instruction;
  backend_->write_memory_raw(bp.address, bp.saved_bytes);
  invalidate_regs();
  threads_[tid].parked_on.reset();
  backend_->single_step(tid);
  RawStopNotice n = backend_->wait_notice();
  if (std::holds_alternative<cause::Exit>(n.cause) ||
      std::holds_alternative<cause::Killed>(n.cause)) {
    early_.push_back(n);
    return false;
  }
  backend_->write_memory_raw(bp.address, trap);
  if (!std::holds_alternative<cause::Step>(n.cause)) {
    early_.push_back(n);
    return false;
  }
  // A data watchpoint can fire on the stepped instruction; its status rides
  // along with the step trap.
  if (auto slot = backend_->take_hw_hit(tid, cause::Signal{SIGTRAP, TRAP_HWBKPT, 0})) {
    if (slot_owner_[*slot] && watchpoints_.count(*slot_owner_[*slot])) {
      early_hw_ = PendingHwHit{tid, *slot};
      return false;
    }
  }
  return true;
}

// Hardware traps that fire before the instruction retires (AArch64) must be
// lifted for one step or the thread would trap again immediately.
void Debugger::step_over_hw(Tid tid, TrapId id) {
  threads_[tid].parked_hw.reset();
  std::optional<std::size_t> slot;
  HardwareTrap trap;
  if (auto it = breakpoints_.find(id); it != breakpoints_.end() && it->second.slot) {
    slot = it->second.slot;
    trap = HardwareTrap{it->second.address, exec_trap_length(arch()), HwTrigger::Execute};
  } else if (auto wt = watchpoints_.find(id); wt != watchpoints_.end() && wt->second.enabled) {
    slot = wt->second.slot;
    trap = HardwareTrap{wt->second.address, wt->second.length, to_hw(wt->second.trigger)};
  }
  if (!slot) return;
  backend_->set_hw_slot(*slot, std::nullopt);
  invalidate_regs();
  backend_->single_step(tid);
  RawStopNotice n = backend_->wait_notice();
  if (std::holds_alternative<cause::Exit>(n.cause) ||
      std::holds_alternative<cause::Killed>(n.cause)) {
    early_.push_back(n);
    return;
  }
  backend_->set_hw_slot(*slot, trap);
  if (!std::holds_alternative<cause::Step>(n.cause)) early_.push_back(n);
}

// ------------------------------------------------------------------ syscalls

SubscriptionId Debugger::trace_syscalls(const SyscallSelector& selector, SyscallHandler on_enter,
                                        SyscallHandler on_exit) {
  Subscription sub;
  sub.selector = selector;
  if (!selector.all) {
    const auto& table = SyscallTable::builtin();
    for (const auto& name : selector.names) {
      auto nr = table.number(arch(), name);
      if (!nr) Error::raise(ErrorCode::UnknownSyscall, "unknown syscall '" + name + "'");
      sub.numbers.push_back(*nr);
    }
    std::sort(sub.numbers.begin(), sub.numbers.end());
  }
  require_stopped("trace_syscalls");
  sub.on_enter = std::move(on_enter);
  sub.on_exit = std::move(on_exit);
  SubscriptionId id = next_subscription_++;
  subscriptions_.emplace(id, std::move(sub));
  return id;
}

void Debugger::untrace_syscalls(SubscriptionId id) {
  if (!subscriptions_.erase(id)) {
    Error::raise(ErrorCode::NoSuchTrap, "no syscall subscription with id " + std::to_string(id));
  }
}

bool Debugger::subscribed(const Subscription& s, std::uint64_t nr) const {
  return s.selector.all || std::binary_search(s.numbers.begin(), s.numbers.end(), nr);
}

void Debugger::hijack_syscall(const SyscallRecord& at, std::optional<std::uint64_t> new_nr,
                              const std::array<std::optional<std::uint64_t>, 6>& new_args) {
  if (!in_dispatch_ || !dispatch_enter_ || at.direction != SyscallDirection::Enter ||
      at.seq != dispatch_enter_->seq) {
    Error::raise(ErrorCode::InvalidContext,
                 "hijack_syscall is only valid inside the on_enter handler of that syscall");
  }
  auto& ti = thread(at.tid);
  if (ti.fault_errno) {
    Error::raise(ErrorCode::RuleConflict, "syscall is already rewritten by a fault rule");
  }
  RegisterFile regs = cached_regs(at.tid);
  if (new_nr) {
    regs.set(Role::SyscallNr, *new_nr);
    ti.syscall_nr = *new_nr;
  }
  for (std::size_t i = 0; i < new_args.size(); ++i) {
    if (!new_args[i]) continue;
    regs.set(syscall_arg_role(i), *new_args[i]);
    ti.syscall_args[i] = *new_args[i];
  }
  set_registers(at.tid, regs);
  ti.hijacked = true;
}

RuleId Debugger::inject_fault(FaultRule rule) {
  if (rule.errno_value <= 0 || rule.errno_value > 4095) {
    Error::raise(ErrorCode::RuleConflict, "errno_value must be in 1..4095");
  }
  if (rule.nth && *rule.nth == 0) Error::raise(ErrorCode::RuleConflict, "nth counts from 1");
  std::uint64_t nr = 0;
  if (const auto* name = std::get_if<std::string>(&rule.syscall)) {
    auto found = SyscallTable::builtin().number(arch(), *name);
    if (!found) Error::raise(ErrorCode::UnknownSyscall, "unknown syscall '" + *name + "'");
    nr = *found;
  } else {
    nr = std::get<std::uint64_t>(rule.syscall);
  }
  for (const auto& [id, f] : faults_) {
    if (f.consumed || f.nr != nr || f.rule.predicate || rule.predicate) continue;
    if (!f.rule.nth || !rule.nth || *f.rule.nth == *rule.nth) {
      Error::raise(ErrorCode::RuleConflict,
                   "fault rule " + std::to_string(id) + " already covers this occurrence");
    }
  }
  RuleId id = next_rule_++;
  faults_.emplace(id, ActiveFault{std::move(rule), nr, 0, false});
  return id;
}

void Debugger::remove_fault(RuleId id) {
  if (!faults_.erase(id)) {
    Error::raise(ErrorCode::NoSuchTrap, "no fault rule with id " + std::to_string(id));
  }
}

// ------------------------------------------------------------------- signals

void Debugger::set_signal_policy(SignalPolicy policy) {
  for (const auto& [signo, rule] : policy.rules()) {
    if (signo == SIGKILL || signo == SIGSTOP) {
      Error::raise(ErrorCode::PolicyError, "SIGKILL and SIGSTOP cannot be intercepted");
    }
    if (rule.action == SignalAction::Callback && !rule.handler) {
      Error::raise(ErrorCode::PolicyError, "callback rule without a handler");
    }
  }
  policy_ = std::move(policy);
}

// ---------------------------------------------------------------- execution

ResumeMode Debugger::resume_mode() const {
  if (!subscriptions_.empty()) return ResumeMode::SyscallStop;
  for (const auto& [id, f] : faults_) {
    if (!f.consumed) return ResumeMode::SyscallStop;
  }
  // A faulted syscall still needs its exit stop to plant the error.
  for (const auto& [tid, ti] : threads_) {
    if (ti.fault_errno) return ResumeMode::SyscallStop;
  }
  return ResumeMode::Continue;
}

void Debugger::prepare_resume() {
  for (auto& [tid, ti] : threads_) {
    if (!early_.empty() || early_hw_) return;
    if (ti.parked_on) {
      auto it = breakpoints_.find(*ti.parked_on);
      ti.parked_on.reset();
      if (it == breakpoints_.end() || !it->second.enabled ||
          it->second.kind != BreakpointKind::Software) {
        continue;
      }
      if (cached_regs(tid).pc() != it->second.address) continue;
      step_over_impl(tid, it->second);
    }
    if (ti.parked_hw) step_over_hw(tid, *ti.parked_hw);
  }
}

void Debugger::resume_backend() {
  prepare_resume();
  if (!early_.empty() || early_hw_) return;
  ResumeMode mode = resume_mode();
  for (auto& [tid, ti] : threads_) {
    if (ti.pending_signal) {
      backend_->queue_signal(tid, *ti.pending_signal);
      ti.pending_signal.reset();
    }
    // Without syscall stops the exit of an entered syscall goes unseen.
    if (mode == ResumeMode::Continue) ti.in_syscall = false;
  }
  invalidate_regs();
  backend_->resume(mode);
}

void Debugger::resume() {
  require_outside_dispatch("resume");
  require_stopped("resume");
  running_ = true;
  try {
    resume_backend();
  } catch (...) {
    running_ = backend_->handle().state == TraceeState::Running;
    throw;
  }
}

DebugEvent Debugger::wait() {
  require_outside_dispatch("wait");
  if (!running_) {
    Error::raise(ErrorCode::InvalidState,
                 "wait: tracee is " + std::string(to_string(backend_->handle().state)));
  }
  return next_event(WaitMode::Surface);
}

DebugEvent Debugger::cont() {
  resume();
  return wait();
}

DebugEvent Debugger::next_event(WaitMode mode) {
  for (;;) {
    Outcome out;
    try {
      if (early_hw_) {
        auto hit = *early_hw_;
        early_hw_.reset();
        running_ = false;
        out = handle_hw_hit(hit.tid, hit.slot, mode);
      } else {
        RawStopNotice n;
        if (!early_.empty()) {
          n = early_.front();
          early_.pop_front();
        } else {
          n = backend_->wait_notice();
        }
        running_ = false;
        out = handle_notice(n, mode);
      }
    } catch (...) {
      running_ = false;
      throw;
    }
    // A callback may have killed the tracee.
    auto s = backend_->handle().state;
    if (!out.event && is_terminal(s) && !exited_delivered_) {
      RawStopNotice gone{pid(), cause::Killed{SIGKILL}};
      if (s == TraceeState::Exited) gone.cause = cause::Exit{handle().exit_code.value_or(0)};
      out = handle_exit(gone);
    } else if (out.event && is_terminal(s) && !exited_delivered_) {
      RawStopNotice gone{pid(), cause::Killed{handle().term_signal.value_or(SIGKILL)}};
      if (s == TraceeState::Exited) gone.cause = cause::Exit{handle().exit_code.value_or(0)};
      return *handle_exit(gone).event;
    }
    if (out.event && out.surface) return *out.event;
    running_ = true;
    try {
      resume_backend();
    } catch (...) {
      running_ = backend_->handle().state == TraceeState::Running;
      throw;
    }
  }
}

DebugEvent Debugger::deliver(Tid tid, StopReason reason) {
  DebugEvent ev{tid, std::move(reason), ++seq_, now_ns()};
  if (observer_) observer_(ev);
  return ev;
}

Debugger::Outcome Debugger::handle_notice(const RawStopNotice& n, WaitMode mode) {
  if (threads_.size() != backend_->handle().tids.size()) forget_exited_threads();
  return std::visit(
      [&](const auto& c) -> Outcome {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, cause::Exit> || std::is_same_v<T, cause::Killed>) {
          return handle_exit(n);
        } else if constexpr (std::is_same_v<T, cause::SyscallTrap>) {
          return handle_syscall(n.tid, mode);
        } else if constexpr (std::is_same_v<T, cause::Signal>) {
          return handle_signal(n.tid, c, mode);
        } else if constexpr (std::is_same_v<T, cause::Clone>) {
          threads_[c.new_tid];
          threads_[n.tid].stop_reason = stop::ThreadCreated{c.new_tid};
          deliver(n.tid, stop::ThreadCreated{c.new_tid});
          return {};
        } else if constexpr (std::is_same_v<T, cause::Exec>) {
          reprogram_after_exec();
          return {};
        } else {
          // Stray step completion (a step-over interrupted earlier).
          return {};
        }
      },
      n.cause);
}

void Debugger::forget_exited_threads() {
  const auto& h = backend_->handle();
  std::erase_if(threads_, [&](const auto& kv) { return !h.has_thread(kv.first); });
  for (Tid tid : h.tids) threads_[tid];
}

void Debugger::reprogram_after_exec() {
  // The old image is gone, and so are its patches and debug registers.
  for (auto& [id, bp] : breakpoints_) {
    if (bp.kind == BreakpointKind::Software) {
      bp.enabled = false;
      bp.saved_bytes.clear();
    }
  }
  for (auto& [tid, ti] : threads_) {
    ti.parked_on.reset();
    ti.parked_hw.reset();
  }
  for (std::size_t slot = 0; slot < slot_owner_.size(); ++slot) {
    if (!slot_owner_[slot]) continue;
    TrapId id = *slot_owner_[slot];
    if (auto it = breakpoints_.find(id); it != breakpoints_.end()) {
      backend_->set_hw_slot(slot, HardwareTrap{it->second.address, exec_trap_length(arch()),
                                               HwTrigger::Execute});
    } else if (auto wt = watchpoints_.find(id); wt != watchpoints_.end()) {
      backend_->set_hw_slot(
          slot, HardwareTrap{wt->second.address, wt->second.length, to_hw(wt->second.trigger)});
    }
  }
  invalidate_regs();
}

Debugger::Outcome Debugger::handle_exit(const RawStopNotice& n) {
  stop::Exited ex;
  if (const auto* e = std::get_if<cause::Exit>(&n.cause)) {
    ex.code = e->code;
  } else {
    int sig = std::get<cause::Killed>(n.cause).signo;
    ex.code = 128 + sig;
    ex.signal = sig;
  }
  running_ = false;
  early_.clear();
  early_hw_.reset();
  threads_.clear();
  invalidate_regs();
  if (exited_delivered_) return {};
  exited_delivered_ = true;
  return {deliver(pid(), ex), true};
}

Debugger::Outcome Debugger::handle_signal(Tid tid, const cause::Signal& sig, WaitMode mode) {
  if (sig.signo == SIGTRAP) {
    const auto& ai = arch_info(arch());
    if (sig.code == SI_KERNEL || sig.code == TRAP_BRKPT) {
      Address pc = cached_regs(tid).pc();
      Address at = pc - ai.trap_pc_advance;
      if (Breakpoint* bp = software_at(at)) {
        if (ai.trap_pc_advance != 0) {
          RegisterFile regs = cached_regs(tid);
          regs.set(Role::Pc, at);
          backend_->write_registers(tid, regs);
          regs_cache_.insert_or_assign(tid, regs);
        }
        return handle_breakpoint(tid, *bp, mode);
      }
      // The patch was taken out after this trap was raised: put the thread
      // back on the restored instruction and carry on.
      bool patched = false;
      try {
        Bytes now = backend_->read_memory_raw(at, ai.trap_instruction.size());
        patched = std::equal(now.begin(), now.end(), ai.trap_instruction.begin());
      } catch (const Error&) {
        patched = true;
      }
      if (!patched) {
        if (ai.trap_pc_advance != 0) {
          RegisterFile regs = cached_regs(tid);
          regs.set(Role::Pc, at);
          backend_->write_registers(tid, regs);
          regs_cache_.insert_or_assign(tid, regs);
        }
        return {};
      }
    }
    if (auto slot = backend_->take_hw_hit(tid, sig)) return handle_hw_hit(tid, *slot, mode);
  }

  auto& ti = threads_[tid];
  ti.stop_reason = stop::Signal{sig.signo};
  DebugEvent ev = deliver(tid, stop::Signal{sig.signo});
  const SignalRule* rule = policy_.find(sig.signo);
  if (!rule) {
    ti.pending_signal = sig.signo;
    return {ev, mode == WaitMode::Surface};
  }
  switch (rule->action) {
    case SignalAction::Pass:
      ti.pending_signal = sig.signo;
      return {ev, false};
    case SignalAction::Suppress:
      return {ev, false};
    case SignalAction::Callback: {
      SignalHandler handler = rule->handler;
      SignalAction then = rule->then;
      ThreadContext ctx = snapshot(tid);
      if (then != SignalAction::Suppress) threads_[tid].pending_signal = sig.signo;
      DispatchScope scope(*this);
      Directive d = handler(*this, ctx);
      return {ev, d == Directive::Stop};
    }
  }
  return {ev, mode == WaitMode::Surface};
}

Debugger::Outcome Debugger::handle_breakpoint(Tid tid, Breakpoint& bp, WaitMode mode) {
  ++bp.hit_count;
  auto& ti = threads_[tid];
  ti.stop_reason = stop::Breakpoint{bp.id};
  if (bp.kind == BreakpointKind::Software) {
    ti.parked_on = bp.id;
  } else if (arch() == Arch::Aarch64) {
    ti.parked_hw = bp.id;
  }
  DebugEvent ev = deliver(tid, stop::Breakpoint{bp.id});
  Breakpoint seen = bp;
  if (bp.one_shot) clear(bp.id);
  if (!seen.callback) return {ev, mode == WaitMode::Surface};
  ThreadContext ctx = snapshot(tid);
  DispatchScope scope(*this);
  Directive d = seen.callback(*this, ctx, seen);
  return {ev, d == Directive::Stop};
}

Debugger::Outcome Debugger::handle_hw_hit(Tid tid, std::size_t slot, WaitMode mode) {
  if (slot >= slot_owner_.size() || !slot_owner_[slot]) return {};
  TrapId id = *slot_owner_[slot];
  if (auto it = breakpoints_.find(id); it != breakpoints_.end()) {
    return handle_breakpoint(tid, it->second, mode);
  }
  auto wt = watchpoints_.find(id);
  if (wt == watchpoints_.end()) return {};
  auto& wp = wt->second;
  ++wp.hit_count;
  auto& ti = threads_[tid];
  ti.stop_reason = stop::Watchpoint{id};
  if (arch() == Arch::Aarch64) ti.parked_hw = id;
  DebugEvent ev = deliver(tid, stop::Watchpoint{id});
  if (!wp.callback) return {ev, mode == WaitMode::Surface};
  Watchpoint seen = wp;
  ThreadContext ctx = snapshot(tid);
  DispatchScope scope(*this);
  Directive d = seen.callback(*this, ctx, seen);
  return {ev, d == Directive::Stop};
}

Debugger::Outcome Debugger::handle_syscall(Tid tid, WaitMode mode) {
  auto& ti = threads_[tid];
  const auto& table = SyscallTable::builtin();
  const RegisterFile& regs = cached_regs(tid);

  if (!ti.in_syscall) {
    ti.in_syscall = true;
    std::uint64_t nr = regs.get(Role::SyscallNr);
    ti.enter_nr = nr;
    ti.syscall_nr = nr;
    for (std::size_t i = 0; i < 6; ++i) ti.syscall_args[i] = regs.get(syscall_arg_role(i));
    ti.hijacked = false;
    ti.fault_errno.reset();

    ActiveFault* fired = nullptr;
    for (auto& [id, f] : faults_) {
      if (f.consumed || f.nr != nr) continue;
      if (f.rule.predicate && !f.rule.predicate(ti.syscall_args)) continue;
      ++f.matches;
      if (!fired && (!f.rule.nth || f.matches == *f.rule.nth)) {
        fired = &f;
        if (f.rule.nth) f.consumed = true;
      }
    }
    if (fired) {
      ti.fault_errno = fired->rule.errno_value;
      RegisterFile r = regs;
      r.set(Role::SyscallNr, arch_info(arch()).harmless_syscall);
      backend_->write_registers(tid, r);
      regs_cache_.insert_or_assign(tid, r);
    }

    std::vector<Subscription*> matching;
    for (auto& [id, s] : subscriptions_) {
      if (subscribed(s, nr)) matching.push_back(&s);
    }
    if (!fired && matching.empty()) return {};

    ti.stop_reason = stop::SyscallEnter{nr};
    DebugEvent ev = deliver(tid, stop::SyscallEnter{nr});
    SyscallRecord rec;
    rec.tid = tid;
    rec.nr = nr;
    rec.name = table.describe(arch(), nr);
    rec.args = ti.syscall_args;
    rec.direction = SyscallDirection::Enter;
    rec.seq = ev.seq;
    rec.injected = fired != nullptr;
    if (fired) injected_.push_back(rec);

    bool handled = false;
    Directive d = Directive::Continue;
    for (Subscription* s : matching) {
      if (!s->on_enter) continue;
      handled = true;
      SyscallHandler handler = s->on_enter;
      DispatchScope scope(*this);
      dispatch_enter_ = &rec;
      try {
        if (handler(*this, rec) == Directive::Stop) d = Directive::Stop;
      } catch (...) {
        dispatch_enter_ = nullptr;
        throw;
      }
      dispatch_enter_ = nullptr;
    }
    if (handled) return {ev, d == Directive::Stop};
    return {ev, !matching.empty() && mode == WaitMode::Surface};
  }

  ti.in_syscall = false;
  std::uint64_t nr = ti.syscall_nr;
  auto ret = static_cast<std::int64_t>(regs.get(Role::SyscallRet));
  bool injected = ti.fault_errno.has_value();
  if (injected) {
    ret = -static_cast<std::int64_t>(*ti.fault_errno);
    ti.fault_errno.reset();
    RegisterFile r = regs;
    r.set(Role::SyscallRet, static_cast<std::uint64_t>(ret));
    backend_->write_registers(tid, r);
    regs_cache_.insert_or_assign(tid, r);
  }
  std::vector<Subscription*> matching;
  for (auto& [id, s] : subscriptions_) {
    if (subscribed(s, ti.enter_nr)) matching.push_back(&s);
  }
  if (!injected && matching.empty()) return {};

  ti.stop_reason = stop::SyscallExit{nr, ret};
  DebugEvent ev = deliver(tid, stop::SyscallExit{nr, ret});
  SyscallRecord rec;
  rec.tid = tid;
  rec.nr = nr;
  rec.name = table.describe(arch(), nr);
  rec.args = ti.syscall_args;
  rec.ret = ret;
  rec.direction = SyscallDirection::Exit;
  rec.seq = ev.seq;
  rec.injected = injected;
  rec.hijacked = ti.hijacked;
  if (injected) injected_.push_back(rec);

  bool handled = false;
  Directive d = Directive::Continue;
  for (Subscription* s : matching) {
    if (!s->on_exit) continue;
    handled = true;
    SyscallHandler handler = s->on_exit;
    DispatchScope scope(*this);
    if (handler(*this, rec) == Directive::Stop) d = Directive::Stop;
  }
  if (handled) return {ev, d == Directive::Stop};
  return {ev, !matching.empty() && mode == WaitMode::Surface};
}

DebugEvent Debugger::step(Tid tid) {
  require_outside_dispatch("step");
  auto& ti = thread(tid);
  require_stopped("step");
  if (Breakpoint* bp = software_at(cached_regs(tid).pc())) {
    if (!step_over_impl(tid, *bp)) {
      running_ = true;
      return next_event(WaitMode::Surface);
    }
  } else {
    if (ti.pending_signal) {
      backend_->queue_signal(tid, *ti.pending_signal);
      ti.pending_signal.reset();
    }
    ti.parked_on.reset();
    invalidate_regs();
    backend_->single_step(tid);
    running_ = true;
    RawStopNotice n = backend_->wait_notice();
    running_ = false;
    if (!std::holds_alternative<cause::Step>(n.cause)) {
      Outcome out = handle_notice(n, WaitMode::Surface);
      if (out.event) return *out.event;
    } else if (auto slot = backend_->take_hw_hit(tid, cause::Signal{SIGTRAP, TRAP_HWBKPT, 0})) {
      if (slot_owner_[*slot] && watchpoints_.count(*slot_owner_[*slot])) {
        early_hw_ = PendingHwHit{tid, *slot};
      }
    }
  }
  threads_[tid].stop_reason = stop::Step{};
  return deliver(tid, stop::Step{});
}

RunResult Debugger::run_until_exit() {
  require_outside_dispatch("run_until_exit");
  if (!running_) {
    require_stopped("run_until_exit");
    running_ = true;
    try {
      resume_backend();
    } catch (...) {
      running_ = backend_->handle().state == TraceeState::Running;
      throw;
    }
  }
  DebugEvent ev = next_event(WaitMode::RunToExit);
  RunResult r;
  if (const auto* ex = std::get_if<stop::Exited>(&ev.reason)) {
    if (ex->signal) {
      r.kind = RunResult::Kind::Killed;
      r.signal = ex->signal;
    } else {
      r.kind = RunResult::Kind::Exited;
      r.exit_code = ex->code;
    }
  } else {
    r.kind = RunResult::Kind::Stopped;
  }
  return r;
}

// --------------------------------------------------------------------- stdio

FileDescriptor& Debugger::stream(int which) {
  return which == 0 ? stdio_.in : which == 1 ? stdio_.out : stdio_.err;
}

std::size_t Debugger::stdin_write(std::string_view text) {
  return stdin_write(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::size_t Debugger::stdin_write(std::span<const std::uint8_t> data) {
  if (!piped_) Error::raise(ErrorCode::InvalidState, "tracee stdio is not piped");
  std::lock_guard lock(stdio_mutex_[0]);
  if (!stdio_.in) Error::raise(ErrorCode::EndOfStream, "tracee stdin is closed");
  // EPIPE must not take the whole tracer down with SIGPIPE.
  sigset_t pipe_set;
  sigset_t old;
  sigemptyset(&pipe_set);
  sigaddset(&pipe_set, SIGPIPE);
  pthread_sigmask(SIG_BLOCK, &pipe_set, &old);
  std::size_t done = 0;
  int err = 0;
  while (done < data.size()) {
    ssize_t n = ::write(stdio_.in.get(), data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      err = errno;
      break;
    }
    done += static_cast<std::size_t>(n);
  }
  if (err == EPIPE) {
    timespec zero{};
    sigtimedwait(&pipe_set, nullptr, &zero);
  }
  pthread_sigmask(SIG_SETMASK, &old, nullptr);
  if (err == EPIPE) Error::raise(ErrorCode::EndOfStream, "tracee closed its stdin");
  if (err != 0) {
    errno = err;
    Error::raise_errno("write to tracee stdin");
  }
  return done;
}

void Debugger::stdin_close() {
  if (!piped_) Error::raise(ErrorCode::InvalidState, "tracee stdio is not piped");
  std::lock_guard lock(stdio_mutex_[0]);
  stdio_.in.reset();
}

Bytes Debugger::stream_read(int which, std::size_t max,
                            std::optional<std::chrono::milliseconds> timeout) {
  if (!piped_) Error::raise(ErrorCode::InvalidState, "tracee stdio is not piped");
  std::lock_guard lock(stdio_mutex_[which]);
  FileDescriptor& fd = stream(which);
  if (!fd) Error::raise(ErrorCode::EndOfStream, "stream already reached its end");
  if (timeout) {
    pollfd p{fd.get(), POLLIN, 0};
    int r = 0;
    do {
      r = ::poll(&p, 1, static_cast<int>(timeout->count()));
    } while (r < 0 && errno == EINTR);
    if (r < 0) Error::raise_errno("poll tracee stream");
    if (r == 0) return {};
  }
  Bytes buf(std::max<std::size_t>(max, 1));
  for (;;) {
    ssize_t n = ::read(fd.get(), buf.data(), buf.size());
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) Error::raise_errno("read tracee stream");
    if (n == 0) {
      fd.reset();
      Error::raise(ErrorCode::EndOfStream, "tracee closed the stream and it is drained");
    }
    buf.resize(static_cast<std::size_t>(n));
    return buf;
  }
}

Bytes Debugger::stdout_read(std::size_t max, std::optional<std::chrono::milliseconds> timeout) {
  if (max == 0) return {};
  return stream_read(1, max, timeout);
}

Bytes Debugger::stderr_read(std::size_t max, std::optional<std::chrono::milliseconds> timeout) {
  if (max == 0) return {};
  return stream_read(2, max, timeout);
}

std::string Debugger::stdout_read_all() {
  std::string out;
  try {
    for (;;) {
      Bytes b = stream_read(1, 65536, std::nullopt);
      out.append(b.begin(), b.end());
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EndOfStream) throw;
  }
  return out;
}

std::string Debugger::stderr_read_all() {
  std::string out;
  try {
    for (;;) {
      Bytes b = stream_read(2, 65536, std::nullopt);
      out.append(b.begin(), b.end());
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EndOfStream) throw;
  }
  return out;
}

// ------------------------------------------------------------------- symbols

std::vector<LoadedObject> Debugger::objects() { return enumerate_objects(maps()); }

Address Debugger::resolve_symbol(std::string_view name, std::optional<std::string_view> object) {
  auto objs = objects();
  return scriptdbg::resolve_symbol(objs, name, object);
}

Address Debugger::resolve(const Location& location) {
  if (const auto* a = std::get_if<Address>(&location)) return *a;
  const auto& spec = std::get<SymbolSpec>(location);
  std::optional<std::string_view> filter;
  if (spec.object) filter = *spec.object;
  return resolve_symbol(spec.name, filter) + spec.offset;
}

std::optional<AddressInfo> Debugger::resolve_address(Address addr) {
  auto m = maps();
  auto objs = enumerate_objects(m);
  return scriptdbg::resolve_address(objs, m, addr);
}

std::vector<StackFrame> Debugger::backtrace(Tid tid, std::size_t max_depth) {
  thread(tid);
  require_stopped("backtrace");
  auto m = maps();
  auto objs = enumerate_objects(m);
  MemoryPeek peek = [this](Address a, std::size_t len) -> std::optional<Bytes> {
    try {
      return read_memory(a, len);
    } catch (const Error&) {
      return std::nullopt;
    }
  };
  return walk_frames(cached_regs(tid), m, objs, peek, max_depth);
}

}  // namespace scriptdbg
