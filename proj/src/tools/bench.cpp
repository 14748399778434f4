#include "common.hpp"

#include <scriptdbg/syscalls.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace scriptdbg::tools {

namespace {

std::string fixture_for(BenchMode mode) { return mode == BenchMode::Breakpoint ? "bench_bp" : "bench_sys"; }

std::uint64_t now_ns() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                        std::chrono::steady_clock::now().time_since_epoch())
                                        .count());
}

// One engine run: wall time from the first resume to the exit event.
std::pair<std::uint64_t, std::uint64_t> engine_run(const BenchOptions& o, const std::string& path) {
  RunTarget target{path, {std::to_string(o.events)}, o.keep_aslr, o.timeout};
  Watchdog dog(o.timeout);
  auto dbg = launch(target, StdioMode::Pipe);
  dog.watch(dbg->pid());
  std::uint64_t count = 0;
  if (o.mode == BenchMode::Breakpoint) {
    dbg->set_breakpoint(SymbolSpec{"target_fn", std::nullopt, 0}, BreakpointKind::Software, false,
                        [&count](Debugger&, const ThreadContext&, const Breakpoint&) {
                          ++count;
                          return Directive::Continue;
                        });
  } else {
    auto counter = [&count](Debugger&, SyscallRecord&) {
      ++count;
      return Directive::Continue;
    };
    dbg->trace_syscalls(SyscallSelector::of({"getppid"}), counter, counter);
  }
  std::uint64_t start = now_ns();
  RunResult r = dbg->run_until_exit();
  std::uint64_t elapsed = now_ns() - start;
  check_timeout(dog);
  if (r.kind != RunResult::Kind::Exited || r.exit_code != 0) {
    Error::raise(ErrorCode::FixtureError, "bench fixture did not exit cleanly");
  }
  return {elapsed, count};
}

// Command file for one scripted GDB session. Logging and confirmations are
// off and the clock brackets the continue that runs the workload.
std::string gdb_script(BenchMode mode) {
  std::string s =
      "set pagination off\n"
      "set confirm off\n"
      "set verbose off\n"
      "set print inferior-events off\n"
      "set print thread-events off\n"
      "set startup-with-shell off\n"
      "set disable-randomization on\n"
      "starti\n";
  s += mode == BenchMode::Breakpoint ? "break target_fn\n" : "catch syscall getppid\n";
  s +=
      "commands\n"
      "silent\n"
      "continue\n"
      "end\n"
      "python import time; _scriptdbg_t0 = time.monotonic_ns()\n"
      "continue\n"
      "python print('SCRIPTDBG_GDB_NS', time.monotonic_ns() - _scriptdbg_t0)\n"
      "quit\n";
  return s;
}

std::optional<std::uint64_t> gdb_run(const BenchOptions& o, const std::string& path,
                                     const std::string& script_path) {
  std::string cmd = "'" + o.gdb + "' -batch -nx -q -x '" + script_path + "' --args '" + path +
                    "' " + std::to_string(o.events) + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return std::nullopt;
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  pclose(p);
  auto at = out.find("SCRIPTDBG_GDB_NS ");
  if (at == std::string::npos) return std::nullopt;
  return std::stoull(out.substr(at + 17));
}

bool gdb_available(const std::string& gdb) {
  std::string cmd = "'" + gdb + "' --version >/dev/null 2>&1";
  int st = std::system(cmd.c_str());
  return st != -1 && WIFEXITED(st) && WEXITSTATUS(st) == 0;
}

}  // namespace

double percentile(const std::vector<std::uint64_t>& sorted, double q) {
  if (sorted.empty()) return 0;
  double pos = q * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) +
         (static_cast<double>(sorted[hi]) - static_cast<double>(sorted[lo])) * frac;
}

BenchStats compute_stats(std::vector<std::uint64_t> samples) {
  std::sort(samples.begin(), samples.end());
  BenchStats s;
  s.median = percentile(samples, 0.5);
  s.p10 = percentile(samples, 0.1);
  s.p90 = percentile(samples, 0.9);
  if (!samples.empty()) {
    long double sum = std::accumulate(samples.begin(), samples.end(), 0.0L);
    s.mean = static_cast<double>(sum / static_cast<long double>(samples.size()));
  }
  return s;
}

BenchResult cmd_bench(const BenchOptions& o, std::ostream& warnings) {
  std::string path = (o.fixture_dir / fixture_for(o.mode)).string();
  if (access(path.c_str(), X_OK) != 0) {
    Error::raise(ErrorCode::FixtureError, "bench fixture missing: " + path);
  }
  BenchResult r;
  r.mode = o.mode;
  r.events_per_run = o.events;
  r.runs = o.runs;
  const std::uint64_t expected = o.mode == BenchMode::Breakpoint ? o.events : 2 * o.events;
  for (std::size_t i = 0; i < o.runs; ++i) {
    auto [ns, count] = engine_run(o, path);
    if (count != expected) {
      Error::raise(ErrorCode::FixtureError, "run " + std::to_string(i) + " observed " +
                                                std::to_string(count) + " events, expected " +
                                                std::to_string(expected));
    }
    r.wall_ns.push_back(ns);
    r.observed.push_back(count);
  }
  r.stats = compute_stats(r.wall_ns);

  if (o.compare_gdb) {
    if (!gdb_available(o.gdb)) {
      warnings << "warning: " << o.gdb << " not found; reporting engine results only\n";
    } else {
      char script_path[] = "/tmp/scriptdbg-gdb-XXXXXX";
      int fd = mkstemp(script_path);
      if (fd < 0) Error::raise_errno("mkstemp");
      std::string script = gdb_script(o.mode);
      bool wrote = write(fd, script.data(), script.size()) == static_cast<ssize_t>(script.size());
      close(fd);
      std::vector<std::uint64_t> gdb_ns;
      if (wrote) {
        for (std::size_t i = 0; i < o.gdb_runs.value_or(o.runs); ++i) {
          if (auto ns = gdb_run(o, path, script_path)) gdb_ns.push_back(*ns);
        }
      }
      unlink(script_path);
      if (gdb_ns.empty()) {
        warnings << "warning: no usable GDB timings; reporting engine results only\n";
      } else {
        std::sort(gdb_ns.begin(), gdb_ns.end());
        r.gdb_median_ns = percentile(gdb_ns, 0.5);
        if (r.stats.median > 0) r.median_ratio = *r.gdb_median_ns / r.stats.median;
      }
    }
  }

  if (!o.out_csv.empty()) {
    std::ofstream csv(o.out_csv, std::ios::trunc);
    if (!csv) Error::raise(ErrorCode::SystemError, "cannot write " + o.out_csv.string());
    csv << "run,wall_ns\n";
    for (std::size_t i = 0; i < r.wall_ns.size(); ++i) csv << i << ',' << r.wall_ns[i] << '\n';
    std::ofstream stats(o.out_csv.string() + ".stats", std::ios::trunc);
    if (!stats) Error::raise(ErrorCode::SystemError, "cannot write " + o.out_csv.string() + ".stats");
    stats << "mode=" << (o.mode == BenchMode::Breakpoint ? "breakpoint" : "syscall") << '\n'
          << "events_per_run=" << o.events << '\n'
          << "runs=" << o.runs << '\n'
          << "events_observed="
          << std::accumulate(r.observed.begin(), r.observed.end(), std::uint64_t{0}) << '\n'
          << "median_ns=" << format_double(r.stats.median) << '\n'
          << "p10_ns=" << format_double(r.stats.p10) << '\n'
          << "p90_ns=" << format_double(r.stats.p90) << '\n'
          << "mean_ns=" << format_double(r.stats.mean) << '\n';
    if (r.gdb_median_ns) stats << "gdb_median_ns=" << format_double(*r.gdb_median_ns) << '\n';
    if (r.median_ratio) stats << "median_ratio=" << format_double(*r.median_ratio) << '\n';
  }
  return r;
}

}  // namespace scriptdbg::tools
