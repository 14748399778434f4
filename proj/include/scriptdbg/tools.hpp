#pragma once

#include <scriptdbg/debugger.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace scriptdbg::tools {

// Kills the current tracee once the deadline passes.
class Watchdog {
 public:
  explicit Watchdog(std::optional<std::chrono::duration<double>> timeout);
  ~Watchdog();
  Watchdog(const Watchdog&) = delete;
  Watchdog& operator=(const Watchdog&) = delete;

  void watch(int pid) { pid_.store(pid); }
  bool fired() const { return fired_.load(); }

 private:
  struct State;
  std::atomic<int> pid_{0};
  std::atomic<bool> fired_{false};
  std::unique_ptr<State> state_;
};

struct RunTarget {
  std::string binary;
  std::vector<std::string> argv;
  bool keep_aslr = false;
  std::optional<std::chrono::duration<double>> timeout;
};

// ---------------------------------------------------------------- trace

struct TraceOptions {
  RunTarget target;
  std::vector<std::string> filter;  // empty traces every syscall
};

// Writes one line per syscall exit to `log`. Returns the tracee's exit
// status (128+signal when it was killed).
int cmd_trace(const TraceOptions& options, std::ostream& log);

std::string format_trace_line(const SyscallRecord& exit_record);

// ------------------------------------------------------------- coverage

struct BranchSpec {
  Address branch = 0;
  Address taken = 0;
  Address fallthrough = 0;
};

// Throws MapFormatError with the 1-based line number.
std::vector<BranchSpec> parse_branch_map(std::string_view text);

struct BranchRecord {
  Address branch = 0;
  bool taken = false;
  bool fallthrough = false;
};

struct CoverageReport {
  std::vector<BranchRecord> branches;  // sorted by branch address

  std::size_t covered_outcomes() const;
  // covered / (2 * branches); 1.0 for an empty report.
  double branch_coverage() const;
  std::string render() const;
  // Throws MapFormatError.
  static CoverageReport parse(std::string_view text);
  // Union of covered outcomes, branch by branch.
  CoverageReport merged(const CoverageReport& other) const;
};

struct CoverageOptions {
  RunTarget target;
  std::filesystem::path branch_map;
  std::filesystem::path report;
  bool merge = false;
};

// Runs the target once. The map holds link-time addresses of the main
// object. With merge, an existing report at `report` is unioned in.
CoverageReport cmd_coverage(const CoverageOptions& options, std::ostream& warnings);

// --------------------------------------------------------------- triage

struct TriageFinding {
  int signal = 0;
  RegisterFile registers;
  bool fp_controlled = false;
  bool pc_controlled = false;
  std::optional<std::size_t> offset_to_fp;
  std::optional<std::size_t> offset_to_pc;
  std::vector<StackFrame> stack_trace;

  std::string to_json() const;
};

inline constexpr std::size_t kTriageWindow = 8;

struct TriageOptions {
  RunTarget target;
  // Candidate input; the cyclic pattern of max_len when absent.
  std::optional<Bytes> payload;
  std::size_t max_len = 512;
};

// Throws Error(NoCrash) when the candidate input does not crash the target.
TriageFinding cmd_triage(const TriageOptions& options);

// ---------------------------------------------------------------- bench

enum class BenchMode { Breakpoint, Syscall };

struct BenchStats {
  double median = 0;
  double p10 = 0;
  double p90 = 0;
  double mean = 0;
};

// Percentiles interpolate linearly between the closest ranks.
BenchStats compute_stats(std::vector<std::uint64_t> samples);
double percentile(const std::vector<std::uint64_t>& sorted, double q);

struct BenchResult {
  BenchMode mode = BenchMode::Breakpoint;
  std::size_t events_per_run = 0;
  std::size_t runs = 0;
  std::vector<std::uint64_t> wall_ns;
  // Callback invocations counted per run.
  std::vector<std::uint64_t> observed;
  BenchStats stats;
  std::optional<double> gdb_median_ns;
  std::optional<double> median_ratio;  // gdb median / engine median
};

struct BenchOptions {
  BenchMode mode = BenchMode::Breakpoint;
  std::size_t events = 1000;
  std::size_t runs = 100;
  std::filesystem::path out_csv;
  bool compare_gdb = false;
  std::optional<std::size_t> gdb_runs;  // defaults to runs
  std::filesystem::path fixture_dir;
  std::string gdb = "gdb";
  bool keep_aslr = false;
  std::optional<std::chrono::duration<double>> timeout;
};

// Throws Error(FixtureError) when the bench fixtures are missing.
BenchResult cmd_bench(const BenchOptions& options, std::ostream& warnings);

std::string format_double(double v);

}  // namespace scriptdbg::tools
