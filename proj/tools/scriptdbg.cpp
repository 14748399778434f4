#include <scriptdbg/error.hpp>
#include <scriptdbg/tools.hpp>

#include <CLI11.hpp>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>

using namespace scriptdbg;
using namespace scriptdbg::tools;

namespace {

struct Common {
  bool keep_aslr = false;
  std::optional<double> timeout;
  std::vector<std::string> command;

  RunTarget target() const {
    RunTarget t;
    t.binary = command.front();
    t.argv.assign(command.begin() + 1, command.end());
    t.keep_aslr = keep_aslr;
    if (timeout) t.timeout = std::chrono::duration<double>(*timeout);
    return t;
  }
};

void add_common(CLI::App* sub, Common& c, bool with_command = true) {
  sub->add_flag("--keep-aslr", c.keep_aslr, "Leave address randomization on");
  sub->add_option("--timeout", c.timeout, "Kill the tracee after this many seconds")
      ->check(CLI::PositiveNumber);
  if (with_command) {
    sub->add_option("command", c.command, "Target binary and its arguments (after --)")
        ->required()
        ->expected(1, -1);
  }
}

std::filesystem::path default_fixture_dir() {
  std::error_code ec;
  auto exe = std::filesystem::read_symlink("/proc/self/exe", ec);
  if (!ec) {
    auto beside = exe.parent_path() / "fixtures";
    if (std::filesystem::is_directory(beside)) return beside;
  }
#ifdef SCRIPTDBG_DEFAULT_FIXTURE_DIR
  return SCRIPTDBG_DEFAULT_FIXTURE_DIR;
#else
  return exe.parent_path() / "fixtures";
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scriptdbg: scriptable ptrace debugger tools"};
  app.require_subcommand(1);

  Common trace_c, cov_c, triage_c, bench_c;

  auto* trace = app.add_subcommand("trace", "Log syscalls of a program");
  add_common(trace, trace_c);
  std::vector<std::string> filter;
  std::string trace_out = "-";
  trace->add_option("-f,--filter", filter, "Syscall names to log")->delimiter(',');
  trace->add_option("-o,--output", trace_out, "Log file ('-' for stderr)");

  auto* coverage = app.add_subcommand("coverage", "Measure branch coverage of one run");
  add_common(coverage, cov_c);
  std::string map_path, report_path;
  bool merge = false;
  coverage->add_option("-m,--map", map_path, "Branch map")->required();
  coverage->add_option("-r,--report", report_path, "Report file")->required();
  coverage->add_flag("--merge", merge, "Union with an existing report");

  auto* triage = app.add_subcommand("triage", "Post-mortem of a crashing input");
  add_common(triage, triage_c);
  std::string payload_path, triage_out = "-";
  std::size_t max_len = 512;
  triage->add_option("-p,--payload", payload_path, "Candidate input (default: cyclic pattern)");
  triage->add_option("-n,--max-len", max_len, "Cyclic pattern length")->check(CLI::PositiveNumber);
  triage->add_option("-o,--output", triage_out, "JSON output file ('-' for stdout)");

  auto* bench = app.add_subcommand("bench", "Event-handling latency benchmark");
  add_common(bench, bench_c, false);
  std::string mode = "breakpoint", csv, gdb = "gdb", fixtures;
  std::size_t events = 1000, runs = 100;
  std::optional<std::size_t> gdb_runs;
  bool compare_gdb = false;
  bench->add_option("--mode", mode, "breakpoint or syscall")
      ->check(CLI::IsMember({"breakpoint", "syscall"}));
  bench->add_option("--events", events, "Events per run")->check(CLI::PositiveNumber);
  bench->add_option("--runs", runs, "Number of runs")->check(CLI::PositiveNumber);
  bench->add_option("-o,--out", csv, "CSV of per-run wall times")->required();
  bench->add_flag("--compare-gdb", compare_gdb, "Also time a scripted GDB session");
  bench->add_option("--gdb", gdb, "GDB executable");
  bench->add_option("--gdb-runs", gdb_runs, "GDB runs (default: --runs)");
  bench->add_option("--fixtures", fixtures, "Directory holding bench_bp and bench_sys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*trace) {
      TraceOptions o{trace_c.target(), filter};
      if (trace_out == "-") return cmd_trace(o, std::cerr);
      std::ofstream log(trace_out, std::ios::trunc);
      if (!log) Error::raise(ErrorCode::SystemError, "cannot write " + trace_out);
      return cmd_trace(o, log);
    }
    if (*coverage) {
      CoverageOptions o{cov_c.target(), map_path, report_path, merge};
      auto report = cmd_coverage(o, std::cerr);
      std::cout << "coverage=" << format_double(report.branch_coverage()) << " ("
                << report.covered_outcomes() << "/" << 2 * report.branches.size()
                << " outcomes)\n";
      return 0;
    }
    if (*triage) {
      TriageOptions o;
      o.target = triage_c.target();
      o.max_len = max_len;
      if (!payload_path.empty()) {
        std::ifstream in(payload_path, std::ios::binary);
        if (!in) Error::raise(ErrorCode::SystemError, "cannot read " + payload_path);
        o.payload = Bytes(std::istreambuf_iterator<char>(in), {});
      }
      auto finding = cmd_triage(o);
      if (triage_out == "-") {
        std::cout << finding.to_json() << '\n';
      } else {
        std::ofstream out(triage_out, std::ios::trunc);
        out << finding.to_json() << '\n';
      }
      return 0;
    }
    if (*bench) {
      BenchOptions o;
      o.mode = mode == "syscall" ? BenchMode::Syscall : BenchMode::Breakpoint;
      o.events = events;
      o.runs = runs;
      o.out_csv = csv;
      o.compare_gdb = compare_gdb;
      o.gdb_runs = gdb_runs;
      o.gdb = gdb;
      o.fixture_dir = fixtures.empty() ? default_fixture_dir() : std::filesystem::path(fixtures);
      o.keep_aslr = bench_c.keep_aslr;
      if (bench_c.timeout) o.timeout = std::chrono::duration<double>(*bench_c.timeout);
      auto r = cmd_bench(o, std::cerr);
      std::cout << "median_ns=" << format_double(r.stats.median)
                << " p10_ns=" << format_double(r.stats.p10)
                << " p90_ns=" << format_double(r.stats.p90)
                << " mean_ns=" << format_double(r.stats.mean) << '\n';
      if (r.median_ratio) {
        std::cout << "gdb_median_ns=" << format_double(*r.gdb_median_ns)
                  << " median_ratio=" << format_double(*r.median_ratio) << '\n';
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "scriptdbg: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "scriptdbg: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
