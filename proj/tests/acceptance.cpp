// Acceptance checks for the engine and the scriptdbg tools. Prints one
// PASS/FAIL line per criterion and exits nonzero when any fails.

#include "properties.hpp"
#include "support.hpp"
#include "syscall_oracle.hpp"

#include <scriptdbg/error.hpp>
#include <scriptdbg/tools.hpp>

#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace scriptdbg;
using testsupport::is;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

Verdict pass(std::string d) { return {true, std::move(d)}; }
Verdict fail(std::string d) { return {false, std::move(d)}; }

fs::path scratch(const std::string& stem) {
  auto dir = fs::temp_directory_path() / ("scriptdbg-acceptance-" + std::to_string(getpid()));
  fs::create_directories(dir);
  return dir / stem;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

tools::RunTarget target(const std::string& name, std::vector<std::string> argv = {}) {
  tools::RunTarget t;
  t.binary = testsupport::fixture(name);
  t.argv = std::move(argv);
  t.timeout = std::chrono::seconds(60);
  return t;
}

Verdict breakpoint_throughput() {
  auto start = std::chrono::steady_clock::now();
  auto dbg = testsupport::spawn("loop", {"1000"});
  TrapId id = dbg->set_breakpoint(SymbolSpec{"f"}).id;
  auto result = dbg->run_until_exit();
  std::string out = dbg->stdout_read_all();
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::uint64_t hits = dbg->breakpoint(id).hit_count;
  std::ostringstream d;
  d << "hits=" << hits << " seconds=" << secs;
  if (result.kind != RunResult::Kind::Exited || result.exit_code != 0) return fail(d.str() + " abnormal exit");
  if (hits != 1000) return fail(d.str());
  if (out != testsupport::run_plain("loop", {"1000"})) return fail(d.str() + " stdout differs");
  if (secs >= 10.0) return fail(d.str());
  return pass(d.str() + " stdout identical");
}

Verdict syscall_oracle() {
  auto dbg = testsupport::spawn("sysscript", {"script"});
  std::vector<SyscallRecord> records;
  auto keep = [&](Debugger&, SyscallRecord& r) {
    records.push_back(r);
    return Directive::Continue;
  };
  dbg->trace_syscalls(SyscallSelector::any(), keep, keep);
  dbg->run_until_exit();

  std::map<Tid, bool> inside;
  for (const auto& r : records) {
    bool& in = inside[r.tid];
    if ((r.direction == SyscallDirection::Enter) == in) return fail("enter/exit alternation broken");
    in = !in;
  }

  // The final exit_group never returns; both sides carry it with ret 0.
  std::vector<std::pair<std::string, std::int64_t>> engine, expected;
  for (const auto& r : records) {
    if (r.direction != SyscallDirection::Exit) continue;
    engine.emplace_back(r.name, *r.ret == dbg->pid() ? testsupport::kPidMarker : *r.ret);
  }
  if (!records.empty() && records.back().direction == SyscallDirection::Enter) {
    engine.emplace_back(records.back().name, 0);
  }
  for (const auto& s : testsupport::oracle_trace(testsupport::fixture("sysscript"), {"script"})) {
    expected.emplace_back(s.name, s.exited ? s.ret : 0);
  }
  std::ostringstream d;
  d << "engine=" << engine.size() << " oracle=" << expected.size();
  if (expected.size() < 50) return fail(d.str() + " oracle saw fewer than 50 syscalls");
  for (std::size_t i = 0; i < std::min(engine.size(), expected.size()); ++i) {
    if (engine[i] != expected[i]) {
      d << " first mismatch #" << i << ": " << engine[i].first << "=" << engine[i].second
        << " vs " << expected[i].first << "=" << expected[i].second;
      return fail(d.str());
    }
  }
  if (engine.size() != expected.size()) return fail(d.str());
  return pass(d.str() + " sequences equal, alternation holds");
}

Verdict coverage() {
  auto run = [](const std::string& plan, const fs::path& report, bool merge) {
    tools::CoverageOptions o;
    o.target = target("coverage", {plan});
    o.branch_map = testsupport::fixture("coverage.map");
    o.report = report;
    o.merge = merge;
    std::ostringstream warnings;
    return tools::cmd_coverage(o, warnings);
  };
  const std::string plan = "bb101-----", complement = "--010bbbbb";
  int expected = 0;
  for (int n : testsupport::plan_outcomes(plan)) expected += n;
  auto single = run(plan, scratch("single.txt"), false);
  if (single.branches.size() != 10) return fail("map does not list 10 branches");

  auto merged_path = scratch("merged.txt");
  fs::remove(merged_path);
  run(plan, merged_path, true);
  auto merged = run(complement, merged_path, true);

  std::ostringstream d;
  d << "coverage=" << tools::format_double(single.branch_coverage()) << " (oracle "
    << expected << "/20) merged=" << tools::format_double(merged.branch_coverage());
  if (single.covered_outcomes() != static_cast<std::size_t>(expected)) return fail(d.str());
  if (single.branch_coverage() != 0.35) return fail(d.str());
  if (merged.branch_coverage() != 1.0) return fail(d.str());
  return pass(d.str());
}

Verdict triage() {
  auto buffer = testsupport::stack_buffer_offset(testsupport::fixture("overflow"), "vulnerable");
  if (!buffer) return fail("disassembly oracle found no stack buffer in vulnerable");
  tools::TriageOptions o;
  o.target = target("overflow");
  auto f = tools::cmd_triage(o);
  std::ostringstream d;
  d << "oracle fp=" << *buffer << " pc=" << *buffer + 8 << "; found fp="
    << (f.offset_to_fp ? std::to_string(*f.offset_to_fp) : "none")
    << " pc=" << (f.offset_to_pc ? std::to_string(*f.offset_to_pc) : "none");
  if (f.offset_to_fp != 64 || f.offset_to_pc != 72) return fail(d.str());
  if (f.offset_to_fp != *buffer || f.offset_to_pc != *buffer + 8) return fail(d.str());
  bool named = std::any_of(f.stack_trace.begin(), f.stack_trace.end(),
                           [](const StackFrame& s) { return s.symbol == "vulnerable"; });
  if (!named) return fail(d.str() + " stack trace lacks vulnerable");
  return pass(d.str() + " trace names vulnerable");
}

Verdict fault_injection() {
  auto cfg = scratch("config");
  std::ofstream(cfg) << "value\n";
  std::string expected = std::string("cannot open config: ") + std::strerror(EACCES) + "\n";
  int observed = 0;
  for (int i = 0; i < 100; ++i) {
    SpawnOptions so;
    so.argv = {"config", cfg.string()};
    auto dbg = Debugger::spawn(testsupport::fixture("faults"), so);
    dbg->inject_fault({std::string("openat"), {}, 1, EACCES});
    dbg->run_until_exit();
    if (dbg->stdout_read_all() == expected) ++observed;
  }
  std::string d = "failure path in " + std::to_string(observed) + "/100 runs";
  return observed == 100 ? pass(d) : fail(d);
}

Verdict multithreading() {
  std::string path = testsupport::fixture("threads");
  auto writer = testsupport::nm_address(path, "writer");
  auto writer_size = testsupport::nm_size(path, "writer");
  if (!writer || !writer_size) return fail("nm has no writer symbol");
  std::ostringstream d;
  for (int writer_index : {0, 3}) {
    SpawnOptions so;
    so.argv = {"1", std::to_string(writer_index), "4"};
    auto dbg = Debugger::spawn(path, so);
    TrapId bp = dbg->set_breakpoint(SymbolSpec{"worker_hit"}).id;
    TrapId wp = dbg->set_watchpoint(dbg->resolve_symbol("watched_value"), 8, WatchTrigger::Write).id;
    Address bias = dbg->resolve_symbol("writer") - *writer;
    std::map<Tid, std::uint64_t> index_of;
    std::vector<Tid> writes;
    bool pc_in_writer = true;
    for (;;) {
      auto ev = dbg->cont();
      if (is<stop::Exited>(ev.reason)) break;
      if (is<stop::Breakpoint>(ev.reason)) {
        // worker_hit(idx): the first argument register carries idx.
        index_of[ev.tid] = dbg->registers(ev.tid).get(Role::SyscallArg0) & 0xffffffff;
      } else if (is<stop::Watchpoint>(ev.reason)) {
        writes.push_back(ev.tid);
        Address pc = dbg->registers(ev.tid).pc();
        pc_in_writer = pc_in_writer && pc >= *writer + bias && pc < *writer + bias + *writer_size;
      } else {
        return fail("unexpected stop: " + describe(ev.reason));
      }
    }
    std::set<std::uint64_t> indices;
    for (auto& [tid, idx] : index_of) indices.insert(idx);
    d << "writer " << writer_index << ": hits=" << dbg->breakpoint(bp).hit_count
      << " tids=" << index_of.size() << " watch=" << dbg->watchpoint(wp).hit_count << "; ";
    if (dbg->breakpoint(bp).hit_count != 4 || index_of.size() != 4 || indices.size() != 4) {
      return fail(d.str());
    }
    if (writes.size() != 1 || !pc_in_writer) return fail(d.str() + "watchpoint not in writer");
    if (index_of[writes.front()] != static_cast<std::uint64_t>(writer_index)) {
      return fail(d.str() + "watchpoint fired in the wrong thread");
    }
    std::string expected_out = "watched=" + std::to_string(100 + writer_index) + "\n";
    if (dbg->stdout_read_all() != expected_out) return fail(d.str() + "tracee output differs");
  }
  return pass(d.str() + "watchpoint fired in the writing thread");
}

Verdict bench() {
  tools::BenchOptions o;
  o.events = 1000;
  o.runs = 100;
  o.out_csv = scratch("bench.csv");
  o.fixture_dir = SCRIPTDBG_FIXTURE_DIR;
  bool have_gdb = !testsupport::shell("command -v gdb").empty();
  o.compare_gdb = have_gdb;
  o.gdb_runs = 20;
  std::ostringstream warnings;
  auto r = tools::cmd_bench(o, warnings);

  std::vector<std::uint64_t> samples;
  std::istringstream csv(slurp(o.out_csv));
  std::string line;
  std::getline(csv, line);
  if (line != "run,wall_ns") return fail("bad CSV header");
  while (std::getline(csv, line)) samples.push_back(std::stoull(line.substr(line.find(',') + 1)));
  if (samples.size() != 100) return fail("CSV has " + std::to_string(samples.size()) + " rows");
  std::sort(samples.begin(), samples.end());
  double median = (static_cast<double>(samples[49]) + static_cast<double>(samples[50])) / 2.0;

  std::string reported;
  std::istringstream stats(slurp(o.out_csv.string() + ".stats"));
  while (std::getline(stats, line)) {
    if (line.starts_with("median_ns=")) reported = line.substr(10);
  }
  double reported_median = std::nan("");
  std::from_chars(reported.data(), reported.data() + reported.size(), reported_median);

  std::ostringstream d;
  d << "median_ns=" << tools::format_double(median) << " reported=" << reported;
  for (auto n : r.observed) {
    if (n != 1000) return fail(d.str() + " a run observed " + std::to_string(n) + " events");
  }
  if (median != reported_median || median != r.stats.median) return fail(d.str());
  if (have_gdb) {
    if (!r.median_ratio || !std::isfinite(*r.median_ratio) || *r.median_ratio <= 0) {
      return fail(d.str() + " gdb ratio missing or invalid");
    }
    d << " gdb_ratio=" << tools::format_double(*r.median_ratio)
      << (*r.median_ratio > 1 ? " (>1)" : " (<=1, informational)");
  } else {
    d << " gdb not installed";
  }
  return pass(d.str());
}

Verdict robustness() {
  auto elf = testsupport::elf_fuzz(1234, 10000);
  if (!elf.ok) return fail("elf: " + elf.detail);
  auto life = testsupport::lifecycle_sequences(2024, 200, 25);
  if (!life.ok) return fail("lifecycle: " + life.detail);
  auto rt = testsupport::state_roundtrips(4242, 1000);
  if (!rt.ok) return fail("roundtrip: " + rt.detail);
  std::ostringstream d;
  d << "elf inputs=" << elf.cases << " lifecycle ops=" << life.cases
    << " roundtrips=" << rt.cases;
  if (elf.cases != 10000 || rt.cases != 1000) return fail(d.str());
  return pass(d.str());
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"breakpoint-throughput", breakpoint_throughput},
      {"syscall-oracle-equivalence", syscall_oracle},
      {"coverage-exactness", coverage},
      {"triage-offsets", triage},
      {"fault-injection-determinism", fault_injection},
      {"multithreading", multithreading},
      {"benchmark-harness", bench},
      {"robustness-properties", robustness},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = fail(std::string("exception: ") + e.what());
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  }
  std::error_code ec;
  fs::remove_all(scratch("x").parent_path(), ec);
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed ? 1 : 0;
}
