#include <doctest.h>

#include "../support.hpp"

#include <scriptdbg/elf.hpp>
#include <scriptdbg/error.hpp>

#include <signal.h>

#include <sstream>

using namespace scriptdbg;
using testsupport::fixture;
using testsupport::is;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::SystemError;
}

// FUNC symbols of a file according to `nm`, as (name, address).
std::vector<std::pair<std::string, std::uint64_t>> nm_functions(const std::string& path) {
  std::istringstream in(testsupport::shell("nm --defined-only '" + path + "'"));
  std::vector<std::pair<std::string, std::uint64_t>> out;
  std::string addr, type, name;
  while (in >> addr >> type >> name) {
    if (type == "T" || type == "t") out.emplace_back(name, std::stoull(addr, nullptr, 16));
  }
  return out;
}

}  // namespace

TEST_CASE("parse_symbols finds f at the oracle offset") {
  auto path = fixture("loop");
  auto syms = parse_symbols(path);
  auto nm = testsupport::nm_address(path, "f");
  REQUIRE(nm);
  bool found = false;
  for (const auto& s : syms) {
    if (s.name != "f") continue;
    found = true;
    CHECK(s.kind == SymbolKind::Func);
    CHECK(s.value == *nm);
    CHECK(s.source_table == SymbolTable::Symtab);
    CHECK(s.size == testsupport::nm_size(path, "f"));
  }
  CHECK(found);
}

TEST_CASE("stripped fixture keeps its exported functions") {
  auto path = fixture("loop_stripped");
  CHECK(testsupport::shell("nm '" + path + "' 2>&1").find("no symbols") != std::string::npos);
  auto syms = parse_symbols(path);
  auto dyn = testsupport::nm_address(path, "f");
  REQUIRE(dyn);
  bool found = false;
  for (const auto& s : syms) {
    CHECK(s.source_table == SymbolTable::Dynsym);
    if (s.name == "f") {
      found = true;
      CHECK(s.value == *dyn);
    }
  }
  CHECK(found);

  auto dbg = Debugger::spawn(path, {{"5"}, {}, StdioMode::Pipe, {}});
  TrapId id = dbg->set_breakpoint(SymbolSpec{"f"}).id;
  dbg->run_until_exit();
  CHECK(dbg->breakpoint(id).hit_count == 5);
}

TEST_CASE("truncated ELF is a parse error") {
  auto bytes = read_file(fixture("loop"));
  bytes.resize(16);
  CHECK(code_of([&] { ElfImage::parse(bytes); }) == ErrorCode::ElfParseError);
}

TEST_CASE("dynamic fixture objects include the main object and libc") {
  auto dbg = testsupport::spawn("loop", {"1"});
  dbg->set_breakpoint(SymbolSpec{"f"});
  dbg->cont();
  auto objects = dbg->objects();
  bool main_seen = false, libc_seen = false;
  for (const auto& o : objects) {
    if (o.path == fixture("loop")) {
      main_seen = true;
      CHECK(o.is_pie);
      CHECK(o.base != 0);
      CHECK(o.base % 4096 == 0);
    }
    if (object_matches(o, "libc")) libc_seen = true;
    for (const auto& m : dbg->maps()) {
      if (m.path == o.path && m.executable) CHECK(o.base <= m.start);
    }
  }
  CHECK(main_seen);
  CHECK(libc_seen);
  dbg->kill();
}

TEST_CASE("static non-PIE base equals the linked base") {
  auto path = fixture("faults");
  auto dbg = Debugger::spawn(path, {});
  std::istringstream ph(testsupport::shell("readelf -lW '" + path + "'"));
  std::string line;
  std::optional<std::uint64_t> lowest;
  while (std::getline(ph, line)) {
    std::istringstream f(line);
    std::string type, off, vaddr;
    f >> type >> off >> vaddr;
    if (type == "LOAD") {
      std::uint64_t v = std::stoull(vaddr, nullptr, 16) & ~std::uint64_t{0xfff};
      lowest = lowest ? std::min(*lowest, v) : v;
    }
  }
  REQUIRE(lowest);
  auto objects = dbg->objects();
  REQUIRE(!objects.empty());
  CHECK(objects.front().path == path);
  CHECK_FALSE(objects.front().is_pie);
  CHECK(objects.front().base == *lowest);
  dbg->kill();
}

TEST_CASE("non-PIE symbol resolves to its absolute address") {
  auto path = fixture("loop_nopie");
  auto dbg = Debugger::spawn(path, {});
  CHECK(dbg->resolve_symbol("f") == testsupport::nm_address(path, "f"));
  CHECK(code_of([&] { dbg->resolve_symbol("no_such_sym"); }) == ErrorCode::SymbolNotFound);
  dbg->kill();
}

TEST_CASE("a symbol in two objects is ambiguous") {
  auto dbg = testsupport::spawn("shadowed");
  dbg->set_breakpoint(SymbolSpec{"main"});
  dbg->cont();
  try {
    dbg->resolve_symbol("f");
    FAIL("expected AmbiguousSymbolError");
  } catch (const AmbiguousSymbolError& e) {
    CHECK(e.code() == ErrorCode::AmbiguousSymbol);
    CHECK(e.candidates().size() == 2);
  }
  Address in_lib = dbg->resolve_symbol("f", "libshadow");
  Address in_exe = dbg->resolve_symbol("f", "shadowed");
  CHECK(in_lib != in_exe);
  auto lib_nm = testsupport::nm_address(fixture("libshadow.so"), "f");
  REQUIRE(lib_nm);
  for (const auto& o : dbg->objects()) {
    if (object_matches(o, "libshadow")) CHECK(in_lib == o.load_bias + *lib_nm);
  }
  dbg->kill();
}

TEST_CASE("resolve_address of f+4 and of unmapped memory") {
  auto dbg = testsupport::spawn("loop", {"1"});
  Address f = dbg->resolve_symbol("f");
  auto info = dbg->resolve_address(f + 4);
  REQUIRE(info);
  CHECK(info->object == fixture("loop"));
  CHECK(info->symbol == "f");
  CHECK(info->offset == 4);
  CHECK_FALSE(dbg->resolve_address(0x10));
  dbg->kill();
}

TEST_CASE("every function round-trips through resolve") {
  for (const char* name : {"loop", "callchain", "threads", "coverage"}) {
    auto path = fixture(name);
    auto dbg = Debugger::spawn(path, {});
    auto funcs = nm_functions(path);
    REQUIRE(!funcs.empty());
    for (const auto& [fn, addr] : funcs) {
      Address a;
      try {
        a = dbg->resolve_symbol(fn, name);
      } catch (const AmbiguousSymbolError&) {
        continue;
      }
      auto info = dbg->resolve_address(a);
      REQUIRE(info);
      // Aliases at one address (e.g. _init/_start neighbours) resolve to a
      // sized sibling; only check sized functions.
      auto size = testsupport::nm_size(path, fn);
      if (!size || *size == 0) continue;
      INFO(name << ":" << fn);
      CHECK(info->symbol == fn);
      CHECK(info->offset == 0);
    }
    dbg->kill();
  }
}

TEST_CASE("backtrace through a known call chain") {
  auto dbg = testsupport::spawn("callchain");
  Address c = dbg->resolve_symbol("c");
  dbg->set_breakpoint(c);
  auto ev = dbg->cont();
  REQUIRE(is<stop::Breakpoint>(ev.reason));
  auto frames = dbg->backtrace(ev.tid);
  REQUIRE(frames.size() >= 4);
  CHECK(frames[0].symbol == "c");
  CHECK(frames[1].symbol == "b");
  CHECK(frames[2].symbol == "a");
  CHECK(frames[3].symbol == "main");
  for (std::size_t i = 1; i < frames.size(); ++i) {
    CHECK(frames[i].frame_base > frames[i - 1].frame_base);
  }
  CHECK(dbg->backtrace(ev.tid, 1).size() == 1);

  // Deeper inside c, past its prologue.
  dbg->step(ev.tid);
  dbg->step(ev.tid);
  dbg->step(ev.tid);
  auto inner = dbg->backtrace(ev.tid);
  REQUIRE(inner.size() >= 4);
  CHECK(inner[0].symbol == "c");
  CHECK(inner[1].symbol == "b");
  CHECK(inner[2].symbol == "a");
  CHECK(inner[3].symbol == "main");
  dbg->kill();
}

TEST_CASE("backtrace after a smashed frame truncates") {
  auto dbg = testsupport::spawn("overflow");
  dbg->set_signal_policy(SignalPolicy().callback(
      SIGSEGV, [](Debugger&, const ThreadContext&) { return Directive::Stop; },
      SignalAction::Suppress));
  dbg->stdin_write(std::string(300, 'B'));
  dbg->stdin_close();
  REQUIRE(dbg->run_until_exit().kind == RunResult::Kind::Stopped);
  auto frames = dbg->backtrace(dbg->pid());
  CHECK(!frames.empty());
  CHECK(frames.size() <= 2);
  CHECK(frames[0].symbol == "vulnerable");
  dbg->kill();
}
