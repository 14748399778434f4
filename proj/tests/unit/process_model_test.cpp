#include <doctest.h>

#include "../support.hpp"

#include <scriptdbg/error.hpp>
#include <scriptdbg/maps.hpp>

#include <random>
#include <set>

using namespace scriptdbg;
using testsupport::is;

TEST_CASE("maps line with path and exec permission") {
  auto m = parse_maps_line("555555554000-555555556000 r-xp 00001000 08:02 131 /bin/true");
  CHECK(m.start == 0x555555554000);
  CHECK(m.end == 0x555555556000);
  CHECK(m.readable);
  CHECK(m.executable);
  CHECK_FALSE(m.writable);
  CHECK(m.is_private);
  CHECK(m.file_offset == 0x1000);
  CHECK(m.path == "/bin/true");
}

TEST_CASE("maps line with pseudo path and deleted suffix") {
  CHECK(parse_maps_line("7ffd0000-7ffd1000 rw-p 00000000 00:00 0 [stack]").path == "[stack]");
  CHECK_FALSE(parse_maps_line("7ffd0000-7ffd1000 rw-p 00000000 00:00 0").path);
  CHECK(parse_maps_line("1000-2000 r--s 00000000 00:05 7 /dev/shm/a b").path == "/dev/shm/a b");
}

TEST_CASE("malformed maps lines") {
  for (const char* bad : {"1000-2000  00000000 00:00 0", "2000-1000 r--p 00000000 00:00 0",
                          "1000-2001 r--p 00000000 00:00 0", "xyz", "1000-2000 rwzp 0 00:00 0"}) {
    CHECK_THROWS_AS(parse_maps_line(bad), MapParseError);
  }
}

TEST_CASE("maps must be sorted and disjoint") {
  CHECK_THROWS_AS(parse_maps("1000-3000 r--p 0 00:00 0\n2000-4000 r--p 0 00:00 0\n"),
                  MapParseError);
  auto maps = parse_maps("3000-4000 r--p 0 00:00 0\n1000-2000 r--p 0 00:00 0\n");
  REQUIRE(maps.size() == 2);
  CHECK(maps[0].start == 0x1000);
}

TEST_CASE("find_map boundaries") {
  auto maps = parse_maps("1000-2000 r--p 0 00:00 0\n5000-6000 r--p 0 00:00 0\n");
  CHECK(find_map(maps, 0x1000)->start == 0x1000);
  CHECK_FALSE(find_map(maps, 0x2000));
  CHECK_FALSE(find_map(maps, 0xfff));
  CHECK(find_map(maps, 0x5fff)->start == 0x5000);
}

TEST_CASE("find_map agrees with a linear scan") {
  std::mt19937_64 rng(7);
  for (int round = 0; round < 50; ++round) {
    std::string text;
    Address at = 0x1000;
    for (int i = 0; i < 40; ++i) {
      at += 0x1000 * (rng() % 4);
      Address end = at + 0x1000 * (1 + rng() % 3);
      char line[96];
      std::snprintf(line, sizeof line, "%lx-%lx r--p 0 00:00 0\n", at, end);
      text += line;
      at = end;
    }
    auto maps = parse_maps(text);
    for (int probe = 0; probe < 500; ++probe) {
      Address a = rng() % (at + 0x2000);
      std::optional<MemoryMap> linear;
      for (const auto& m : maps) {
        if (m.contains(a)) linear = m;
      }
      auto fast = find_map(maps, a);
      REQUIRE(fast.has_value() == linear.has_value());
      if (fast) CHECK(*fast == *linear);
    }
  }
}

TEST_CASE("anonymous mapping of a known size") {
  auto dbg = testsupport::spawn("mapper");
  dbg->set_breakpoint(SymbolSpec{"mapped"});
  auto ev = dbg->cont();
  REQUIRE(is<stop::Breakpoint>(ev.reason));
  Address p = dbg->registers(ev.tid).gp(5);  // rdi on amd64
  if (dbg->arch() == Arch::Aarch64) p = dbg->registers(ev.tid).get("x0");
  auto maps = dbg->maps();
  auto m = find_map(maps, p);
  REQUIRE(m);
  CHECK(m->start == p);
  CHECK(m->size() == 8192);
  CHECK_FALSE(m->path);
  dbg->run_until_exit();
}

TEST_CASE("maps invariants hold across a run") {
  auto dbg = testsupport::spawn("loop", {"20"});
  dbg->set_breakpoint(SymbolSpec{"f"});
  for (;;) {
    auto maps = dbg->maps();
    for (std::size_t i = 0; i < maps.size(); ++i) {
      CHECK(maps[i].start < maps[i].end);
      CHECK(maps[i].start % 4096 == 0);
      CHECK(maps[i].end % 4096 == 0);
      if (i) CHECK(maps[i - 1].end <= maps[i].start);
    }
    if (is<stop::Exited>(dbg->cont().reason)) break;
  }
}

TEST_CASE("snapshot at a breakpoint") {
  auto dbg = testsupport::spawn("loop", {"3"});
  auto nm = testsupport::nm_address(testsupport::fixture("loop"), "f");
  REQUIRE(nm);
  Address f = dbg->resolve_symbol("f");
  auto main_obj = dbg->objects().front();
  CHECK(f == *nm + main_obj.load_bias);
  const auto& bp = dbg->set_breakpoint(f);
  TrapId id = bp.id;
  auto ev = dbg->cont();
  auto ctx = dbg->snapshot(ev.tid);
  REQUIRE(is<stop::Breakpoint>(ctx.stop_reason));
  CHECK(std::get<stop::Breakpoint>(ctx.stop_reason).id == id);
  CHECK(ctx.regs.pc() == f);
  CHECK_FALSE(ctx.in_syscall);
  Tid tid = ev.tid;
  dbg->run_until_exit();
  CHECK_THROWS_AS(dbg->snapshot(tid), Error);
  try {
    dbg->snapshot(tid);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoSuchThread);
  }
}

TEST_CASE("snapshots of four threads have distinct stacks") {
  auto dbg = testsupport::spawn("threads");
  dbg->set_breakpoint(SymbolSpec{"worker_hit"});
  auto ev = dbg->cont();
  REQUIRE(is<stop::Breakpoint>(ev.reason));
  std::set<Tid> tids;
  std::set<Address> sps;
  for (Tid t : dbg->threads()) {
    if (t == dbg->pid()) continue;
    auto ctx = dbg->snapshot(t);
    tids.insert(ctx.tid);
    sps.insert(ctx.regs.sp());
  }
  CHECK(tids.size() == 4);
  CHECK(sps.size() == 4);
  dbg->kill();
}

TEST_CASE("register roles are total and distinct per arch") {
  for (Arch a : {Arch::Amd64, Arch::Aarch64}) {
    RegisterFile regs(a);
    std::set<std::size_t> indexes;
    for (Role r : kAllRoles) indexes.insert(arch_info(a).roles[static_cast<std::size_t>(r)]);
    // aarch64 returns in x0, the first argument register; amd64 keeps the
    // number in orig_rax apart from the rax result.
    CHECK(indexes.size() == kAllRoles.size() - (a == Arch::Aarch64 ? 1 : 0));
    for (Role r : kAllRoles) {
      regs.set(r, 0x42);
      CHECK(regs.get(r) == 0x42);
    }
  }
  CHECK(RegisterFile(Arch::Amd64).index_of("rax") == RegisterFile(Arch::Amd64).index_of("gp0"));
}

TEST_CASE("syscall errno convention") {
  CHECK(syscall_errno(-13) == 13);
  CHECK(syscall_errno(-4095) == 4095);
  CHECK_FALSE(syscall_errno(-4096));
  CHECK_FALSE(syscall_errno(0));
}
