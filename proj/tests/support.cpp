#include "support.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace testsupport {

std::string run_plain(const std::string& name, const std::vector<std::string>& argv,
                      int* status) {
  int fds[2];
  if (pipe(fds) != 0) throw std::runtime_error("pipe");
  pid_t pid = fork();
  if (pid == 0) {
    dup2(fds[1], 1);
    close(fds[0]);
    close(fds[1]);
    std::string path = fixture(name);
    std::vector<char*> args{path.data()};
    std::vector<std::string> copy = argv;
    for (auto& a : copy) args.push_back(a.data());
    args.push_back(nullptr);
    execv(path.c_str(), args.data());
    _exit(127);
  }
  close(fds[1]);
  std::string out;
  char buf[4096];
  ssize_t n;
  while ((n = read(fds[0], buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  close(fds[0]);
  int st = 0;
  waitpid(pid, &st, 0);
  if (status) *status = st;
  return out;
}

}  // namespace testsupport

namespace testsupport {

std::string shell(const std::string& command) {
  FILE* p = popen(command.c_str(), "r");
  if (!p) throw std::runtime_error("popen: " + command);
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  pclose(p);
  return out;
}

namespace {

std::optional<std::pair<std::uint64_t, std::uint64_t>> nm_lookup(const std::string& path,
                                                                  const std::string& symbol) {
  std::istringstream in(shell("nm -S --defined-only '" + path + "' 2>/dev/null; nm -D -S --defined-only '" +
                              path + "' 2>/dev/null"));
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::vector<std::string> f;
    std::string tok;
    while (fields >> tok) f.push_back(tok);
    if (f.size() == 4 && f[3] == symbol) {
      return std::pair{std::stoull(f[0], nullptr, 16), std::stoull(f[1], nullptr, 16)};
    }
    if (f.size() == 3 && f[2] == symbol) return std::pair{std::stoull(f[0], nullptr, 16), 0ull};
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::uint64_t> nm_address(const std::string& path, const std::string& symbol) {
  auto r = nm_lookup(path, symbol);
  if (!r) return std::nullopt;
  return r->first;
}

std::optional<std::uint64_t> nm_size(const std::string& path, const std::string& symbol) {
  auto r = nm_lookup(path, symbol);
  if (!r) return std::nullopt;
  return r->second;
}

std::uint64_t readelf_entry(const std::string& path) {
  std::istringstream in(shell("readelf -h '" + path + "'"));
  std::string line;
  while (std::getline(in, line)) {
    auto pos = line.find("Entry point address:");
    if (pos != std::string::npos) return std::stoull(line.substr(line.find("0x")), nullptr, 16);
  }
  throw std::runtime_error("no entry point in " + path);
}

std::vector<std::uint8_t> file_bytes_at(const std::string& path, std::uint64_t vaddr,
                                        std::size_t len) {
  std::istringstream ph(shell("readelf -lW '" + path + "'"));
  std::string line;
  std::optional<std::uint64_t> file_off;
  while (std::getline(ph, line)) {
    std::istringstream f(line);
    std::string type, off, va, pa, filesz;
    f >> type >> off >> va >> pa >> filesz;
    if (type != "LOAD") continue;
    std::uint64_t o = std::stoull(off, nullptr, 16), v = std::stoull(va, nullptr, 16),
                  s = std::stoull(filesz, nullptr, 16);
    if (vaddr >= v && vaddr < v + s) file_off = o + (vaddr - v);
  }
  if (!file_off) throw std::runtime_error("address not backed by the file");
  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(*file_off));
  std::vector<std::uint8_t> out(len);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(len));
  return out;
}

}  // namespace testsupport

namespace testsupport {

std::optional<std::uint64_t> stack_buffer_offset(const std::string& path,
                                                 const std::string& function) {
#if defined(__x86_64__)
  std::istringstream dis(shell("objdump -d --no-show-raw-insn " + path));
  std::regex start("^[0-9a-f]+ <" + function + ">:");
  std::regex lea(R"(\slea\s+-0x([0-9a-f]+)\(%rbp\))");
  bool inside = false;
  for (std::string line; std::getline(dis, line);) {
    if (!inside) {
      inside = std::regex_search(line, start);
      continue;
    }
    if (line.empty()) break;
    std::smatch m;
    if (std::regex_search(line, m, lea)) return std::stoull(m[1].str(), nullptr, 16);
  }
#else
  (void)path;
  (void)function;
#endif
  return std::nullopt;
}

std::vector<int> plan_outcomes(const std::string& plan) {
  std::vector<int> out(10, 0);
  for (std::size_t i = 0; i < plan.size() && i < out.size(); ++i) {
    out[i] = plan[i] == 'b' ? 2 : (plan[i] == '1' || plan[i] == '0') ? 1 : 0;
  }
  return out;
}

}  // namespace testsupport
