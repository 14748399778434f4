#include "common.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace scriptdbg::tools {

namespace {

std::vector<std::string_view> fields_of(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::optional<Address> parse_hex(std::string_view s) {
  if (s.starts_with("0x") || s.starts_with("0X")) s.remove_prefix(2);
  if (s.empty()) return std::nullopt;
  Address v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || end != s.data() + s.size()) return std::nullopt;
  return v;
}

// Calls fn(line_number, fields) for every non-blank, non-comment line.
template <class Fn>
void for_each_line(std::string_view text, Fn fn) {
  std::size_t number = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++number;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto fields = fields_of(line);
    if (!fields.empty()) fn(number, fields);
  }
}

bool parse_flag(std::string_view field, std::string_view key) {
  if (field == std::string(key) + "=1") return true;
  if (field == std::string(key) + "=0") return false;
  throw std::invalid_argument("bad flag");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Error::raise(ErrorCode::SystemError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<BranchSpec> parse_branch_map(std::string_view text) {
  std::vector<BranchSpec> out;
  for_each_line(text, [&](std::size_t number, const std::vector<std::string_view>& f) {
    if (f.size() != 3) throw MapFormatError(number, "expected <branch> <taken> <fallthrough>");
    auto b = parse_hex(f[0]), t = parse_hex(f[1]), ft = parse_hex(f[2]);
    if (!b || !t || !ft) throw MapFormatError(number, "addresses must be hexadecimal");
    if (*t == *ft) throw MapFormatError(number, "taken and fallthrough targets coincide");
    out.push_back({*b, *t, *ft});
  });
  return out;
}

std::size_t CoverageReport::covered_outcomes() const {
  std::size_t n = 0;
  for (const auto& b : branches) n += (b.taken ? 1 : 0) + (b.fallthrough ? 1 : 0);
  return n;
}

double CoverageReport::branch_coverage() const {
  if (branches.empty()) return 1.0;
  return static_cast<double>(covered_outcomes()) / static_cast<double>(2 * branches.size());
}

std::string CoverageReport::render() const {
  std::string out;
  for (const auto& b : branches) {
    out += hex(b.branch) + " taken=" + (b.taken ? "1" : "0") +
           " fallthrough=" + (b.fallthrough ? "1" : "0") + "\n";
  }
  out += "coverage=" + format_double(branch_coverage()) + "\n";
  return out;
}

CoverageReport CoverageReport::parse(std::string_view text) {
  CoverageReport r;
  for_each_line(text, [&](std::size_t number, const std::vector<std::string_view>& f) {
    if (f.size() == 1 && f[0].starts_with("coverage=")) return;
    auto addr = f.size() == 3 ? parse_hex(f[0]) : std::nullopt;
    if (!addr) throw MapFormatError(number, "expected <branch> taken=<0|1> fallthrough=<0|1>");
    try {
      r.branches.push_back({*addr, parse_flag(f[1], "taken"), parse_flag(f[2], "fallthrough")});
    } catch (const std::invalid_argument&) {
      throw MapFormatError(number, "expected taken=<0|1> fallthrough=<0|1>");
    }
  });
  std::sort(r.branches.begin(), r.branches.end(),
            [](const auto& a, const auto& b) { return a.branch < b.branch; });
  return r;
}

CoverageReport CoverageReport::merged(const CoverageReport& other) const {
  std::map<Address, BranchRecord> all;
  for (const auto* r : {this, &other}) {
    for (const auto& b : r->branches) {
      auto [it, fresh] = all.emplace(b.branch, b);
      if (!fresh) {
        it->second.taken |= b.taken;
        it->second.fallthrough |= b.fallthrough;
      }
    }
  }
  CoverageReport out;
  for (auto& [addr, b] : all) out.branches.push_back(b);
  return out;
}

CoverageReport cmd_coverage(const CoverageOptions& options, std::ostream& warnings) {
  auto specs = parse_branch_map(read_text(options.branch_map));
  CoverageReport report;
  for (const auto& s : specs) report.branches.push_back({s.branch, false, false});
  std::sort(report.branches.begin(), report.branches.end(),
            [](const auto& a, const auto& b) { return a.branch < b.branch; });

  if (specs.empty()) {
    warnings << "warning: branch map " << options.branch_map.string()
             << " lists no branches; coverage is vacuously 1.0\n";
  } else {
    Watchdog dog(options.target.timeout);
    auto dbg = launch(options.target, StdioMode::Inherit);
    dog.watch(dbg->pid());
    Address bias = main_object(dbg->objects(), options.target.binary).load_bias;

    // Outcome flags reached through each runtime target address.
    std::map<Address, std::vector<bool*>> targets;
    std::map<Address, std::size_t> index;
    for (std::size_t i = 0; i < report.branches.size(); ++i) index[report.branches[i].branch] = i;
    for (const auto& s : specs) {
      auto& rec = report.branches[index[s.branch]];
      targets[s.taken + bias].push_back(&rec.taken);
      targets[s.fallthrough + bias].push_back(&rec.fallthrough);
    }
    for (auto& [addr, flags] : targets) {
      dbg->set_breakpoint(addr, BreakpointKind::Software, true,
                          [&flags = flags](Debugger&, const ThreadContext&, const Breakpoint&) {
                            for (bool* f : flags) *f = true;
                            return Directive::Continue;
                          });
    }
    dbg->run_until_exit();
    check_timeout(dog);
  }

  if (options.merge && std::filesystem::exists(options.report)) {
    report = report.merged(CoverageReport::parse(read_text(options.report)));
  }
  std::ofstream out(options.report, std::ios::binary | std::ios::trunc);
  if (!out) Error::raise(ErrorCode::SystemError, "cannot write " + options.report.string());
  out << report.render();
  return report;
}

}  // namespace scriptdbg::tools
