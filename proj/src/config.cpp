#include "irbnn/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "irbnn/errors.hpp"

namespace irbnn {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad(const std::string& origin, int line, const std::string& what) {
  throw ConfigError(origin + ":" + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& v, const std::string& origin, int line) {
  double out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) bad(origin, line, "expected a number, got \"" + v + "\"");
  return out;
}

std::int64_t parse_int(const std::string& v, const std::string& origin, int line) {
  std::int64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) bad(origin, line, "expected an integer, got \"" + v + "\"");
  return out;
}

std::uint64_t parse_u64(const std::string& v, const std::string& origin, int line) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) {
    bad(origin, line, "expected a non-negative integer, got \"" + v + "\"");
  }
  return out;
}

bool parse_bool(const std::string& v, const std::string& origin, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(origin, line, "expected true/false, got \"" + v + "\"");
}

std::string fmt_double(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  std::string raw, section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']') bad(origin, line, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section != "run" && section != "optim" && section != "ede" && section != "out") {
        bad(origin, line, "unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos) bad(origin, line, "expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    if (section.empty()) bad(origin, line, "key \"" + key + "\" before any [section]");

    if (section == "run") {
      if (key == "arch") c.arch = val;
      else if (key == "dataset") c.dataset = val;
      else if (key == "data_root") c.data_root = val;
      else if (key == "epochs") c.epochs = static_cast<int>(parse_int(val, origin, line));
      else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int(val, origin, line));
      else if (key == "seed") c.seed = parse_u64(val, origin, line);
      else if (key == "arm") c.arm = val;
      else if (key == "estimator") c.estimator = val;
      else if (key == "augment") c.augment = parse_bool(val, origin, line);
      else bad(origin, line, "unknown key \"" + key + "\" in [run]");
    } else if (section == "optim") {
      if (key == "lr") c.optim.lr = parse_double(val, origin, line);
      else if (key == "momentum") c.optim.momentum = parse_double(val, origin, line);
      else if (key == "weight_decay") c.optim.weight_decay = parse_double(val, origin, line);
      else if (key == "decay_binary") c.optim.decay_binary = parse_bool(val, origin, line);
      else if (key == "lr_step") c.optim.lr_step = static_cast<int>(parse_int(val, origin, line));
      else if (key == "lr_gamma") c.optim.lr_gamma = parse_double(val, origin, line);
      else bad(origin, line, "unknown key \"" + key + "\" in [optim]");
    } else if (section == "ede") {
      if (key == "t_min") c.t_min = parse_double(val, origin, line);
      else if (key == "t_max") c.t_max = parse_double(val, origin, line);
      else bad(origin, line, "unknown key \"" + key + "\" in [ede]");
    } else {  // out
      if (key == "dir") c.out_dir = val;
      else bad(origin, line, "unknown key \"" + key + "\" in [out]");
    }
  }

  if (c.epochs < 0) throw ConfigError(origin + ": epochs must be >= 0");
  if (c.batch_size < 1) throw ConfigError(origin + ": batch_size must be >= 1");
  if (!(c.t_min > 0) || !(c.t_max >= c.t_min)) {
    throw ConfigError(origin + ": need 0 < t_min <= t_max");
  }
  try {
    arm_from_string(c.arm);
    if (!c.estimator.empty()) estimator_from_string(c.estimator);
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config(buf.str(), path);
}

std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  out << "[run]\n";
  out << "arch = " << c.arch << "\n";
  out << "dataset = " << c.dataset << "\n";
  out << "data_root = " << c.data_root << "\n";
  out << "epochs = " << c.epochs << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "seed = " << c.seed << "\n";
  out << "arm = " << c.arm << "\n";
  out << "estimator = " << c.estimator << "\n";
  out << "augment = " << (c.augment ? "true" : "false") << "\n";
  out << "\n[optim]\n";
  out << "lr = " << fmt_double(c.optim.lr) << "\n";
  out << "momentum = " << fmt_double(c.optim.momentum) << "\n";
  out << "weight_decay = " << fmt_double(c.optim.weight_decay) << "\n";
  out << "decay_binary = " << (c.optim.decay_binary ? "true" : "false") << "\n";
  out << "lr_step = " << c.optim.lr_step << "\n";
  out << "lr_gamma = " << fmt_double(c.optim.lr_gamma) << "\n";
  out << "\n[ede]\n";
  out << "t_min = " << fmt_double(c.t_min) << "\n";
  out << "t_max = " << fmt_double(c.t_max) << "\n";
  out << "\n[out]\n";
  out << "dir = " << c.out_dir << "\n";
  return out.str();
}

}  // namespace irbnn
