#include "mslr/io.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mslr/error.hpp"

namespace mslr {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_xyz(const PointCloud& cloud) {
  std::string out;
  if (cloud.label) out += "# label " + std::to_string(*cloud.label) + "\n";
  for (const auto& p : cloud.points) {
    out += format_double(p[0]) + " " + format_double(p[1]) + " " + format_double(p[2]) + "\n";
  }
  return out;
}

namespace {

bool parse_number(const std::string& token, double& out) {
  if (token.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(token.c_str(), &end);
  return end == token.c_str() + token.size() && errno == 0 && std::isfinite(out);
}

}  // namespace

std::string format_shortest(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

PointCloud parse_xyz(const std::string& text) {
  PointCloud cloud;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line[0] == '#') {
      std::istringstream header(line.substr(1));
      std::string key, value, extra;
      header >> key;
      if (key == "label") {
        if (!(header >> value) || (header >> extra)) throw ParseError("malformed label header", lineno);
        try {
          std::size_t used = 0;
          const int label = std::stoi(value, &used);
          if (used != value.size()) throw ParseError("malformed label header", lineno);
          cloud.label = label;
        } catch (const std::logic_error&) {
          throw ParseError("malformed label header", lineno);
        }
      }
      continue;
    }
    std::istringstream fields(line);
    std::string tok;
    std::vector<double> values;
    while (fields >> tok) {
      double v = 0.0;
      if (!parse_number(tok, v)) throw ParseError("not a finite number: '" + tok + "'", lineno);
      values.push_back(v);
    }
    if (values.size() != 3) {
      throw ParseError("expected 3 coordinates, found " + std::to_string(values.size()), lineno);
    }
    cloud.points.push_back({values[0], values[1], values[2]});
  }
  return cloud;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) { write_text_file(path, format_xyz(cloud)); }

PointCloud read_xyz(const std::filesystem::path& path) { return parse_xyz(read_text_file(path)); }

std::string format_metrics_csv(const RunLog& log) {
  bool with_accuracy = false;
  for (const auto& e : log.entries) with_accuracy |= e.accuracy.has_value();
  std::string out = with_accuracy ? "step,epoch,lr,loss,accuracy\n" : "step,epoch,lr,loss\n";
  for (const auto& e : log.entries) {
    out += std::to_string(e.step) + "," + std::to_string(e.epoch) + "," + format_double(e.lr) + "," +
           format_double(e.loss);
    if (with_accuracy) out += "," + (e.accuracy ? format_double(*e.accuracy) : std::string());
    out += "\n";
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const RunLog& log) {
  write_text_file(path, format_metrics_csv(log));
}

}  // namespace mslr
