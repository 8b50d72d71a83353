#include "retflow/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "retflow/metrics.hpp"

namespace retflow {

std::string checkpoint_text(const ParamSet& params) {
  std::string out;
  for (const auto& [name, entry] : params) {
    out += name;
    out += ' ';
    out += std::to_string(entry.value.rows);
    out += ' ';
    out += std::to_string(entry.value.cols);
    out += '\n';
    for (std::size_t r = 0; r < entry.value.rows; ++r) {
      const double* row = entry.value.row(r);
      for (std::size_t c = 0; c < entry.value.cols; ++c) {
        if (c > 0) out += ' ';
        out += fmt_double(row[c]);
      }
      out += '\n';
    }
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamSet& params) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for write: " + path);
  f << checkpoint_text(params);
  f.flush();
  if (!f) throw std::runtime_error("write failed on checkpoint: " + path);
}

namespace {

[[noreturn]] void load_fail(const std::string& origin,
                            const std::string& what) {
  throw std::runtime_error("checkpoint " + origin + ": " + what);
}

}  // namespace

void load_checkpoint_text(const std::string& text, ParamSet& params,
                          const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream header(line);
    std::string name;
    std::size_t rows = 0, cols = 0;
    if (!(header >> name >> rows >> cols)) {
      load_fail(origin, "malformed tensor header `" + line + "`");
    }
    std::string extra;
    if (header >> extra) {
      load_fail(origin, "malformed tensor header `" + line + "`");
    }
    if (!params.has(name)) load_fail(origin, "unknown tensor " + name);
    if (!seen.insert(name).second) {
      load_fail(origin, "duplicate tensor " + name);
    }
    Tensor2D& t = params.value(name);
    if (t.rows != rows || t.cols != cols) {
      load_fail(origin, "dimension mismatch for " + name + ": file has " +
                            std::to_string(rows) + "x" + std::to_string(cols) +
                            ", model expects " + std::to_string(t.rows) + "x" +
                            std::to_string(t.cols));
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (!std::getline(in, line)) {
        load_fail(origin, "truncated data for " + name);
      }
      const char* p = line.data();
      const char* end = line.data() + line.size();
      for (std::size_t c = 0; c < cols; ++c) {
        while (p < end && *p == ' ') ++p;
        double v = 0.0;
        const auto res = std::from_chars(p, end, v);
        if (res.ec != std::errc{}) {
          load_fail(origin, "bad value in " + name + " row " +
                                std::to_string(r));
        }
        t.at(r, c) = v;
        p = res.ptr;
      }
      while (p < end && *p == ' ') ++p;
      if (p != end) {
        load_fail(origin, "extra values in " + name + " row " +
                              std::to_string(r));
      }
    }
  }
  for (const auto& [name, entry] : params) {
    (void)entry;
    if (seen.count(name) == 0) load_fail(origin, "missing tensor " + name);
  }
}

void load_checkpoint(const std::string& path, ParamSet& params) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  load_checkpoint_text(buf.str(), params, path);
}

}  // namespace retflow
