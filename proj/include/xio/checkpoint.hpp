#pragma once

// Text checkpoints: a versioned header, the model configuration as
// key = value lines, then every parameter as (name, shape, row-major values).
//
//   xio-checkpoint 1
//   kind displacement-net
//   config 12
//   d_model = 64
//   ...
//   params 87
//   param embed.proj 64 25
//   0.0123 -0.441 ...

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "xio/autodiff.hpp"
#include "xio/config.hpp"
#include "xio/error.hpp"

namespace xio {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointHeader {
  std::string kind;
  KeyValueFile config;
};

inline void save_checkpoint(const std::string& path, const std::string& kind, const KeyValueFile& config,
                            const nn::ParamStore& params) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingArtifact, "cannot write checkpoint " + path);
  out << "xio-checkpoint " << kCheckpointVersion << "\n";
  out << "kind " << kind << "\n";
  out << "config " << config.entries().size() << "\n";
  for (const auto& [k, v] : config.entries()) out << k << " = " << v << "\n";
  out << "params " << params.size() << "\n";
  char buf[32];
  for (const auto& p : params.all()) {
    out << "param " << p.name << " " << p.value.rows() << " " << p.value.cols() << "\n";
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", p.value.data()[i]);
      out << (i ? " " : "") << buf;
    }
    out << "\n";
  }
  if (!out) throw Error(ErrorCode::MissingArtifact, "failed writing checkpoint " + path);
}

namespace detail {

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw Error(ErrorCode::MissingArtifact, "missing checkpoint " + path);
  }

  std::string line() {
    std::string s;
    if (!std::getline(in_, s)) fail("unexpected end of file");
    ++line_no_;
    return s;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::MalformedFile, path_ + ":" + std::to_string(line_no_) + ": " + what);
  }

  /// Reads "<word> <value...>" and returns the remainder after `word`.
  std::string expect(const std::string& word) {
    const std::string s = line();
    if (s.rfind(word + " ", 0) != 0) fail("expected '" + word + "'");
    return s.substr(word.size() + 1);
  }

  int line_no() const { return line_no_; }

 private:
  std::string path_;
  std::ifstream in_;
  int line_no_ = 0;
};

inline long parse_count(CheckpointReader& r, const std::string& s) {
  try {
    std::size_t used = 0;
    const long n = std::stol(s, &used);
    if (used != s.size() || n < 0) throw std::invalid_argument(s);
    return n;
  } catch (const std::exception&) {
    r.fail("bad count '" + s + "'");
  }
}

}  // namespace detail

/// Reads the header and configuration block only.
inline CheckpointHeader read_checkpoint_header(const std::string& path) {
  detail::CheckpointReader r(path);
  if (r.line() != "xio-checkpoint " + std::to_string(kCheckpointVersion)) r.fail("unsupported checkpoint version");
  CheckpointHeader h;
  h.kind = r.expect("kind");
  const long n = detail::parse_count(r, r.expect("config"));
  std::stringstream block;
  for (long i = 0; i < n; ++i) block << r.line() << "\n";
  h.config = KeyValueFile::parse(block, path);
  return h;
}

/// Loads values into an already-built parameter store. Every stored
/// parameter must exist with the same shape, and every store entry must be
/// present in the file.
inline CheckpointHeader load_checkpoint(const std::string& path, const std::string& expected_kind,
                                        nn::ParamStore& params) {
  detail::CheckpointReader r(path);
  if (r.line() != "xio-checkpoint " + std::to_string(kCheckpointVersion)) r.fail("unsupported checkpoint version");
  CheckpointHeader h;
  h.kind = r.expect("kind");
  if (h.kind != expected_kind) r.fail("checkpoint holds a '" + h.kind + "', expected '" + expected_kind + "'");
  const long n = detail::parse_count(r, r.expect("config"));
  std::stringstream block;
  for (long i = 0; i < n; ++i) block << r.line() << "\n";
  h.config = KeyValueFile::parse(block, path);

  const long count = detail::parse_count(r, r.expect("params"));
  if (count != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, path + ": checkpoint has " + std::to_string(count) +
                                              " parameters, model has " + std::to_string(params.size()));
  }
  for (long k = 0; k < count; ++k) {
    std::istringstream head(r.expect("param"));
    std::string name;
    long rows = -1, cols = -1;
    if (!(head >> name >> rows >> cols)) r.fail("bad parameter header");
    if (!params.contains(name)) throw Error(ErrorCode::ShapeMismatch, path + ": unknown parameter " + name);
    nn::Parameter& p = params.at(name);
    if (p.value.rows() != rows || p.value.cols() != cols) {
      throw Error(ErrorCode::ShapeMismatch, path + ": parameter " + name + " is " + std::to_string(rows) + "x" +
                                                std::to_string(cols) + ", model expects " +
                                                std::to_string(p.value.rows()) + "x" +
                                                std::to_string(p.value.cols()));
    }
    std::istringstream values(r.line());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      std::string tok;
      if (!(values >> tok)) r.fail("too few values for " + name);
      try {
        p.value.data()[i] = std::stod(tok);
      } catch (const std::exception&) {
        r.fail("bad value '" + tok + "'");
      }
    }
    std::string extra;
    if (values >> extra) r.fail("too many values for " + name);
  }
  return h;
}

}  // namespace xio
