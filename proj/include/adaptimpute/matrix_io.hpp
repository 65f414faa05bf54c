#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "adaptimpute/error.hpp"
#include "adaptimpute/observed_matrix.hpp"

namespace adaptimpute::io {

/// Shortest decimal form that round-trips a double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Triplets plus the shape they were read against (0-based indices).
struct Triplets {
  Index rows = 0;
  Index cols = 0;
  std::vector<Entry> entries;
};

namespace detail {

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

/// Reads the banner and size line; returns the banner tokens.
inline std::vector<std::string> read_banner(std::istream& in, std::string& size_line) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("Matrix Market: empty input");
  std::istringstream banner(line);
  std::vector<std::string> tokens;
  for (std::string t; banner >> t;) tokens.push_back(lower(t));
  if (tokens.size() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix") {
    throw DataError("Matrix Market: missing or malformed %%MatrixMarket banner");
  }
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '%') continue;
    size_line = line;
    return tokens;
  }
  throw DataError("Matrix Market: missing size line");
}

}  // namespace detail

/// Reads `%%MatrixMarket matrix coordinate real general` (integer is accepted too).
inline Triplets read_matrix_market(std::istream& in) {
  std::string size_line;
  const auto tokens = detail::read_banner(in, size_line);
  if (tokens[2] != "coordinate") throw DataError("Matrix Market: expected coordinate format");
  if (tokens[3] != "real" && tokens[3] != "integer" && tokens[3] != "double") {
    throw DataError("Matrix Market: unsupported field '" + tokens[3] + "'");
  }
  if (tokens[4] != "general") throw DataError("Matrix Market: only general symmetry is supported");

  Triplets t;
  long long nnz = 0;
  {
    std::istringstream ss(size_line);
    if (!(ss >> t.rows >> t.cols >> nnz) || t.rows <= 0 || t.cols <= 0 || nnz < 0) {
      throw DataError("Matrix Market: malformed size line '" + size_line + "'");
    }
  }
  t.entries.reserve(static_cast<std::size_t>(nnz));
  std::string line;
  while (static_cast<long long>(t.entries.size()) < nnz && std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '%') continue;
    std::istringstream ss(line);
    long long i = 0, j = 0;
    double v = 0.0;
    if (!(ss >> i >> j >> v)) throw DataError("Matrix Market: malformed entry '" + line + "'");
    if (i < 1 || i > t.rows || j < 1 || j > t.cols) {
      throw DataError("Matrix Market: index out of range in '" + line + "'");
    }
    t.entries.push_back({static_cast<Index>(i - 1), static_cast<Index>(j - 1), v});
  }
  if (static_cast<long long>(t.entries.size()) != nnz) {
    throw DataError("Matrix Market: expected " + std::to_string(nnz) + " entries, found " +
                    std::to_string(t.entries.size()));
  }
  return t;
}

inline Triplets read_matrix_market(const std::string& path) {
  auto in = detail::open_in(path);
  return read_matrix_market(in);
}

inline void write_matrix_market(std::ostream& out, Index rows, Index cols,
                                const std::vector<Entry>& entries) {
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << rows << ' ' << cols << ' ' << entries.size() << '\n';
  for (const auto& e : entries) {
    out << (e.row + 1) << ' ' << (e.col + 1) << ' ' << format_double(e.value) << '\n';
  }
}

inline void write_matrix_market(std::ostream& out, const ObservedMatrix& m) {
  write_matrix_market(out, m.original_rows(), m.original_cols(), m.original_entries());
}

inline void write_matrix_market(const std::string& path, const ObservedMatrix& m) {
  auto out = detail::open_out(path);
  write_matrix_market(out, m);
}

/// Dense `%%MatrixMarket matrix array real general`, column-major.
inline void write_dense_matrix_market(std::ostream& out, const Eigen::MatrixXd& a) {
  out << "%%MatrixMarket matrix array real general\n";
  out << a.rows() << ' ' << a.cols() << '\n';
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i) out << format_double(a(i, j)) << '\n';
}

inline void write_dense_matrix_market(const std::string& path, const Eigen::MatrixXd& a) {
  auto out = detail::open_out(path);
  write_dense_matrix_market(out, a);
}

inline Eigen::MatrixXd read_dense_matrix_market(std::istream& in) {
  std::string size_line;
  const auto tokens = detail::read_banner(in, size_line);
  if (tokens[2] != "array" || tokens[4] != "general") {
    throw DataError("Matrix Market: expected 'array ... general' for a dense matrix");
  }
  Index rows = 0, cols = 0;
  {
    std::istringstream ss(size_line);
    if (!(ss >> rows >> cols) || rows <= 0 || cols <= 0) {
      throw DataError("Matrix Market: malformed size line '" + size_line + "'");
    }
  }
  Eigen::MatrixXd a(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i)
      if (!(in >> a(i, j))) throw DataError("Matrix Market: truncated dense data");
  return a;
}

inline Eigen::MatrixXd read_dense_matrix_market(const std::string& path) {
  auto in = detail::open_in(path);
  return read_dense_matrix_market(in);
}

/**
 * Whitespace-separated `user item rating timestamp` rows (MovieLens u.data).
 * Ids are 1-based; the timestamp column is ignored. The shape is the largest
 * user and item id seen.
 */
inline Triplets read_ratings(std::istream& in) {
  Triplets t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    long long user = 0, item = 0;
    double rating = 0.0;
    if (!(ss >> user >> item >> rating)) {
      throw DataError("ratings: malformed line " + std::to_string(lineno) + ": '" + line + "'");
    }
    if (user < 1 || item < 1) {
      throw DataError("ratings: ids must be positive (line " + std::to_string(lineno) + ")");
    }
    t.entries.push_back({static_cast<Index>(user - 1), static_cast<Index>(item - 1), rating});
    t.rows = std::max<Index>(t.rows, static_cast<Index>(user));
    t.cols = std::max<Index>(t.cols, static_cast<Index>(item));
  }
  if (t.entries.empty()) throw DataError("ratings: no entries");
  return t;
}

inline Triplets read_ratings(const std::string& path) {
  auto in = detail::open_in(path);
  return read_ratings(in);
}

enum class Format { matrix_market, ratings };

inline Format guess_format(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : detail::lower(path.substr(dot + 1));
  return ext == "mtx" || ext == "mm" ? Format::matrix_market : Format::ratings;
}

inline Triplets read_triplets(const std::string& path, std::optional<Format> format = {}) {
  return format.value_or(guess_format(path)) == Format::matrix_market ? read_matrix_market(path)
                                                                      : read_ratings(path);
}

}  // namespace adaptimpute::io
