#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "accd/core.hpp"
#include "accd/trace.hpp"

// Compressed sparse matrix with both row and column access (the lazy
// engines walk columns; objective evaluation walks rows).  Ingestion from
// Matrix-Market coordinate text (real, general, 1-based) and from a raw
// little-endian binary dump:
//   uint64 m, uint64 n, uint64 nnz, then nnz * (uint32 row, uint32 col,
//   float64 value), indices 0-based, file size must match exactly.

namespace accd {

struct Triplet {
  int r, c;
  double v;
};

class SparseMatrix {
 public:
  SparseMatrix() = default;

  SparseMatrix(int m, int n, std::vector<Triplet> triplets) : m_(m), n_(n) {
    if (m < 1 || n < 1) throw ContractError("SparseMatrix: dimensions must be positive");
    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
      return a.r != b.r ? a.r < b.r : a.c < b.c;
    });
    for (std::size_t t = 0; t < triplets.size(); ++t) {
      const auto& e = triplets[t];
      if (e.r < 0 || e.r >= m || e.c < 0 || e.c >= n)
        throw ContractError("SparseMatrix: entry index out of range");
      if (!std::isfinite(e.v)) throw ContractError("SparseMatrix: non-finite entry");
      if (t > 0 && triplets[t - 1].r == e.r && triplets[t - 1].c == e.c)
        throw ContractError("SparseMatrix: duplicate (row,col) entry");
    }
    trip_ = std::move(triplets);
    build_compressed();
  }

  int rows() const { return m_; }
  int cols() const { return n_; }
  std::int64_t nnz() const { return static_cast<std::int64_t>(trip_.size()); }

  // row r as (col, value) runs
  std::pair<const int*, const double*> row(int r, int& len) const {
    len = row_ptr_[r + 1] - row_ptr_[r];
    return {row_col_.data() + row_ptr_[r], row_val_.data() + row_ptr_[r]};
  }

  // column c as (row, value) runs
  std::pair<const int*, const double*> col(int c, int& len) const {
    len = col_ptr_[c + 1] - col_ptr_[c];
    return {col_row_.data() + col_ptr_[c], col_val_.data() + col_ptr_[c]};
  }

  int col_nnz(int c) const { return col_ptr_[c + 1] - col_ptr_[c]; }

  const std::vector<Triplet>& triplets() const { return trip_; }

  SparseMatrix transpose() const {
    std::vector<Triplet> t;
    t.reserve(trip_.size());
    for (const auto& e : trip_) t.push_back({e.c, e.r, e.v});
    return SparseMatrix(n_, m_, std::move(t));
  }

  vec multiply(const vec& x) const {
    vec y(static_cast<std::size_t>(m_), 0.0);
    for (int r = 0; r < m_; ++r) {
      int len;
      auto [cols, vals] = row(r, len);
      double s = 0.0;
      for (int t = 0; t < len; ++t) s += vals[t] * x[static_cast<std::size_t>(cols[t])];
      y[static_cast<std::size_t>(r)] = s;
    }
    return y;
  }

  // ---- Matrix-Market coordinate text ----

  static SparseMatrix read_matrix_market(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ContractError("matrix market: empty stream");
    std::string low = line;
    std::transform(low.begin(), low.end(), low.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (low.rfind("%%matrixmarket", 0) != 0 || low.find("matrix") == std::string::npos ||
        low.find("coordinate") == std::string::npos || low.find("real") == std::string::npos ||
        low.find("general") == std::string::npos)
      throw ContractError("matrix market: need 'matrix coordinate real general' header");
    while (std::getline(in, line)) {
      if (!line.empty() && line[0] != '%') break;
    }
    std::istringstream dims(line);
    long long m = 0, n = 0, nnz = -1;
    if (!(dims >> m >> n >> nnz) || m < 1 || n < 1 || nnz < 0)
      throw ContractError("matrix market: malformed size line");
    std::vector<Triplet> trip;
    trip.reserve(static_cast<std::size_t>(nnz));
    for (long long t = 0; t < nnz; ++t) {
      long long r = 0, c = 0;
      double v = 0.0;
      if (!(in >> r >> c >> v)) throw ContractError("matrix market: truncated entry list");
      if (r < 1 || r > m || c < 1 || c > n)
        throw ContractError("matrix market: 1-based index out of range");
      trip.push_back({static_cast<int>(r - 1), static_cast<int>(c - 1), v});
    }
    return SparseMatrix(static_cast<int>(m), static_cast<int>(n), std::move(trip));
  }

  void write_matrix_market(std::ostream& out) const {
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << m_ << ' ' << n_ << ' ' << nnz() << "\n";
    for (const auto& e : trip_)
      out << (e.r + 1) << ' ' << (e.c + 1) << ' ' << format_double(e.v) << "\n";
  }

  // ---- little-endian binary dump ----

  void write_binary(std::ostream& out) const {
    write_u64(out, static_cast<std::uint64_t>(m_));
    write_u64(out, static_cast<std::uint64_t>(n_));
    write_u64(out, static_cast<std::uint64_t>(nnz()));
    for (const auto& e : trip_) {
      write_u32(out, static_cast<std::uint32_t>(e.r));
      write_u32(out, static_cast<std::uint32_t>(e.c));
      std::uint64_t bits;
      std::memcpy(&bits, &e.v, 8);
      write_u64(out, bits);
    }
  }

  static SparseMatrix read_binary(std::istream& in) {
    const std::uint64_t m = read_u64(in);
    const std::uint64_t n = read_u64(in);
    const std::uint64_t nnz = read_u64(in);
    if (m == 0 || n == 0 || m > (1u << 30) || n > (1u << 30))
      throw ContractError("binary matrix: implausible header");
    std::vector<Triplet> trip;
    trip.reserve(nnz);
    for (std::uint64_t t = 0; t < nnz; ++t) {
      const std::uint32_t r = read_u32(in);
      const std::uint32_t c = read_u32(in);
      const std::uint64_t bits = read_u64(in);
      double v;
      std::memcpy(&v, &bits, 8);
      trip.push_back({static_cast<int>(r), static_cast<int>(c), v});
    }
    char extra;
    if (in.read(&extra, 1) && in.gcount() == 1)
      throw ContractError("binary matrix: trailing bytes after entry list");
    return SparseMatrix(static_cast<int>(m), static_cast<int>(n), std::move(trip));
  }

 private:
  void build_compressed() {
    row_ptr_.assign(static_cast<std::size_t>(m_) + 1, 0);
    col_ptr_.assign(static_cast<std::size_t>(n_) + 1, 0);
    for (const auto& e : trip_) {
      ++row_ptr_[static_cast<std::size_t>(e.r) + 1];
      ++col_ptr_[static_cast<std::size_t>(e.c) + 1];
    }
    for (int r = 0; r < m_; ++r) row_ptr_[r + 1] += row_ptr_[r];
    for (int c = 0; c < n_; ++c) col_ptr_[c + 1] += col_ptr_[c];
    row_col_.resize(trip_.size());
    row_val_.resize(trip_.size());
    col_row_.resize(trip_.size());
    col_val_.resize(trip_.size());
    std::vector<int> rfill(row_ptr_.begin(), row_ptr_.end() - 1);
    std::vector<int> cfill(col_ptr_.begin(), col_ptr_.end() - 1);
    for (const auto& e : trip_) {
      const int rp = rfill[static_cast<std::size_t>(e.r)]++;
      row_col_[static_cast<std::size_t>(rp)] = e.c;
      row_val_[static_cast<std::size_t>(rp)] = e.v;
      const int cp = cfill[static_cast<std::size_t>(e.c)]++;
      col_row_[static_cast<std::size_t>(cp)] = e.r;
      col_val_[static_cast<std::size_t>(cp)] = e.v;
    }
  }

  static void write_u64(std::ostream& o, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    o.write(reinterpret_cast<const char*>(b), 8);
  }
  static void write_u32(std::ostream& o, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    o.write(reinterpret_cast<const char*>(b), 4);
  }
  static std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw ContractError("binary matrix: truncated");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  static std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw ContractError("binary matrix: truncated");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  int m_ = 0, n_ = 0;
  std::vector<Triplet> trip_;
  std::vector<int> row_ptr_, row_col_, col_ptr_, col_row_;
  std::vector<double> row_val_, col_val_;
};

}  // namespace accd
