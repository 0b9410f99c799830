#include "knnmts/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "knnmts/errors.hpp"
#include "knnmts/ops.hpp"

namespace knnmts {

namespace {

std::vector<double> row_normalize(const std::vector<double>& a, std::size_t n) {
  std::vector<double> p(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += a[i * n + j];
    if (total > 0.0) {
      for (std::size_t j = 0; j < n; ++j) p[i * n + j] = a[i * n + j] / total;
    }
  }
  return p;
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    cells.push_back(cell);
  }
  return cells;
}

double parse_number(const std::string& s, const std::filesystem::path& path, std::size_t row) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw IoError(path.string() + ": row " + std::to_string(row) + ": not a number: \"" + s + "\"");
  }
  return v;
}

std::size_t resolve_node(const std::string& s, const std::vector<std::string>& ids, const std::filesystem::path& path,
                         std::size_t row) {
  const auto it = std::find(ids.begin(), ids.end(), s);
  if (it != ids.end()) return static_cast<std::size_t>(it - ids.begin());
  std::size_t idx = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), idx);
  if (ec != std::errc() || ptr != s.data() + s.size() || idx >= ids.size()) {
    throw IoError(path.string() + ": row " + std::to_string(row) + ": unknown node \"" + s + "\"");
  }
  return idx;
}

}  // namespace

TransitionMatrices transition_matrices(const Tensor& adjacency) {
  const Shape& s = adjacency.shape();
  if (s.size() != 2 || s[0] != s[1]) throw ConfigError("adjacency must be square, got " + shape_string(s));
  const std::size_t n = s[0];
  const auto a = adjacency.data();
  std::vector<double> fwd(a.begin(), a.end());
  std::vector<double> bwd(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (fwd[i * n + j] < 0.0) {
        throw ConfigError("adjacency entry (" + std::to_string(i) + ", " + std::to_string(j) + ") is negative");
      }
      bwd[j * n + i] = fwd[i * n + j];
    }
  }
  return {Tensor({n, n}, row_normalize(fwd, n)), Tensor({n, n}, row_normalize(bwd, n))};
}

Tensor adaptive_adjacency(const Tensor& source_embedding, const Tensor& target_embedding) {
  return softmax(relu(matmul(source_embedding, transpose(target_embedding))), -1);
}

std::vector<Tensor> matrix_power_series(const Tensor& p, std::size_t order) {
  const Shape& s = p.shape();
  if (s.size() != 2 || s[0] != s[1]) throw DimensionError("matrix power of non-square " + shape_string(s));
  const std::size_t n = s[0];
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  std::vector<Tensor> powers;
  powers.emplace_back(Shape{n, n}, std::move(eye));
  for (std::size_t k = 1; k <= order; ++k) powers.push_back(k == 1 ? p : matmul(powers.back(), p));
  return powers;
}

Tensor load_adjacency(const std::filesystem::path& path, const std::vector<std::string>& node_ids) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const std::size_t n = node_ids.size();
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    rows.push_back(split_cells(line));
  }
  if (rows.empty()) throw IoError(path.string() + ": empty adjacency file");
  std::vector<double> a(n * n, 0.0);
  if (!rows[0].empty() && rows[0][0] == "src") {
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].size() != 3) throw IoError(path.string() + ": row " + std::to_string(r) + ": expected src,dst,weight");
      const std::size_t i = resolve_node(rows[r][0], node_ids, path, r);
      const std::size_t j = resolve_node(rows[r][1], node_ids, path, r);
      a[i * n + j] = parse_number(rows[r][2], path, r);
    }
  } else {
    if (rows.size() != n) {
      throw IoError(path.string() + ": dense adjacency has " + std::to_string(rows.size()) + " rows, expected " +
                    std::to_string(n));
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (rows[r].size() != n) {
        throw IoError(path.string() + ": row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                      " cells, expected " + std::to_string(n));
      }
      for (std::size_t j = 0; j < n; ++j) a[r * n + j] = parse_number(rows[r][j], path, r);
    }
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0.0) throw ConfigError(path.string() + ": negative adjacency weight");
  }
  return Tensor({n, n}, std::move(a));
}

}  // namespace knnmts
