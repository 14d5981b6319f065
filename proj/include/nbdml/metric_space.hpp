#pragma once

// Semi-metric over n observations: shortest-path hops on an undirected simple
// graph, or Euclidean distance between points. Source of N(i, r).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nbdml/error.hpp"

namespace nbdml {

inline constexpr double kInfDistance = std::numeric_limits<double>::infinity();

enum class SpaceKind { graph, euclidean };

struct NeighborhoodStats {
  double r = 0.0;
  double avg_size = 0.0;    // mean |N(i,r)|, self-inclusive
  std::size_t max_size = 0; // max_i |N(i,r)|
  double ratio_sqrt_n = 0.0;
};

class MetricSpace {
 public:
  using Edge = std::pair<std::size_t, std::size_t>;

  MetricSpace() = default;

  // Undirected simple graph. Duplicate edges collapse; self-loops are rejected.
  static MetricSpace graph(std::size_t n, std::span<const Edge> edges) {
    MetricSpace s;
    s.kind_ = SpaceKind::graph;
    s.n_ = n;
    std::vector<std::vector<std::uint32_t>> adj(n);
    for (auto [u, v] : edges) {
      if (u >= n || v >= n) {
        throw ArgumentError("edge (" + std::to_string(u) + "," + std::to_string(v) +
                            ") out of range for n=" + std::to_string(n));
      }
      if (u == v) throw ArgumentError("self-loop at node " + std::to_string(u));
      adj[u].push_back(static_cast<std::uint32_t>(v));
      adj[v].push_back(static_cast<std::uint32_t>(u));
    }
    s.offsets_.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& a = adj[i];
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end()), a.end());
      s.offsets_[i + 1] = s.offsets_[i] + a.size();
    }
    s.targets_.reserve(s.offsets_[n]);
    for (auto& a : adj) s.targets_.insert(s.targets_.end(), a.begin(), a.end());
    return s;
  }

  static MetricSpace empty_graph(std::size_t n) { return graph(n, {}); }

  // Points stored row-major, `dim` coordinates each.
  static MetricSpace euclidean(std::vector<double> coords, std::size_t dim) {
    if (dim == 0) throw ArgumentError("euclidean space needs dim >= 1");
    if (coords.size() % dim != 0) {
      throw ArgumentError("coordinate count is not a multiple of dim");
    }
    MetricSpace s;
    s.kind_ = SpaceKind::euclidean;
    s.dim_ = dim;
    s.n_ = coords.size() / dim;
    s.coords_ = std::move(coords);
    return s;
  }

  SpaceKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return n_; }
  std::size_t dim() const noexcept { return dim_; }

  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    check_graph();
    check_index(i);
    return {targets_.data() + offsets_[i], targets_.data() + offsets_[i + 1]};
  }

  std::size_t degree(std::size_t i) const { return neighbors(i).size(); }

  std::size_t edge_count() const noexcept { return targets_.size() / 2; }

  std::vector<Edge> edges() const {
    check_graph();
    std::vector<Edge> out;
    out.reserve(edge_count());
    for (std::size_t u = 0; u < n_; ++u) {
      for (auto v : neighbors(u)) {
        if (u < v) out.emplace_back(u, v);
      }
    }
    return out;
  }

  std::span<const double> point(std::size_t i) const {
    check_index(i);
    return {coords_.data() + i * dim_, dim_};
  }

  double distance(std::size_t i, std::size_t j) const {
    check_index(i);
    check_index(j);
    if (i == j) return 0.0;
    if (kind_ == SpaceKind::euclidean) return euclid(i, j);
    // BFS from i, stopping as soon as j is reached.
    std::vector<std::int32_t> dist(n_, -1);
    std::vector<std::uint32_t> frontier{static_cast<std::uint32_t>(i)}, next;
    dist[i] = 0;
    std::int32_t depth = 0;
    while (!frontier.empty()) {
      ++depth;
      next.clear();
      for (auto u : frontier) {
        for (auto v : neighbors(u)) {
          if (dist[v] >= 0) continue;
          if (v == j) return depth;
          dist[v] = depth;
          next.push_back(v);
        }
      }
      frontier.swap(next);
    }
    return kInfDistance;
  }

  // Hop distances from `source`, truncated at `max_depth`; -1 beyond or unreachable.
  std::vector<std::int32_t> bfs(std::size_t source,
                                std::int32_t max_depth = std::numeric_limits<std::int32_t>::max()) const {
    std::size_t src[1] = {source};
    return multi_source_bfs(src, max_depth);
  }

  // Hop distance to the nearest source, truncated at `max_depth`.
  std::vector<std::int32_t> multi_source_bfs(
      std::span<const std::size_t> sources,
      std::int32_t max_depth = std::numeric_limits<std::int32_t>::max()) const {
    check_graph();
    std::vector<std::int32_t> dist(n_, -1);
    std::vector<std::uint32_t> frontier, next;
    for (auto s : sources) {
      check_index(s);
      if (dist[s] < 0) {
        dist[s] = 0;
        frontier.push_back(static_cast<std::uint32_t>(s));
      }
    }
    std::int32_t depth = 0;
    while (!frontier.empty() && depth < max_depth) {
      ++depth;
      next.clear();
      for (auto u : frontier) {
        for (auto v : neighbors(u)) {
          if (dist[v] < 0) {
            dist[v] = depth;
            next.push_back(v);
          }
        }
      }
      frontier.swap(next);
    }
    return dist;
  }

  // N(i, r) = {j : rho(i, j) <= r}, sorted ascending. Always contains i.
  std::vector<std::size_t> neighborhood(std::size_t i, double r) const {
    check_index(i);
    if (!(r >= 0.0)) throw ArgumentError("radius must be >= 0");
    std::vector<std::size_t> out;
    if (kind_ == SpaceKind::euclidean) {
      for (std::size_t j = 0; j < n_; ++j) {
        if (j == i || euclid(i, j) <= r) out.push_back(j);
      }
      return out;
    }
    const auto depth = hop_radius(r);
    // Scratch marks are reset after use so repeated queries stay O(|N(i,r)|).
    thread_local std::vector<char> mark;
    if (mark.size() < n_) mark.assign(n_, 0);
    std::vector<std::uint32_t> frontier{static_cast<std::uint32_t>(i)}, next;
    std::vector<std::uint32_t> seen{static_cast<std::uint32_t>(i)};
    mark[i] = 1;
    for (std::int32_t d = 0; d < depth && !frontier.empty(); ++d) {
      next.clear();
      for (auto u : frontier) {
        for (auto v : neighbors(u)) {
          if (!mark[v]) {
            mark[v] = 1;
            next.push_back(v);
            seen.push_back(v);
          }
        }
      }
      frontier.swap(next);
    }
    for (auto v : seen) mark[v] = 0;
    out.assign(seen.begin(), seen.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  // Sorted union N(i, r) ∪ N(j, r).
  std::vector<std::size_t> neighborhood_union(std::size_t i, std::size_t j, double r) const {
    auto a = neighborhood(i, r);
    if (i == j) return a;
    auto b = neighborhood(j, r);
    std::vector<std::size_t> out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
  }

  NeighborhoodStats neighborhood_stats(double r) const {
    if (!(r >= 0.0)) throw ArgumentError("radius must be >= 0");
    NeighborhoodStats st;
    st.r = r;
    if (n_ == 0) return st;
    double total = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      const auto sz = neighborhood_size(i, r);
      total += static_cast<double>(sz);
      st.max_size = std::max(st.max_size, sz);
    }
    st.avg_size = total / static_cast<double>(n_);
    st.ratio_sqrt_n = st.avg_size / std::sqrt(static_cast<double>(n_));
    return st;
  }

  // rho(S1, S2) = min over pairs.
  double set_distance(std::span<const std::size_t> s1, std::span<const std::size_t> s2) const {
    if (s1.empty() || s2.empty()) throw ArgumentError("set_distance needs nonempty sets");
    for (auto j : s2) check_index(j);
    if (kind_ == SpaceKind::euclidean) {
      double best = kInfDistance;
      for (auto i : s1) {
        check_index(i);
        for (auto j : s2) best = std::min(best, i == j ? 0.0 : euclid(i, j));
      }
      return best;
    }
    const auto dist = multi_source_bfs(s1);
    double best = kInfDistance;
    for (auto j : s2) {
      if (dist[j] >= 0) best = std::min(best, static_cast<double>(dist[j]));
    }
    return best;
  }

 private:
  std::size_t neighborhood_size(std::size_t i, double r) const {
    if (kind_ == SpaceKind::euclidean) {
      std::size_t c = 0;
      for (std::size_t j = 0; j < n_; ++j) c += (j == i || euclid(i, j) <= r) ? 1 : 0;
      return c;
    }
    return neighborhood(i, r).size();
  }

  static std::int32_t hop_radius(double r) {
    if (std::isinf(r)) return std::numeric_limits<std::int32_t>::max();
    return static_cast<std::int32_t>(
        std::min(std::floor(r), static_cast<double>(std::numeric_limits<std::int32_t>::max())));
  }

  double euclid(std::size_t i, std::size_t j) const {
    double s = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) {
      const double d = coords_[i * dim_ + k] - coords_[j * dim_ + k];
      s += d * d;
    }
    return std::sqrt(s);
  }

  void check_index(std::size_t i) const {
    if (i >= n_) {
      throw ArgumentError("index " + std::to_string(i) + " out of range for n=" +
                          std::to_string(n_));
    }
  }

  void check_graph() const {
    if (kind_ != SpaceKind::graph) throw ArgumentError("operation requires a graph space");
  }

  SpaceKind kind_ = SpaceKind::graph;
  std::size_t n_ = 0;
  std::size_t dim_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::uint32_t> targets_;
  std::vector<double> coords_;
};

// Dense all-pairs hop distances (-1 = disconnected). Refuses n above `cap`.
inline std::vector<std::int32_t> all_pairs_hops(const MetricSpace& space,
                                                std::size_t cap = 5000) {
  const auto n = space.size();
  if (n > cap) {
    throw ArgumentError("all-pairs matrix refused: n=" + std::to_string(n) +
                        " exceeds cap " + std::to_string(cap));
  }
  std::vector<std::int32_t> out(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = space.bfs(i);
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

// Edge list: "# nodes <n>" header, then one "u v" pair per line, 0-indexed.
inline void write_edge_list(std::ostream& os, const MetricSpace& space) {
  os << "# nodes " << space.size() << '\n';
  for (auto [u, v] : space.edges()) os << u << ' ' << v << '\n';
}

// Reads the format above. Without a header, n = 1 + largest index seen
// (or `n_hint` if larger).
inline MetricSpace read_edge_list(std::istream& is, std::size_t n_hint = 0) {
  std::vector<MetricSpace::Edge> edges;
  std::size_t n = n_hint;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      std::istringstream hs(line.substr(first + 1));
      std::string word;
      std::size_t declared = 0;
      if (hs >> word && word == "nodes" && hs >> declared) n = std::max(n, declared);
      continue;
    }
    std::istringstream ls(line);
    long long u = -1, v = -1;
    std::string rest;
    if (!(ls >> u >> v) || u < 0 || v < 0 || (ls >> rest)) {
      throw ArgumentError("edge list line " + std::to_string(lineno) + ": expected 'u v'");
    }
    edges.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
    n = std::max(n, static_cast<std::size_t>(std::max(u, v)) + 1);
  }
  return MetricSpace::graph(n, edges);
}

}  // namespace nbdml
