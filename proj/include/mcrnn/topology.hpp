#pragma once

// Block schedule of a multi-channel layer. A layer with block size n has
// K = n - 1 channels; in channel k the node at step t mixes the hidden states
// of its m_t^k nearest predecessors, where
//
//     m_t^k = ((t - k - 1) mod (n - 1)) + 1      (non-negative modulo)
//
// Steps <= 0 are zero-padded states. Blocks of n nodes share their boundary
// node, so the in-degree resets every n - 1 steps.

#include <cstdint>
#include <deque>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcrnn/errors.hpp"

namespace mcrnn {

class Topology {
 public:
  explicit Topology(int block_size = 2) : n_(block_size) {
    if (block_size < 2) throw ArgumentError("Topology: block size must be >= 2");
  }

  int block_size() const noexcept { return n_; }
  int channels() const noexcept { return n_ - 1; }

  friend bool operator==(const Topology&, const Topology&) = default;

 private:
  int n_;
};

// Mathematical modulo: result in [0, d) for d > 0.
constexpr long floor_mod(long a, long d) noexcept {
  const long r = a % d;
  return r < 0 ? r + d : r;
}

namespace detail {
inline void check_channel_step(const Topology& topo, int k, long t) {
  if (k < 1 || k > topo.channels())
    throw ArgumentError("channel index " + std::to_string(k) + " outside 1.." +
                        std::to_string(topo.channels()));
  if (t < 1) throw ArgumentError("step index " + std::to_string(t) + " must be >= 1");
}
}  // namespace detail

inline int in_degree(const Topology& topo, int k, long t) {
  detail::check_channel_step(topo, k, t);
  return static_cast<int>(floor_mod(t - k - 1, topo.channels())) + 1;
}

struct Predecessors {
  std::vector<long> steps;  // t-1, t-2, ..., t-m; entries <= 0 are padded zero states
  int m = 0;
};

inline Predecessors predecessors(const Topology& topo, int k, long t) {
  Predecessors p;
  p.m = in_degree(topo, k, t);
  p.steps.reserve(p.m);
  for (int j = 1; j <= p.m; ++j) p.steps.push_back(t - j);
  return p;
}

inline std::set<int> degree_profile(const Topology& topo, long t) {
  std::set<int> out;
  for (int k = 1; k <= topo.channels(); ++k) out.insert(in_degree(topo, k, t));
  return out;
}

// Breadth-first search over channel k's edges (t - j -> t for j in 1..m_t^k)
// from step i to step i + l. Edges only move forward in time, so the search
// never leaves [i, i + l].
inline int shortest_path(const Topology& topo, int k, long i, long l) {
  if (i < 1 || l < 1) throw ArgumentError("shortest_path: need i >= 1 and l >= 1");
  if (k < 1 || k > topo.channels()) throw ArgumentError("shortest_path: channel out of range");
  const long target = i + l;
  std::vector<int> dist(static_cast<std::size_t>(l + 1), -1);
  dist[0] = 0;
  std::deque<long> frontier{i};
  while (!frontier.empty()) {
    const long u = frontier.front();
    frontier.pop_front();
    if (u == target) return dist[static_cast<std::size_t>(u - i)];
    // successors of u: nodes v > u with v - u <= m_v^k
    for (long v = u + 1; v <= target && v - u <= topo.channels(); ++v) {
      if (v - u > in_degree(topo, k, v)) continue;
      auto& d = dist[static_cast<std::size_t>(v - i)];
      if (d >= 0) continue;
      d = dist[static_cast<std::size_t>(u - i)] + 1;
      frontier.push_back(v);
    }
  }
  return -1;  // unreachable: the t-1 edge always exists
}

// Shortest path from the layer input at step i to the layer output at step
// i + l: both touch every channel, so this is the minimum over channels.
inline int layer_shortest_path(const Topology& topo, long i, long l) {
  int best = -1;
  for (int k = 1; k <= topo.channels(); ++k) {
    const int d = shortest_path(topo, k, i, l);
    if (best < 0 || d < best) best = d;
  }
  return best;
}

// Upper bound on the gradient path length: floor(l / (n-1)) + 1.
inline long path_length_bound(const Topology& topo, long l) { return l / topo.channels() + 1; }

struct StepInterval {
  long first = 0;  // may be <= 0 (padded)
  long last = 0;
  bool partial = false;  // truncated by the sequence end

  friend bool operator==(const StepInterval&, const StepInterval&) = default;
};

// Blocks of channel k over steps 1..T. A block starts at step s where the node
// s + 1 has in-degree 1; consecutive blocks share a boundary node. The first
// block listed is the earliest one holding at least two real (t >= 1) nodes.
inline std::vector<StepInterval> block_partition(const Topology& topo, int k, long T) {
  if (T < 1) throw ArgumentError("block_partition: T must be >= 1");
  detail::check_channel_step(topo, k, 1);
  const long period = topo.channels();
  // m_{s+1}^k == 1  <=>  s ≡ k (mod n-1); smallest such s with s + n - 1 >= 2
  long s = 2 - period + floor_mod(k - (2 - period), period);
  std::vector<StepInterval> out;
  for (; s < T || out.empty(); s += period) {
    StepInterval b{s, s + period, false};
    if (b.last > T) {
      b.last = T;
      b.partial = true;
    }
    out.push_back(b);
  }
  return out;
}

// Text dump used by `inspect-topology`.
inline std::string dump_topology(const Topology& topo, long T, long max_offset = 12) {
  std::ostringstream os;
  const int K = topo.channels();
  os << "# topology n=" << topo.block_size() << " channels=" << K << " steps=" << T << "\n";
  os << "# in-degree table: one line per (channel, step)\n";
  os << "channel,step,in_degree,predecessors\n";
  for (int k = 1; k <= K; ++k) {
    for (long t = 1; t <= T; ++t) {
      const auto p = predecessors(topo, k, t);
      os << k << "," << t << "," << p.m << ",";
      for (std::size_t j = 0; j < p.steps.size(); ++j) {
        if (j) os << " ";
        os << p.steps[j];
        if (p.steps[j] <= 0) os << "(pad)";
      }
      os << "\n";
    }
  }
  os << "# blocks per channel\n";
  os << "channel,blocks\n";
  for (int k = 1; k <= K; ++k) {
    os << k << ",";
    bool first = true;
    for (const auto& b : block_partition(topo, k, T)) {
      if (!first) os << " ";
      first = false;
      os << "[" << b.first << ".." << b.last << (b.partial ? " partial" : "") << "]";
    }
    os << "\n";
  }
  os << "# shortest path from step i to step i+l, per channel and for the layer (min over channels),\n";
  os << "# against the bound floor(l/(n-1))+1\n";
  os << "i,l,bound";
  for (int k = 1; k <= K; ++k) os << ",d_channel" << k;
  os << ",d_layer,holds\n";
  for (long i = 1; i <= K; ++i) {
    for (long l = 1; l <= max_offset; ++l) {
      const long bound = path_length_bound(topo, l);
      os << i << "," << l << "," << bound;
      for (int k = 1; k <= K; ++k) os << "," << shortest_path(topo, k, i, l);
      const int d = layer_shortest_path(topo, i, l);
      os << "," << d << "," << (d >= 1 && d <= bound ? "yes" : "no") << "\n";
    }
  }
  return os.str();
}

}  // namespace mcrnn
