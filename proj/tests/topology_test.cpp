#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "mcrnn/topology.hpp"

using namespace mcrnn;

namespace {

// Independent oracle: a channel's blocks start one step before every node
// whose in-degree is 1; enumerate those positions directly.
std::vector<StepInterval> blocks_by_enumeration(int n, int k, long T) {
  const Topology topo(n);
  std::vector<long> starts;
  for (long t = 1; t <= T + n; ++t)
    if (in_degree(topo, k, t) == 1) starts.push_back(t - 1);
  starts.insert(starts.begin(), starts.front() - (n - 1));
  std::vector<StepInterval> out;
  for (long s : starts) {
    const long last = std::min<long>(s + n - 1, T);
    // keep blocks that start before the end and hold two or more real steps
    if (s >= T || last < std::max<long>(s, 1) + 1) continue;
    out.push_back({s, last, s + n - 1 > T});
  }
  return out;
}

// Brute-force in-degree: count predecessors by the block rule "node t is
// connected to every earlier node of its block" with block starts enumerated
// from the channel offset.
int degree_by_blocks(int n, int k, long t) {
  // Eq.-free oracle: blocks of channel k start at s ≡ k (mod n-1).
  const long p = n - 1;
  long s = t - 1;
  while (((s - k) % p + p) % p != 0) --s;
  return static_cast<int>(t - s);
}

}  // namespace

TEST(InDegree, DirectEvaluation) {
  EXPECT_EQ(in_degree(Topology(4), 1, 4), 3);
  EXPECT_EQ(in_degree(Topology(4), 2, 3), 1);
  for (long t = 1; t < 30; ++t) EXPECT_EQ(in_degree(Topology(2), 1, t), 1);
}

TEST(InDegree, NegativeOperandUsesMathematicalModulo) {
  // t - k - 1 = -3 at t = 1, k = 3
  EXPECT_EQ(in_degree(Topology(4), 3, 1), 1);
  EXPECT_EQ(in_degree(Topology(5), 4, 1), 1);
  EXPECT_EQ(in_degree(Topology(5), 2, 1), 3);
}

TEST(InDegree, RangeErrors) {
  const Topology topo(4);
  EXPECT_THROW(in_degree(topo, 0, 1), ArgumentError);
  EXPECT_THROW(in_degree(topo, 4, 1), ArgumentError);
  EXPECT_THROW(in_degree(topo, 1, 0), ArgumentError);
  EXPECT_THROW(Topology(1), ArgumentError);
}

TEST(InDegree, MatchesBlockRuleOracle) {
  for (int n = 2; n <= 6; ++n)
    for (int k = 1; k < n; ++k)
      for (long t = 1; t <= 60; ++t) EXPECT_EQ(in_degree(Topology(n), k, t), degree_by_blocks(n, k, t));
}

TEST(InDegree, PeriodicInStepAndChannel) {
  for (int n = 2; n <= 6; ++n) {
    const Topology topo(n);
    const int p = n - 1;
    for (int k = 1; k <= p; ++k)
      for (long t = 1; t <= 50; ++t) {
        EXPECT_EQ(in_degree(topo, k, t), in_degree(topo, k, t + p));
        // shifting the channel by one shifts the schedule by one step
        if (k < p) EXPECT_EQ(in_degree(topo, k, t), in_degree(topo, k + 1, t + 1));
      }
  }
}

TEST(Predecessors, Examples) {
  EXPECT_EQ(predecessors(Topology(4), 1, 4).steps, (std::vector<long>{3, 2, 1}));
  EXPECT_EQ(predecessors(Topology(4), 3, 1).steps, (std::vector<long>{0}));
  EXPECT_EQ(predecessors(Topology(4), 2, 5).steps, (std::vector<long>{4, 3, 2}));
}

TEST(Predecessors, AlwaysContainImmediateStep) {
  for (int n = 2; n <= 6; ++n)
    for (int k = 1; k < n; ++k)
      for (long t = 1; t <= 40; ++t) {
        const auto p = predecessors(Topology(n), k, t);
        ASSERT_EQ(static_cast<int>(p.steps.size()), p.m);
        EXPECT_EQ(p.steps.front(), t - 1);
        for (std::size_t j = 1; j < p.steps.size(); ++j) EXPECT_EQ(p.steps[j], p.steps[j - 1] - 1);
      }
}

TEST(DegreeProfile, Examples) {
  EXPECT_EQ(degree_profile(Topology(4), 7), (std::set<int>{1, 2, 3}));
  EXPECT_EQ(degree_profile(Topology(3), 5), (std::set<int>{1, 2}));
  EXPECT_EQ(degree_profile(Topology(2), 9), (std::set<int>{1}));
}

TEST(DegreeProfile, CoversAllOffsetsEveryStep) {
  for (int n = 2; n <= 5; ++n) {
    std::set<int> all;
    for (int d = 1; d < n; ++d) all.insert(d);
    for (long t = 1; t <= 200; ++t) EXPECT_EQ(degree_profile(Topology(n), t), all) << n << " " << t;
  }
}

TEST(ShortestPath, Examples) {
  EXPECT_EQ(shortest_path(Topology(2), 1, 1, 5), 5);
  EXPECT_LE(shortest_path(Topology(4), 1, 1, 6), 3);
  EXPECT_EQ(shortest_path(Topology(4), 1, 1, 1), 1);
}

TEST(ShortestPath, LayerPathMeetsBoundEverywhere) {
  for (int n = 2; n <= 5; ++n) {
    const Topology topo(n);
    for (long i = 1; i <= 20; ++i)
      for (long l = 1; l <= 60; ++l) {
        const int d = layer_shortest_path(topo, i, l);
        EXPECT_GE(d, 1);
        EXPECT_LE(d, path_length_bound(topo, l)) << "n=" << n << " i=" << i << " l=" << l;
      }
  }
}

TEST(ShortestPath, ChannelAlignedWithSourceMeetsBound) {
  // a channel whose block starts at i reaches i + l in floor(l/(n-1)) + 1 hops or fewer
  for (int n = 2; n <= 5; ++n) {
    const Topology topo(n);
    const int p = n - 1;
    for (long i = 1; i <= 20; ++i) {
      const int k = static_cast<int>(floor_mod(i - 1, p)) + 1;
      ASSERT_EQ(in_degree(topo, k, i + 1), 1);
      for (long l = 1; l <= 60; ++l) EXPECT_LE(shortest_path(topo, k, i, l), path_length_bound(topo, l));
    }
  }
}

TEST(ShortestPath, SingleChannelCanNeedOneExtraHop) {
  // n=4, channel 1: step 3 is the last interior node of block [1..4], and step 5
  // only links back to 4, so 3 -> 4 -> 5 takes two hops while the bound says one.
  const Topology topo(4);
  EXPECT_EQ(shortest_path(topo, 1, 3, 2), 2);
  EXPECT_EQ(path_length_bound(topo, 2), 1);
  EXPECT_EQ(layer_shortest_path(topo, 3, 2), 1);
  for (int n = 2; n <= 5; ++n)
    for (int k = 1; k < n; ++k)
      for (long i = 1; i <= 20; ++i)
        for (long l = 1; l <= 60; ++l)
          EXPECT_LE(shortest_path(Topology(n), k, i, l), (l + n - 2) / (n - 1) + 1);
}

TEST(BlockPartition, ChannelOneAndChain) {
  EXPECT_EQ(block_partition(Topology(4), 1, 8),
            (std::vector<StepInterval>{{1, 4, false}, {4, 7, false}, {7, 8, true}}));
  EXPECT_EQ(block_partition(Topology(2), 1, 3),
            (std::vector<StepInterval>{{1, 2, false}, {2, 3, false}}));
}

TEST(BlockPartition, FollowsInDegreeResets) {
  // n=4, k=2: resets (m=1) at t = 3, 6 so blocks start at -1, 2, 5.
  EXPECT_EQ(block_partition(Topology(4), 2, 6),
            (std::vector<StepInterval>{{-1, 2, false}, {2, 5, false}, {5, 6, true}}));
  EXPECT_EQ(block_partition(Topology(4), 3, 6),
            (std::vector<StepInterval>{{0, 3, false}, {3, 6, false}}));
  for (int n = 2; n <= 5; ++n)
    for (int k = 1; k < n; ++k)
      for (long T = 2; T <= 15; ++T)
        EXPECT_EQ(block_partition(Topology(n), k, T), blocks_by_enumeration(n, k, T))
            << n << " " << k << " " << T;
}

TEST(BlockPartition, NodesOnlyConnectWithinTheirBlock) {
  for (int n = 2; n <= 5; ++n)
    for (int k = 1; k < n; ++k) {
      const auto blocks = block_partition(Topology(n), k, 30);
      for (long t = 2; t <= 30; ++t) {
        const auto p = predecessors(Topology(n), k, t);
        bool inside = false;
        for (const auto& b : blocks)
          if (b.first <= p.steps.back() && t <= b.first + n - 1) inside = true;
        EXPECT_TRUE(inside) << n << " " << k << " " << t;
      }
    }
}

TEST(Dump, ContainsDegreeRowsAndBoundColumn) {
  const std::string text = dump_topology(Topology(4), 10);
  EXPECT_NE(text.find("1,4,3,3 2 1"), std::string::npos);
  EXPECT_NE(text.find("3,1,1,0(pad)"), std::string::npos);
  EXPECT_EQ(text.find(",no\n"), std::string::npos);
  // i=1, l=12: bound 5, channel 1 needs 4 hops
  EXPECT_NE(text.find("\n1,12,5,4,"), std::string::npos);
}
