#include <gtest/gtest.h>

#include <cstdlib>
#include <set>

#include "martnorm/decomposition.hpp"
#include "martnorm/generators.hpp"
#include "oracles.hpp"

using namespace martnorm;

namespace {

std::size_t count_by_enumeration(const FiltrationModel& m, std::size_t segments) {
  return enumerate_stopping_partitions(m, segments, [](const StoppingPartition&) { return true; });
}

}  // namespace

TEST(Enumeration, DepthOneHasSinglePartition) {
  const auto m = make_binary_tree(1);
  std::vector<StoppingPartition> seen;
  enumerate_stopping_partitions(m, 1, [&](const StoppingPartition& p) {
    seen.push_back(p);
    return true;
  });
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_TRUE(seen[0].is_monotone(m));
  EXPECT_EQ(seen[0].segments(), 1u);
}

TEST(Enumeration, DepthTwoBinomialMatchesAntichainCounter) {
  const auto m = make_binary_tree(2);
  const auto brute = oracle::chains(m, m.reference(), 2, false).size();
  EXPECT_EQ(brute, 5u);
  EXPECT_EQ(count_by_enumeration(m, 2), brute);
  EXPECT_EQ(count_stopping_partitions(m, 2, 1000), brute);
}

TEST(Enumeration, ChainDepthThreeIsStarsAndBars) {
  const auto m = make_chain(3);
  // 0 <= a <= b <= 3: C(5, 2)
  EXPECT_EQ(count_by_enumeration(m, 3), 10u);
}

TEST(Enumeration, CountsAgreeWithBruteForceOnSmallTrees) {
  for (int depth = 1; depth <= 3; ++depth)
    for (std::size_t seg = 1; seg <= 3; ++seg) {
      const auto m = make_binary_tree(depth);
      EXPECT_EQ(count_by_enumeration(m, seg), oracle::chains(m, m.reference(), seg, false).size())
          << "depth " << depth << " segments " << seg;
    }
  const double row[3] = {0.2, 0.3, 0.5};
  const auto t = make_tree(2, row);
  EXPECT_EQ(count_by_enumeration(t, 2), oracle::chains(t, t.reference(), 2, false).size());
}

TEST(Enumeration, EachPartitionExactlyOnce) {
  const auto m = make_binary_tree(3);
  std::set<std::vector<std::vector<NodeId>>> seen;
  std::size_t n = enumerate_stopping_partitions(m, 3, [&](const StoppingPartition& p) {
    EXPECT_TRUE(p.is_monotone(m));
    std::vector<std::vector<NodeId>> key;
    for (const auto& t : p.times) key.push_back(t.nodes());
    EXPECT_TRUE(seen.insert(key).second);
    return true;
  });
  EXPECT_EQ(n, seen.size());
}

TEST(Enumeration, CapExceededThrows) {
  const auto m = make_binary_tree(3);
  try {
    enumerate_stopping_partitions(m, 3, [](const StoppingPartition&) { return true; }, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("enumeration too large"), std::string::npos);
  }
}

TEST(Enumeration, CapFromEnvironment) {
  ::setenv("MARTNORM_CAP", "12", 1);
  EXPECT_EQ(enumeration_cap(), 12u);
  ::unsetenv("MARTNORM_CAP");
  EXPECT_EQ(enumeration_cap(), kDefaultEnumerationCap);
}

TEST(Cuts, CountMatchesRecursion) {
  const auto m = make_binary_tree(3);
  // c(leaf) = 1, c(v) = 1 + prod c(children): 2, 5, 26
  EXPECT_EQ(count_cuts(m, 1000), 26u);
  EXPECT_EQ(oracle::all_cuts(m, 0).size(), 26u);
  CutLattice lattice(m);
  EXPECT_EQ(lattice.size(), 26u);
}

TEST(Supremum, EnumerateMatchesBruteForce) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    Rng rng(seed);
    const auto m = make_random_tree(2 + static_cast<int>(seed % 2), 2, rng);
    const auto y = random_walk(m, 1.0, rng);
    const auto r = partition_supremum(m, IncrementObjective{&m, &m.reference(), &y}, Strategy::enumerate);
    EXPECT_NEAR(r.value, oracle::partition_sup(m, m.reference(), y), 1e-12) << "seed " << seed;
    EXPECT_NEAR(evaluate_partition(m, IncrementObjective{&m, &m.reference(), &y}, r.partition), r.value, 1e-12);
    EXPECT_FALSE(r.lower_bound);
  }
}

TEST(Supremum, FinestMatchesOracleObjective) {
  Rng rng(4);
  const auto m = make_random_tree(3, 2, rng);
  const auto y = random_walk(m, 1.0, rng);
  std::vector<oracle::Cut> grid;
  for (int k = 0; k <= 3; ++k) {
    oracle::Cut c;
    for (NodeId v = m.level_begin(k); v < m.level_end(k); ++v) c.push_back(v);
    grid.push_back(c);
  }
  const auto r = partition_supremum(m, IncrementObjective{&m, &m.reference(), &y}, Strategy::finest);
  EXPECT_NEAR(r.value, oracle::increment_objective(m, m.reference(), y, grid), 1e-12);
}

TEST(Supremum, GreedyIsBoundedByExact) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    Rng rng(seed);
    const auto m = make_random_tree(3, 2, rng);
    const auto y = random_walk(m, 1.0, rng);
    const IncrementObjective obj{&m, &m.reference(), &y};
    const auto exact = partition_supremum(m, obj, Strategy::enumerate);
    const auto greedy = partition_supremum(m, obj, Strategy::greedy);
    const auto finest = partition_supremum(m, obj, Strategy::finest);
    EXPECT_TRUE(greedy.lower_bound);
    EXPECT_LE(greedy.value, exact.value + 1e-12);
    EXPECT_GE(greedy.value, finest.value - 1e-12);
    EXPECT_TRUE(greedy.partition.is_monotone(m));
  }
}

TEST(Supremum, SegmentLimitRestricts) {
  Rng rng(9);
  const auto m = make_random_tree(3, 2, rng);
  const auto y = random_walk(m, 1.0, rng);
  const IncrementObjective obj{&m, &m.reference(), &y};
  const auto one = partition_supremum(m, obj, Strategy::enumerate, 1);
  EXPECT_EQ(one.partition.segments(), 1u);
  const auto all = partition_supremum(m, obj, Strategy::enumerate);
  EXPECT_GE(all.value, one.value);
}
