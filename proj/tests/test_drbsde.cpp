#include <gtest/gtest.h>

#include "martnorm/drbsde.hpp"
#include "martnorm/generators.hpp"
#include "oracles.hpp"

using namespace martnorm;

namespace {

DrbsdeInstance barrier_instance(const GeneratedInstance& g, bool with_driver) {
  DrbsdeInstance inst;
  inst.terminal = g.process("xi");
  inst.lower = g.process("L");
  inst.upper = g.process("U");
  inst.dt = g.scalars.at("dt");
  inst.driver = with_driver ? Driver::linear(g.scalars.at("driver_y"), g.scalars.at("driver_z"), g.process("driver_c"))
                            : Driver::zero();
  return inst;
}

GeneratedInstance barriers(std::uint64_t seed, int depth) {
  return random_instance(GeneratorSpec{seed, depth, 2, 1.0, GeneratorKind::random_barriers});
}

DrbsdeInstance free_instance(const FiltrationModel& m, const AdaptedProcess& xi) {
  DrbsdeInstance inst;
  inst.terminal = xi;
  inst.lower = AdaptedProcess(m.node_count(), -kInfiniteBarrier);
  inst.upper = AdaptedProcess(m.node_count(), kInfiniteBarrier);
  inst.dt = 1.0 / m.horizon();
  inst.driver = Driver::zero();
  return inst;
}

}  // namespace

TEST(Solve, UnconstrainedIsConditionalExpectation) {
  Rng rng(1);
  const auto m = make_random_tree(4, 2, rng);
  const auto xi = random_walk(m, 1.0, rng);
  const auto s = solve(m, m.reference(), free_instance(m, xi));
  const auto ce = conditional_expectation(m, m.reference(), xi, StoppingTime::initial(m), StoppingTime::terminal(m));
  const auto ps = oracle::paths(m, m.reference());
  for (NodeId v = 0; v < m.node_count(); ++v) {
    EXPECT_NEAR(s.y[v], oracle::cond(ps, v, [&](const oracle::Path& p) { return xi[p.nodes.back()]; }), 1e-12);
    EXPECT_EQ(s.k_plus[v], 0.0);
    EXPECT_EQ(s.k_minus[v], 0.0);
  }
  EXPECT_NEAR(s.y[0], ce[0], 1e-12);
  EXPECT_FALSE(s.z_surrogate);
}

TEST(Solve, ZReproducesTheMartingaleIncrements) {
  Rng rng(2);
  const auto m = make_random_tree(3, 2, rng);
  const auto xi = random_walk(m, 1.0, rng);
  const auto inst = free_instance(m, xi);
  const auto s = solve(m, m.reference(), inst);
  for (NodeId v = 0; v < m.first_leaf(); ++v) {
    const NodeId c = m.first_child(v);
    const auto b = *default_increments(m.reference()[c], inst.dt);
    EXPECT_NEAR(s.y[c] - s.y[v], s.z[v] * b.first, 1e-12);
    EXPECT_NEAR(s.y[c + 1] - s.y[v], s.z[v] * b.second, 1e-12);
    // mean zero, variance dt
    const double p = m.reference()[c];
    EXPECT_NEAR(p * b.first + (1 - p) * b.second, 0.0, 1e-15);
    EXPECT_NEAR(p * b.first * b.first + (1 - p) * b.second * b.second, inst.dt, 1e-15);
  }
}

TEST(Solve, NonBinaryUsesFlaggedSurrogate) {
  const double row[3] = {0.2, 0.3, 0.5};
  const auto m = make_tree(2, row);
  Rng rng(3);
  const auto s = solve(m, m.reference(), free_instance(m, random_walk(m, 1.0, rng)));
  EXPECT_TRUE(s.z_surrogate);
}

TEST(Solve, EqualBarriersForceTheBarrier) {
  Rng rng(4);
  const auto m = make_random_tree(4, 2, rng);
  const auto sproc = random_walk(m, 1.0, rng);
  DrbsdeInstance inst;
  inst.terminal = sproc;
  inst.lower = sproc;
  inst.upper = sproc;
  inst.dt = 0.25;
  inst.driver = Driver::zero();
  const auto s = solve(m, m.reference(), inst);
  const auto a = doob_decompose(m, m.reference(), sproc).finite_variation;
  const auto refl = reflection_process(s);
  for (NodeId v = 0; v < m.node_count(); ++v) {
    EXPECT_EQ(s.y[v], sproc[v]);
    EXPECT_NEAR(refl[v], -a[v], 1e-12);
  }
}

TEST(Solve, EqualBarrierCounterexampleDepthFour) {
  const auto m = make_chain(4);
  auto [l, u] = equal_barriers_counterexample(m);
  DrbsdeInstance inst{l, Driver::zero(), l, u, 0.25, std::nullopt};
  const auto s = solve(m, m.reference(), inst);
  EXPECT_DOUBLE_EQ(s.k_plus[4] + s.k_minus[4], 4.0);
  EXPECT_DOUBLE_EQ(total_variation(m, reflection_process(s))[4], 4.0);
}

TEST(Solve, SkorokhodConditionsExact) {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const auto g = barriers(seed, 1 + static_cast<int>(seed % 5));
    const auto& m = g.model;
    const auto inst = barrier_instance(g, true);
    const auto s = solve(m, m.reference(), inst, Scheme::explicit_euler);
    for (NodeId v = 0; v < m.node_count(); ++v) {
      EXPECT_GE(s.y[v], inst.lower[v]);
      EXPECT_LE(s.y[v], inst.upper[v]);
      EXPECT_FALSE(s.dk_plus[v] > 0.0 && s.dk_minus[v] > 0.0);
      if (s.dk_plus[v] > 0.0) {
        EXPECT_EQ(s.y[v], inst.lower[v]);
      }
      if (s.dk_minus[v] > 0.0) {
        EXPECT_EQ(s.y[v], inst.upper[v]);
      }
      if (v > 0) {
        EXPECT_GE(s.k_plus[v], s.k_plus[m.parent(v)]);
        EXPECT_GE(s.k_minus[v], s.k_minus[m.parent(v)]);
      }
    }
    for (NodeId v = 0; v < m.first_leaf(); ++v) {
      const double mean = one_step_mean(m, m.reference(), s.y.span(), v);
      const double f = inst.driver(v, m.time_of(v), mean, s.z[v]);
      const NodeId c = m.first_child(v);
      const double dkp = s.k_plus[c] - s.k_plus[v], dkm = s.k_minus[c] - s.k_minus[v];
      EXPECT_NEAR(s.y[v], mean + f * inst.dt + dkp - dkm, 1e-10);
    }
    EXPECT_EQ(s.k_plus[0], 0.0);
    EXPECT_EQ(s.k_minus[0], 0.0);
  }
}

TEST(Solve, AgreesWithPenalization) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto g = barriers(seed, 1 + static_cast<int>(seed % 5));
    const auto& m = g.model;
    auto inst = barrier_instance(g, false);
    const double a = g.scalars.at("driver_y");
    const auto& c = g.process("driver_c");
    inst.driver = Driver::linear(a, 0.0, c);
    const auto s = solve(m, m.reference(), inst, Scheme::explicit_euler);
    const auto pen = oracle::penalized_solution(
        m, m.reference(), inst.terminal, inst.lower, inst.upper, inst.dt,
        [&](NodeId v, double y, double) { return a * y + c[v]; }, 1e6);
    for (NodeId v = 0; v < m.node_count(); ++v) EXPECT_NEAR(s.y[v], pen[v], 1e-3) << "seed " << seed;
  }
}

TEST(Solve, PicardMatchesFixedPoint) {
  const auto g = barriers(5, 3);
  auto inst = barrier_instance(g, false);
  inst.driver = Driver::linear(0.8, 0.0, g.process("driver_c"));
  inst.dt = 0.8;
  const auto s = solve(g.model, g.model.reference(), inst);
  EXPECT_EQ(s.scheme, Scheme::picard);
  for (NodeId v = 0; v < g.model.first_leaf(); ++v) {
    const double mean = one_step_mean(g.model, g.model.reference(), s.y.span(), v);
    const double c = g.process("driver_c")[v];
    const double fixed = (mean + c * inst.dt) / (1.0 - 0.8 * inst.dt);
    const double want = std::clamp(fixed, inst.lower[v], inst.upper[v]);
    EXPECT_NEAR(s.y[v], want, 1e-9);
  }
}

TEST(Solve, DivergentIterationReported) {
  const auto m = make_binary_tree(2);
  auto inst = free_instance(m, AdaptedProcess(m.node_count(), 1.0));
  inst.dt = 1.0;
  inst.driver = Driver::linear(2.0, 0.0, AdaptedProcess(m.node_count()));
  try {
    solve(m, m.reference(), inst, Scheme::picard);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "driver iteration diverged");
  }
}

TEST(Solve, CrossedBarriersRejected) {
  const auto m = make_binary_tree(1);
  auto inst = free_instance(m, AdaptedProcess(m.node_count()));
  inst.lower[0] = 1.0;
  inst.upper[0] = 0.0;
  try {
    solve(m, m.reference(), inst);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("barriers crossed"), std::string::npos);
  }
}

TEST(Solve, LipschitzSpotCheck) {
  const auto m = make_binary_tree(1);
  auto inst = free_instance(m, AdaptedProcess(m.node_count()));
  inst.driver = Driver{[](NodeId, int, double y, double) { return 3.0 * y; }, 1.0};
  EXPECT_THROW(validate_instance(m, inst), Error);
}

TEST(BarrierNorm, ZeroBetweenBarriers) {
  Rng rng(6);
  const auto m = make_random_tree(3, 2, rng);
  AdaptedProcess l(m.node_count()), u(m.node_count());
  for (NodeId v = 0; v < m.node_count(); ++v) {
    l[v] = -rng.uniform();
    u[v] = rng.uniform();
  }
  EXPECT_EQ(barrier_norm(m, m.reference(), l, u, Strategy::enumerate), 0.0);
}

TEST(BarrierNorm, EqualDeterministicBarriers) {
  const auto m = make_binary_tree(4);
  AdaptedProcess s(m.node_count());
  const double path[5] = {0.5, 2.0, -1.0, 0.0, 3.0};
  for (NodeId v = 0; v < m.node_count(); ++v) s[v] = path[m.time_of(v)];
  const auto r = barrier_norm_report(m, m.reference(), s, s, Strategy::finest);
  const double tv = 1.5 + 3.0 + 1.0 + 3.0;
  EXPECT_NEAR(r.partition_part, tv * tv, 1e-12);
}

TEST(BarrierNorm, EnumerateMatchesBruteForce) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto g = barriers(seed, 2 + static_cast<int>(seed % 2));
    const auto& m = g.model;
    const auto& l = g.process("L");
    const auto& u = g.process("U");
    const auto r = barrier_norm_report(m, m.reference(), l, u, Strategy::enumerate);
    double best = 0.0;
    for (const auto& c : oracle::chains(m, m.reference(), m.internal_count() + 1, true))
      best = std::max(best, oracle::barrier_objective(m, m.reference(), l, u, c));
    EXPECT_NEAR(r.partition_part, best, 1e-12) << "seed " << seed;
  }
}

TEST(I0, Cases) {
  const auto m = make_binary_tree(3);
  EXPECT_EQ(i0(m, m.reference(), AdaptedProcess(m.node_count()), Driver::zero(), 0.5), 0.0);
  EXPECT_DOUBLE_EQ(i0(m, m.reference(), AdaptedProcess(m.node_count(), 1.0), Driver::zero(), 0.5), 1.0);
  Rng rng(7);
  const auto r = make_random_tree(3, 2, rng);
  const auto xi = random_walk(r, 1.0, rng), c = random_walk(r, 1.0, rng);
  const auto f = Driver::linear(0.5, 0.5, c);
  const double dt = 1.0 / 3;
  const double want = oracle::expect(oracle::paths(r, r.reference()), [&](const oracle::Path& p) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) s += std::abs(c[p.nodes[i]]) * dt;
    return xi[p.nodes.back()] * xi[p.nodes.back()] + s * s;
  });
  EXPECT_NEAR(i0(r, r.reference(), xi, f, dt), want, 1e-12);
}

TEST(SolutionNorm, Cases) {
  const auto m = make_binary_tree(2);
  const auto zero = solve(m, m.reference(), free_instance(m, AdaptedProcess(m.node_count())));
  EXPECT_EQ(solution_norm(m, m.reference(), zero, 0.5), 0.0);

  Rng rng(8);
  const auto r = make_random_tree(3, 2, rng);
  const auto inst = free_instance(r, random_walk(r, 1.0, rng));
  const auto s = solve(r, r.reference(), inst);
  const auto ps = oracle::paths(r, r.reference());
  const double zsum = oracle::expect(ps, [&](const oracle::Path& p) {
    double z = 0.0;
    for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) z += s.z[p.nodes[i]] * s.z[p.nodes[i]] * inst.dt;
    return z;
  });
  EXPECT_NEAR(solution_norm(r, r.reference(), s, inst.dt), oracle::norm_p0(r, r.reference(), s.y) + zsum, 1e-12);
}

TEST(Excursions, NoReflection) {
  const auto m = make_binary_tree(3);
  const AdaptedProcess zero(m.node_count());
  const auto t = excursion_times(m, zero, zero);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_TRUE(t[0] == StoppingTime::initial(m));
  EXPECT_TRUE(t[1] == StoppingTime::terminal(m));
  EXPECT_TRUE(t[2] == StoppingTime::terminal(m));
}

TEST(Excursions, DeterministicJumps) {
  const auto m = make_chain(7);
  AdaptedProcess kp(m.node_count()), km(m.node_count());
  for (NodeId v = 0; v < m.node_count(); ++v) {
    kp[v] = m.time_of(v) >= 2 ? 1.0 : 0.0;
    km[v] = m.time_of(v) >= 5 ? 2.0 : 0.0;
  }
  const auto t = excursion_times(m, kp, km);
  ASSERT_EQ(t.size(), 5u);
  EXPECT_EQ(t[1].stop_level(m, m.first_leaf()), 2);
  EXPECT_EQ(t[2].stop_level(m, m.first_leaf()), 5);
  EXPECT_EQ(t[3].stop_level(m, m.first_leaf()), 7);
  EXPECT_EQ(t[4].stop_level(m, m.first_leaf()), 7);
}

TEST(Excursions, MatchPerPathScan) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto g = barriers(seed, 2 + static_cast<int>(seed % 4));
    const auto& m = g.model;
    const auto s = solve(m, m.reference(), barrier_instance(g, true));
    const auto t = excursion_times(m, s.k_plus, s.k_minus);
    const auto scan = oracle::excursion_scan(m, s.k_plus, s.k_minus);
    for (NodeId leaf = m.first_leaf(); leaf < m.node_count(); ++leaf) {
      const auto& want = scan[leaf - m.first_leaf()];
      for (std::size_t i = 0; i < t.size(); ++i) {
        const std::size_t expect = i < want.size() ? want[i] : static_cast<std::size_t>(m.horizon());
        EXPECT_EQ(static_cast<std::size_t>(t[i].stop_level(m, leaf)), expect) << "seed " << seed << " time " << i;
      }
      EXPECT_LE(want.size(), t.size());
    }
  }
}

TEST(Difference, IdenticalInstancesGiveZero) {
  const auto g = barriers(3, 3);
  const auto inst = barrier_instance(g, true);
  const auto s = solve(g.model, g.model.reference(), inst);
  const auto r = difference_report(g.model, g.model.reference(), inst, inst, s, s);
  EXPECT_EQ(r.lhs, 0.0);
  EXPECT_EQ(r.rhs, 0.0);
}

TEST(Difference, TerminalShiftOnly) {
  Rng rng(9);
  const auto m = make_random_tree(3, 2, rng);
  const auto xi = random_walk(m, 1.0, rng);
  auto a = free_instance(m, xi), b = free_instance(m, xi + AdaptedProcess(m.node_count(), 0.5));
  const auto sa = solve(m, m.reference(), a), sb = solve(m, m.reference(), b);
  const auto r = difference_report(m, m.reference(), a, b, sa, sb);
  EXPECT_NEAR(r.driver_terminal_term, 0.25, 1e-12);
  EXPECT_NEAR(r.lhs, 0.25, 1e-12);
  EXPECT_EQ(r.barrier_term, 0.0);
}

TEST(Mokobodski, WitnessLiesBetweenBarriers) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto g = barriers(seed, 4);
    const auto& l = g.process("L");
    const auto& u = g.process("U");
    const auto w = mokobodski_witness(g.model, g.model.reference(), l, u);
    for (NodeId v = 0; v < g.model.node_count(); ++v) {
      EXPECT_GE(w[v], l[v]);
      EXPECT_LE(w[v], u[v]);
    }
  }
}

TEST(JumpBound, HoldsForZeroDriver) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto g = barriers(seed, 4);
    const auto inst = barrier_instance(g, false);
    const auto s = solve(g.model, g.model.reference(), inst);
    const auto chk = jump_bound_check(g.model, inst, s);
    EXPECT_EQ(chk.holds, chk.violating_leaves.empty());
  }
}

TEST(Separation, StrictInequality) {
  const auto m = make_binary_tree(1);
  EXPECT_TRUE(barriers_separated(m, AdaptedProcess(m.node_count(), 0.0), AdaptedProcess(m.node_count(), 1.0)));
  EXPECT_FALSE(barriers_separated(m, AdaptedProcess(m.node_count(), 1.0), AdaptedProcess(m.node_count(), 1.0)));
}
