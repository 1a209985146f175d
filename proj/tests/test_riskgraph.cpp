#include "helpers.hpp"
#include "scenforge/riskgraph.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace scenforge;
using scenforge::testing::agent;

namespace {

AgentState car(int id, double x, double y, double speed, double heading = 0.0) {
  AgentState s = agent(id, x, y, speed, heading);
  s.length = 4.0;
  return s;
}

RiskGraph graph_of(std::vector<int> nodes, std::vector<RiskEdge> edges, int step = 0) {
  RiskGraph g;
  g.step = step;
  g.nodes = std::move(nodes);
  g.edges = std::move(edges);
  return g;
}

}  // namespace

TEST_CASE("ttc surrogate hand values") {
  CHECK(ttc_surrogate(car(0, 0, 0, 10), car(1, 20, 0, 0), 5.0) == doctest::Approx(1.6));
  CHECK(ttc_surrogate(car(0, 0, 0, 0), car(1, 20, 0, 5), 5.0) == 5.0);
  CHECK(ttc_surrogate(car(0, 3, 3, 10), car(1, 3, 3, 2), 5.0) == 0.0);
  CHECK(ttc_surrogate(car(0, 0, 0, 10), car(1, 20, 0, 0), 1.0) == 1.0);
}

TEST_CASE("edge weight logistic") {
  CHECK(edge_weight(5.0, 5.0, 1.0) == doctest::Approx(0.5));
  CHECK(edge_weight(3.0, 5.0, 1.0) == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(edge_weight(7.0, 5.0, 1.0) == doctest::Approx(0.1192).epsilon(1e-3));
}

TEST_CASE("graph construction") {
  RiskParams p;
  p.eps_w = 0.6;
  const std::vector<AgentState> diverging{car(0, 0, 0, 5, M_PI), car(1, 20, 0, 5), car(2, 0, 20, 5, M_PI / 2)};
  CHECK(build_graph(diverging, 0, p).edges.empty());

  const std::vector<AgentState> headon{car(0, 0, 0, 10), car(1, 4.01, 0, 10, M_PI)};
  const RiskGraph g = build_graph(headon, 3, p);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.step == 3);
  CHECK(g.edges[0].weight == doctest::Approx(1.0 / (1.0 + std::exp(-5.0))).epsilon(1e-3));

  const std::vector<AgentState> single{car(0, 0, 0, 10)};
  const RiskGraph one = build_graph(single, 0, p);
  CHECK(one.edges.empty());
  CHECK(one.nodes == std::vector<int>{0});
}

TEST_CASE("top cliques hand cases") {
  const RiskGraph tri = graph_of({1, 2, 3}, {{1, 2, 0, 0.9}, {1, 3, 0, 0.9}, {2, 3, 0, 0.9}});
  const auto c = top_cliques(tri, 3, 1);
  REQUIRE(c.size() == 1);
  CHECK(c[0].members == std::vector<int>{1, 2, 3});
  CHECK(c[0].weight == doctest::Approx(2.7));

  CHECK(top_cliques(graph_of({1, 2, 3}, {}), 3, 1).empty());

  const RiskGraph two = graph_of({1, 2, 3, 4, 5, 6}, {{1, 2, 0, 0.5}, {1, 3, 0, 0.5}, {2, 3, 0, 0.5},
                                                      {4, 5, 0, 0.9}, {4, 6, 0, 0.9}, {5, 6, 0, 0.9}});
  const auto h = top_cliques(two, 3, 1);
  REQUIRE(h.size() == 1);
  CHECK(h[0].members == std::vector<int>{4, 5, 6});
}

TEST_CASE("temporal scores hand count and tie rule") {
  const std::vector<RiskGraph> gs{
      graph_of({1, 2, 3, 4}, {{1, 2, 0, 0.9}, {1, 3, 0, 0.9}, {2, 3, 0, 0.9}}, 0),
      graph_of({1, 2, 3, 4}, {{2, 3, 0, 0.9}, {2, 4, 0, 0.9}, {3, 4, 0, 0.9}}, 1)};
  const BifurcationScores s = temporal_scores(gs, 3, 1, 4, 0);
  CHECK(s.score.at(1) == 1);
  CHECK(s.score.at(2) == 2);
  CHECK(s.score.at(3) == 2);
  CHECK(s.score.at(4) == 1);
  CHECK(s.s_top == std::vector<int>{2, 3, 1, 4});

  const std::vector<RiskGraph> none{graph_of({1, 2}, {})};
  const BifurcationScores z = temporal_scores(none, 3, 1, 2, 0);
  CHECK(z.s_top.empty());
  CHECK(z.short_set);

  const std::vector<RiskGraph> pair{graph_of({5, 7}, {{5, 7, 0, 0.8}})};
  const BifurcationScores p = temporal_scores(pair, 3, 1, 1, 0);
  CHECK(p.s_top == std::vector<int>{5});
}

TEST_CASE("ego excluded from the candidate set") {
  const std::vector<RiskGraph> gs{graph_of({0, 1, 2}, {{0, 1, 0, 0.9}, {0, 2, 0, 0.9}, {1, 2, 0, 0.9}})};
  const BifurcationScores s = temporal_scores(gs, 3, 1, 3, 0);
  CHECK(s.score.at(0) == 1);
  CHECK(s.s_top == std::vector<int>{1, 2});
  CHECK(s.short_set);
}

TEST_CASE("clique ranking invariant under uniform weight scaling") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> w(0.5, 1.0);
  std::bernoulli_distribution e(0.6);
  for (int n = 0; n < 200; ++n) {
    RiskGraph g = graph_of({0, 1, 2, 3, 4, 5}, {});
    for (int i = 0; i < 6; ++i)
      for (int j = i + 1; j < 6; ++j)
        if (e(rng)) g.edges.push_back({i, j, 0, w(rng)});
    RiskGraph h = g;
    for (auto& ed : h.edges) ed.weight *= 0.5;
    const auto a = top_cliques(g, 3, 3), b = top_cliques(h, 3, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].members == b[i].members);
  }
}

TEST_CASE("maximal cliques of a small graph") {
  // square 1-2-3-4 plus diagonal 1-3
  const RiskGraph g = graph_of({1, 2, 3, 4}, {{1, 2, 0, 1}, {2, 3, 0, 1}, {3, 4, 0, 1}, {1, 4, 0, 1}, {1, 3, 0, 1}});
  auto m = maximal_cliques(g);
  std::sort(m.begin(), m.end());
  CHECK(m == std::vector<std::vector<int>>{{1, 2, 3}, {1, 3, 4}});
}

TEST_CASE("csv outputs") {
  const std::vector<RiskGraph> gs{graph_of({1, 2}, {{1, 2, 1.5, 0.9}})};
  CHECK(graphs_csv(gs).find("1,2") != std::string::npos);
  const BifurcationScores s = temporal_scores(gs, 3, 1, 2, 0);
  CHECK(scores_csv(s).find('\n') != std::string::npos);
}
