#pragma once

#include "scenforge/world.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace scenforge {

struct RiskParams {
  double tau_max = 5.0;  // s
  double beta = 1.0;     // s
  double eps_w = 0.5;
  int k_clique = 3;
  int m_top = 3;
  int k_top = 4;
};

/// Capped time to collision from radial closing speed with safety radius
/// (len_a + len_b) / 2. Returns tau_max when not closing, 0 when coincident.
double ttc_surrogate(const AgentState& a, const AgentState& b, double tau_max);

/// Logistic of (tau_max - ttc) / beta.
double edge_weight(double ttc, double tau_max, double beta);

struct RiskEdge {
  int i = 0;  // agent ids, i < j
  int j = 0;
  double ttc = 0.0;
  double weight = 0.0;
};

struct RiskGraph {
  int step = 0;
  std::vector<int> nodes;  // sorted agent ids
  std::vector<RiskEdge> edges;

  /// Weight of edge {a, b}, 0 when absent.
  double weight(int a, int b) const;
  bool has_edge(int a, int b) const { return weight(a, b) > 0.0; }
};

RiskGraph build_graph(std::span<const AgentState> states, int step, const RiskParams& params);

struct Clique {
  std::vector<int> members;  // sorted agent ids
  double weight = 0.0;       // sum over unordered member pairs
};

/// Sum of w_ij over unordered pairs in ascending (i, j) order.
double clique_weight(const RiskGraph& g, const std::vector<int>& members);

/// All cliques of size k_clique (falling back to smaller sizes down to 2 when
/// none exist), ranked by weight descending then lexicographically; first m_top.
std::vector<Clique> top_cliques(const RiskGraph& g, int k_clique, int m_top);

/// Maximal cliques by Bron-Kerbosch with pivoting; members sorted.
std::vector<std::vector<int>> maximal_cliques(const RiskGraph& g);

struct BifurcationScores {
  std::map<int, int> score;  // agent id -> occurrences in per-step top cliques
  std::vector<int> s_top;    // excludes the ego; only positive scores
  bool short_set = false;    // fewer than k_top positive-score candidates
};

BifurcationScores temporal_scores(std::span<const RiskGraph> graphs, int k_clique, int m_top, int k_top,
                                  int ego_id);

/// One graph per frame of a rollout.
std::vector<RiskGraph> build_graphs(std::span<const std::vector<AgentState>> frames, const RiskParams& params);

std::string graphs_csv(std::span<const RiskGraph> graphs);
std::string scores_csv(const BifurcationScores& scores);

}  // namespace scenforge
