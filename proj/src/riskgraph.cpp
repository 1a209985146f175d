#include "scenforge/riskgraph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

namespace scenforge {

double ttc_surrogate(const AgentState& a, const AgentState& b, double tau_max) {
  if (!(tau_max > 0.0)) throw Error("ttc_surrogate: tau_max must be positive");
  const Vec2 r = b.position - a.position;
  const double dist = r.norm();
  if (dist < 1e-6) return 0.0;
  const Vec2 v = b.velocity() - a.velocity();
  const double closing = -r.dot(v) / dist;
  if (closing <= 1e-6) return tau_max;
  const double r_safe = 0.5 * (a.length + b.length);
  return std::min(tau_max, std::max(0.0, (dist - r_safe) / closing));
}

double edge_weight(double ttc, double tau_max, double beta) {
  if (!(beta > 0.0)) throw Error("edge_weight: beta must be positive");
  return 1.0 / (1.0 + std::exp(-(tau_max - ttc) / beta));
}

double RiskGraph::weight(int a, int b) const {
  if (a > b) std::swap(a, b);
  for (const RiskEdge& e : edges) {
    if (e.i == a && e.j == b) return e.weight;
  }
  return 0.0;
}

RiskGraph build_graph(std::span<const AgentState> states, int step, const RiskParams& p) {
  if (!(p.eps_w > 0.0 && p.eps_w < 1.0)) throw Error("build_graph: eps_w must lie in (0, 1)");
  std::vector<const AgentState*> sorted;
  for (const AgentState& s : states) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](auto* x, auto* y) { return x->agent_id < y->agent_id; });
  RiskGraph g;
  g.step = step;
  for (auto* s : sorted) g.nodes.push_back(s->agent_id);
  for (std::size_t a = 0; a < sorted.size(); ++a) {
    for (std::size_t b = a + 1; b < sorted.size(); ++b) {
      const double ttc = ttc_surrogate(*sorted[a], *sorted[b], p.tau_max);
      const double w = edge_weight(ttc, p.tau_max, p.beta);
      if (w >= p.eps_w) g.edges.push_back({sorted[a]->agent_id, sorted[b]->agent_id, ttc, w});
    }
  }
  return g;
}

double clique_weight(const RiskGraph& g, const std::vector<int>& members) {
  double w = 0.0;
  for (std::size_t a = 0; a < members.size(); ++a) {
    for (std::size_t b = a + 1; b < members.size(); ++b) w += g.weight(members[a], members[b]);
  }
  return w;
}

namespace {

using AdjSet = std::vector<std::set<int>>;

void bron_kerbosch(const AdjSet& adj, std::set<int>& R, std::set<int> P, std::set<int> X,
                   std::vector<std::set<int>>& out) {
  if (P.empty() && X.empty()) {
    out.push_back(R);
    return;
  }
  // pivot maximizing |P ∩ N(u)|
  int pivot = -1;
  std::size_t best = 0;
  for (const auto* pool : {&P, &X}) {
    for (int u : *pool) {
      std::size_t c = 0;
      for (int v : P) c += adj[static_cast<std::size_t>(u)].count(v);
      if (pivot < 0 || c > best) {
        pivot = u;
        best = c;
      }
    }
  }
  std::vector<int> candidates;
  for (int v : P) {
    if (!adj[static_cast<std::size_t>(pivot)].count(v)) candidates.push_back(v);
  }
  for (int v : candidates) {
    const auto& nv = adj[static_cast<std::size_t>(v)];
    std::set<int> P2, X2;
    for (int w : P) {
      if (nv.count(w)) P2.insert(w);
    }
    for (int w : X) {
      if (nv.count(w)) X2.insert(w);
    }
    R.insert(v);
    bron_kerbosch(adj, R, std::move(P2), std::move(X2), out);
    R.erase(v);
    P.erase(v);
    X.insert(v);
  }
}

void combinations(const std::vector<int>& items, std::size_t k, std::size_t start, std::vector<int>& cur,
                  std::set<std::vector<int>>& out) {
  if (cur.size() == k) {
    out.insert(cur);
    return;
  }
  for (std::size_t i = start; i + (k - cur.size()) <= items.size(); ++i) {
    cur.push_back(items[i]);
    combinations(items, k, i + 1, cur, out);
    cur.pop_back();
  }
}

}  // namespace

std::vector<std::vector<int>> maximal_cliques(const RiskGraph& g) {
  std::unordered_map<int, int> local;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) local[g.nodes[i]] = static_cast<int>(i);
  AdjSet adj(g.nodes.size());
  for (const RiskEdge& e : g.edges) {
    const int a = local.at(e.i);
    const int b = local.at(e.j);
    adj[static_cast<std::size_t>(a)].insert(b);
    adj[static_cast<std::size_t>(b)].insert(a);
  }
  std::set<int> R, P, X;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) P.insert(static_cast<int>(i));
  std::vector<std::set<int>> raw;
  bron_kerbosch(adj, R, std::move(P), std::move(X), raw);
  std::vector<std::vector<int>> out;
  for (const auto& c : raw) {
    std::vector<int> ids;
    for (int i : c) ids.push_back(g.nodes[static_cast<std::size_t>(i)]);
    std::sort(ids.begin(), ids.end());
    out.push_back(std::move(ids));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Clique> top_cliques(const RiskGraph& g, int k_clique, int m_top) {
  if (k_clique < 2) throw Error("top_cliques: k_clique must be >= 2");
  if (g.edges.empty() || m_top <= 0) return {};
  const auto maximal = maximal_cliques(g);
  for (int size = k_clique; size >= 2; --size) {
    std::set<std::vector<int>> subsets;
    for (const auto& mc : maximal) {
      if (static_cast<int>(mc.size()) < size) continue;
      std::vector<int> cur;
      combinations(mc, static_cast<std::size_t>(size), 0, cur, subsets);
    }
    if (subsets.empty()) continue;
    std::vector<Clique> ranked;
    for (const auto& s : subsets) ranked.push_back({s, clique_weight(g, s)});
    std::sort(ranked.begin(), ranked.end(), [](const Clique& a, const Clique& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      return a.members < b.members;
    });
    if (static_cast<int>(ranked.size()) > m_top) ranked.resize(static_cast<std::size_t>(m_top));
    return ranked;
  }
  return {};
}

BifurcationScores temporal_scores(std::span<const RiskGraph> graphs, int k_clique, int m_top, int k_top,
                                  int ego_id) {
  if (graphs.empty()) throw Error("temporal_scores: need at least one graph");
  BifurcationScores out;
  for (const RiskGraph& g : graphs) {
    for (int id : g.nodes) out.score.emplace(id, 0);
    for (const Clique& c : top_cliques(g, k_clique, m_top)) {
      for (int id : c.members) ++out.score[id];
    }
  }
  std::vector<std::pair<int, int>> ranked;
  for (const auto& [id, f] : out.score) {
    if (id != ego_id && f > 0) ranked.emplace_back(id, f);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < k_top; ++i) {
    out.s_top.push_back(ranked[i].first);
  }
  out.short_set = static_cast<int>(out.s_top.size()) < k_top;
  return out;
}

std::vector<RiskGraph> build_graphs(std::span<const std::vector<AgentState>> frames, const RiskParams& params) {
  std::vector<RiskGraph> out;
  out.reserve(frames.size());
  for (std::size_t h = 0; h < frames.size(); ++h) out.push_back(build_graph(frames[h], static_cast<int>(h), params));
  return out;
}

std::string graphs_csv(std::span<const RiskGraph> graphs) {
  std::ostringstream os;
  os.precision(17);
  os << "h,i,j,ttc,w\n";
  for (const RiskGraph& g : graphs) {
    for (const RiskEdge& e : g.edges) os << g.step << ',' << e.i << ',' << e.j << ',' << e.ttc << ',' << e.weight << '\n';
  }
  return os.str();
}

std::string scores_csv(const BifurcationScores& scores) {
  std::ostringstream os;
  os << "agent_id,f_i\n";
  for (const auto& [id, f] : scores.score) os << id << ',' << f << '\n';
  return os.str();
}

}  // namespace scenforge
