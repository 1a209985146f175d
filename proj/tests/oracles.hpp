#pragma once

#include "scenforge/riskgraph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

namespace scenforge::testing {

/// Optimal transport cost between two uniform empirical measures by brute
/// force. Both samples are replicated up to lcm(n, m) atoms of equal mass, so
/// an optimal plan is a permutation (Birkhoff); all permutations are tried.
inline double w1_bruteforce(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t L = std::lcm(a.size(), b.size());
  std::vector<double> x, y;
  for (double v : a) x.insert(x.end(), L / a.size(), v);
  for (double v : b) y.insert(y.end(), L / b.size(), v);
  std::vector<std::size_t> perm(L);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0;
    for (std::size_t i = 0; i < L; ++i) c += std::abs(x[i] - y[perm[i]]);
    best = std::min(best, c / L);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline bool is_clique(const RiskGraph& g, const std::vector<int>& m) {
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = i + 1; j < m.size(); ++j)
      if (!g.has_edge(m[i], m[j])) return false;
  return true;
}

/// Top cliques by subset enumeration: largest size <= k (down to 2) that has
/// any clique, ranked by weight then lexicographically.
inline std::vector<Clique> top_cliques_bruteforce(const RiskGraph& g, int k, int m_top) {
  const std::size_t n = g.nodes.size();
  for (int size = k; size >= 2; --size) {
    std::vector<Clique> found;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      if (__builtin_popcount(mask) != size) continue;
      std::vector<int> m;
      for (std::size_t i = 0; i < n; ++i)
        if (mask >> i & 1u) m.push_back(g.nodes[i]);
      if (!is_clique(g, m)) continue;
      double w = 0;
      for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = i + 1; j < m.size(); ++j) w += g.weight(m[i], m[j]);
      found.push_back({m, w});
    }
    if (found.empty()) continue;
    std::sort(found.begin(), found.end(), [](const Clique& a, const Clique& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      return a.members < b.members;
    });
    if (static_cast<int>(found.size()) > m_top) found.resize(m_top);
    return found;
  }
  return {};
}

/// Temporal scores by counting memberships in brute-force top cliques.
inline BifurcationScores temporal_scores_bruteforce(const std::vector<RiskGraph>& graphs, int k, int m_top,
                                                    int k_top, int ego) {
  BifurcationScores out;
  for (const auto& g : graphs)
    for (int id : g.nodes) out.score[id] += 0;
  for (const auto& g : graphs)
    for (const auto& c : top_cliques_bruteforce(g, k, m_top))
      for (int id : c.members) ++out.score[id];
  std::vector<int> cand;
  for (const auto& [id, f] : out.score)
    if (id != ego && f > 0) cand.push_back(id);
  std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) { return out.score[a] > out.score[b]; });
  out.short_set = static_cast<int>(cand.size()) < k_top;
  if (static_cast<int>(cand.size()) > k_top) cand.resize(k_top);
  out.s_top = cand;
  return out;
}

}  // namespace scenforge::testing
