#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace flowrl {

// ---------------------------------------------------------------------------
// disc_chain policy evaluation by dynamic programming
// ---------------------------------------------------------------------------

// Q^pi for the 25-state chain under a deterministic policy table
// (policy[i] = 0 moves left, 1 moves right). Action index 0 = left, 1 = right.
// Iterates the Bellman operator to residual < 1e-10.
struct ChainQTable {
  std::array<std::array<double, 2>, 25> q{};  // q[state][action]
};

inline ChainQTable oracle_policy_eval(const std::array<int, 25>& policy, double gamma) {
  if (gamma < 0.0 || gamma >= 1.0)
    throw std::invalid_argument("oracle_policy_eval: gamma must lie in [0,1)");
  auto step = [](int s, int a) {
    int next = a == 1 ? std::min(24, s + 1) : std::max(0, s - 1);
    double r = (next == 24 && s != 24) ? 1.0 : 0.0;
    bool terminal = next == 24;
    return std::tuple<int, double, bool>{next, r, terminal};
  };
  ChainQTable table;
  double residual = 1.0;
  while (residual > 1e-10) {
    residual = 0.0;
    ChainQTable next_table = table;
    for (int s = 0; s < 25; ++s) {
      for (int a = 0; a < 2; ++a) {
        auto [ns, r, terminal] = step(s, a);
        double v = r;
        if (!terminal) v += gamma * table.q[ns][policy[ns]];
        residual = std::max(residual, std::abs(v - table.q[s][a]));
        next_table.q[s][a] = v;
      }
    }
    table = next_table;
  }
  return table;
}

// ---------------------------------------------------------------------------
// exact optimal assignment (Jonker-Volgenant style augmenting paths with
// potentials, O(n^3)) and the empirical squared 2-Wasserstein distance
// ---------------------------------------------------------------------------

// cost is n x n row-major; returns row -> column of a minimum-cost perfect
// matching
inline std::vector<int> min_cost_assignment(const std::vector<double>& cost, int n) {
  if (n < 1 || static_cast<std::size_t>(n) * n != cost.size())
    throw std::invalid_argument("min_cost_assignment: bad matrix size");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);  // match[j] = row assigned to column j (1-based)
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = match[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (match[j] > 0) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

// Empirical squared 2-Wasserstein distance between two equally sized point
// sets: the minimum over pairings of the mean squared Euclidean cost,
// solved exactly. n is capped at 256 to keep the O(n^3) solver fast.
inline double empirical_w2_sq(std::span<const double> a, std::span<const double> b, int n, int d) {
  if (n < 1 || n > 256) throw std::invalid_argument("empirical_w2_sq: need 1 <= n <= 256");
  if (a.size() != static_cast<std::size_t>(n) * d || b.size() != static_cast<std::size_t>(n) * d)
    throw std::invalid_argument("empirical_w2_sq: sample sets must both be n x d");
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double c = 0.0;
      for (int k = 0; k < d; ++k) {
        double diff = a[static_cast<std::size_t>(i) * d + k] - b[static_cast<std::size_t>(j) * d + k];
        c += diff * diff;
      }
      cost[static_cast<std::size_t>(i) * n + j] = c;
    }
  auto assign = min_cost_assignment(cost, n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += cost[static_cast<std::size_t>(i) * n + assign[i]];
  return total / n;
}

inline double empirical_w2_sq(const std::vector<std::vector<double>>& a,
                              const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("empirical_w2_sq: unequal sample counts");
  if (a.empty()) throw std::invalid_argument("empirical_w2_sq: empty sample sets");
  int n = static_cast<int>(a.size());
  int d = static_cast<int>(a[0].size());
  std::vector<double> fa, fb;
  fa.reserve(static_cast<std::size_t>(n) * d);
  fb.reserve(static_cast<std::size_t>(n) * d);
  for (const auto& row : a) {
    if (static_cast<int>(row.size()) != d) throw std::invalid_argument("empirical_w2_sq: ragged rows");
    fa.insert(fa.end(), row.begin(), row.end());
  }
  for (const auto& row : b) {
    if (static_cast<int>(row.size()) != d) throw std::invalid_argument("empirical_w2_sq: ragged rows");
    fb.insert(fb.end(), row.begin(), row.end());
  }
  return empirical_w2_sq(fa, fb, n, d);
}

}  // namespace flowrl
