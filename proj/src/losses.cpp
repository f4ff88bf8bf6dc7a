#include "cgconf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "cgconf/numeric/kabsch.hpp"

namespace cgconf {

using ad::Index;
using ad::Matrix;
using ad::Var;

Var aligned_mse(ad::Tape& tape, const Var& model, const Conformer& truth) {
  if (model.rows() != truth.rows() || model.cols() != 3)
    throw std::invalid_argument("aligned_mse: shape mismatch");
  const Conformer current = model.value();
  const auto fit = kabsch_align(truth, current);
  const Var diff = model - tape.constant(fit.apply(truth));
  return ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(truth.rows()));
}

double aligned_mse(const Conformer& model, const Conformer& truth) {
  if (model.rows() != truth.rows()) throw std::invalid_argument("aligned_mse: shape mismatch");
  const auto fit = kabsch_align(truth, model);
  return (model - fit.apply(truth)).squaredNorm() / static_cast<double>(truth.rows());
}

std::vector<AtomPair> hop_pairs(const MolecularGraph& graph) {
  const auto adj = graph.adjacency();
  std::set<AtomPair> pairs;
  for (int i = 0; i < graph.atom_count(); ++i)
    for (auto [j, bond_ij] : adj[i]) {
      (void)bond_ij;
      pairs.insert(std::minmax(i, j));
      for (auto [k, bond_jk] : adj[j]) {
        (void)bond_jk;
        if (k != i) pairs.insert(std::minmax(i, k));
      }
    }
  return {pairs.begin(), pairs.end()};
}

Var distance_loss(ad::Tape& tape, const Var& x, const Conformer& truth, const MolecularGraph& graph) {
  if (x.rows() != truth.rows() || x.rows() != graph.atom_count())
    throw std::invalid_argument("distance_loss: shape mismatch");
  const auto pairs = hop_pairs(graph);
  if (pairs.empty()) return tape.constant(Matrix::Zero(1, 1));
  std::vector<Index> a, b;
  Matrix target(static_cast<Index>(pairs.size()), 1);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    a.push_back(pairs[k].first);
    b.push_back(pairs[k].second);
    target(static_cast<Index>(k)) = (truth.row(pairs[k].first) - truth.row(pairs[k].second)).norm();
  }
  const Var d = ad::sqrt_eps(ad::row_sq_norm(ad::gather_rows(x, a) - ad::gather_rows(x, b)), 0.0);
  return ad::mean(ad::square(d - tape.constant(target)));
}

double distance_loss(const Conformer& x, const Conformer& truth, const MolecularGraph& graph) {
  const auto pairs = hop_pairs(graph);
  if (pairs.empty()) return 0.0;
  double acc = 0.0;
  for (auto [i, j] : pairs) {
    const double e = (x.row(i) - x.row(j)).norm() - (truth.row(i) - truth.row(j)).norm();
    acc += e * e;
  }
  return acc / static_cast<double>(pairs.size());
}

double AnnealSchedule::ladder(int epoch) const {
  if (epoch < 0) throw std::invalid_argument("anneal schedule: negative epoch");
  const double v = std::pow(10.0, std::log10(start) + epoch * std::log10(factor));
  // Rungs that land on the cap up to rounding report the cap itself.
  return v >= cap * (1.0 - 1e-9) ? cap : v;
}

LossWeights AnnealSchedule::at(int epoch) const {
  return {ladder(epoch), beta2_follows_ladder ? ladder(epoch) : beta2_fixed};
}

ElboTerms elbo_loss(const Var& recon, const Var& kl, const Var& dist, const LossWeights& weights) {
  if (weights.beta1 < 0.0 || weights.beta2 < 0.0)
    throw std::invalid_argument("elbo_loss: negative weight");
  ElboTerms t;
  t.total = recon + ad::scale(kl, weights.beta1) + ad::scale(dist, weights.beta2);
  t.recon = recon.scalar();
  t.kl = kl.scalar();
  t.dist = dist.scalar();
  t.weights = weights;
  return t;
}

ElboTerms elbo_loss(const Var& recon, const Var& kl, const Var& dist, const AnnealSchedule& schedule,
                    int epoch) {
  return elbo_loss(recon, kl, dist, schedule.at(epoch));
}

// --- exact EMD ------------------------------------------------------------------
//
// Rows supply L units each and columns demand K units each, so every flow is
// integral and T = flow / (K L) has exact uniform marginals.  Successive
// shortest paths with Bellman-Ford on the residual graph gives the optimum.

namespace {

struct Edge {
  int to;
  long cap;
  double cost;
};

class MinCostFlow {
 public:
  explicit MinCostFlow(int n) : adj_(n) {}

  int add(int from, int to, long cap, double cost) {
    adj_[from].push_back(static_cast<int>(edges_.size()));
    edges_.push_back({to, cap, cost});
    adj_[to].push_back(static_cast<int>(edges_.size()));
    edges_.push_back({from, 0, -cost});
    return static_cast<int>(edges_.size()) - 2;
  }

  long flow_on(int edge) const { return edges_[edge ^ 1].cap; }

  void run(int source, int sink, long demand) {
    const int n = static_cast<int>(adj_.size());
    const double inf = std::numeric_limits<double>::infinity();
    while (demand > 0) {
      std::vector<double> dist(n, inf);
      std::vector<int> via(n, -1);
      dist[source] = 0.0;
      for (int round = 0; round < n; ++round) {
        bool changed = false;
        for (int u = 0; u < n; ++u) {
          if (dist[u] == inf) continue;
          for (int e : adj_[u]) {
            const Edge& ed = edges_[e];
            if (ed.cap <= 0) continue;
            const double nd = dist[u] + ed.cost;
            if (nd < dist[ed.to] - 1e-13 * (1.0 + std::abs(nd))) {
              dist[ed.to] = nd;
              via[ed.to] = e;
              changed = true;
            }
          }
        }
        if (!changed) break;
      }
      if (via[sink] < 0) throw std::logic_error("emd_solve: infeasible transport");
      long push = demand;
      for (int v = sink; v != source; v = edges_[via[v] ^ 1].to) push = std::min(push, edges_[via[v]].cap);
      for (int v = sink; v != source; v = edges_[via[v] ^ 1].to) {
        edges_[via[v]].cap -= push;
        edges_[via[v] ^ 1].cap += push;
      }
      demand -= push;
    }
  }

 private:
  std::vector<std::vector<int>> adj_;
  std::vector<Edge> edges_;
};

}  // namespace

TransportPlan emd_solve(const Matrix& cost) {
  const Index k = cost.rows(), l = cost.cols();
  if (k < 1 || l < 1) throw std::invalid_argument("emd_solve: empty cost matrix");
  if (!cost.allFinite()) throw std::invalid_argument("emd_solve: non-finite cost entry");

  const int source = 0, sink = static_cast<int>(k + l + 1);
  MinCostFlow flow(static_cast<int>(k + l + 2));
  for (Index i = 0; i < k; ++i) flow.add(source, static_cast<int>(1 + i), static_cast<long>(l), 0.0);
  for (Index j = 0; j < l; ++j) flow.add(static_cast<int>(1 + k + j), sink, static_cast<long>(k), 0.0);
  std::vector<int> cell(static_cast<std::size_t>(k * l));
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < l; ++j)
      cell[static_cast<std::size_t>(i * l + j)] =
          flow.add(static_cast<int>(1 + i), static_cast<int>(1 + k + j), static_cast<long>(k * l), cost(i, j));
  flow.run(source, sink, static_cast<long>(k * l));

  TransportPlan out;
  out.plan.resize(k, l);
  const double total = static_cast<double>(k * l);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < l; ++j)
      out.plan(i, j) = static_cast<double>(flow.flow_on(cell[static_cast<std::size_t>(i * l + j)])) / total;
  out.objective = (out.plan.array() * cost.array()).sum();
  return out;
}

OtResult ot_loss(ad::Tape& tape, const std::vector<Var>& generated, const std::vector<Conformer>& truth,
                 const MolecularGraph& graph) {
  if (generated.empty() || truth.empty()) throw std::invalid_argument("ot_loss: empty ensemble");
  const Index k = static_cast<Index>(generated.size()), l = static_cast<Index>(truth.size());
  std::vector<Var> pair_cost;
  OtResult out;
  out.cost.resize(k, l);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < l; ++j) {
      const Var c = aligned_mse(tape, generated[i], truth[j]) +
                    distance_loss(tape, generated[i], truth[j], graph);
      out.cost(i, j) = c.scalar();
      pair_cost.push_back(c);
    }
  out.transport = emd_solve(out.cost);
  Var total = tape.constant(Matrix::Zero(1, 1));
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < l; ++j) {
      const double w = out.transport.plan(i, j);
      if (w != 0.0) total = total + ad::scale(pair_cost[static_cast<std::size_t>(i * l + j)], w);
    }
  out.loss = total;
  return out;
}

double ot_loss(const std::vector<Conformer>& generated, const std::vector<Conformer>& truth,
               const MolecularGraph& graph) {
  if (generated.empty() || truth.empty()) throw std::invalid_argument("ot_loss: empty ensemble");
  Matrix cost(static_cast<Index>(generated.size()), static_cast<Index>(truth.size()));
  for (std::size_t i = 0; i < generated.size(); ++i)
    for (std::size_t j = 0; j < truth.size(); ++j)
      cost(static_cast<Index>(i), static_cast<Index>(j)) =
          aligned_mse(generated[i], truth[j]) + distance_loss(generated[i], truth[j], graph);
  return emd_solve(cost).objective;
}

}  // namespace cgconf
