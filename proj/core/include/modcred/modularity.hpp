#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "modcred/causal_graph.hpp"

namespace modcred {

enum class AlgorithmKind { PolicyGradient, TdN, Td0 };
enum class ParameterSharing { Monolithic, FactorizedPerDecision, Tabular };

/// Structural description of a credit-assignment scheme: which class of
/// feedback it computes and whether decision mechanisms share parameters.
struct AlgorithmClass {
  AlgorithmKind kind = AlgorithmKind::Td0;
  // TdN only: number of lookahead steps (>= 2), or 0 for Monte Carlo returns.
  int tdSteps = 0;
  // Td0 only: target is the successor selected bid (on-policy) or a max over
  // recomputed successor bids (off-policy).
  bool onPolicy = true;
  ParameterSharing sharing = ParameterSharing::FactorizedPerDecision;

  void validate() const;
};

AlgorithmClass cvsClass();        // Td0 on-policy, factorized per decision
AlgorithmClass ppoClass();        // policy gradient, monolithic
AlgorithmClass ppofClass();       // policy gradient, factorized per decision
AlgorithmClass qLearningClass();  // Td0 off-policy, tabular
AlgorithmClass sarsaClass();      // Td0 on-policy, tabular
std::string algorithmName(const AlgorithmClass& algo);

/// A rollout reduced to the structure that matters for the causal analysis:
/// the visited state identifiers and which decision was selected per step.
struct TraceSkeleton {
  int decisionCount = 0;             // N
  std::vector<std::string> states;   // s_0 .. s_T, size T + 1
  std::vector<int> selected;         // k_t in 1..N, size T

  int length() const { return static_cast<int>(selected.size()); }
  void validate() const;
};

TraceSkeleton acyclicSkeleton(int steps, int decisions);
// Acyclic skeleton with one wrong-door style bounce: s_{collideAt+1} repeats
// s_{collideAt}, so steps collideAt-1 and collideAt share a successor.
// Requires 1 <= collideAt <= steps - 1.
TraceSkeleton collisionSkeleton(int steps, int decisions, int collideAt);

/// ACML: execution graph plus the credit-assignment internals, with the node
/// sets needed to run the modularity criterion.
struct AcmlGraph {
  ComputationalGraph graph;
  std::vector<NodeId> traceNodes;      // x: states, bids, flags, rewards
  std::vector<NodeId> mechanismNodes;  // f^1 .. f^N
  std::vector<NodeId> gradientNodes;   // delta_t, one per step, step order
};

struct CriterionResult {
  bool satisfied = true;
  // Labels of an unblocked path between two gradients; empty iff satisfied.
  std::vector<std::string> witness;
};

struct ModularityVerdict {
  bool criterionSatisfied = true;
  bool staticModularity = true;
  bool dynamicModularity = true;
  bool cyclicTrace = false;
  std::vector<std::string> witness;
};

ComputationalGraph buildExecutionGraph(const TraceSkeleton& skeleton);
AcmlGraph buildAcml(const AlgorithmClass& algo, const TraceSkeleton& skeleton);
bool detectCycle(const TraceSkeleton& skeleton);
CriterionResult checkCriterion(const AlgorithmClass& algo,
                               const TraceSkeleton& skeleton);
bool checkStaticModularity(const AlgorithmClass& algo);
ModularityVerdict checkDynamicModularity(const AlgorithmClass& algo,
                                         const TraceSkeleton& skeleton);
std::string factorizationReport(const AlgorithmClass& algo,
                                const TraceSkeleton& skeleton);

nlohmann::json verdictToJson(const AlgorithmClass& algo,
                             const TraceSkeleton& skeleton,
                             const ModularityVerdict& verdict);

}  // namespace modcred
