#pragma once

#include <compare>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace modcred {

// Opaque node handle. Ids are dense, assigned in insertion order, and stable
// for the lifetime of the graph they belong to.
struct NodeId {
  int value = -1;
  auto operator<=>(const NodeId&) const = default;
};

class CycleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownNodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OverlapError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphStateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class NodeKind { Variable, Function };

/// Directed acyclic factor graph of variable and function nodes. Variables
/// and functions share one id space; edges run variable -> function ->
/// variable only. Mutation is allowed until finalize(), after which the
/// graph is immutable and safe for concurrent read-only queries.
class ComputationalGraph {
 public:
  NodeId addVariable(std::string label);
  // Wires inputs -> function -> outputs. Inputs and outputs must be existing
  // variable nodes; the induced edges must keep the graph acyclic.
  NodeId addFunction(std::string label, const std::vector<NodeId>& inputs,
                     const std::vector<NodeId>& outputs);

  void finalize();
  bool finalized() const { return finalized_; }

  int nodeCount() const { return static_cast<int>(nodes_.size()); }
  NodeKind kind(NodeId id) const { return node(id).kind; }
  const std::string& label(NodeId id) const { return node(id).label; }
  std::vector<NodeId> variableNodes() const;
  std::vector<NodeId> functionNodes() const;
  const std::vector<NodeId>& functionInputs(NodeId fn) const;
  const std::vector<NodeId>& functionOutputs(NodeId fn) const;

  // DOT text: variables as ellipses, functions as boxes, nodes emitted in id
  // order. Requires a finalized graph.
  std::string exportDot() const;

 private:
  struct Node {
    NodeKind kind;
    std::string label;
    std::vector<NodeId> inputs;   // function nodes only
    std::vector<NodeId> outputs;  // function nodes only
  };

  const Node& node(NodeId id) const;
  void requireVariable(NodeId id) const;
  bool wouldCreateCycle(const std::vector<NodeId>& inputs,
                        const std::vector<NodeId>& outputs) const;

  std::vector<Node> nodes_;
  bool finalized_ = false;
};

/// DAG over variable nodes, derived from a ComputationalGraph by dissolving
/// function nodes: the inputs of a function become parents of each of its
/// outputs. Node ids and labels carry over from the source graph. Can also be
/// built directly for tests and oracles.
class VariableDag {
 public:
  VariableDag() = default;

  NodeId addNode(std::string label);
  // Inserts a node under a caller-chosen id (used when deriving from a
  // ComputationalGraph so variable ids carry over).
  void adoptNode(NodeId id, std::string label);
  void addEdge(NodeId parent, NodeId child);

  std::vector<NodeId> nodes() const;  // ascending id order
  int nodeCount() const { return static_cast<int>(order_.size()); }
  bool contains(NodeId id) const;
  const std::string& label(NodeId id) const;
  const std::set<NodeId>& parents(NodeId id) const;
  const std::set<NodeId>& children(NodeId id) const;
  bool isAcyclic() const;

  // Exact d-separation via reachability (Bayes-ball style traversal).
  // X, Y, Z must be pairwise disjoint sets of nodes of this dag.
  bool dSeparated(const std::set<NodeId>& x, const std::set<NodeId>& y,
                  const std::set<NodeId>& z) const;

  // Oracle: enumerates every simple undirected path between X and Y and
  // applies the chain/fork/collider blocking rules literally to each path.
  // Only available on dags with at most kBruteforceNodeLimit nodes.
  bool dSeparatedBruteforce(const std::set<NodeId>& x,
                            const std::set<NodeId>& y,
                            const std::set<NodeId>& z) const;

  // Lexicographically first (by label sequence) path from a to b that is not
  // blocked by z, or nullopt if a and b are d-separated given z.
  std::optional<std::vector<NodeId>> firstUnblockedPath(
      NodeId a, NodeId b, const std::set<NodeId>& z) const;

  static constexpr int kBruteforceNodeLimit = 25;

 private:
  struct Entry {
    std::string label;
    std::set<NodeId> parents;
    std::set<NodeId> children;
  };

  const Entry& entry(NodeId id) const;
  void requireNode(NodeId id) const;
  void checkQuerySets(const std::set<NodeId>& x, const std::set<NodeId>& y,
                      const std::set<NodeId>& z) const;
  std::set<NodeId> descendantsTouching(const std::set<NodeId>& z) const;

  // Sparse id -> entry storage keyed by id value.
  std::vector<std::optional<Entry>> entries_;
  std::vector<NodeId> order_;
};

VariableDag toVariableDag(const ComputationalGraph& graph);

}  // namespace modcred
