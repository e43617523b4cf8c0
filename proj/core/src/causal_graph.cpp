#include "modcred/causal_graph.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <sstream>

namespace modcred {

namespace {

std::string escapeDotLabel(const std::string& label) {
  std::string out;
  out.reserve(label.size());
  for (char c : label) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace

NodeId ComputationalGraph::addVariable(std::string label) {
  if (finalized_) throw GraphStateError("graph is finalized");
  NodeId id{static_cast<int>(nodes_.size())};
  nodes_.push_back(Node{NodeKind::Variable, std::move(label), {}, {}});
  return id;
}

NodeId ComputationalGraph::addFunction(std::string label,
                                       const std::vector<NodeId>& inputs,
                                       const std::vector<NodeId>& outputs) {
  if (finalized_) throw GraphStateError("graph is finalized");
  if (inputs.empty()) throw std::invalid_argument("function needs >= 1 input");
  if (outputs.empty()) throw std::invalid_argument("function needs >= 1 output");
  for (NodeId id : inputs) requireVariable(id);
  for (NodeId id : outputs) requireVariable(id);
  if (wouldCreateCycle(inputs, outputs)) {
    throw CycleError("adding function '" + label + "' would create a cycle");
  }
  NodeId id{static_cast<int>(nodes_.size())};
  nodes_.push_back(Node{NodeKind::Function, std::move(label), inputs, outputs});
  return id;
}

bool ComputationalGraph::wouldCreateCycle(
    const std::vector<NodeId>& inputs,
    const std::vector<NodeId>& outputs) const {
  // A cycle appears iff some proposed output already reaches some proposed
  // input through existing function nodes (or is itself an input).
  std::set<NodeId> inputSet(inputs.begin(), inputs.end());
  std::vector<char> seen(nodes_.size(), 0);
  std::deque<NodeId> frontier(outputs.begin(), outputs.end());
  while (!frontier.empty()) {
    NodeId v = frontier.front();
    frontier.pop_front();
    if (seen[v.value]) continue;
    seen[v.value] = 1;
    if (inputSet.count(v)) return true;
    for (const Node& fn : nodes_) {
      if (fn.kind != NodeKind::Function) continue;
      if (std::find(fn.inputs.begin(), fn.inputs.end(), v) == fn.inputs.end()) {
        continue;
      }
      for (NodeId out : fn.outputs) {
        if (!seen[out.value]) frontier.push_back(out);
      }
    }
  }
  return false;
}

void ComputationalGraph::finalize() {
  if (finalized_) return;
  // Kahn's algorithm over the bipartite digraph; every node must be ordered.
  const int n = static_cast<int>(nodes_.size());
  std::vector<std::vector<int>> succ(n);
  std::vector<int> indegree(n, 0);
  for (int i = 0; i < n; ++i) {
    if (nodes_[i].kind != NodeKind::Function) continue;
    for (NodeId in : nodes_[i].inputs) {
      succ[in.value].push_back(i);
      indegree[i]++;
    }
    for (NodeId out : nodes_[i].outputs) {
      succ[i].push_back(out.value);
      indegree[out.value]++;
    }
  }
  std::deque<int> ready;
  for (int i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push_back(i);
  }
  int ordered = 0;
  while (!ready.empty()) {
    int i = ready.front();
    ready.pop_front();
    ++ordered;
    for (int j : succ[i]) {
      if (--indegree[j] == 0) ready.push_back(j);
    }
  }
  if (ordered != n) throw CycleError("graph contains a cycle");
  finalized_ = true;
}

std::vector<NodeId> ComputationalGraph::variableNodes() const {
  std::vector<NodeId> out;
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
    if (nodes_[i].kind == NodeKind::Variable) out.push_back(NodeId{i});
  }
  return out;
}

std::vector<NodeId> ComputationalGraph::functionNodes() const {
  std::vector<NodeId> out;
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
    if (nodes_[i].kind == NodeKind::Function) out.push_back(NodeId{i});
  }
  return out;
}

const std::vector<NodeId>& ComputationalGraph::functionInputs(NodeId fn) const {
  const Node& n = node(fn);
  if (n.kind != NodeKind::Function) {
    throw std::invalid_argument("node is not a function");
  }
  return n.inputs;
}

const std::vector<NodeId>& ComputationalGraph::functionOutputs(NodeId fn) const {
  const Node& n = node(fn);
  if (n.kind != NodeKind::Function) {
    throw std::invalid_argument("node is not a function");
  }
  return n.outputs;
}

const ComputationalGraph::Node& ComputationalGraph::node(NodeId id) const {
  if (id.value < 0 || id.value >= static_cast<int>(nodes_.size())) {
    throw UnknownNodeError("unknown node id " + std::to_string(id.value));
  }
  return nodes_[id.value];
}

void ComputationalGraph::requireVariable(NodeId id) const {
  if (node(id).kind != NodeKind::Variable) {
    throw UnknownNodeError("node " + std::to_string(id.value) +
                           " is not a variable");
  }
}

std::string ComputationalGraph::exportDot() const {
  if (!finalized_) throw GraphStateError("export requires a finalized graph");
  std::ostringstream os;
  os << "digraph G {\n";
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
    const Node& n = nodes_[i];
    os << "  n" << i << " [label=\"" << escapeDotLabel(n.label) << "\", shape="
       << (n.kind == NodeKind::Variable ? "ellipse" : "box") << "];\n";
  }
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
    const Node& n = nodes_[i];
    if (n.kind != NodeKind::Function) continue;
    for (NodeId in : n.inputs) os << "  n" << in.value << " -> n" << i << ";\n";
    for (NodeId out : n.outputs) os << "  n" << i << " -> n" << out.value << ";\n";
  }
  os << "}\n";
  return os.str();
}

// ---------------------------------------------------------------------------

VariableDag toVariableDag(const ComputationalGraph& graph) {
  if (!graph.finalized()) {
    throw GraphStateError("to_variable_dag requires a finalized graph");
  }
  VariableDag dag;
  for (NodeId v : graph.variableNodes()) {
    dag.adoptNode(v, graph.label(v));
  }
  for (NodeId fn : graph.functionNodes()) {
    for (NodeId out : graph.functionOutputs(fn)) {
      for (NodeId in : graph.functionInputs(fn)) {
        dag.addEdge(in, out);
      }
    }
  }
  return dag;
}

NodeId VariableDag::addNode(std::string label) {
  NodeId id{static_cast<int>(entries_.size())};
  entries_.push_back(Entry{std::move(label), {}, {}});
  order_.push_back(id);
  return id;
}

void VariableDag::adoptNode(NodeId id, std::string label) {
  if (id.value < 0) throw UnknownNodeError("bad node id");
  if (id.value >= static_cast<int>(entries_.size())) {
    entries_.resize(id.value + 1);
  }
  if (entries_[id.value].has_value()) {
    throw std::invalid_argument("node id already present");
  }
  entries_[id.value] = Entry{std::move(label), {}, {}};
  order_.push_back(id);
  std::sort(order_.begin(), order_.end());
}

void VariableDag::addEdge(NodeId parent, NodeId child) {
  requireNode(parent);
  requireNode(child);
  if (parent == child) throw CycleError("self edge");
  entries_[child.value]->parents.insert(parent);
  entries_[parent.value]->children.insert(child);
}

std::vector<NodeId> VariableDag::nodes() const { return order_; }

bool VariableDag::contains(NodeId id) const {
  return id.value >= 0 && id.value < static_cast<int>(entries_.size()) &&
         entries_[id.value].has_value();
}

const std::string& VariableDag::label(NodeId id) const { return entry(id).label; }

const std::set<NodeId>& VariableDag::parents(NodeId id) const {
  return entry(id).parents;
}

const std::set<NodeId>& VariableDag::children(NodeId id) const {
  return entry(id).children;
}

const VariableDag::Entry& VariableDag::entry(NodeId id) const {
  if (!contains(id)) {
    throw UnknownNodeError("unknown dag node " + std::to_string(id.value));
  }
  return *entries_[id.value];
}

void VariableDag::requireNode(NodeId id) const { entry(id); }

bool VariableDag::isAcyclic() const {
  std::map<NodeId, int> indegree;
  for (NodeId n : order_) indegree[n] = static_cast<int>(parents(n).size());
  std::deque<NodeId> ready;
  for (auto& [n, d] : indegree) {
    if (d == 0) ready.push_back(n);
  }
  int ordered = 0;
  while (!ready.empty()) {
    NodeId n = ready.front();
    ready.pop_front();
    ++ordered;
    for (NodeId c : children(n)) {
      if (--indegree[c] == 0) ready.push_back(c);
    }
  }
  return ordered == static_cast<int>(order_.size());
}

void VariableDag::checkQuerySets(const std::set<NodeId>& x,
                                 const std::set<NodeId>& y,
                                 const std::set<NodeId>& z) const {
  for (const auto* s : {&x, &y, &z}) {
    for (NodeId n : *s) requireNode(n);
  }
  auto overlaps = [](const std::set<NodeId>& a, const std::set<NodeId>& b) {
    for (NodeId n : a) {
      if (b.count(n)) return true;
    }
    return false;
  };
  if (overlaps(x, y) || overlaps(x, z) || overlaps(y, z)) {
    throw OverlapError("X, Y, Z must be pairwise disjoint");
  }
}

bool VariableDag::dSeparated(const std::set<NodeId>& x,
                             const std::set<NodeId>& y,
                             const std::set<NodeId>& z) const {
  checkQuerySets(x, y, z);

  // Phase 1: Z together with its ancestors.
  std::set<NodeId> zAndAncestors;
  {
    std::deque<NodeId> frontier(z.begin(), z.end());
    while (!frontier.empty()) {
      NodeId n = frontier.front();
      frontier.pop_front();
      if (!zAndAncestors.insert(n).second) continue;
      for (NodeId p : parents(n)) frontier.push_back(p);
    }
  }

  // Phase 2: traverse active trails from X. Direction Up means the node was
  // entered from a child (or is a source node), Down means from a parent.
  enum Dir { Up = 0, Down = 1 };
  std::set<std::pair<NodeId, int>> visited;
  std::deque<std::pair<NodeId, int>> frontier;
  for (NodeId n : x) frontier.emplace_back(n, Up);

  while (!frontier.empty()) {
    auto [n, dir] = frontier.front();
    frontier.pop_front();
    if (!visited.insert({n, dir}).second) continue;
    const bool inZ = z.count(n) > 0;
    if (!inZ && y.count(n)) return false;
    if (dir == Up && !inZ) {
      for (NodeId p : parents(n)) frontier.emplace_back(p, Up);
      for (NodeId c : children(n)) frontier.emplace_back(c, Down);
    } else if (dir == Down) {
      if (!inZ) {
        for (NodeId c : children(n)) frontier.emplace_back(c, Down);
      }
      if (zAndAncestors.count(n)) {
        for (NodeId p : parents(n)) frontier.emplace_back(p, Up);
      }
    }
  }
  return true;
}

bool VariableDag::dSeparatedBruteforce(const std::set<NodeId>& x,
                                       const std::set<NodeId>& y,
                                       const std::set<NodeId>& z) const {
  if (nodeCount() > kBruteforceNodeLimit) {
    throw SizeError("bruteforce oracle limited to " +
                    std::to_string(kBruteforceNodeLimit) + " nodes");
  }
  checkQuerySets(x, y, z);

  // Proper ancestors of Z, for the collider descendant rule.
  std::set<NodeId> ancestorsOfZ;
  for (NodeId zn : z) {
    std::deque<NodeId> frontier(parents(zn).begin(), parents(zn).end());
    while (!frontier.empty()) {
      NodeId n = frontier.front();
      frontier.pop_front();
      if (!ancestorsOfZ.insert(n).second) continue;
      for (NodeId p : parents(n)) frontier.push_back(p);
    }
  }

  auto pathBlocked = [&](const std::vector<NodeId>& path) {
    for (size_t i = 1; i + 1 < path.size(); ++i) {
      NodeId a = path[i - 1], m = path[i], b = path[i + 1];
      const bool collider =
          children(a).count(m) > 0 && children(b).count(m) > 0;
      if (collider) {
        // inverted fork: blocked unless m or a descendant of m is in Z
        if (z.count(m) == 0 && ancestorsOfZ.count(m) == 0) return true;
      } else {
        // chain in either direction, or fork
        if (z.count(m)) return true;
      }
    }
    return false;
  };

  bool separated = true;
  std::vector<NodeId> path;
  std::set<NodeId> onPath;
  std::function<void(NodeId)> dfs = [&](NodeId n) {
    if (!separated) return;
    path.push_back(n);
    onPath.insert(n);
    if (path.size() > 1 && y.count(n)) {
      if (!pathBlocked(path)) separated = false;
    } else {
      std::set<NodeId> neighbors = parents(n);
      neighbors.insert(children(n).begin(), children(n).end());
      for (NodeId nb : neighbors) {
        if (!onPath.count(nb)) dfs(nb);
      }
    }
    onPath.erase(n);
    path.pop_back();
  };
  for (NodeId start : x) {
    if (!separated) break;
    dfs(start);
  }
  return separated;
}

std::set<NodeId> VariableDag::descendantsTouching(
    const std::set<NodeId>& z) const {
  std::set<NodeId> out;
  for (NodeId zn : z) {
    std::deque<NodeId> frontier(parents(zn).begin(), parents(zn).end());
    while (!frontier.empty()) {
      NodeId n = frontier.front();
      frontier.pop_front();
      if (!out.insert(n).second) continue;
      for (NodeId p : parents(n)) frontier.push_back(p);
    }
  }
  return out;
}

std::optional<std::vector<NodeId>> VariableDag::firstUnblockedPath(
    NodeId a, NodeId b, const std::set<NodeId>& z) const {
  checkQuerySets({a}, {b}, z);
  const std::set<NodeId> ancestorsOfZ = descendantsTouching(z);

  // A triple (prev, mid, next) lets the trail pass iff it is an unblocked
  // chain/fork (mid outside Z) or an activated collider (mid in Z or with a
  // descendant in Z). Prefix pruning is exact: a blocked triple blocks every
  // extension of the path.
  auto triplePasses = [&](NodeId prev, NodeId mid, NodeId next) {
    const bool collider =
        children(prev).count(mid) > 0 && children(next).count(mid) > 0;
    if (collider) return z.count(mid) > 0 || ancestorsOfZ.count(mid) > 0;
    return z.count(mid) == 0;
  };

  std::vector<NodeId> path{a};
  std::set<NodeId> onPath{a};
  std::optional<std::vector<NodeId>> found;

  std::function<void(NodeId)> dfs = [&](NodeId n) {
    if (found) return;
    if (n == b) {
      found = path;
      return;
    }
    std::vector<NodeId> neighbors;
    neighbors.insert(neighbors.end(), parents(n).begin(), parents(n).end());
    neighbors.insert(neighbors.end(), children(n).begin(), children(n).end());
    std::sort(neighbors.begin(), neighbors.end(),
              [&](NodeId l, NodeId r) {
                const std::string& ll = label(l);
                const std::string& rl = label(r);
                return ll != rl ? ll < rl : l < r;
              });
    for (NodeId nb : neighbors) {
      if (onPath.count(nb)) continue;
      if (path.size() >= 2 && !triplePasses(path[path.size() - 2], n, nb)) {
        continue;
      }
      path.push_back(nb);
      onPath.insert(nb);
      dfs(nb);
      onPath.erase(nb);
      path.pop_back();
      if (found) return;
    }
  };
  dfs(a);
  return found;
}

}  // namespace modcred
