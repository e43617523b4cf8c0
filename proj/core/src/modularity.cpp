#include "modcred/modularity.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace modcred {

namespace {

std::string bidLabel(int k, int t) {
  return "b^" + std::to_string(k) + "_" + std::to_string(t);
}

std::string deltaLabel(int t, int k) {
  return "delta_" + std::to_string(t) + "^" + std::to_string(k);
}

// Node bookkeeping while assembling the ACML.
struct Scaffold {
  ComputationalGraph g;
  std::vector<NodeId> stateNodes;               // s_0 .. s_T
  std::vector<std::vector<NodeId>> bidNodes;    // [t][k-1]
  std::vector<NodeId> flagNodes;                // w_t
  std::vector<NodeId> rewardNodes;              // r_t
  std::vector<NodeId> mechanismNodes;           // f^1 .. f^N
};

Scaffold buildExecutionScaffold(const TraceSkeleton& sk) {
  sk.validate();
  const int T = sk.length();
  const int N = sk.decisionCount;

  Scaffold s;
  // an empty trace has no mechanism applications: the graph is just s_0
  for (int k = 1; k <= N && T > 0; ++k) {
    s.mechanismNodes.push_back(s.g.addVariable("f^" + std::to_string(k)));
  }
  s.stateNodes.push_back(s.g.addVariable("s_0"));
  for (int t = 0; t < T; ++t) {
    s.bidNodes.emplace_back();
    for (int k = 1; k <= N; ++k) {
      NodeId bid = s.g.addVariable(bidLabel(k, t));
      s.bidNodes[t].push_back(bid);
      s.g.addFunction("APPLY_" + std::to_string(t) + "^" + std::to_string(k),
                      {s.mechanismNodes[k - 1], s.stateNodes[t]}, {bid});
    }
    NodeId flag = s.g.addVariable("w_" + std::to_string(t));
    NodeId nextState = s.g.addVariable("s_" + std::to_string(t + 1));
    NodeId reward = s.g.addVariable("r_" + std::to_string(t));
    s.flagNodes.push_back(flag);
    s.stateNodes.push_back(nextState);
    s.rewardNodes.push_back(reward);
    std::vector<NodeId> selectInputs = s.bidNodes[t];
    selectInputs.push_back(s.stateNodes[t]);
    s.g.addFunction("SELECT_" + std::to_string(t), selectInputs,
                    {flag, nextState, reward});
  }
  return s;
}

}  // namespace

void AlgorithmClass::validate() const {
  if (kind == AlgorithmKind::TdN && tdSteps != 0 && tdSteps < 2) {
    throw std::invalid_argument("TdN requires n >= 2 (0 means Monte Carlo)");
  }
}

AlgorithmClass cvsClass() {
  return {AlgorithmKind::Td0, 0, true, ParameterSharing::FactorizedPerDecision};
}

AlgorithmClass ppoClass() {
  return {AlgorithmKind::PolicyGradient, 0, true, ParameterSharing::Monolithic};
}

AlgorithmClass ppofClass() {
  return {AlgorithmKind::PolicyGradient, 0, true,
          ParameterSharing::FactorizedPerDecision};
}

AlgorithmClass qLearningClass() {
  return {AlgorithmKind::Td0, 0, false, ParameterSharing::Tabular};
}

AlgorithmClass sarsaClass() {
  return {AlgorithmKind::Td0, 0, true, ParameterSharing::Tabular};
}

std::string algorithmName(const AlgorithmClass& algo) {
  std::string name;
  switch (algo.kind) {
    case AlgorithmKind::PolicyGradient:
      name = "policy-gradient";
      break;
    case AlgorithmKind::TdN:
      name = algo.tdSteps == 0 ? "td-monte-carlo"
                               : "td" + std::to_string(algo.tdSteps);
      break;
    case AlgorithmKind::Td0:
      name = algo.onPolicy ? "td0-on-policy" : "td0-off-policy";
      break;
  }
  switch (algo.sharing) {
    case ParameterSharing::Monolithic:
      return name + "/monolithic";
    case ParameterSharing::FactorizedPerDecision:
      return name + "/factorized";
    case ParameterSharing::Tabular:
      return name + "/tabular";
  }
  return name;
}

void TraceSkeleton::validate() const {
  if (decisionCount < 1) throw std::invalid_argument("decisionCount >= 1");
  if (states.size() != selected.size() + 1) {
    throw std::invalid_argument("states must have length T + 1");
  }
  for (int k : selected) {
    if (k < 1 || k > decisionCount) {
      throw std::invalid_argument("selected decision out of range");
    }
  }
}

TraceSkeleton acyclicSkeleton(int steps, int decisions) {
  TraceSkeleton sk;
  sk.decisionCount = decisions;
  for (int t = 0; t <= steps; ++t) sk.states.push_back("x" + std::to_string(t));
  for (int t = 0; t < steps; ++t) sk.selected.push_back(1 + t % decisions);
  return sk;
}

TraceSkeleton collisionSkeleton(int steps, int decisions, int collideAt) {
  if (collideAt < 1 || collideAt > steps - 1) {
    throw std::invalid_argument("collideAt must be in [1, steps-1]");
  }
  TraceSkeleton sk = acyclicSkeleton(steps, decisions);
  sk.states[collideAt + 1] = sk.states[collideAt];
  return sk;
}

ComputationalGraph buildExecutionGraph(const TraceSkeleton& skeleton) {
  Scaffold s = buildExecutionScaffold(skeleton);
  s.g.finalize();
  return std::move(s.g);
}

AcmlGraph buildAcml(const AlgorithmClass& algo, const TraceSkeleton& sk) {
  algo.validate();
  Scaffold s = buildExecutionScaffold(sk);
  const int T = sk.length();

  AcmlGraph out;
  std::vector<NodeId> deltas;
  std::vector<NodeId> hidden;  // credit-assignment internals per step

  if (T > 0) {
    switch (algo.kind) {
      case AlgorithmKind::PolicyGradient: {
        // One softmax normalizer and one return estimate are shared by every
        // per-step gradient (Cor. 1 structure).
        std::vector<NodeId> allBids;
        for (const auto& row : s.bidNodes) {
          allBids.insert(allBids.end(), row.begin(), row.end());
        }
        NodeId norm = s.g.addVariable("sum_k b^k");
        s.g.addFunction("NORM", allBids, {norm});
        NodeId ret = s.g.addVariable("sum_t r_t");
        s.g.addFunction("RETURN", s.rewardNodes, {ret});
        for (int t = 0; t < T; ++t) {
          const int k = sk.selected[t];
          NodeId delta = s.g.addVariable(deltaLabel(t, k));
          s.g.addFunction("GRAD_" + std::to_string(t),
                          {s.bidNodes[t][k - 1], s.stateNodes[t], norm, ret,
                           s.mechanismNodes[k - 1]},
                          {delta});
          deltas.push_back(delta);
        }
        hidden = {norm, ret};
        break;
      }
      case AlgorithmKind::TdN: {
        // Shared sum of estimated returns/advantages over overlapping
        // windows; with n >= 2 consecutive windows always overlap, collapsing
        // to a single shared node (Cor. 2 structure).
        NodeId ret = s.g.addVariable("sum_t r_t");
        s.g.addFunction("RETSUM", s.rewardNodes, {ret});
        for (int t = 0; t < T; ++t) {
          const int k = sk.selected[t];
          NodeId delta = s.g.addVariable(deltaLabel(t, k));
          s.g.addFunction(
              "GRAD_" + std::to_string(t),
              {s.bidNodes[t][k - 1], s.stateNodes[t], ret,
               s.mechanismNodes[k - 1]},
              {delta});
          deltas.push_back(delta);
        }
        hidden = {ret};
        break;
      }
      case AlgorithmKind::Td0: {
        // One bootstrap target per distinct successor state value. Two steps
        // transitioning into the same state share the target node, which is
        // exactly the cyclic-trace failure mode (Cor. 3 structure).
        std::map<std::string, NodeId> targetByState;
        std::vector<NodeId> targets(T);
        for (int t = 0; t < T; ++t) {
          const std::string& succ = sk.states[t + 1];
          auto it = targetByState.find(succ);
          if (it == targetByState.end()) {
            const std::string pos = "s_" + std::to_string(t + 1);
            const std::string labelText =
                (algo.onPolicy ? "sel_b(" : "max_b(") + pos + ")";
            NodeId target = s.g.addVariable(labelText);
            std::vector<NodeId> inputs = s.mechanismNodes;
            inputs.push_back(s.stateNodes[t + 1]);
            s.g.addFunction("TARGET_" + std::to_string(t), inputs, {target});
            it = targetByState.emplace(succ, target).first;
            hidden.push_back(target);
          }
          targets[t] = it->second;
        }
        for (int t = 0; t < T; ++t) {
          const int k = sk.selected[t];
          NodeId delta = s.g.addVariable(deltaLabel(t, k));
          s.g.addFunction("GRAD_" + std::to_string(t),
                          {s.bidNodes[t][k - 1], s.stateNodes[t],
                           s.stateNodes[t + 1], s.rewardNodes[t], targets[t],
                           s.mechanismNodes[k - 1]},
                          {delta});
          deltas.push_back(delta);
        }
        break;
      }
    }

    // UPDATE folds each mechanism's gradients back into its next version.
    for (int k = 1; k <= sk.decisionCount; ++k) {
      std::vector<NodeId> inputs{s.mechanismNodes[k - 1]};
      for (int t = 0; t < T; ++t) {
        if (sk.selected[t] == k) inputs.push_back(deltas[t]);
      }
      if (inputs.size() == 1) continue;  // never selected: no update edge
      NodeId next = s.g.addVariable("f'^" + std::to_string(k));
      s.g.addFunction("UPDATE^" + std::to_string(k), inputs, {next});
    }
  }

  s.g.finalize();
  out.graph = std::move(s.g);
  out.mechanismNodes = s.mechanismNodes;
  out.gradientNodes = deltas;
  out.traceNodes = s.stateNodes;
  for (const auto& row : s.bidNodes) {
    out.traceNodes.insert(out.traceNodes.end(), row.begin(), row.end());
  }
  out.traceNodes.insert(out.traceNodes.end(), s.flagNodes.begin(),
                        s.flagNodes.end());
  out.traceNodes.insert(out.traceNodes.end(), s.rewardNodes.begin(),
                        s.rewardNodes.end());
  std::sort(out.traceNodes.begin(), out.traceNodes.end());
  return out;
}

bool detectCycle(const TraceSkeleton& sk) {
  sk.validate();
  std::map<std::string, int> successorCount;
  for (int t = 0; t < sk.length(); ++t) {
    if (++successorCount[sk.states[t + 1]] > 1) return true;
  }
  return false;
}

CriterionResult checkCriterion(const AlgorithmClass& algo,
                               const TraceSkeleton& sk) {
  AcmlGraph acml = buildAcml(algo, sk);
  VariableDag dag = toVariableDag(acml.graph);

  std::set<NodeId> conditioning(acml.traceNodes.begin(),
                                acml.traceNodes.end());
  conditioning.insert(acml.mechanismNodes.begin(), acml.mechanismNodes.end());

  const auto& deltas = acml.gradientNodes;
  for (size_t i = 0; i < deltas.size(); ++i) {
    for (size_t j = i + 1; j < deltas.size(); ++j) {
      if (dag.dSeparated({deltas[i]}, {deltas[j]}, conditioning)) continue;
      auto path = dag.firstUnblockedPath(deltas[i], deltas[j], conditioning);
      CriterionResult result;
      result.satisfied = false;
      if (path) {
        for (NodeId n : *path) result.witness.push_back(dag.label(n));
      }
      return result;
    }
  }
  return {};
}

bool checkStaticModularity(const AlgorithmClass& algo) {
  return algo.sharing == ParameterSharing::FactorizedPerDecision ||
         algo.sharing == ParameterSharing::Tabular;
}

ModularityVerdict checkDynamicModularity(const AlgorithmClass& algo,
                                         const TraceSkeleton& sk) {
  ModularityVerdict verdict;
  CriterionResult criterion = checkCriterion(algo, sk);
  verdict.criterionSatisfied = criterion.satisfied;
  verdict.witness = std::move(criterion.witness);
  verdict.staticModularity = checkStaticModularity(algo);
  verdict.dynamicModularity =
      verdict.criterionSatisfied && verdict.staticModularity;
  verdict.cyclicTrace = detectCycle(sk);
  return verdict;
}

std::string factorizationReport(const AlgorithmClass& algo,
                                const TraceSkeleton& sk) {
  ModularityVerdict verdict = checkDynamicModularity(algo, sk);
  std::ostringstream os;
  os << "credit assignment factorization report\n";
  os << "algorithm: " << algorithmName(algo) << "\n";
  os << "trace: T=" << sk.length() << ", N=" << sk.decisionCount << ", "
     << (verdict.cyclicTrace ? "cyclic" : "acyclic") << "\n";
  if (sk.length() == 0) {
    os << "no gradients; vacuously modular\n";
    return os.str();
  }
  if (verdict.criterionSatisfied) {
    os << "criterion: satisfied\n";
    os << "given the trace and the mechanisms, the joint description of the "
          "per-step gradients factorizes into per-step terms:\n";
    os << "  K(delta_0.." << sk.length() - 1
       << " | x, f) = sum_t K(delta_t | x, f)\n";
  } else {
    os << "criterion: NOT satisfied\n";
    os << "the joint gradient description does not factorize into per-step "
          "terms given the trace and the mechanisms.\n";
    if (verdict.witness.size() >= 3) {
      os << "shared hidden variable: " << verdict.witness[1] << "\n";
    }
    os << "unblocked path:";
    for (const std::string& label : verdict.witness) os << " " << label;
    os << "\n";
  }
  os << "static modularity: " << (verdict.staticModularity ? "yes" : "no")
     << "\n";
  os << "dynamic modularity: " << (verdict.dynamicModularity ? "yes" : "no")
     << "\n";
  return os.str();
}

nlohmann::json verdictToJson(const AlgorithmClass& algo,
                             const TraceSkeleton& sk,
                             const ModularityVerdict& verdict) {
  nlohmann::json j;
  j["algorithm"] = algorithmName(algo);
  j["T"] = sk.length();
  j["N"] = sk.decisionCount;
  j["criterion"] = verdict.criterionSatisfied;
  j["static"] = verdict.staticModularity;
  j["dynamic"] = verdict.dynamicModularity;
  j["cyclic"] = verdict.cyclicTrace;
  j["witness"] = verdict.witness;
  return j;
}

}  // namespace modcred
