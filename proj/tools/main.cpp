#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "modcred/harness.hpp"
#include "modcred/keydoor.hpp"
#include "modcred/learners.hpp"
#include "modcred/modularity.hpp"
#include "modcred/rng.hpp"

namespace {

using namespace modcred;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNotModular = 2;

AlgorithmClass parseAlgorithmClass(const std::string& name, int tdSteps,
                                   bool offPolicy, const std::string& sharing) {
  AlgorithmClass algo;
  if (name == "cvs") {
    algo = cvsClass();
  } else if (name == "ppo") {
    algo = ppoClass();
  } else if (name == "ppof") {
    algo = ppofClass();
  } else if (name == "qlearning") {
    algo = qLearningClass();
  } else if (name == "sarsa") {
    algo = sarsaClass();
  } else if (name == "policy-gradient") {
    algo.kind = AlgorithmKind::PolicyGradient;
  } else if (name == "td0") {
    algo.kind = AlgorithmKind::Td0;
    algo.onPolicy = !offPolicy;
  } else if (name == "tdn") {
    algo.kind = AlgorithmKind::TdN;
    algo.tdSteps = tdSteps > 0 ? tdSteps : 2;
  } else if (name == "monte-carlo") {
    algo.kind = AlgorithmKind::TdN;
    algo.tdSteps = 0;
  } else {
    throw CLI::ValidationError("--class", "unknown algorithm class: " + name);
  }
  if (!sharing.empty()) {
    if (sharing == "monolithic") {
      algo.sharing = ParameterSharing::Monolithic;
    } else if (sharing == "factorized") {
      algo.sharing = ParameterSharing::FactorizedPerDecision;
    } else if (sharing == "tabular") {
      algo.sharing = ParameterSharing::Tabular;
    } else {
      throw CLI::ValidationError("--sharing", "unknown sharing: " + sharing);
    }
  }
  algo.validate();
  return algo;
}

TraceSkeleton parseTrace(const std::string& pattern, int steps, int decisions) {
  if (pattern == "acyclic") return acyclicSkeleton(steps, decisions);
  const std::string prefix = "cycle-at:";
  if (pattern.rfind(prefix, 0) == 0) {
    const int at = std::stoi(pattern.substr(prefix.size()));
    return collisionSkeleton(steps, decisions, at);
  }
  throw CLI::ValidationError("--trace",
                             "expected 'acyclic' or 'cycle-at:<t>': " + pattern);
}

int runAnalyze(const std::string& className, int tdSteps, bool offPolicy,
               const std::string& sharing, int steps, int decisions,
               const std::string& tracePattern, const std::string& dotPath,
               const std::string& reportPath) {
  const AlgorithmClass algo =
      parseAlgorithmClass(className, tdSteps, offPolicy, sharing);
  const TraceSkeleton skeleton = parseTrace(tracePattern, steps, decisions);
  const ModularityVerdict verdict = checkDynamicModularity(algo, skeleton);
  std::cout << verdictToJson(algo, skeleton, verdict).dump(2) << "\n";
  if (!dotPath.empty()) {
    const AcmlGraph acml = buildAcml(algo, skeleton);
    std::ofstream(dotPath) << acml.graph.exportDot();
  }
  if (!reportPath.empty()) {
    std::ofstream(reportPath) << factorizationReport(algo, skeleton);
  }
  return verdict.dynamicModularity ? kExitOk : kExitNotModular;
}

int runSuiteCommand(const std::string& configPath, std::string outDir,
                    int jobs, bool full) {
  std::ifstream in(configPath);
  if (!in) {
    std::cerr << "cannot read config: " << configPath << "\n";
    return kExitError;
  }
  nlohmann::json j;
  in >> j;
  SuiteConfig config = SuiteConfig::fromJson(j);
  if (full) config.harness.horizon = 10'000'000;
  if (jobs > 0) config.harness.jobs = jobs;
  if (outDir.empty()) {
    const char* root = std::getenv("MODCRED_OUT_ROOT");
    const std::filesystem::path base = root ? root : "runs";
    outDir = (base / config.suite).string();
  }
  const SuiteResult result = runSuite(config, outDir);
  std::cout << "suite " << config.suite << " finished: " << result.curves.size()
            << " curves -> " << outDir << "\n";
  return kExitOk;
}

int runEnvDump(const std::string& taskId) {
  std::cout << taskFromId(taskId).toJson().dump(2) << "\n";
  return kExitOk;
}

bool checkDSeparationOracle(std::uint64_t seed, int dags, std::ostream& log) {
  std::mt19937_64 rng(seed);
  long long queries = 0;
  for (int trial = 0; trial < dags; ++trial) {
    const int n = 4 + static_cast<int>(rng() % 5);
    VariableDag dag;
    std::vector<NodeId> nodes;
    for (int i = 0; i < n; ++i) {
      nodes.push_back(dag.addNode("v" + std::to_string(i)));
    }
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rngUnit(rng) < 0.3) dag.addEdge(nodes[i], nodes[j]);
      }
    }
    for (int xi = 0; xi < n; ++xi) {
      for (int yi = xi + 1; yi < n; ++yi) {
        std::vector<NodeId> rest;
        for (int i = 0; i < n; ++i) {
          if (i != xi && i != yi) rest.push_back(nodes[i]);
        }
        for (int mask = 0; mask < (1 << rest.size()); ++mask) {
          std::set<NodeId> z;
          for (size_t i = 0; i < rest.size(); ++i) {
            if (mask & (1 << i)) z.insert(rest[i]);
          }
          ++queries;
          if (dag.dSeparated({nodes[xi]}, {nodes[yi]}, z) !=
              dag.dSeparatedBruteforce({nodes[xi]}, {nodes[yi]}, z)) {
            log << "[check] d-separation mismatch at trial " << trial << "\n";
            return false;
          }
        }
      }
    }
  }
  log << "[check] d-separation oracle: OK (" << queries << " queries)\n";
  return true;
}

bool checkGradients(std::uint64_t seed, bool injectBackwardFault,
                    std::ostream& log) {
  const double h = 1e-5;
  std::mt19937_64 rng(seed);
  double maxRelError = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Mlp net({5, 20, 20, 3}, mixSeed(seed, 500 + trial));
    std::vector<double> x(5), weights(3);
    for (double& v : x) v = 2.0 * rngUnit(rng) - 1.0;
    for (double& v : weights) v = 2.0 * rngUnit(rng) - 1.0;

    Mlp::Cache cache;
    net.forward(x, cache);
    std::vector<double> analytic(net.paramCount(), 0.0);
    net.backward(cache, weights, analytic);
    if (injectBackwardFault) analytic[0] += 1e-2;

    for (int i = 0; i < net.paramCount(); ++i) {
      const double saved = net.params()[i];
      auto loss = [&] {
        const std::vector<double> out = net.forward(x);
        double total = 0.0;
        for (size_t k = 0; k < out.size(); ++k) total += weights[k] * out[k];
        return total;
      };
      net.params()[i] = saved + h;
      const double up = loss();
      net.params()[i] = saved - h;
      const double down = loss();
      net.params()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double scale =
          std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
      maxRelError = std::max(maxRelError, std::abs(numeric - analytic[i]) / scale);
    }
  }
  if (maxRelError >= 1e-4) {
    log << "[check] gradient check FAILED: max relative error "
        << maxRelError << "\n";
    return false;
  }
  log << "[check] backward passes vs central differences: OK (max rel err "
      << maxRelError << ")\n";

  const std::vector<double> adv =
      gae(std::vector<double>{0.0, 0.0, 1.0}, std::vector<double>{0.0, 0.0, 0.0},
          0.0, 0.99, 0.95);
  if (std::abs(adv[0] - 0.88454025) > 1e-12 || std::abs(adv[1] - 0.9405) > 1e-12 ||
      std::abs(adv[2] - 1.0) > 1e-12) {
    log << "[check] GAE worked example FAILED\n";
    return false;
  }
  log << "[check] GAE worked example: OK\n";
  return true;
}

int runCheck(std::uint64_t seed, const std::string& injectFault) {
  bool ok = checkDSeparationOracle(seed, 50, std::cout);
  ok = checkGradients(seed, injectFault == "backward", std::cout) && ok;
  std::cout << (ok ? "[check] all oracle suites passed\n"
                   : "[check] FAILURES detected\n");
  return ok ? kExitOk : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modular credit assignment toolkit"};
  app.require_subcommand(1);

  // analyze
  auto* analyze = app.add_subcommand(
      "analyze", "build the credit-assignment causal model and print the "
                 "modularity verdict as JSON");
  std::string className = "td0";
  int tdSteps = 0;
  bool offPolicy = false;
  std::string sharing;
  int steps = 3;
  int decisions = 4;
  std::string tracePattern = "acyclic";
  std::string dotPath;
  std::string reportPath;
  analyze->add_option("--class", className,
                      "algorithm class: policy-gradient|td0|tdn|monte-carlo or "
                      "preset cvs|ppo|ppof|qlearning|sarsa");
  analyze->add_option("--n", tdSteps, "lookahead steps for --class tdn (>= 2)");
  analyze->add_flag("--off-policy", offPolicy, "td0: max-based target");
  analyze->add_option("--sharing", sharing,
                      "monolithic|factorized|tabular (presets set their own)");
  analyze->add_option("--T", steps, "trace length");
  analyze->add_option("--N", decisions, "decision count");
  analyze->add_option("--trace", tracePattern, "acyclic or cycle-at:<t>");
  analyze->add_option("--dot", dotPath, "write the ACML as DOT");
  analyze->add_option("--report", reportPath, "write the factorization report");

  // run
  auto* run = app.add_subcommand("run", "execute an experiment suite");
  std::string configPath;
  std::string outDir;
  int jobs = 0;
  bool full = false;
  run->add_option("--config", configPath, "suite config (JSON)")->required();
  run->add_option("--out", outDir,
                  "output directory (default $MODCRED_OUT_ROOT/<suite>)");
  run->add_option("--jobs", jobs, "parallel workers (default: cores)");
  run->add_flag("--full", full, "paper-scale horizon (1e7 samples)");

  // env-dump
  auto* envDump = app.add_subcommand("env-dump", "print a task spec as JSON");
  std::string taskId;
  envDump->add_option("task", taskId, "task id, e.g. linear_chain/train")
      ->required();

  // check
  auto* check = app.add_subcommand(
      "check", "run the d-separation oracle suite and gradient checks");
  std::uint64_t checkSeed = 0;
  std::string injectFault;
  check->add_option("--seed", checkSeed, "seed for the oracle suites");
  check->add_option("--inject-fault", injectFault,
                    "test fixture: 'backward' perturbs a gradient")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
    if (analyze->parsed()) {
      return runAnalyze(className, tdSteps, offPolicy, sharing, steps,
                        decisions, tracePattern, dotPath, reportPath);
    }
    if (run->parsed()) {
      return runSuiteCommand(configPath, outDir, jobs, full);
    }
    if (envDump->parsed()) {
      return runEnvDump(taskId);
    }
    if (check->parsed()) {
      return runCheck(checkSeed, injectFault);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
