#include <benchmark/benchmark.h>

#include <random>

#include "modcred/harness.hpp"
#include "modcred/keydoor.hpp"
#include "modcred/learners.hpp"
#include "modcred/modularity.hpp"

using namespace modcred;

static void BM_DSeparationFast(benchmark::State& state) {
  const AcmlGraph acml =
      buildAcml(ppoClass(), acyclicSkeleton(static_cast<int>(state.range(0)), 4));
  const VariableDag dag = toVariableDag(acml.graph);
  std::set<NodeId> z(acml.traceNodes.begin(), acml.traceNodes.end());
  z.insert(acml.mechanismNodes.begin(), acml.mechanismNodes.end());
  const NodeId a = acml.gradientNodes.front();
  const NodeId b = acml.gradientNodes.back();
  for (auto _ : state) {
    benchmark::DoNotOptimize(dag.dSeparated({a}, {b}, z));
  }
}
BENCHMARK(BM_DSeparationFast)->Arg(2)->Arg(6)->Arg(12);

static void BM_DSeparationBruteforce(benchmark::State& state) {
  const AcmlGraph acml = buildAcml(ppoClass(), acyclicSkeleton(2, 2));
  const VariableDag dag = toVariableDag(acml.graph);
  std::set<NodeId> z(acml.traceNodes.begin(), acml.traceNodes.end());
  z.insert(acml.mechanismNodes.begin(), acml.mechanismNodes.end());
  const NodeId a = acml.gradientNodes.front();
  const NodeId b = acml.gradientNodes.back();
  for (auto _ : state) {
    benchmark::DoNotOptimize(dag.dSeparatedBruteforce({a}, {b}, z));
  }
}
BENCHMARK(BM_DSeparationBruteforce);

static void BM_CriterionCheck(benchmark::State& state) {
  const TraceSkeleton sk =
      acyclicSkeleton(static_cast<int>(state.range(0)), 6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(checkCriterion(cvsClass(), sk).satisfied);
  }
}
BENCHMARK(BM_CriterionCheck)->Arg(3)->Arg(6);

static void BM_MlpForwardBackward(benchmark::State& state) {
  Mlp net({10, 20, 20, 6}, 1);
  std::vector<double> x(10, 0.0);
  x[0] = x[5] = 1.0;
  std::vector<double> grad(net.paramCount(), 0.0);
  std::vector<double> dOut(6, 0.1);
  Mlp::Cache cache;
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.forward(x, cache));
    net.backward(cache, dOut, grad);
  }
}
BENCHMARK(BM_MlpForwardBackward);

static void BM_CvsActionStep(benchmark::State& state) {
  const TaskSpec task = taskFromId("linear_chain/train");
  LearnerConfig config;
  CvsLearner cvs(task.encodingSize(), task.doorCount, config, 1);
  std::mt19937_64 envRng(2), actRng(3);
  EnvState env = resetEnv(task, envRng);
  const std::vector<double> encoded = encode(task, env);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cvs.act(encoded, actRng));
  }
}
BENCHMARK(BM_CvsActionStep);

static void BM_ExactEvaluation(benchmark::State& state) {
  const TaskSpec task = taskFromId("linear_chain/train");
  LearnerConfig config;
  auto learner = makeLearner(state.range(0) == 0 ? "ppo" : "cvs",
                             task.encodingSize(), task.doorCount, config, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(exactExpectedReturn(task, *learner));
  }
}
BENCHMARK(BM_ExactEvaluation)->Arg(0)->Arg(1);

BENCHMARK_MAIN();
