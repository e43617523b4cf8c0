#include "modcred/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "modcred/rng.hpp"

namespace modcred {

namespace {

std::string rngToString(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rngFromString(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream is(text);
  is >> rng;
  return rng;
}

void parallelFor(int count, int jobs, const std::function<void(int)>& body) {
  if (jobs <= 0) {
    jobs = static_cast<int>(std::thread::hardware_concurrency());
    if (jobs <= 0) jobs = 1;
  }
  jobs = std::min(jobs, count);
  if (jobs <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        body(i);
      }
    });
  }
  for (std::thread& t : workers) t.join();
}

}  // namespace

nlohmann::json HarnessConfig::toJson() const {
  return {{"horizon", horizon},
          {"epoch_size", epochSize},
          {"seeds", seeds},
          {"convergence",
           {{"target", convergence.target},
            {"eps", convergence.eps},
            {"window", convergence.window},
            {"band", convergence.band == ConvergenceBand::Lower ? "lower"
                                                                : "two_sided"}}},
          {"learner", learner.toJson()},
          {"exact_eval", exactEval},
          {"eval_episodes", evalEpisodes},
          {"jobs", jobs}};
}

double exactExpectedReturn(const TaskSpec& task, const Learner& learner) {
  double total = 0.0;
  double weightSum = 0.0;
  for (size_t m = 0; m < task.subtasks.size(); ++m) {
    const Subtask& sub = task.subtasks[m];
    const int decisions = static_cast<int>(sub.doors.size());
    // Correct-door probability is constant per position (retries see the
    // same state), so the finite-horizon recursion closes over positions.
    std::vector<double> pCorrect(decisions);
    for (int pos = 0; pos < decisions; ++pos) {
      EnvState state;
      state.room = sub.rooms[pos];
      state.subtask = static_cast<int>(m);
      state.key = sub.doors[pos];
      const std::vector<double> encoded = encode(task, state);
      pCorrect[pos] = learner.actionProbabilities(encoded)[sub.doors[pos]];
    }
    std::vector<std::vector<double>> value(
        decisions + 1, std::vector<double>(task.maxSteps + 1, 0.0));
    for (int used = task.maxSteps - 1; used >= 0; --used) {
      for (int pos = decisions - 1; pos >= 0; --pos) {
        const double p = pCorrect[pos];
        const double onSuccess =
            pos + 1 == decisions ? 1.0 : value[pos + 1][used + 1];
        const double onFailure = value[pos][used + 1];
        value[pos][used] = p * onSuccess + (1.0 - p) * onFailure;
      }
    }
    total += sub.weight * value[0][0];
    weightSum += sub.weight;
  }
  return total / weightSum;
}

double rolloutMeanReturn(const TaskSpec& task, Learner& learner, int episodes,
                         std::mt19937_64& rng) {
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    EnvState state = resetEnv(task, rng);
    bool done = false;
    while (!done) {
      const std::vector<double> encoded = encode(task, state);
      TraceStep step = learner.act(encoded, rng);
      StepResult result = stepEnv(task, state, step.chosen);
      total += result.reward;
      done = result.done;
      state = result.next;
    }
  }
  return total / episodes;
}

SeedRunResult trainOneSeed(const TaskSpec& task, const std::string& algorithm,
                           const HarnessConfig& config, int seed,
                           const TrainOptions& options) {
  const std::uint64_t base = static_cast<std::uint64_t>(seed);
  auto learner = makeLearner(algorithm, task.encodingSize(), task.doorCount,
                             config.learner, mixSeed(base, 7));
  std::mt19937_64 envRng(mixSeed(base, 8));
  std::mt19937_64 actRng(mixSeed(base, 9));
  int startEpoch = 0;

  if (options.initialLearner) learner->restore(*options.initialLearner);
  if (options.resumeState) {
    const nlohmann::json& s = *options.resumeState;
    learner->restore(s.at("learner"));
    envRng = rngFromString(s.at("env_rng").get<std::string>());
    actRng = rngFromString(s.at("act_rng").get<std::string>());
    startEpoch = s.at("epochs_done").get<int>();
  }

  const int epochs = config.epochs();
  SeedRunResult result;
  result.curve.seed = seed;
  std::vector<TraceStep> batch;
  batch.reserve(config.epochSize);
  for (int epoch = startEpoch; epoch < epochs; ++epoch) {
    batch.clear();
    EnvState env = resetEnv(task, envRng);
    for (int i = 0; i < config.epochSize; ++i) {
      const std::vector<double> encoded = encode(task, env);
      TraceStep step = learner->act(encoded, actRng);
      const StepResult sr = stepEnv(task, env, step.chosen);
      step.reward = sr.reward;
      step.done = sr.done;
      step.nextState = encode(task, sr.next);
      batch.push_back(std::move(step));
      env = sr.done ? resetEnv(task, envRng) : sr.next;
    }
    learner->update(batch);
    const long long samples =
        static_cast<long long>(epoch + 1) * config.epochSize;
    if (options.epochHook) options.epochHook(epoch, samples, *learner);
    double meanReturn;
    if (config.exactEval) {
      meanReturn = exactExpectedReturn(task, *learner);
    } else {
      std::mt19937_64 evalRng(
          mixSeed(mixSeed(base, 10), static_cast<std::uint64_t>(epoch)));
      meanReturn = rolloutMeanReturn(task, *learner, config.evalEpisodes, evalRng);
    }
    result.curve.samples.push_back(samples);
    result.curve.meanReturn.push_back(meanReturn);
  }

  result.finalState = {{"version", 1},
                       {"algorithm", algorithm},
                       {"task", task.id},
                       {"seed", seed},
                       {"epochs_done", epochs},
                       {"learner", learner->checkpoint()},
                       {"env_rng", rngToString(envRng)},
                       {"act_rng", rngToString(actRng)}};
  return result;
}

TrainResult train(const TaskSpec& task, const std::string& algorithm,
                  const HarnessConfig& config,
                  const std::vector<nlohmann::json>* initialLearners) {
  if (initialLearners && initialLearners->size() != config.seeds.size()) {
    throw std::invalid_argument("one initial checkpoint per seed expected");
  }
  const int n = static_cast<int>(config.seeds.size());
  TrainResult result;
  result.curves.resize(n);
  result.finalStates.resize(n);
  parallelFor(n, config.jobs, [&](int i) {
    TrainOptions options;
    if (initialLearners) options.initialLearner = &(*initialLearners)[i];
    SeedRunResult run =
        trainOneSeed(task, algorithm, config, config.seeds[i], options);
    result.curves[i] = std::move(run.curve);
    result.finalStates[i] = std::move(run.finalState);
  });
  return result;
}

std::optional<long long> convergenceSamples(const LearningCurve& curve,
                                            const ConvergenceSpec& spec) {
  if (spec.window < 1) throw std::invalid_argument("window >= 1");
  auto inBand = [&](double value) {
    if (spec.band == ConvergenceBand::Lower) {
      return value >= spec.target - spec.eps;
    }
    return std::abs(value - spec.target) <= spec.eps;
  };
  const int n = static_cast<int>(curve.meanReturn.size());
  for (int start = 0; start + spec.window <= n; ++start) {
    bool held = true;
    for (int i = start; i < start + spec.window; ++i) {
      if (!inBand(curve.meanReturn[i])) {
        held = false;
        break;
      }
    }
    if (held) return curve.samples[start];
  }
  return std::nullopt;
}

std::vector<const EfficiencyEntry*> EfficiencyReport::select(
    const std::string& cell, const std::string& algorithm) const {
  std::vector<const EfficiencyEntry*> out;
  for (const EfficiencyEntry& e : entries) {
    if (e.cell == cell && e.algorithm == algorithm) out.push_back(&e);
  }
  return out;
}

std::optional<double> EfficiencyReport::meanSamples(
    const std::string& cell, const std::string& algorithm) const {
  double total = 0.0;
  int converged = 0;
  for (const EfficiencyEntry* e : select(cell, algorithm)) {
    if (e->convergenceSamples) {
      total += static_cast<double>(*e->convergenceSamples);
      ++converged;
    }
  }
  if (converged == 0) return std::nullopt;
  return total / converged;
}

double relativeEfficiency(const EfficiencyReport& report,
                          const std::string& algoA, const std::string& algoB,
                          const std::string& cell) {
  const auto a = report.meanSamples(cell, algoA);
  const auto b = report.meanSamples(cell, algoB);
  if (!a || !b) {
    throw UndefinedEfficiencyError("no converged seeds for " +
                                   (!a ? algoA : algoB) + " on " + cell);
  }
  return *b / *a;
}

nlohmann::json SuiteConfig::toJson() const {
  return {{"suite", suite},
          {"harness", harness.toJson()},
          {"algorithms", algorithms},
          {"topologies", topologies}};
}

SuiteConfig SuiteConfig::fromJson(const nlohmann::json& j) {
  SuiteConfig config;
  if (j.contains("suite")) config.suite = j["suite"].get<std::string>();
  if (j.contains("harness")) {
    const auto& h = j["harness"];
    if (h.contains("horizon")) config.harness.horizon = h["horizon"].get<long long>();
    if (h.contains("epoch_size")) config.harness.epochSize = h["epoch_size"].get<int>();
    if (h.contains("seeds")) config.harness.seeds = h["seeds"].get<std::vector<int>>();
    if (h.contains("convergence")) {
      const auto& c = h["convergence"];
      if (c.contains("target")) config.harness.convergence.target = c["target"].get<double>();
      if (c.contains("eps")) config.harness.convergence.eps = c["eps"].get<double>();
      if (c.contains("window")) config.harness.convergence.window = c["window"].get<int>();
      if (c.contains("band")) {
        const std::string band = c["band"].get<std::string>();
        if (band == "lower") {
          config.harness.convergence.band = ConvergenceBand::Lower;
        } else if (band == "two_sided") {
          config.harness.convergence.band = ConvergenceBand::TwoSided;
        } else {
          throw std::invalid_argument("band must be lower|two_sided");
        }
      }
    }
    if (h.contains("learner")) config.harness.learner.applyOverrides(h["learner"]);
    if (h.contains("exact_eval")) config.harness.exactEval = h["exact_eval"].get<bool>();
    if (h.contains("eval_episodes")) config.harness.evalEpisodes = h["eval_episodes"].get<int>();
    if (h.contains("jobs")) config.harness.jobs = h["jobs"].get<int>();
  }
  if (j.contains("algorithms")) {
    config.algorithms = j["algorithms"].get<std::vector<std::string>>();
  }
  if (j.contains("topologies")) {
    config.topologies = j["topologies"].get<std::vector<std::string>>();
  }
  if (config.harness.horizon % config.harness.epochSize != 0) {
    throw std::invalid_argument("horizon must be a multiple of epoch_size");
  }
  if (config.harness.seeds.empty()) {
    throw std::invalid_argument("seeds must be nonempty");
  }
  return config;
}

std::string formatDouble(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

std::string curvesCsv(const std::string& suite,
                      const std::vector<CellCurve>& curves) {
  std::vector<const CellCurve*> ordered;
  for (const CellCurve& c : curves) ordered.push_back(&c);
  std::sort(ordered.begin(), ordered.end(),
            [](const CellCurve* a, const CellCurve* b) {
              return std::tie(a->cell, a->algorithm, a->curve.seed) <
                     std::tie(b->cell, b->algorithm, b->curve.seed);
            });
  std::ostringstream os;
  os << "suite,cell,algorithm,seed,epoch,samples,mean_return\n";
  for (const CellCurve* c : ordered) {
    for (size_t i = 0; i < c->curve.samples.size(); ++i) {
      os << suite << ',' << c->cell << ',' << c->algorithm << ','
         << c->curve.seed << ',' << i + 1 << ',' << c->curve.samples[i] << ','
         << formatDouble(c->curve.meanReturn[i]) << '\n';
    }
  }
  return os.str();
}

std::string bidsCsv(const std::string& suite,
                    const std::vector<std::string>& columns,
                    const std::vector<BidLogRow>& rows) {
  std::vector<const BidLogRow*> ordered;
  for (const BidLogRow& r : rows) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(),
            [](const BidLogRow* a, const BidLogRow* b) {
              return std::tie(a->cell, a->algorithm, a->seed, a->epoch) <
                     std::tie(b->cell, b->algorithm, b->seed, b->epoch);
            });
  std::ostringstream os;
  os << "suite,cell,algorithm,seed,epoch,samples";
  for (const std::string& c : columns) os << ',' << c;
  os << '\n';
  for (const BidLogRow* r : ordered) {
    os << suite << ',' << r->cell << ',' << r->algorithm << ',' << r->seed
       << ',' << r->epoch << ',' << r->samples;
    for (double b : r->bids) os << ',' << formatDouble(b);
    os << '\n';
  }
  return os.str();
}

namespace {

struct SuiteJob {
  std::string cell;
  TaskSpec task;
  std::string algorithm;
  int seedIndex = 0;
  std::string initFromCell;  // empty: fresh initialization
  bool logBids = false;
};

// Probe states for bid logging: the optimal-path decision states of the
// task's first subtask.
std::vector<std::pair<std::string, std::vector<double>>> bidProbeStates(
    const TaskSpec& task) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  const Subtask& sub = task.subtasks.front();
  for (size_t pos = 0; pos < sub.doors.size(); ++pos) {
    EnvState state;
    state.room = sub.rooms[pos];
    state.subtask = 0;
    state.key = sub.doors[pos];
    out.emplace_back("s" + std::to_string(pos), encode(task, state));
  }
  return out;
}

std::vector<double> probeBids(const Learner& learner,
                              const std::vector<double>& encoded) {
  if (const auto* cvs = dynamic_cast<const CvsLearner*>(&learner)) {
    return cvs->bidMeans(encoded);
  }
  return learner.actionProbabilities(encoded);
}

}  // namespace

SuiteResult runSuite(const SuiteConfig& config, const std::string& outDir) {
  // Stages: cells in one stage run in parallel; transfer stages read the
  // previous stage's per-seed final learner states.
  std::vector<std::vector<SuiteJob>> stages;
  if (config.suite == "triplets" || config.suite == "bids") {
    std::vector<std::string> topologies = config.topologies;
    if (topologies.empty()) {
      if (config.suite == "bids") {
        topologies = {"linear_chain"};
      } else {
        topologies = {"linear_chain", "common_ancestor", "common_descendant"};
      }
    }
    std::vector<SuiteJob> trainStage, transferStage;
    for (const std::string& topo : topologies) {
      const Topology topology = topologyFromName(topo);
      const TaskSpec trainSpec = makeTask(topology, "train");
      std::vector<std::string> variants = taskVariants(topology);
      for (const std::string& algo : config.algorithms) {
        trainStage.push_back({trainSpec.id, trainSpec, algo, 0, "", false});
        for (const std::string& variant : variants) {
          if (variant == "train") continue;
          if (config.suite == "bids" && variant != "transfer_last") continue;
          const TaskSpec transferSpec = makeTask(topology, variant);
          transferStage.push_back({transferSpec.id, transferSpec, algo, 0,
                                   trainSpec.id, config.suite == "bids"});
        }
      }
    }
    stages = {trainStage, transferStage};
  } else if (config.suite == "forgetting") {
    const TaskSpec taskA = makeTask(Topology::Forgetting, "a");
    const TaskSpec taskB = makeTask(Topology::Forgetting, "b");
    std::vector<SuiteJob> s1, s2, s3;
    for (const std::string& algo : config.algorithms) {
      s1.push_back({"forgetting/train_a", taskA, algo, 0, "", false});
      s2.push_back({"forgetting/transfer_b", taskB, algo, 0,
                    "forgetting/train_a", false});
      s3.push_back({"forgetting/retransfer_a", taskA, algo, 0,
                    "forgetting/transfer_b", false});
    }
    stages = {s1, s2, s3};
  } else {
    throw std::invalid_argument("unknown suite: " + config.suite);
  }

  SuiteResult result;
  std::mutex resultMutex;
  // (cell, algorithm, seed) -> learner final state
  std::map<std::string, nlohmann::json> finals;
  auto finalKey = [](const std::string& cell, const std::string& algo,
                     int seed) {
    return cell + "|" + algo + "|" + std::to_string(seed);
  };

  for (const std::vector<SuiteJob>& stage : stages) {
    // expand jobs across seeds
    std::vector<SuiteJob> expanded;
    for (const SuiteJob& job : stage) {
      for (size_t i = 0; i < config.harness.seeds.size(); ++i) {
        SuiteJob j = job;
        j.seedIndex = static_cast<int>(i);
        expanded.push_back(std::move(j));
      }
    }
    parallelFor(static_cast<int>(expanded.size()), config.harness.jobs,
                [&](int idx) {
                  const SuiteJob& job = expanded[idx];
                  const int seed = config.harness.seeds[job.seedIndex];
                  TrainOptions options;
                  nlohmann::json initial;
                  if (!job.initFromCell.empty()) {
                    std::lock_guard<std::mutex> lock(resultMutex);
                    initial = finals.at(
                        finalKey(job.initFromCell, job.algorithm, seed))
                        .at("learner");
                  }
                  if (!initial.is_null()) options.initialLearner = &initial;

                  std::vector<BidLogRow> localBids;
                  std::vector<std::pair<std::string, std::vector<double>>> probes;
                  if (job.logBids) probes = bidProbeStates(job.task);
                  if (job.logBids) {
                    options.epochHook = [&](int epoch, long long samples,
                                            const Learner& learner) {
                      BidLogRow row;
                      row.cell = job.cell;
                      row.algorithm = job.algorithm;
                      row.seed = seed;
                      row.epoch = epoch + 1;
                      row.samples = samples;
                      for (const auto& [label, encoded] : probes) {
                        const std::vector<double> bids = probeBids(learner, encoded);
                        row.bids.insert(row.bids.end(), bids.begin(), bids.end());
                      }
                      localBids.push_back(std::move(row));
                    };
                  }

                  SeedRunResult run = trainOneSeed(job.task, job.algorithm,
                                                   config.harness, seed, options);

                  std::lock_guard<std::mutex> lock(resultMutex);
                  finals[finalKey(job.cell, job.algorithm, seed)] =
                      std::move(run.finalState);
                  result.curves.push_back(
                      {job.cell, job.algorithm, std::move(run.curve)});
                  for (BidLogRow& row : localBids) {
                    result.bidRows.push_back(std::move(row));
                  }
                });
  }

  // deterministic ordering regardless of thread interleaving
  std::sort(result.curves.begin(), result.curves.end(),
            [](const CellCurve& a, const CellCurve& b) {
              return std::tie(a.cell, a.algorithm, a.curve.seed) <
                     std::tie(b.cell, b.algorithm, b.curve.seed);
            });

  for (const CellCurve& c : result.curves) {
    EfficiencyEntry entry;
    entry.cell = c.cell;
    entry.algorithm = c.algorithm;
    entry.seed = c.curve.seed;
    entry.convergenceSamples =
        convergenceSamples(c.curve, config.harness.convergence);
    result.report.entries.push_back(std::move(entry));
  }

  // bid column names from the first logging task
  if (config.suite == "bids" && !result.bidRows.empty()) {
    for (const std::vector<SuiteJob>& stage : stages) {
      for (const SuiteJob& job : stage) {
        if (!job.logBids) continue;
        for (const auto& [label, encoded] : bidProbeStates(job.task)) {
          (void)encoded;
          for (int d = 0; d < job.task.doorCount; ++d) {
            result.bidColumnNames.push_back(label + "_" +
                                            std::string(1, doorLetter(d)));
          }
        }
        break;
      }
      if (!result.bidColumnNames.empty()) break;
    }
  }

  // report json
  nlohmann::json report;
  report["suite"] = config.suite;
  report["config"] = config.toJson();
  nlohmann::json cells = nlohmann::json::object();
  std::set<std::string> cellNames;
  for (const CellCurve& c : result.curves) cellNames.insert(c.cell);
  for (const std::string& cell : cellNames) {
    nlohmann::json perAlgo = nlohmann::json::object();
    for (const std::string& algo : config.algorithms) {
      nlohmann::json perSeed = nlohmann::json::array();
      int converged = 0;
      for (const EfficiencyEntry* e : result.report.select(cell, algo)) {
        nlohmann::json js;
        js["seed"] = e->seed;
        if (e->convergenceSamples) {
          js["convergence_samples"] = *e->convergenceSamples;
          ++converged;
        } else {
          js["convergence_samples"] = nullptr;
        }
        perSeed.push_back(js);
      }
      nlohmann::json entry;
      entry["per_seed"] = perSeed;
      entry["converged_seeds"] = converged;
      const auto mean = result.report.meanSamples(cell, algo);
      entry["mean_convergence_samples"] =
          mean ? nlohmann::json(*mean) : nlohmann::json(nullptr);
      perAlgo[algo] = entry;
    }
    cells[cell] = perAlgo;
  }
  report["cells"] = cells;
  nlohmann::json ratios = nlohmann::json::object();
  for (const std::string& cell : cellNames) {
    nlohmann::json cellRatios = nlohmann::json::object();
    for (size_t i = 0; i < config.algorithms.size(); ++i) {
      for (size_t j = 0; j < config.algorithms.size(); ++j) {
        if (i == j) continue;
        const std::string& a = config.algorithms[i];
        const std::string& b = config.algorithms[j];
        try {
          cellRatios[a + "_over_" + b] = relativeEfficiency(result.report, a, b, cell);
        } catch (const UndefinedEfficiencyError&) {
          cellRatios[a + "_over_" + b] = nullptr;
        }
      }
    }
    ratios[cell] = cellRatios;
  }
  report["ratios"] = ratios;
  result.reportJson = report;

  if (!outDir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(outDir);
    std::ofstream(fs::path(outDir) / "config.json")
        << config.toJson().dump(2) << "\n";
    std::ofstream(fs::path(outDir) / "curves.csv")
        << curvesCsv(config.suite, result.curves);
    std::ofstream(fs::path(outDir) / "report.json")
        << report.dump(2) << "\n";
    if (config.suite == "bids") {
      std::ofstream(fs::path(outDir) / "bids.csv")
          << bidsCsv(config.suite, result.bidColumnNames, result.bidRows);
    }
  }
  return result;
}

}  // namespace modcred
