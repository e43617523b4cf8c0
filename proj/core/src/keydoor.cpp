#include "modcred/keydoor.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <stdexcept>

namespace modcred {

namespace {

// One transfer edit: swap a room's key between the room's two doors. Affects
// every subtask whose scheduled door at that room belongs to the pair.
struct TransferEdit {
  const char* name;
  char letter;
  int room;
  std::array<int, 2> pair;
};

constexpr int A = 0, B = 1, C = 2, D = 3, E = 4, F = 5;

const std::vector<TransferEdit>& editsFor(Topology t) {
  static const std::vector<TransferEdit> linear{
      {"transfer_first", 'b', 0, {A, F}},
      {"transfer_middle", 'c', 1, {B, E}},
      {"transfer_last", 'd', 2, {C, D}},
  };
  static const std::vector<TransferEdit> ancestor{
      {"transfer_root", 'b', 0, {A, F}},
      {"transfer_left", 'c', 1, {B, E}},
      {"transfer_right", 'd', 1, {C, D}},
  };
  static const std::vector<TransferEdit> descendant{
      {"transfer_left", 'b', 0, {A, F}},
      {"transfer_right", 'c', 1, {B, E}},
      {"transfer_shared", 'd', 2, {C, D}},
  };
  static const std::vector<TransferEdit> none{};
  switch (t) {
    case Topology::LinearChain:
      return linear;
    case Topology::CommonAncestor:
      return ancestor;
    case Topology::CommonDescendant:
      return descendant;
    case Topology::Forgetting:
      return none;
  }
  return none;
}

// Episode cap: one spare step beyond the optimal solution. A generous retry
// budget lets any stochastic policy solve by exhaustion, which saturates
// returns and erases the transfer-efficiency signal the tasks exist to
// measure; a single retry keeps wrong decisions costly but not fatal.
void applyStepCap(TaskSpec& task) {
  size_t longest = 0;
  for (const Subtask& sub : task.subtasks) {
    longest = std::max(longest, sub.doors.size());
  }
  task.maxSteps = static_cast<int>(longest) + 1;
}

TaskSpec trainTask(Topology t) {
  TaskSpec task;
  task.topology = t;
  switch (t) {
    case Topology::LinearChain:
      task.id = "linear_chain/train";
      task.roomCount = 4;
      task.doorCount = 6;
      task.subtasks = {{{0, 1, 2, 3}, {A, B, C}, 1.0, 0}};
      break;
    case Topology::CommonAncestor:
      task.id = "common_ancestor/train";
      task.roomCount = 3;
      task.doorCount = 6;
      task.subtasks = {{{0, 1, 2}, {A, B}, 0.5, 0}, {{0, 1, 2}, {A, C}, 0.5, 0}};
      break;
    case Topology::CommonDescendant:
      task.id = "common_descendant/train";
      task.roomCount = 4;
      task.doorCount = 6;
      task.subtasks = {{{0, 2, 3}, {A, C}, 0.5, 0}, {{1, 2, 3}, {B, C}, 0.5, 0}};
      break;
    case Topology::Forgetting:
      throw UnknownVariantError("forgetting has task variants 'a' and 'b'");
  }
  applyStepCap(task);
  return task;
}

TaskSpec forgettingTask(const std::string& variant) {
  TaskSpec task;
  task.topology = Topology::Forgetting;
  task.roomCount = 5;  // two starts, shared middle, two disjoint terminals
  task.doorCount = 4;
  task.hasContextBit = true;
  if (variant == "a") {
    task.id = "forgetting/a";
    task.subtasks = {{{0, 2, 3}, {A, C}, 1.0, 0}};
  } else if (variant == "b") {
    task.id = "forgetting/b";
    task.subtasks = {{{1, 2, 4}, {B, D}, 1.0, 1}};
  } else {
    throw UnknownVariantError("unknown forgetting variant: " + variant);
  }
  applyStepCap(task);
  return task;
}

double canonicalUnit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

const TransferEdit* findEdit(Topology topology, const std::string& which) {
  for (const TransferEdit& e : editsFor(topology)) {
    if (which == e.name || (which.size() == 1 && which[0] == e.letter)) {
      return &e;
    }
  }
  return nullptr;
}

// Applies the door-pair swap without touching the id.
TaskSpec applyEditRaw(const TaskSpec& task, const TransferEdit& edit) {
  TaskSpec out = task;
  bool touched = false;
  for (Subtask& sub : out.subtasks) {
    for (size_t i = 0; i + 1 < sub.rooms.size(); ++i) {
      if (sub.rooms[i] != edit.room) continue;
      if (sub.doors[i] == edit.pair[0]) {
        sub.doors[i] = edit.pair[1];
        touched = true;
      } else if (sub.doors[i] == edit.pair[1]) {
        sub.doors[i] = edit.pair[0];
        touched = true;
      }
    }
  }
  if (!touched) {
    throw UnknownVariantError(std::string("edit '") + edit.name +
                              "' touches no schedule entry");
  }
  return out;
}

}  // namespace

std::string topologyName(Topology t) {
  switch (t) {
    case Topology::LinearChain:
      return "linear_chain";
    case Topology::CommonAncestor:
      return "common_ancestor";
    case Topology::CommonDescendant:
      return "common_descendant";
    case Topology::Forgetting:
      return "forgetting";
  }
  return "?";
}

Topology topologyFromName(const std::string& name) {
  if (name == "linear_chain") return Topology::LinearChain;
  if (name == "common_ancestor") return Topology::CommonAncestor;
  if (name == "common_descendant") return Topology::CommonDescendant;
  if (name == "forgetting") return Topology::Forgetting;
  throw UnknownVariantError("unknown topology: " + name);
}

char doorLetter(int door) {
  if (door < 0 || door > 25) throw std::invalid_argument("bad door index");
  return static_cast<char>('A' + door);
}

int doorIndex(char letter) {
  if (letter < 'A' || letter > 'Z') throw std::invalid_argument("bad door letter");
  return letter - 'A';
}

std::optional<int> TaskSpec::keyAt(int room, int subtask) const {
  const Subtask& sub = subtasks.at(subtask);
  for (size_t i = 0; i + 1 < sub.rooms.size(); ++i) {
    if (sub.rooms[i] == room) return sub.doors[i];
  }
  return std::nullopt;
}

int TaskSpec::rewardDoor(int subtask) const {
  return subtasks.at(subtask).doors.back();
}

int TaskSpec::encodingSize() const {
  return roomCount + doorCount + (hasContextBit ? 1 : 0);
}

bool TaskSpec::isTerminalRoom(int room, int subtask) const {
  return subtasks.at(subtask).rooms.back() == room;
}

nlohmann::json TaskSpec::toJson() const {
  nlohmann::json j;
  j["id"] = id;
  j["topology"] = topologyName(topology);
  j["rooms"] = roomCount;
  j["doors"] = doorCount;
  j["max_steps"] = maxSteps;
  j["context_bit"] = hasContextBit;
  j["encoding_size"] = encodingSize();
  j["subtasks"] = nlohmann::json::array();
  for (size_t m = 0; m < subtasks.size(); ++m) {
    const Subtask& sub = subtasks[m];
    nlohmann::json js;
    js["rooms"] = sub.rooms;
    std::vector<std::string> doors;
    for (int d : sub.doors) doors.push_back(std::string(1, doorLetter(d)));
    js["doors"] = doors;
    js["weight"] = sub.weight;
    if (hasContextBit) js["context"] = sub.contextBit;
    js["reward_door"] = std::string(1, doorLetter(rewardDoor(m)));
    j["subtasks"].push_back(js);
  }
  j["key_schedule"] = nlohmann::json::array();
  for (size_t m = 0; m < subtasks.size(); ++m) {
    const Subtask& sub = subtasks[m];
    for (size_t i = 0; i + 1 < sub.rooms.size(); ++i) {
      j["key_schedule"].push_back({{"room", sub.rooms[i]},
                                   {"subtask", m},
                                   {"door", std::string(1, doorLetter(sub.doors[i]))}});
    }
  }
  j["optimal_sequences"] = nlohmann::json::array();
  for (size_t m = 0; m < subtasks.size(); ++m) {
    std::vector<std::string> seq;
    for (int d : subtasks[m].doors) seq.push_back(std::string(1, doorLetter(d)));
    j["optimal_sequences"].push_back(seq);
  }
  return j;
}

std::vector<std::string> taskVariants(Topology topology) {
  if (topology == Topology::Forgetting) return {"a", "b"};
  std::vector<std::string> out{"train"};
  for (const TransferEdit& e : editsFor(topology)) out.push_back(e.name);
  return out;
}

TaskSpec makeTask(Topology topology, const std::string& variant) {
  if (topology == Topology::Forgetting) return forgettingTask(variant);
  if (variant == "train" || variant == "a") return trainTask(topology);
  const TransferEdit* edit = findEdit(topology, variant);
  if (!edit) {
    throw UnknownVariantError("unknown variant '" + variant + "' for " +
                              topologyName(topology));
  }
  TaskSpec out = applyEditRaw(trainTask(topology), *edit);
  out.id = topologyName(topology) + "/" + edit->name;
  return out;
}

TaskSpec taskFromId(const std::string& id) {
  const size_t slash = id.find('/');
  if (slash == std::string::npos) {
    throw UnknownVariantError("task id must look like 'topology/variant': " + id);
  }
  return makeTask(topologyFromName(id.substr(0, slash)), id.substr(slash + 1));
}

std::vector<std::string> allTaskIds() {
  std::vector<std::string> out;
  for (Topology t : {Topology::LinearChain, Topology::CommonAncestor,
                     Topology::CommonDescendant, Topology::Forgetting}) {
    for (const std::string& v : taskVariants(t)) {
      out.push_back(topologyName(t) + "/" + v);
    }
  }
  return out;
}

TaskSpec applyIntervention(const TaskSpec& task, const std::string& which) {
  const TransferEdit* edit = findEdit(task.topology, which);
  if (!edit) {
    throw UnknownVariantError("unknown transfer edit '" + which + "' for " +
                              topologyName(task.topology));
  }
  TaskSpec out = applyEditRaw(task, *edit);
  // Re-derive the id from the canonical variants when the result matches one.
  out.id = topologyName(task.topology) + "/?";
  for (const std::string& v : taskVariants(task.topology)) {
    TaskSpec canon = makeTask(task.topology, v);
    bool same = canon.subtasks.size() == out.subtasks.size();
    for (size_t m = 0; same && m < canon.subtasks.size(); ++m) {
      same = canon.subtasks[m].doors == out.subtasks[m].doors;
    }
    if (same) {
      out.id = canon.id;
      break;
    }
  }
  return out;
}

int scheduleDiffCount(const TaskSpec& a, const TaskSpec& b) {
  if (a.subtasks.size() != b.subtasks.size()) {
    throw std::invalid_argument("tasks have different subtask structure");
  }
  std::set<int> rooms;
  for (const Subtask& sub : a.subtasks) {
    rooms.insert(sub.rooms.begin(), sub.rooms.end());
  }
  int diff = 0;
  for (int room : rooms) {
    for (size_t m = 0; m < a.subtasks.size(); ++m) {
      if (a.keyAt(room, static_cast<int>(m)) !=
          b.keyAt(room, static_cast<int>(m))) {
        ++diff;
        break;  // count at room granularity
      }
    }
  }
  return diff;
}

std::vector<double> encode(const TaskSpec& task, const EnvState& state) {
  std::vector<double> v(task.encodingSize(), 0.0);
  if (state.room < 0 || state.room >= task.roomCount) {
    throw std::invalid_argument("room out of range");
  }
  v[state.room] = 1.0;
  if (state.key >= 0) {
    if (state.key >= task.doorCount) throw std::invalid_argument("bad key");
    v[task.roomCount + state.key] = 1.0;
  }
  if (task.hasContextBit) {
    v[task.roomCount + task.doorCount] =
        static_cast<double>(task.subtasks.at(state.subtask).contextBit);
  }
  return v;
}

EnvState resetEnv(const TaskSpec& task, std::mt19937_64& rng) {
  int subtask = 0;
  if (task.subtasks.size() > 1) {
    double total = 0.0;
    for (const Subtask& sub : task.subtasks) total += sub.weight;
    double draw = canonicalUnit(rng) * total;
    double acc = 0.0;
    for (size_t m = 0; m < task.subtasks.size(); ++m) {
      acc += task.subtasks[m].weight;
      if (draw < acc || m + 1 == task.subtasks.size()) {
        subtask = static_cast<int>(m);
        break;
      }
    }
  }
  EnvState state;
  state.subtask = subtask;
  state.room = task.subtasks[subtask].rooms.front();
  state.key = task.keyAt(state.room, subtask).value();
  state.stepsTaken = 0;
  return state;
}

StepResult stepEnv(const TaskSpec& task, const EnvState& state, int action) {
  if (action < 0 || action >= task.doorCount) {
    throw std::invalid_argument("action out of range");
  }
  if (task.isTerminalRoom(state.room, state.subtask)) {
    throw std::logic_error("stepping a terminal state");
  }
  const Subtask& sub = task.subtasks.at(state.subtask);
  size_t pos = 0;
  while (pos + 1 < sub.rooms.size() && sub.rooms[pos] != state.room) ++pos;
  if (sub.rooms[pos] != state.room) throw std::logic_error("room off path");

  StepResult result;
  result.next = state;
  result.next.stepsTaken = state.stepsTaken + 1;
  if (action == sub.doors[pos]) {
    result.next.room = sub.rooms[pos + 1];
    if (pos + 2 == sub.rooms.size()) {
      // correct final door
      result.reward = 1.0;
      result.done = true;
      result.next.key = -1;
    } else {
      result.next.key = task.keyAt(result.next.room, state.subtask).value();
    }
  }
  if (result.next.stepsTaken >= task.maxSteps) result.done = true;
  return result;
}

std::vector<int> optimalSequence(const TaskSpec& task, int subtask) {
  return task.subtasks.at(subtask).doors;
}

}  // namespace modcred
