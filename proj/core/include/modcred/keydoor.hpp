#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace modcred {

class UnknownVariantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Topology { LinearChain, CommonAncestor, CommonDescendant, Forgetting };

std::string topologyName(Topology t);
Topology topologyFromName(const std::string& name);

/// One deterministic decision sequence through rooms: rooms[i] is unlocked by
/// doors[i]; the last room of the path is terminal and carries no key.
struct Subtask {
  std::vector<int> rooms;  // size doors.size() + 1, last entry terminal
  std::vector<int> doors;  // optimal door per decision room
  double weight = 1.0;
  int contextBit = 0;      // encoded only when the task has a context bit
};

/// A key-door MDP: a (possibly multi-task) set of subtasks over shared rooms.
/// Opening the door matching the room's key advances along the subtask path;
/// any other door leaves the room unchanged. Opening the correct final door
/// pays reward 1 and ends the episode.
struct TaskSpec {
  std::string id;
  Topology topology = Topology::LinearChain;
  int roomCount = 0;
  int doorCount = 0;
  bool hasContextBit = false;
  int maxSteps = 20;
  std::vector<Subtask> subtasks;

  // Door whose key is present in a room for a subtask; nullopt at terminal
  // rooms and rooms off the subtask's path.
  std::optional<int> keyAt(int room, int subtask) const;
  int rewardDoor(int subtask) const;
  int encodingSize() const;
  bool isTerminalRoom(int room, int subtask) const;
  nlohmann::json toJson() const;
};

struct EnvState {
  int room = 0;
  int key = -1;  // door index of the key in this room, -1 if none
  int subtask = 0;
  int stepsTaken = 0;
};

struct StepResult {
  EnvState next;
  double reward = 0.0;
  bool done = false;
};

char doorLetter(int door);
int doorIndex(char letter);

std::vector<std::string> taskVariants(Topology topology);
TaskSpec makeTask(Topology topology, const std::string& variant);
// Parses ids of the form "linear_chain/train" or letter aliases like
// "linear_chain/d" (a = train, b..d = the three transfer edits).
TaskSpec taskFromId(const std::string& id);
std::vector<std::string> allTaskIds();

// Swaps exactly one room's key assignment between the room's door pair.
// Applying the same edit twice restores the original task.
TaskSpec applyIntervention(const TaskSpec& task, const std::string& which);
// Number of (room, subtask) schedule entries grouped by room that differ.
int scheduleDiffCount(const TaskSpec& a, const TaskSpec& b);

std::vector<double> encode(const TaskSpec& task, const EnvState& state);
EnvState resetEnv(const TaskSpec& task, std::mt19937_64& rng);
StepResult stepEnv(const TaskSpec& task, const EnvState& state, int action);
std::vector<int> optimalSequence(const TaskSpec& task, int subtask);

}  // namespace modcred
