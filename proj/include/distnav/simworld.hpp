#pragma once

// Procedural 2.5-D grid worlds, egocentric depth/semantic ray rendering,
// shortest-path trajectories and their on-disk dataset format.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <vector>

namespace distnav::sim {

constexpr double kCellSize = 0.25;
constexpr double kTurnIncrement = std::numbers::pi / 6.0;
constexpr int kTurnsPerRevolution = 12;

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct WorldObject {
  int object_class = 0;  // >= 1
  Cell cell;
  double facing = 0.0;   // direction from the object into the room
};

struct WorldParams {
  int width = 32;
  int height = 32;
  int room_count = 4;
  int objects_per_room = 2;
  int num_classes = 32;    // object classes are 1..num_classes
  int palette_size = 4;    // classes used by a single world
  int min_room_size = 6;
  int door_width = 2;
  int max_retries = 32;
};

class GridWorld {
 public:
  int width = 0;
  int height = 0;
  double cell_size = kCellSize;
  std::vector<std::uint8_t> occupancy;  // 1 = wall
  std::vector<int> room_id;             // -1 on walls
  std::vector<WorldObject> objects;
  std::uint64_t seed = 0;
  int room_count = 0;

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  bool occupied(int x, int y) const { return !in_bounds(x, y) || occupancy[index(x, y)] != 0; }
  /// Index into `objects`, or -1.
  int object_at(int x, int y) const { return in_bounds(x, y) ? object_grid_[index(x, y)] : -1; }
  bool blocks_ray(int x, int y) const { return occupied(x, y) || object_at(x, y) >= 0; }
  bool traversable(int x, int y) const { return !blocks_ray(x, y); }
  bool traversable(Cell c) const { return traversable(c.x, c.y); }
  int room_at(Cell c) const { return in_bounds(c.x, c.y) ? room_id[index(c.x, c.y)] : -1; }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }

  Cell cell_of(double x, double y) const;
  std::vector<Cell> traversable_cells() const;
  void rebuild_object_grid();

  friend bool operator==(const GridWorld& a, const GridWorld& b) {
    return a.width == b.width && a.height == b.height && a.occupancy == b.occupancy && a.room_id == b.room_id &&
           a.seed == b.seed && a.room_count == b.room_count && a.objects.size() == b.objects.size() &&
           std::equal(a.objects.begin(), a.objects.end(), b.objects.begin(), [](const auto& p, const auto& q) {
             return p.object_class == q.object_class && p.cell == q.cell && p.facing == q.facing;
           });
  }

 private:
  std::vector<int> object_grid_;
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // [0, 2pi), counter-clockwise from +x
  friend bool operator==(const Pose&, const Pose&) = default;
};

struct RenderParams {
  int ray_count = 64;
  double fov = std::numbers::pi / 2.0;
  double max_range = 5.0;
};

struct Observation {
  std::vector<float> depth;
  std::vector<std::uint16_t> semantic;
  Pose pose;
  double fov = std::numbers::pi / 2.0;
  double max_range = 5.0;

  int ray_count() const { return static_cast<int>(depth.size()); }
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct Trajectory {
  std::vector<Observation> observations;
  int goal_object = 0;  // index into GridWorld::objects
  Pose goal_pose;
  std::uint64_t world_seed = 0;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

enum class Action : int { Forward = 0, TurnLeft = 1, TurnRight = 2, Stop = 3 };
constexpr int kNumActions = 4;

double wrap_angle(double a);             // -> [0, 2pi)
double angle_diff(double a, double b);   // a - b in (-pi, pi]
Pose cell_pose(Cell c, double heading);
/// Angle of ray i relative to the heading; ray 0 is leftmost.
double ray_offset(int i, int ray_count, double fov);

/// Deterministic in (seed, params). Throws std::invalid_argument for params
/// out of bounds, std::runtime_error when no valid layout is found.
GridWorld generate_world(std::uint64_t seed, const WorldParams& params);

/// 4-connected flood fill over traversable cells; true when they form one component.
bool is_connected(const GridWorld& world);

/// Exact grid ray-march. Throws std::invalid_argument if the pose is not in a
/// traversable cell or R < 8. When `hit_objects` is non-null it receives, per
/// ray, the index of the object hit first (or -1).
Observation render_observation(const GridWorld& world, const Pose& pose, const RenderParams& rp,
                               std::vector<int>* hit_objects = nullptr);

/// Moves one cell along the cardinal direction nearest to the heading if that
/// cell is traversable; turns rotate by kTurnIncrement. Stop is a no-op.
Pose apply_action(const GridWorld& world, const Pose& pose, Action a, bool* moved = nullptr);
Cell forward_cell(Cell c, double heading);

/// Cell from which the object is viewed at the end of a trajectory: up to
/// three cells in front of it.
Cell viewpoint_cell(const GridWorld& world, int object_index);

/// BFS step distances to `target` over traversable cells (-1 = unreachable).
std::vector<int> bfs_distances(const GridWorld& world, Cell target);

struct FollowerResult {
  Trajectory trajectory;
  std::vector<Action> actions;
};

/// Shortest-path follower: walks a BFS shortest path to the goal viewpoint
/// (ties: forward, turn-left, turn-right), then rotates until the goal object
/// is visible within one turn increment of the view center.
FollowerResult shortest_path_trajectory(const GridWorld& world, const Pose& start, int goal_object_index,
                                        const RenderParams& rp = {});

/// Line-delimited dataset. Header: {"format":"distnav-traj","version":1,
/// "ray_count","fov","max_range","records"}.
std::size_t write_dataset(const std::vector<Trajectory>& trajectories, const RenderParams& rp,
                          const std::filesystem::path& path);

struct Dataset {
  RenderParams render;
  std::vector<Trajectory> trajectories;
};

/// Throws DataError naming the line and byte offset of the first bad record.
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace distnav::sim
