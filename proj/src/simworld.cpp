#include "distnav/simworld.hpp"

#include "distnav/base64.hpp"
#include "distnav/errors.hpp"
#include "distnav/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace distnav::sim {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kDx[4] = {1, 0, -1, 0};
constexpr int kDy[4] = {0, 1, 0, -1};

struct Rect {
  int x0, y0, x1, y1;  // inclusive interior
  int id;
  int w() const { return x1 - x0 + 1; }
  int h() const { return y1 - y0 + 1; }
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

int cardinal_index(double heading) {
  int k = static_cast<int>(std::lround(wrap_angle(heading) / (std::numbers::pi / 2.0)));
  return ((k % 4) + 4) % 4;
}

double turn(double heading, int direction) {
  double k = std::round(heading / kTurnIncrement);
  if (std::abs(heading - k * kTurnIncrement) < 1e-9) {
    int idx = ((static_cast<int>(k) + direction) % kTurnsPerRevolution + kTurnsPerRevolution) % kTurnsPerRevolution;
    return idx * kTurnIncrement;
  }
  return wrap_angle(heading + direction * kTurnIncrement);
}

std::optional<GridWorld> try_build(std::uint64_t seed, const WorldParams& p, Rng& rng) {
  GridWorld w;
  w.width = p.width;
  w.height = p.height;
  w.seed = seed;
  w.occupancy.assign(static_cast<std::size_t>(p.width) * p.height, 0);
  for (int x = 0; x < p.width; ++x) {
    w.occupancy[w.index(x, 0)] = 1;
    w.occupancy[w.index(x, p.height - 1)] = 1;
  }
  for (int y = 0; y < p.height; ++y) {
    w.occupancy[w.index(0, y)] = 1;
    w.occupancy[w.index(p.width - 1, y)] = 1;
  }

  std::vector<Rect> rooms{{1, 1, p.width - 2, p.height - 2, 0}};
  const int m = p.min_room_size;
  while (static_cast<int>(rooms.size()) < p.room_count) {
    int best = -1;
    for (int i = 0; i < static_cast<int>(rooms.size()); ++i) {
      const Rect& r = rooms[i];
      bool can = r.w() >= 2 * m + 1 || r.h() >= 2 * m + 1;
      if (can && (best < 0 || r.w() * r.h() > rooms[best].w() * rooms[best].h())) best = i;
    }
    if (best < 0) return std::nullopt;
    Rect r = rooms[best];
    bool vertical = r.w() >= r.h() ? r.w() >= 2 * m + 1 : r.h() < 2 * m + 1;
    int lo = vertical ? r.x0 + m : r.y0 + m;
    int hi = vertical ? r.x1 - m : r.y1 - m;
    int cut = -1;
    for (int attempt = 0; attempt < 32; ++attempt) {
      int c = lo + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(hi - lo + 1)));
      // The wall must not land in front of an existing door.
      bool ok = vertical ? (w.occupied(c, r.y0 - 1) && w.occupied(c, r.y1 + 1))
                         : (w.occupied(r.x0 - 1, c) && w.occupied(r.x1 + 1, c));
      if (ok) {
        cut = c;
        break;
      }
    }
    if (cut < 0) return std::nullopt;
    int span = vertical ? r.h() : r.w();
    int door = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(span - p.door_width + 1)));
    for (int k = 0; k < span; ++k) {
      bool is_door = k >= door && k < door + p.door_width;
      int x = vertical ? cut : r.x0 + k;
      int y = vertical ? r.y0 + k : cut;
      w.occupancy[w.index(x, y)] = is_door ? 0 : 1;
    }
    Rect a = r, b = r;
    if (vertical) {
      a.x1 = cut - 1;
      b.x0 = cut + 1;
    } else {
      a.y1 = cut - 1;
      b.y0 = cut + 1;
    }
    b.id = static_cast<int>(rooms.size());
    rooms[best] = a;
    rooms.push_back(b);
  }

  w.room_count = static_cast<int>(rooms.size());
  w.room_id.assign(w.occupancy.size(), -1);
  for (const Rect& r : rooms)
    for (int y = r.y0; y <= r.y1; ++y)
      for (int x = r.x0; x <= r.x1; ++x) w.room_id[w.index(x, y)] = r.id;
  // Door cells join the first labelled neighbour.
  for (int y = 1; y < p.height - 1; ++y)
    for (int x = 1; x < p.width - 1; ++x) {
      std::size_t i = w.index(x, y);
      if (w.occupancy[i] || w.room_id[i] >= 0) continue;
      for (int d = 0; d < 4 && w.room_id[i] < 0; ++d) w.room_id[i] = w.room_id[w.index(x + kDx[d], y + kDy[d])];
    }

  std::vector<int> palette;
  for (int c = 1; c <= p.num_classes; ++c) palette.push_back(c);
  std::shuffle(palette.begin(), palette.end(), rng);
  palette.resize(static_cast<std::size_t>(std::min(p.palette_size, p.num_classes)));

  w.rebuild_object_grid();
  auto is_door = [&](int x, int y) {
    if (!w.in_bounds(x, y) || w.occupied(x, y)) return false;
    for (const Rect& r : rooms)
      if (r.contains(x, y)) return false;
    return true;
  };
  for (const Rect& r : rooms) {
    for (int k = 0; k < p.objects_per_room; ++k) {
      for (int attempt = 0; attempt < 64; ++attempt) {
        int side = static_cast<int>(uniform_index(rng, 4));  // wall direction from the object
        int x, y;
        if (side == 0 || side == 2) {
          x = side == 0 ? r.x1 : r.x0;
          y = r.y0 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(r.h())));
        } else {
          y = side == 1 ? r.y1 : r.y0;
          x = r.x0 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(r.w())));
        }
        if (!w.occupied(x + kDx[side], y + kDy[side])) continue;
        if (!w.traversable(x, y)) continue;
        bool near_door = false;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) near_door = near_door || is_door(x + dx, y + dy);
        if (near_door) continue;
        int front = (side + 2) % 4;
        bool clear = true;
        for (int s = 1; s <= 3; ++s) {
          int fx = x + s * kDx[front], fy = y + s * kDy[front];
          clear = clear && r.contains(fx, fy) && w.traversable(fx, fy);
        }
        // Keep every object's viewing lane free of other objects.
        for (const WorldObject& o : w.objects) {
          int of = cardinal_index(o.facing);
          for (int s = 1; s <= 3; ++s) {
            clear = clear && !(o.cell.x + s * kDx[of] == x && o.cell.y + s * kDy[of] == y);
          }
        }
        if (!clear) continue;
        WorldObject obj;
        obj.object_class = palette[uniform_index(rng, palette.size())];
        obj.cell = {x, y};
        obj.facing = front * std::numbers::pi / 2.0;
        w.objects.push_back(obj);
        w.rebuild_object_grid();
        if (!is_connected(w)) {
          w.objects.pop_back();
          w.rebuild_object_grid();
          continue;
        }
        break;
      }
    }
  }
  if (w.objects.empty() || !is_connected(w)) return std::nullopt;
  return w;
}

}  // namespace

double wrap_angle(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

double angle_diff(double a, double b) {
  double d = std::fmod(a - b, kTwoPi);
  if (d <= -std::numbers::pi) d += kTwoPi;
  if (d > std::numbers::pi) d -= kTwoPi;
  return d;
}

Pose cell_pose(Cell c, double heading) {
  return Pose{(c.x + 0.5) * kCellSize, (c.y + 0.5) * kCellSize, wrap_angle(heading)};
}

double ray_offset(int i, int ray_count, double fov) {
  return fov / 2.0 - (i + 0.5) * fov / ray_count;
}

Cell GridWorld::cell_of(double x, double y) const {
  return Cell{static_cast<int>(std::floor(x / cell_size)), static_cast<int>(std::floor(y / cell_size))};
}

std::vector<Cell> GridWorld::traversable_cells() const {
  std::vector<Cell> out;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (traversable(x, y)) out.push_back({x, y});
  return out;
}

void GridWorld::rebuild_object_grid() {
  object_grid_.assign(static_cast<std::size_t>(width) * height, -1);
  for (std::size_t i = 0; i < objects.size(); ++i)
    object_grid_[index(objects[i].cell.x, objects[i].cell.y)] = static_cast<int>(i);
}

GridWorld generate_world(std::uint64_t seed, const WorldParams& params) {
  if (params.width < 16 || params.width > 256 || params.height < 16 || params.height > 256)
    throw std::invalid_argument("world width/height must lie in [16, 256]");
  if (params.room_count < 1 || params.min_room_size < 4 || params.door_width < 1 || params.objects_per_room < 1 ||
      params.num_classes < 1 || params.palette_size < 1 || params.num_classes >= 65535)
    throw std::invalid_argument("invalid world parameters");
  for (int attempt = 0; attempt < params.max_retries; ++attempt) {
    Rng rng = make_rng(seed, "world/" + std::to_string(attempt));
    if (auto w = try_build(seed, params, rng)) return std::move(*w);
  }
  throw std::runtime_error("world generation failed after " + std::to_string(params.max_retries) +
                           " attempts (seed " + std::to_string(seed) + ")");
}

bool is_connected(const GridWorld& world) {
  std::vector<Cell> cells = world.traversable_cells();
  if (cells.empty()) return false;
  std::vector<int> d = bfs_distances(world, cells.front());
  return std::all_of(cells.begin(), cells.end(), [&](Cell c) { return d[world.index(c.x, c.y)] >= 0; });
}

std::vector<int> bfs_distances(const GridWorld& world, Cell target) {
  std::vector<int> dist(static_cast<std::size_t>(world.width) * world.height, -1);
  if (!world.traversable(target)) return dist;
  std::deque<Cell> queue{target};
  dist[world.index(target.x, target.y)] = 0;
  while (!queue.empty()) {
    Cell c = queue.front();
    queue.pop_front();
    int base = dist[world.index(c.x, c.y)];
    for (int d = 0; d < 4; ++d) {
      Cell n{c.x + kDx[d], c.y + kDy[d]};
      if (!world.traversable(n)) continue;
      int& slot = dist[world.index(n.x, n.y)];
      if (slot >= 0) continue;
      slot = base + 1;
      queue.push_back(n);
    }
  }
  return dist;
}

Observation render_observation(const GridWorld& world, const Pose& pose, const RenderParams& rp,
                               std::vector<int>* hit_objects) {
  if (rp.ray_count < 8) throw std::invalid_argument("render_observation: ray_count must be >= 8");
  Cell start = world.cell_of(pose.x, pose.y);
  if (!world.traversable(start)) throw std::invalid_argument("render_observation: pose is not in free space");

  Observation obs;
  obs.pose = pose;
  obs.fov = rp.fov;
  obs.max_range = rp.max_range;
  obs.depth.resize(static_cast<std::size_t>(rp.ray_count));
  obs.semantic.assign(static_cast<std::size_t>(rp.ray_count), 0);
  if (hit_objects) hit_objects->assign(static_cast<std::size_t>(rp.ray_count), -1);

  const double px = pose.x / world.cell_size;
  const double py = pose.y / world.cell_size;
  const double inf = std::numeric_limits<double>::infinity();
  for (int i = 0; i < rp.ray_count; ++i) {
    double ang = pose.heading + ray_offset(i, rp.ray_count, rp.fov);
    double dx = std::cos(ang), dy = std::sin(ang);
    int cx = start.x, cy = start.y;
    int sx = dx > 0 ? 1 : -1, sy = dy > 0 ? 1 : -1;
    double tmx = dx > 0 ? (cx + 1 - px) / dx : (dx < 0 ? (px - cx) / -dx : inf);
    double tmy = dy > 0 ? (cy + 1 - py) / dy : (dy < 0 ? (py - cy) / -dy : inf);
    double tdx = dx != 0 ? 1.0 / std::abs(dx) : inf;
    double tdy = dy != 0 ? 1.0 / std::abs(dy) : inf;
    double depth = rp.max_range;
    while (true) {
      double t;
      if (tmx < tmy) {
        cx += sx;
        t = tmx;
        tmx += tdx;
      } else {
        cy += sy;
        t = tmy;
        tmy += tdy;
      }
      double meters = t * world.cell_size;
      if (meters >= rp.max_range) break;
      if (world.blocks_ray(cx, cy)) {
        depth = meters;
        int obj = world.object_at(cx, cy);
        if (obj >= 0) {
          obs.semantic[i] = static_cast<std::uint16_t>(world.objects[obj].object_class);
          if (hit_objects) (*hit_objects)[i] = obj;
        }
        break;
      }
    }
    obs.depth[i] = static_cast<float>(depth);
  }
  return obs;
}

Cell forward_cell(Cell c, double heading) {
  int k = cardinal_index(heading);
  return Cell{c.x + kDx[k], c.y + kDy[k]};
}

Pose apply_action(const GridWorld& world, const Pose& pose, Action a, bool* moved) {
  if (moved) *moved = false;
  Pose out = pose;
  switch (a) {
    case Action::Forward: {
      Cell next = forward_cell(world.cell_of(pose.x, pose.y), pose.heading);
      if (world.traversable(next)) {
        out.x = (next.x + 0.5) * world.cell_size;
        out.y = (next.y + 0.5) * world.cell_size;
        if (moved) *moved = true;
      }
      break;
    }
    case Action::TurnLeft:
      out.heading = turn(pose.heading, +1);
      break;
    case Action::TurnRight:
      out.heading = turn(pose.heading, -1);
      break;
    case Action::Stop:
      break;
  }
  return out;
}

Cell viewpoint_cell(const GridWorld& world, int object_index) {
  const WorldObject& obj = world.objects.at(static_cast<std::size_t>(object_index));
  int k = cardinal_index(obj.facing);
  Cell best = obj.cell;
  for (int s = 1; s <= 3; ++s) {
    Cell c{obj.cell.x + s * kDx[k], obj.cell.y + s * kDy[k]};
    if (!world.traversable(c)) break;
    best = c;
  }
  if (best == obj.cell) throw std::runtime_error("object has no free cell in front of it");
  return best;
}

FollowerResult shortest_path_trajectory(const GridWorld& world, const Pose& start, int goal_object_index,
                                        const RenderParams& rp) {
  if (goal_object_index < 0 || goal_object_index >= static_cast<int>(world.objects.size()))
    throw std::invalid_argument("shortest_path_trajectory: goal object index out of range");
  const Cell target = viewpoint_cell(world, goal_object_index);
  const std::vector<int> dist = bfs_distances(world, target);
  Cell cur = world.cell_of(start.x, start.y);
  if (!world.traversable(cur)) throw std::invalid_argument("shortest_path_trajectory: start not in free space");
  if (dist[world.index(cur.x, cur.y)] < 0) throw std::runtime_error("shortest_path_trajectory: goal unreachable");

  const WorldObject& goal = world.objects[static_cast<std::size_t>(goal_object_index)];
  const double gx = (goal.cell.x + 0.5) * world.cell_size, gy = (goal.cell.y + 0.5) * world.cell_size;

  FollowerResult res;
  res.trajectory.goal_object = goal_object_index;
  res.trajectory.world_seed = world.seed;
  Pose pose = start;
  std::vector<int> hits;
  res.trajectory.observations.push_back(render_observation(world, pose, rp, &hits));

  const std::size_t limit = 8 * world.occupancy.size() + 64;
  while (true) {
    if (res.actions.size() > limit) throw std::runtime_error("shortest_path_trajectory: step limit exceeded");
    cur = world.cell_of(pose.x, pose.y);
    int here = dist[world.index(cur.x, cur.y)];
    Action act;
    if (here > 0) {
      auto improves = [&](double heading) {
        Cell f = forward_cell(cur, heading);
        return world.in_bounds(f.x, f.y) && dist[world.index(f.x, f.y)] == here - 1;
      };
      if (improves(pose.heading)) {
        act = Action::Forward;
      } else {
        int left = 99, right = 99;
        for (int j = 1; j <= kTurnsPerRevolution / 2; ++j) {
          if (left == 99 && improves(pose.heading + j * kTurnIncrement)) left = j;
          if (right == 99 && improves(pose.heading - j * kTurnIncrement)) right = j;
        }
        act = left <= right ? Action::TurnLeft : Action::TurnRight;
      }
    } else {
      bool visible = std::find(hits.begin(), hits.end(), goal_object_index) != hits.end();
      double err = angle_diff(std::atan2(gy - pose.y, gx - pose.x), pose.heading);
      if (visible && std::abs(err) < kTurnIncrement - 1e-9) break;
      act = err >= 0 ? Action::TurnLeft : Action::TurnRight;
    }
    pose = apply_action(world, pose, act);
    res.actions.push_back(act);
    res.trajectory.observations.push_back(render_observation(world, pose, rp, &hits));
  }
  res.trajectory.goal_pose = pose;
  return res;
}

// ---------------------------------------------------------------------------
// Dataset I/O

namespace {

constexpr const char* kFormat = "distnav-traj";
constexpr int kVersion = 1;

template <class T>
std::string pack(const std::vector<T>& values) {
  std::vector<std::uint8_t> bytes(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
  return base64::encode(bytes);
}

template <class T>
std::vector<T> unpack(const std::string& text, std::size_t expected) {
  std::vector<std::uint8_t> bytes = base64::decode(text);
  if (bytes.size() != expected * sizeof(T))
    throw std::invalid_argument("array length " + std::to_string(bytes.size() / sizeof(T)) + ", expected " +
                                std::to_string(expected));
  std::vector<T> out(expected);
  if (expected) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

nlohmann::json pose_json(const Pose& p) { return nlohmann::json::array({p.x, p.y, p.heading}); }

Pose pose_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("pose must be [x, y, heading]");
  return Pose{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

std::size_t write_dataset(const std::vector<Trajectory>& trajectories, const RenderParams& rp,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open dataset for writing: " + path.string());
  nlohmann::ordered_json header;
  header["format"] = kFormat;
  header["version"] = kVersion;
  header["ray_count"] = rp.ray_count;
  header["fov"] = rp.fov;
  header["max_range"] = rp.max_range;
  header["records"] = trajectories.size();
  out << header.dump() << '\n';
  for (const Trajectory& t : trajectories) {
    nlohmann::ordered_json rec;
    rec["world_seed"] = t.world_seed;
    rec["goal_object"] = t.goal_object;
    rec["goal_pose"] = pose_json(t.goal_pose);
    nlohmann::json poses = nlohmann::json::array();
    std::vector<float> depth;
    std::vector<std::uint16_t> semantic;
    for (const Observation& o : t.observations) {
      if (o.ray_count() != rp.ray_count || o.semantic.size() != o.depth.size())
        throw std::invalid_argument("write_dataset: observation ray count does not match header");
      poses.push_back(pose_json(o.pose));
      depth.insert(depth.end(), o.depth.begin(), o.depth.end());
      semantic.insert(semantic.end(), o.semantic.begin(), o.semantic.end());
    }
    rec["poses"] = std::move(poses);
    rec["depth"] = pack(depth);
    rec["semantic"] = pack(semantic);
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
  return trajectories.size();
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  Dataset ds;
  std::size_t pos = 0, line_no = 0, declared = 0;
  auto fail = [&](std::size_t line, std::size_t offset, const std::string& why) -> DataError {
    return DataError(path.string() + ": line " + std::to_string(line) + " (byte " + std::to_string(offset) +
                     "): " + why);
  };
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    ++line_no;
    if (nl == std::string::npos) throw fail(line_no, pos, "truncated record (missing newline)");
    std::string_view line(text.data() + pos, nl - pos);
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      if (line_no == 1) {
        if (j.value("format", "") != kFormat) throw std::invalid_argument("unknown format");
        if (j.at("version").get<int>() != kVersion)
          throw std::invalid_argument("version mismatch: " + j.at("version").dump());
        ds.render.ray_count = j.at("ray_count").get<int>();
        ds.render.fov = j.at("fov").get<double>();
        ds.render.max_range = j.at("max_range").get<double>();
        declared = j.at("records").get<std::size_t>();
      } else {
        Trajectory t;
        t.world_seed = j.at("world_seed").get<std::uint64_t>();
        t.goal_object = j.at("goal_object").get<int>();
        t.goal_pose = pose_from(j.at("goal_pose"));
        const auto& poses = j.at("poses");
        std::size_t n = poses.size(), r = static_cast<std::size_t>(ds.render.ray_count);
        auto depth = unpack<float>(j.at("depth").get<std::string>(), n * r);
        auto semantic = unpack<std::uint16_t>(j.at("semantic").get<std::string>(), n * r);
        for (std::size_t k = 0; k < n; ++k) {
          Observation o;
          o.pose = pose_from(poses[k]);
          o.fov = ds.render.fov;
          o.max_range = ds.render.max_range;
          o.depth.assign(depth.begin() + k * r, depth.begin() + (k + 1) * r);
          o.semantic.assign(semantic.begin() + k * r, semantic.begin() + (k + 1) * r);
          t.observations.push_back(std::move(o));
        }
        ds.trajectories.push_back(std::move(t));
      }
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      throw fail(line_no, pos, e.what());
    }
    pos = nl + 1;
  }
  if (line_no == 0) throw fail(1, 0, "missing header");
  if (ds.trajectories.size() != declared)
    throw fail(line_no + 1, pos,
               "file truncated: " + std::to_string(ds.trajectories.size()) + " of " + std::to_string(declared) +
                   " records present");
  return ds;
}

}  // namespace distnav::sim
