#include "mlcrnn/graph.hpp"

#include <algorithm>
#include <sstream>

#include "mlcrnn/error.hpp"

namespace mlcrnn {

namespace {

// Maps local coordinates (start corner at local (0, 0)) to lattice coordinates.
Coord to_lattice(Direction d, std::size_t i, std::size_t j, std::size_t h, std::size_t w) {
  switch (d) {
    case Direction::kSouthEast: return {i, j};
    case Direction::kSouthWest: return {i, w - 1 - j};
    case Direction::kNorthWest: return {h - 1 - i, w - 1 - j};
    case Direction::kNorthEast: return {h - 1 - i, j};
  }
  return {i, j};
}

bool in_bounds(long r, long c, std::size_t h, std::size_t w) {
  return r >= 0 && c >= 0 && r < static_cast<long>(h) && c < static_cast<long>(w);
}

std::string coord_str(Coord c) {
  std::ostringstream os;
  os << "(" << c.row << "," << c.col << ")";
  return os.str();
}

}  // namespace

std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::kSouthEast: return "SE";
    case Direction::kSouthWest: return "SW";
    case Direction::kNorthWest: return "NW";
    case Direction::kNorthEast: return "NE";
  }
  return "?";
}

std::array<Offset, 3> predecessor_offsets(Direction d) {
  switch (d) {
    case Direction::kSouthEast: return {{{-1, 0}, {0, -1}, {-1, -1}}};
    case Direction::kSouthWest: return {{{-1, 0}, {0, 1}, {-1, 1}}};
    case Direction::kNorthWest: return {{{1, 0}, {0, 1}, {1, 1}}};
    case Direction::kNorthEast: return {{{1, 0}, {0, -1}, {1, -1}}};
  }
  return {};
}

Coord DagPlan::start_corner() const { return to_lattice(direction, 0, 0, height, width); }

DagPlan build_dag_plan(Direction direction, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) {
    std::ostringstream os;
    os << "build_dag_plans: lattice must be nonempty, got " << height << "x" << width;
    throw DimensionError(os.str());
  }
  DagPlan plan;
  plan.direction = direction;
  plan.height = height;
  plan.width = width;
  plan.order.reserve(height * width);
  plan.predecessors.resize(height * width);
  plan.successors.resize(height * width);

  const auto offsets = predecessor_offsets(direction);
  for (std::size_t s = 0; s + 1 < height + width; ++s) {
    plan.wavefront_starts.push_back(plan.order.size());
    const std::size_t i_begin = s >= width ? s - width + 1 : 0;
    const std::size_t i_end = std::min(s, height - 1);
    for (std::size_t i = i_begin; i <= i_end; ++i) {
      const Coord v = to_lattice(direction, i, s - i, height, width);
      plan.order.push_back(v);
      auto& preds = plan.predecessors[plan.linear(v)];
      for (int slot = 0; slot < 3; ++slot) {
        const Offset o = offsets[static_cast<std::size_t>(slot)];
        const long r = static_cast<long>(v.row) + o.d_row;
        const long c = static_cast<long>(v.col) + o.d_col;
        if (!in_bounds(r, c, height, width)) continue;
        const Coord p{static_cast<std::size_t>(r), static_cast<std::size_t>(c)};
        preds.push_back({p, o, slot});
        plan.successors[plan.linear(p)].push_back({v, o, slot});
      }
    }
  }
  plan.wavefront_starts.push_back(plan.order.size());
  return plan;
}

std::array<DagPlan, 4> build_dag_plans(std::size_t height, std::size_t width) {
  return {build_dag_plan(Direction::kSouthEast, height, width),
          build_dag_plan(Direction::kSouthWest, height, width),
          build_dag_plan(Direction::kNorthWest, height, width),
          build_dag_plan(Direction::kNorthEast, height, width)};
}

PlanValidation validate_plan(const DagPlan& plan) {
  auto fail = [](PlanViolation v, std::string msg) { return PlanValidation{v, std::move(msg)}; };
  const std::size_t n = plan.height * plan.width;
  if (n == 0 || plan.order.size() != n) {
    return fail(PlanViolation::kOrderSize, "order has " + std::to_string(plan.order.size()) +
                                               " entries for " + std::to_string(n) + " vertices");
  }
  if (plan.predecessors.size() != n || plan.successors.size() != n) {
    return fail(PlanViolation::kOrderSize, "adjacency lists do not cover the lattice");
  }

  constexpr std::size_t kUnseen = static_cast<std::size_t>(-1);
  std::vector<std::size_t> position(n, kUnseen);
  for (std::size_t k = 0; k < n; ++k) {
    const Coord v = plan.order[k];
    if (v.row >= plan.height || v.col >= plan.width) {
      return fail(PlanViolation::kOrderMembership, "order entry " + coord_str(v) + " out of bounds");
    }
    if (position[plan.linear(v)] != kUnseen) {
      return fail(PlanViolation::kOrderMembership, "vertex " + coord_str(v) + " listed twice");
    }
    position[plan.linear(v)] = k;
  }

  const auto allowed = predecessor_offsets(plan.direction);
  const Coord start = plan.start_corner();
  std::size_t edge_count = 0;
  for (const Coord v : plan.order) {
    const auto& preds = plan.predecessors[plan.linear(v)];
    if (preds.size() > 3) {
      return fail(PlanViolation::kPredecessorCount, coord_str(v) + " has more than 3 predecessors");
    }
    if (v == start && !preds.empty()) {
      return fail(PlanViolation::kStartCorner, "start corner " + coord_str(v) + " has predecessors");
    }
    for (const Neighbor& p : preds) {
      if (p.coord.row >= plan.height || p.coord.col >= plan.width) {
        return fail(PlanViolation::kPredecessorMembership,
                    "predecessor " + coord_str(p.coord) + " of " + coord_str(v) + " is not a lattice vertex");
      }
      const long r = static_cast<long>(v.row) + p.offset.d_row;
      const long c = static_cast<long>(v.col) + p.offset.d_col;
      const bool slot_ok = p.slot >= 0 && p.slot < 3 && allowed[static_cast<std::size_t>(p.slot)] == p.offset;
      if (!slot_ok || r != static_cast<long>(p.coord.row) || c != static_cast<long>(p.coord.col)) {
        return fail(PlanViolation::kOffsetMismatch,
                    "predecessor " + coord_str(p.coord) + " of " + coord_str(v) + " has inconsistent offset");
      }
      if (position[plan.linear(p.coord)] >= position[plan.linear(v)]) {
        return fail(PlanViolation::kTopological,
                    "predecessor " + coord_str(p.coord) + " does not precede " + coord_str(v));
      }
    }
    for (std::size_t a = 0; a < preds.size(); ++a) {
      for (std::size_t b = a + 1; b < preds.size(); ++b) {
        if (preds[a].coord == preds[b].coord) {
          return fail(PlanViolation::kPredecessorMembership, "duplicate predecessor of " + coord_str(v));
        }
      }
    }
    edge_count += preds.size();
  }

  std::size_t succ_count = 0;
  for (const Coord v : plan.order) {
    for (const Neighbor& s : plan.successors[plan.linear(v)]) {
      ++succ_count;
      bool found = false;
      if (s.coord.row < plan.height && s.coord.col < plan.width) {
        for (const Neighbor& p : plan.predecessors[plan.linear(s.coord)]) {
          if (p.coord == v && p.offset == s.offset && p.slot == s.slot) found = true;
        }
      }
      if (!found) {
        return fail(PlanViolation::kSuccessorTranspose,
                    "successor " + coord_str(s.coord) + " of " + coord_str(v) + " has no matching predecessor edge");
      }
    }
  }
  if (succ_count != edge_count) {
    return fail(PlanViolation::kSuccessorTranspose, "successor lists are not the transpose of predecessor lists");
  }
  return {};
}

}  // namespace mlcrnn
