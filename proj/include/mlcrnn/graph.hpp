#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace mlcrnn {

/// Relative displacement to one of the 8 lattice neighbors.
struct Offset {
  int d_row = 0;
  int d_col = 0;
  friend bool operator==(Offset, Offset) = default;
};

struct Coord {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(Coord, Coord) = default;
};

enum class Direction { kSouthEast = 0, kSouthWest = 1, kNorthWest = 2, kNorthEast = 3 };

inline constexpr std::array<Direction, 4> kAllDirections = {
    Direction::kSouthEast, Direction::kSouthWest, Direction::kNorthWest, Direction::kNorthEast};

std::string_view direction_name(Direction d);

/// The three predecessor offsets of a direction, in slot order
/// {vertical, horizontal, diagonal}. Slot i selects recurrent matrix i.
std::array<Offset, 3> predecessor_offsets(Direction d);

/// A neighbor reached over one edge. `offset` is always the displacement from
/// the edge's head (the later vertex) to its tail, so for successor entries it
/// names the weight slot the successor applies to this vertex.
struct Neighbor {
  Coord coord;
  Offset offset;
  int slot = 0;
};

/// One directed acyclic traversal of an H x W lattice.
struct DagPlan {
  Direction direction = Direction::kSouthEast;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Coord> order;
  /// Start index into `order` of every anti-diagonal wavefront, plus a final
  /// sentinel equal to order.size().
  std::vector<std::size_t> wavefront_starts;
  /// Indexed by row * width + col.
  std::vector<std::vector<Neighbor>> predecessors;
  std::vector<std::vector<Neighbor>> successors;

  std::size_t vertex_count() const { return height * width; }
  std::size_t linear(Coord c) const { return c.row * width + c.col; }
  Coord start_corner() const;
};

/// SE, SW, NW, NE plans (in that order) for an H x W lattice.
std::array<DagPlan, 4> build_dag_plans(std::size_t height, std::size_t width);

DagPlan build_dag_plan(Direction direction, std::size_t height, std::size_t width);

enum class PlanViolation {
  kNone,
  kOrderSize,
  kOrderMembership,
  kPredecessorMembership,
  kOffsetMismatch,
  kTopological,
  kPredecessorCount,
  kStartCorner,
  kSuccessorTranspose,
};

struct PlanValidation {
  PlanViolation violation = PlanViolation::kNone;
  std::string message;
  bool ok() const { return violation == PlanViolation::kNone; }
};

/// Checks every DagPlan invariant in O(V + E); reports the first violation.
PlanValidation validate_plan(const DagPlan& plan);

}  // namespace mlcrnn
