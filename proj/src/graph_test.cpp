#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <utility>

#include "mlcrnn/error.hpp"
#include "mlcrnn/graph.hpp"

using namespace mlcrnn;

namespace {

bool contains(const std::vector<Neighbor>& list, Coord c) {
  return std::any_of(list.begin(), list.end(), [&](const Neighbor& n) { return n.coord == c; });
}

using Edge = std::pair<std::size_t, std::size_t>;

Edge undirected(const DagPlan& p, Coord a, Coord b) {
  const auto x = p.linear(a), y = p.linear(b);
  return {std::min(x, y), std::max(x, y)};
}

}  // namespace

TEST_CASE("zero dimensions are rejected") {
  CHECK_THROWS_AS(build_dag_plans(0, 3), DimensionError);
  CHECK_THROWS_AS(build_dag_plans(3, 0), DimensionError);
}

TEST_CASE("1x1 lattice: single vertex and no predecessors in every plan") {
  for (const auto& p : build_dag_plans(1, 1)) {
    REQUIRE(p.order.size() == 1);
    CHECK(p.predecessors[0].empty());
    CHECK(p.successors[0].empty());
    CHECK(validate_plan(p).ok());
  }
}

TEST_CASE("2x2 SE plan: (1,1) has predecessors (0,1), (1,0), (0,0)") {
  const auto p = build_dag_plan(Direction::kSouthEast, 2, 2);
  const auto& preds = p.predecessors[p.linear({1, 1})];
  REQUIRE(preds.size() == 3);
  CHECK(contains(preds, {0, 1}));
  CHECK(contains(preds, {1, 0}));
  CHECK(contains(preds, {0, 0}));
  CHECK(p.start_corner() == Coord{0, 0});
}

TEST_CASE("3x3: the four plans cover all 20 undirected 8-neighbor edges") {
  const std::size_t n = 3;
  std::set<Edge> lattice;
  const auto probe = build_dag_plan(Direction::kSouthEast, n, n);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= 3 || cc >= 3) continue;
          lattice.insert(undirected(probe, {std::size_t(r), std::size_t(c)},
                                    {std::size_t(rr), std::size_t(cc)}));
        }
      }
    }
  }
  CHECK(lattice.size() == 20);

  // Diagonal edges belong to exactly two plans. Axis edges belong to all four,
  // each orientation to exactly two.
  std::map<Edge, int> uses;
  std::map<std::pair<std::size_t, std::size_t>, int> directed;
  for (const auto& p : build_dag_plans(n, n)) {
    for (const auto& v : p.order) {
      for (const auto& pred : p.predecessors[p.linear(v)]) {
        ++uses[undirected(p, v, pred.coord)];
        ++directed[{p.linear(pred.coord), p.linear(v)}];
      }
    }
  }
  CHECK(uses.size() == lattice.size());
  std::size_t diagonal = 0;
  for (const auto& [edge, count] : uses) {
    CHECK(lattice.count(edge) == 1);
    const bool is_diagonal = edge.first / n != edge.second / n && edge.first % n != edge.second % n;
    diagonal += is_diagonal;
    CHECK(count == (is_diagonal ? 2 : 4));
  }
  CHECK(diagonal == 8);
  for (const auto& [arc, count] : directed) {
    const bool is_diagonal = arc.first / n != arc.second / n && arc.first % n != arc.second % n;
    CHECK(count == (is_diagonal ? 1 : 2));
  }
}

TEST_CASE("every built plan validates, with wavefronts along anti-diagonals") {
  for (std::size_t h = 1; h <= 6; ++h) {
    for (std::size_t w = 1; w <= 6; ++w) {
      for (const auto& p : build_dag_plans(h, w)) {
        const auto report = validate_plan(p);
        CHECK_MESSAGE(report.ok(), report.message);
        REQUIRE(p.wavefront_starts.size() == h + w);
        CHECK(p.wavefront_starts.back() == p.order.size());
        const auto corner = p.start_corner();
        for (std::size_t k = 0; k + 1 < p.wavefront_starts.size(); ++k) {
          for (std::size_t i = p.wavefront_starts[k]; i < p.wavefront_starts[k + 1]; ++i) {
            const auto v = p.order[i];
            const std::size_t dist = (v.row > corner.row ? v.row - corner.row : corner.row - v.row) +
                                     (v.col > corner.col ? v.col - corner.col : corner.col - v.col);
            CHECK(dist == k);
          }
        }
      }
    }
  }
}

TEST_CASE("predecessor counts: 0 at the start corner, at most 2 on its boundary lines, 3 elsewhere") {
  const std::size_t h = 5, w = 4;
  for (const auto& p : build_dag_plans(h, w)) {
    const auto offsets = predecessor_offsets(p.direction);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const auto& preds = p.predecessors[r * w + c];
        for (const auto& n : preds) {
          CHECK(n.slot >= 0);
          CHECK(n.slot < 3);
          CHECK(offsets[n.slot] == n.offset);
          CHECK(n.coord.row == std::size_t(int(r) + n.offset.d_row));
          CHECK(n.coord.col == std::size_t(int(c) + n.offset.d_col));
        }
        const bool corner = Coord{r, c} == p.start_corner();
        const bool boundary = r == p.start_corner().row || c == p.start_corner().col;
        if (corner) {
          CHECK(preds.empty());
        } else if (boundary) {
          CHECK(preds.size() <= 2);
        } else {
          CHECK(preds.size() == 3);
        }
      }
    }
  }
}

TEST_CASE("slot order is vertical, horizontal, diagonal") {
  const auto se = predecessor_offsets(Direction::kSouthEast);
  CHECK(se[0] == Offset{-1, 0});
  CHECK(se[1] == Offset{0, -1});
  CHECK(se[2] == Offset{-1, -1});
  const auto nw = predecessor_offsets(Direction::kNorthWest);
  CHECK(nw[0] == Offset{1, 0});
  CHECK(nw[1] == Offset{0, 1});
  CHECK(nw[2] == Offset{1, 1});
}

TEST_CASE("reflection symmetry: flips map SE onto SW and NE") {
  const std::size_t h = 4, w = 5;
  const auto se = build_dag_plan(Direction::kSouthEast, h, w);
  const auto sw = build_dag_plan(Direction::kSouthWest, h, w);
  const auto ne = build_dag_plan(Direction::kNorthEast, h, w);
  auto hflip = [&](Coord c) { return Coord{c.row, w - 1 - c.col}; };
  auto vflip = [&](Coord c) { return Coord{h - 1 - c.row, c.col}; };
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const Coord v{r, c};
      const auto& ps = se.predecessors[se.linear(v)];
      const auto& pw = sw.predecessors[sw.linear(hflip(v))];
      const auto& pn = ne.predecessors[ne.linear(vflip(v))];
      REQUIRE(ps.size() == pw.size());
      REQUIRE(ps.size() == pn.size());
      for (std::size_t i = 0; i < ps.size(); ++i) {
        CHECK(pw[i].coord == hflip(ps[i].coord));
        CHECK(pw[i].slot == ps[i].slot);
        CHECK(pn[i].coord == vflip(ps[i].coord));
        CHECK(pn[i].slot == ps[i].slot);
      }
    }
  }
  CHECK(sw.start_corner() == hflip(se.start_corner()));
  CHECK(ne.start_corner() == vflip(se.start_corner()));
}

TEST_CASE("successors are the transpose of predecessors") {
  for (const auto& p : build_dag_plans(3, 4)) {
    std::size_t forward = 0, backward = 0;
    for (const auto& v : p.order) {
      forward += p.predecessors[p.linear(v)].size();
      for (const auto& s : p.successors[p.linear(v)]) {
        ++backward;
        const auto& back = p.predecessors[p.linear(s.coord)];
        CHECK(contains(back, v));
      }
    }
    CHECK(forward == backward);
  }
}

TEST_CASE("validate_plan reports constructed violations") {
  SUBCASE("reversed order breaks topology") {
    auto p = build_dag_plan(Direction::kSouthEast, 3, 3);
    std::reverse(p.order.begin(), p.order.end());
    const auto report = validate_plan(p);
    CHECK(report.violation == PlanViolation::kTopological);
    CHECK_FALSE(report.message.empty());
  }
  SUBCASE("dangling predecessor coordinate") {
    auto p = build_dag_plan(Direction::kNorthEast, 3, 3);
    p.predecessors[p.linear({1, 1})][0].coord = Coord{7, 9};
    CHECK(validate_plan(p).violation == PlanViolation::kPredecessorMembership);
  }
  SUBCASE("duplicate vertex in order") {
    auto p = build_dag_plan(Direction::kSouthWest, 2, 3);
    p.order[1] = p.order[0];
    CHECK(validate_plan(p).violation == PlanViolation::kOrderMembership);
  }
  SUBCASE("missing successor entry") {
    auto p = build_dag_plan(Direction::kNorthWest, 3, 3);
    p.successors[p.linear({1, 1})].clear();
    CHECK(validate_plan(p).violation == PlanViolation::kSuccessorTranspose);
  }
  SUBCASE("offset disagreeing with the coordinates") {
    auto p = build_dag_plan(Direction::kSouthEast, 3, 3);
    p.predecessors[p.linear({2, 2})][0].offset = Offset{-1, -1};
    CHECK(validate_plan(p).violation == PlanViolation::kOffsetMismatch);
  }
  SUBCASE("short order") {
    auto p = build_dag_plan(Direction::kSouthEast, 3, 3);
    p.order.pop_back();
    CHECK(validate_plan(p).violation == PlanViolation::kOrderSize);
  }
}

TEST_CASE("direction names") {
  CHECK(direction_name(Direction::kSouthEast) == "SE");
  CHECK(direction_name(Direction::kNorthEast) == "NE");
}
