"""Budget-constrained coverage planning over variable-sized free-space blocks.

Pipeline: rasterize static obstacles onto a grid, pack free cells into
square blocks (largest first, halving down to one cell), join blocks with a
minimum spanning tree, then walk around the tree through the four quadrant
centres of every block to get a closed tour.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import box

from .geometry import Rect, as_polygon

FREE = 0
OBSTACLE = 1

LEFT, RIGHT, TOP, BOTTOM = "LEFT", "RIGHT", "TOP", "BOTTOM"
DIRECTIONS = (LEFT, RIGHT, TOP, BOTTOM)
OPPOSITE = {LEFT: RIGHT, RIGHT: LEFT, TOP: BOTTOM, BOTTOM: TOP}


@dataclass
class OccupancyGrid:
    """Row 0 is the bottom row (smallest y); column 0 the leftmost."""

    origin: tuple[float, float]
    cell_size: float
    cells: np.ndarray

    @property
    def rows(self) -> int:
        return self.cells.shape[0]

    @property
    def cols(self) -> int:
        return self.cells.shape[1]

    @property
    def free_count(self) -> int:
        return int((self.cells == FREE).sum())

    def cell_rect(self, row: int, col: int) -> Rect:
        x0 = self.origin[0] + col * self.cell_size
        y0 = self.origin[1] + row * self.cell_size
        return Rect(x0, y0, x0 + self.cell_size, y0 + self.cell_size)

    def cell_centers(self) -> np.ndarray:
        """``(rows, cols, 2)`` array of cell centres."""
        xs = self.origin[0] + (np.arange(self.cols) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(self.rows) + 0.5) * self.cell_size
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def locate(self, point) -> tuple[int, int] | None:
        col = int(math.floor((point[0] - self.origin[0]) / self.cell_size))
        row = int(math.floor((point[1] - self.origin[1]) / self.cell_size))
        if 0 <= row < self.rows and 0 <= col < self.cols:
            return row, col
        return None

    def to_text(self) -> str:
        """Plain-text raster (P1-style header, top row first, 1 = obstacle)."""
        lines = ["P1", f"{self.cols} {self.rows}"]
        for r in range(self.rows - 1, -1, -1):
            lines.append(" ".join(str(int(v)) for v in self.cells[r]))
        return "\n".join(lines) + "\n"


@dataclass
class Block:
    index: int
    row: int            # bottom row of the block
    col: int            # left column of the block
    size: int           # cells per side
    rect: Rect
    neighbors: dict = field(default_factory=lambda: {d: [] for d in DIRECTIONS})

    @property
    def side(self) -> float:
        return self.rect.width

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.rect.xmin + self.rect.xmax) / 2, (self.rect.ymin + self.rect.ymax) / 2])

    @property
    def left_center(self) -> np.ndarray:
        return np.array([self.rect.xmin, (self.rect.ymin + self.rect.ymax) / 2])

    def part(self, name: str) -> tuple[float, float]:
        q = self.side / 4
        x = self.rect.xmin + q if name[1] == "L" else self.rect.xmax - q
        y = self.rect.ymax - q if name[0] == "T" else self.rect.ymin + q
        return (x, y)

    @property
    def parts(self) -> dict:
        return {k: self.part(k) for k in ("TL", "TR", "BL", "BR")}

    def cells(self):
        for r in range(self.row, self.row + self.size):
            for c in range(self.col, self.col + self.size):
                yield r, c


@dataclass
class SpanningTree:
    edges: list                  # (i, j) with i < j
    components: list             # list of lists of block indices
    root: int

    @property
    def disconnected(self) -> bool:
        return len(self.components) > 1


@dataclass
class CoveragePlan:
    grid: OccupancyGrid
    blocks: list
    tree: SpanningTree
    waypoints: np.ndarray        # closed tour, first point not repeated
    waypoint_blocks: list
    start: np.ndarray
    predicted_time: float
    coverage_fraction: float
    formations: dict             # block index -> formation tag
    over_budget: bool = False

    @property
    def route(self) -> np.ndarray:
        """Start -> tour -> back to the first tour point -> start."""
        if len(self.waypoints) == 0:
            return self.start[None, :].copy()
        return np.vstack([self.start, self.waypoints, self.waypoints[:1], self.start])

    @property
    def length(self) -> float:
        return route_length(self.route)


def route_length(points) -> float:
    p = np.asarray(points, float)
    if len(p) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


# ---------------------------------------------------------------- rasterize


def rasterize_polygons(arena: Rect, polygons, cell_size: float) -> OccupancyGrid:
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    if cell_size > arena.width or cell_size > arena.height:
        raise ValueError("cell_size larger than the arena")
    cols = int(math.floor(arena.width / cell_size + 1e-9))
    rows = int(math.floor(arena.height / cell_size + 1e-9))
    cells = np.zeros((rows, cols), dtype=np.int8)
    for verts in polygons:
        poly = as_polygon(verts)
        if poly.is_empty or poly.area <= 0:
            continue
        xmin, ymin, xmax, ymax = poly.bounds
        c0 = max(0, int(math.floor((xmin - arena.xmin) / cell_size)))
        c1 = min(cols - 1, int(math.floor((xmax - arena.xmin) / cell_size)))
        r0 = max(0, int(math.floor((ymin - arena.ymin) / cell_size)))
        r1 = min(rows - 1, int(math.floor((ymax - arena.ymin) / cell_size)))
        for r in range(r0, r1 + 1):
            for c in range(c0, c1 + 1):
                cell = box(arena.xmin + c * cell_size, arena.ymin + r * cell_size,
                           arena.xmin + (c + 1) * cell_size, arena.ymin + (r + 1) * cell_size)
                # conservative: any overlap of positive area blocks the cell
                if poly.intersection(cell).area > 1e-12 * cell_size ** 2:
                    cells[r, c] = OBSTACLE
    return OccupancyGrid((arena.xmin, arena.ymin), float(cell_size), cells)


def rasterize(scenario, cell_size: float) -> OccupancyGrid:
    """Occupancy grid of the scenario's known static obstacles (movers are ignored)."""
    return rasterize_polygons(scenario.arena, scenario.static_obstacles, cell_size)


# ------------------------------------------------------------------- blocks


def build_blocks(grid: OccupancyGrid, max_block_cells: int) -> list[Block]:
    """Pack free cells into aligned square blocks, largest size first.

    A block of size k is anchored at a cell whose offsets from the grid's
    top-left corner are multiples of k, so a smaller block's side always lies
    inside a larger neighbour's side.
    """
    if max_block_cells < 1 or max_block_cells & (max_block_cells - 1):
        raise ValueError("max_block_cells must be a power of two")
    owner = -np.ones(grid.cells.shape, dtype=int)
    blocks: list[Block] = []
    size = max_block_cells
    while size >= 1:
        for top_off in range(0, grid.rows - size + 1, size):
            top = grid.rows - 1 - top_off
            bottom = top - size + 1
            for col in range(0, grid.cols - size + 1, size):
                sl = (slice(bottom, top + 1), slice(col, col + size))
                if np.all(grid.cells[sl] == FREE) and np.all(owner[sl] < 0):
                    idx = len(blocks)
                    owner[sl] = idx
                    x0 = grid.origin[0] + col * grid.cell_size
                    y0 = grid.origin[1] + bottom * grid.cell_size
                    s = size * grid.cell_size
                    blocks.append(Block(idx, bottom, col, size, Rect(x0, y0, x0 + s, y0 + s)))
        size //= 2
    _link_neighbors(blocks, owner)
    return blocks


def block_owner_map(grid: OccupancyGrid, blocks) -> np.ndarray:
    owner = -np.ones(grid.cells.shape, dtype=int)
    for b in blocks:
        for r, c in b.cells():
            owner[r, c] = b.index
    return owner


def _link_neighbors(blocks, owner):
    rows, cols = owner.shape
    for b in blocks:
        found = {d: set() for d in DIRECTIONS}
        for k in range(b.size):
            r, c = b.row + k, b.col + k
            if b.col - 1 >= 0 and owner[r, b.col - 1] >= 0:
                found[LEFT].add(owner[r, b.col - 1])
            if b.col + b.size < cols and owner[r, b.col + b.size] >= 0:
                found[RIGHT].add(owner[r, b.col + b.size])
            if b.row + b.size < rows and owner[b.row + b.size, c] >= 0:
                found[TOP].add(owner[b.row + b.size, c])
            if b.row - 1 >= 0 and owner[b.row - 1, c] >= 0:
                found[BOTTOM].add(owner[b.row - 1, c])
        b.neighbors = {d: sorted(found[d]) for d in DIRECTIONS}


def adjacency_edges(blocks) -> list[tuple[float, int, int]]:
    edges = set()
    for b in blocks:
        for d in DIRECTIONS:
            for n in b.neighbors[d]:
                i, j = min(b.index, n), max(b.index, n)
                edges.add((i, j))
    out = []
    for i, j in sorted(edges):
        w = float(np.linalg.norm(blocks[i].center - blocks[j].center))
        out.append((w, i, j))
    return out


# ------------------------------------------------------------ spanning tree


def build_spanning_tree(blocks, start=None) -> SpanningTree:
    """Prim's algorithm from the block holding ``start`` (else block 0).

    Ties break on (weight, lower index, higher index). A disconnected block
    graph yields one tree per component.
    """
    n = len(blocks)
    if n == 0:
        return SpanningTree([], [], -1)
    adj = {i: [] for i in range(n)}
    for w, i, j in adjacency_edges(blocks):
        adj[i].append((w, i, j))
        adj[j].append((w, i, j))
    root = 0
    if start is not None:
        root = block_containing(blocks, start)
        if root is None:
            root = nearest_block(blocks, start)
    in_tree = np.zeros(n, dtype=bool)
    edges, components = [], []
    order = [root] + [i for i in range(n) if i != root]
    for seed in order:
        if in_tree[seed]:
            continue
        comp = [seed]
        in_tree[seed] = True
        heap = list(adj[seed])
        heapq.heapify(heap)
        while heap:
            w, i, j = heapq.heappop(heap)
            if in_tree[i] and in_tree[j]:
                continue
            new = int(j if in_tree[i] else i)
            in_tree[new] = True
            comp.append(new)
            edges.append((int(i), int(j)))
            for e in adj[new]:
                if not (in_tree[e[1]] and in_tree[e[2]]):
                    heapq.heappush(heap, e)
        components.append(sorted(comp))
    return SpanningTree(sorted(edges), components, root)


def block_containing(blocks, point) -> int | None:
    for b in blocks:
        r = b.rect
        if r.xmin <= point[0] <= r.xmax and r.ymin <= point[1] <= r.ymax:
            return b.index
    return None


def nearest_block(blocks, point) -> int:
    d = [np.linalg.norm(b.center - np.asarray(point)) for b in blocks]
    return int(np.argmin(d))


# ---------------------------------------------------------------- tour walk


def _key(p) -> tuple[float, float]:
    return (round(float(p[0]), 9), round(float(p[1]), 9))


def _tree_neighbors(blocks, tree_edges) -> dict:
    linked = {b.index: set() for b in blocks}
    for i, j in tree_edges:
        linked[i].add(j)
        linked[j].add(i)
    out = {}
    for b in blocks:
        out[b.index] = {d: [n for n in b.neighbors[d] if n in linked[b.index]] for d in DIRECTIONS}
    return out


# per direction: (own part at the "first" end, neighbour part facing it,
# own part at the "last" end, neighbour part facing it, sort key, reverse)
_SIDE_RULES = {
    LEFT: ("TL", "TR", "BL", "BR", 1, True),
    RIGHT: ("TR", "TL", "BR", "BL", 1, True),
    TOP: ("TL", "BL", "TR", "BR", 0, False),
    BOTTOM: ("BL", "TL", "BR", "TR", 0, False),
}
# the own part pair when nothing is attached on that side
_BARE_SIDE = {LEFT: ("TL", "BL"), RIGHT: ("TR", "BR"), TOP: ("TL", "TR"), BOTTOM: ("BL", "BR")}


def _joint(b: Block, direction: str, n1: Block, n2: Block) -> tuple[float, float]:
    middle = (n1.center + n2.center) / 2
    center = b.center
    q = b.side / 4
    if direction in (LEFT, RIGHT):
        jx = b.rect.xmin + q if direction == LEFT else b.rect.xmax - q
        jy = middle[1] + (jx - middle[0]) * (center[1] - middle[1]) / (center[0] - middle[0])
    else:
        jy = b.rect.ymax - q if direction == TOP else b.rect.ymin + q
        jx = middle[0] + (jy - middle[1]) * (center[0] - middle[0]) / (center[1] - middle[1])
    return (jx, jy)


def _portal_fix(a: Block, b: Block, p, q):
    """Extra waypoint on the shared edge when segment p-q would leave a and b.

    Returns ``None`` when the straight segment already crosses the shared edge
    inside the overlap of the two blocks.
    """
    ra, rb = a.rect, b.rect
    if abs(ra.xmax - rb.xmin) < 1e-9 or abs(rb.xmax - ra.xmin) < 1e-9:
        xb = ra.xmax if abs(ra.xmax - rb.xmin) < 1e-9 else ra.xmin
        lo, hi = max(ra.ymin, rb.ymin), min(ra.ymax, rb.ymax)
        if abs(q[0] - p[0]) < 1e-12:
            return None
        t = (xb - p[0]) / (q[0] - p[0])
        cross = p[1] + t * (q[1] - p[1])
        if lo - 1e-9 <= cross <= hi + 1e-9:
            return None
        m = min(a.side, b.side) / 4
        return (xb, min(max(cross, lo + m), hi - m))
    yb = ra.ymax if abs(ra.ymax - rb.ymin) < 1e-9 else ra.ymin
    lo, hi = max(ra.xmin, rb.xmin), min(ra.xmax, rb.xmax)
    if abs(q[1] - p[1]) < 1e-12:
        return None
    t = (yb - p[1]) / (q[1] - p[1])
    cross = p[0] + t * (q[0] - p[0])
    if lo - 1e-9 <= cross <= hi + 1e-9:
        return None
    m = min(a.side, b.side) / 4
    return (min(max(cross, lo + m), hi - m), yb)


def tour_segments(blocks, tree_edges, include=None) -> tuple[list, dict]:
    """Undirected segments of the circumnavigating loop, plus point -> block labels.

    ``include`` restricts the walk to one tree component (default: all blocks).
    """
    tn = _tree_neighbors(blocks, tree_edges)
    segs: set = set()
    label: dict = {}

    def add(p, q, pb, qb):
        kp, kq = _key(p), _key(q)
        label.setdefault(kp, pb)
        label.setdefault(kq, qb)
        if kp != kq:
            segs.add((min(kp, kq), max(kp, kq)))

    def connect(bi, p, bj, q):
        if bi == bj:
            add(p, q, bi, bj)
            return
        w = _portal_fix(blocks[bi], blocks[bj], p, q)
        if w is None:
            add(p, q, bi, bj)
        else:
            add(p, w, bi, bi)
            add(w, q, bi, bj)

    for b in blocks:
        if include is not None and b.index not in include:
            continue
        for d in DIRECTIONS:
            side = [blocks[i] for i in tn[b.index][d]]
            own_first, nb_first, own_last, nb_last, axis, rev = _SIDE_RULES[d]
            if not side:
                p, q = _BARE_SIDE[d]
                add(b.part(p), b.part(q), b.index, b.index)
                continue
            if len(side) == 1:
                n = side[0]
                if len(tn[n.index][OPPOSITE[d]]) == 1:
                    connect(b.index, b.part(own_first), n.index, n.part(nb_first))
                    connect(b.index, b.part(own_last), n.index, n.part(nb_last))
                continue
            side.sort(key=lambda blk: blk.center[axis], reverse=rev)
            connect(b.index, b.part(own_first), side[0].index, side[0].part(nb_first))
            for n1, n2 in zip(side[:-1], side[1:]):
                j = _joint(b, d, n1, n2)
                label.setdefault(_key(j), b.index)
                connect(n1.index, n1.part(nb_last), b.index, j)
                connect(b.index, j, n2.index, n2.part(nb_first))
            connect(b.index, b.part(own_last), side[-1].index, side[-1].part(nb_last))
    return sorted(segs), label


def chain_cycle(segments) -> list:
    """Order undirected segments into one closed cycle of points."""
    if not segments:
        return []
    adj: dict = {}
    for a, b in segments:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    bad = [p for p, nb in adj.items() if len(nb) != 2]
    if bad:
        raise ValueError(f"tour graph has {len(bad)} points without degree 2")
    start = min(adj)
    cycle = [start]
    prev, cur = None, start
    while True:
        a, b = adj[cur]
        nxt = a if a != prev else b
        if nxt == start:
            break
        cycle.append(nxt)
        prev, cur = cur, nxt
        if len(cycle) > len(adj):
            raise ValueError("tour graph is not a simple cycle")
    if len(cycle) != len(adj):
        raise ValueError("tour graph splits into several loops")
    return cycle


def _signed_area(pts) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def plan_path(blocks, tree: SpanningTree, start) -> tuple[np.ndarray, list]:
    """Closed tour around the tree component holding ``start``.

    The tour begins at the waypoint nearest ``start`` and runs counterclockwise.
    """
    start = np.asarray(start, float)
    if not blocks:
        return np.zeros((0, 2)), []
    comp = set(tree.components[0]) if tree.components else {0}
    edges = [e for e in tree.edges if e[0] in comp and e[1] in comp]
    segs, label = tour_segments(blocks, edges, include=comp)
    cycle = chain_cycle(segs)
    pts = np.array(cycle, dtype=float)
    if _signed_area(pts) < 0:
        pts = pts[::-1]
        cycle = cycle[::-1]
    k = int(np.argmin(np.linalg.norm(pts - start, axis=1)))
    pts = np.roll(pts, -k, axis=0)
    cycle = cycle[k:] + cycle[:k]
    return pts, [label[c] for c in cycle]


# --------------------------------------------------------------- budgeting


def predict_budget(plan_or_route, leader_speed: float, turn_allowance: float = 0.0,
                   coverage_fraction: float | None = None) -> tuple[float, float]:
    """Predicted traversal time (s) and covered fraction of free cells."""
    if not leader_speed > 0:
        raise ValueError("leader_speed must be positive")
    if isinstance(plan_or_route, CoveragePlan):
        route = plan_or_route.route
        frac = plan_or_route.coverage_fraction
    else:
        route = np.asarray(plan_or_route, float)
        frac = 1.0 if coverage_fraction is None else coverage_fraction
    length = route_length(route)
    turns = max(len(route) - 2, 0)
    return length / leader_speed + turn_allowance * turns, frac


def default_max_block_cells(n_robots: int, separation_radius: float, cell_size: float) -> int:
    """Smallest power-of-two block side (in cells) spanning the spread-out group."""
    need = 2.0 * n_robots * separation_radius / cell_size
    k = 1
    while k < need - 1e-9:
        k *= 2
    return k


def plan_coverage(scenario, cell_size: float, leader_speed: float = 0.16,
                  max_block_cells: int | None = None, start=None,
                  formation_kind: str = "V", turn_allowance: float = 0.0,
                  separation_radius: float = 0.95) -> CoveragePlan:
    n_robots = len(scenario.robots)
    grid = rasterize(scenario, cell_size)
    if max_block_cells is None:
        max_block_cells = default_max_block_cells(n_robots, separation_radius, cell_size)
    blocks = build_blocks(grid, max_block_cells)
    start = np.asarray(scenario.start if start is None else start, float)
    tree = build_spanning_tree(blocks, start)
    waypoints, wblocks = plan_path(blocks, tree, start)
    covered = sum(blocks[i].size ** 2 for i in (tree.components[0] if tree.components else []))
    frac = covered / grid.free_count if grid.free_count else 0.0
    formations = {b.index: formation_for_block(b.size, n_robots, b.side, formation_kind).tag
                  for b in blocks}
    plan = CoveragePlan(grid, blocks, tree, waypoints, wblocks, start, 0.0, frac, formations)
    plan.predicted_time, _ = predict_budget(plan, leader_speed, turn_allowance)
    return plan


def cell_size_ladder(arena: Rect, k_max: int = 12) -> list[float]:
    m = min(arena.width, arena.height)
    return [m / k for k in range(2, k_max + 1)]


def select_cell_size(scenario, budget_s: float, leader_speed: float = 0.16,
                     max_block_cells: int = 1, k_max: int = 12, **kw):
    """Finest ladder cell size whose predicted traversal fits ``budget_s``.

    Single-cell blocks are the default here: with a fixed larger block the
    leftover strips of small blocks make the predicted time jump up and down
    along the ladder.
    Returns ``(cell_size, plan, over_budget)``; when nothing fits, the
    coarsest candidate comes back with ``over_budget=True``.
    """
    if not budget_s > 0:
        raise ValueError("budget must be positive")
    ladder = cell_size_ladder(scenario.arena, k_max)
    best = None
    for cs in ladder:
        try:
            plan = plan_coverage(scenario, cs, leader_speed, max_block_cells=max_block_cells, **kw)
        except ValueError:
            continue
        if plan.predicted_time <= budget_s:
            best = (cs, plan)
    if best is None:
        cs = ladder[0]
        plan = plan_coverage(scenario, cs, leader_speed, max_block_cells=max_block_cells, **kw)
        plan.over_budget = True
        return cs, plan, True
    return best[0], best[1], False


# --------------------------------------------------------------- formations


@dataclass
class Formation:
    tag: str
    offsets: np.ndarray      # (n, 2) in the leader frame: x forward, y left
    spacing: float


def formation_for_block(block_size_cells: int, n_robots: int = 3, block_side: float | None = None,
                        kind: str = "V", spacing: float = 1.2) -> Formation:
    """Follower slots relative to the virtual leader for a block.

    One-cell blocks get a single-file line ("Q"); larger blocks a V, or a U
    when requested and more than five robots are present. Lateral offsets
    are shrunk to stay inside half the block width.
    """
    if n_robots < 1:
        raise ValueError("need at least one robot")
    if block_size_cells <= 1:
        offs = np.array([[-i * spacing, 0.0] for i in range(n_robots)])
        return Formation("Q", offs, spacing)
    tag = "U" if kind == "U" and n_robots > 5 else "V"
    n_v = n_robots - 2 if tag == "U" else n_robots
    arms = max(1, math.ceil((n_v - 1) / 2))
    d = spacing
    if block_side is not None:
        d = min(spacing, 0.5 * block_side / arms)
    offs = [[0.0, 0.0]]
    for i in range(1, n_v):
        k = (i + 1) // 2
        sign = 1.0 if i % 2 else -1.0
        offs.append([-k * d, sign * k * d])
    if tag == "U":
        k_end = (n_v - 1 + 1) // 2
        offs.append([-(k_end + 1) * d, k_end * d])
        offs.append([-(k_end + 1) * d, -k_end * d])
    return Formation(tag, np.array(offs[:n_robots], dtype=float), d)


def export_waypoints_csv(plan: CoveragePlan, fh) -> None:
    fh.write("index,x,y,block,formation\n")
    for i, (p, b) in enumerate(zip(plan.waypoints, plan.waypoint_blocks)):
        fh.write(f"{i},{p[0]!r},{p[1]!r},{b},{plan.formations[b]}\n")
