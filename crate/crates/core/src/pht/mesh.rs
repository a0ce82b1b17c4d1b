//! Hierarchical T-mesh stored as a quadtree over dyadic parametric coordinates.

use crate::error::{PlateError, Result};
use std::collections::BTreeSet;

/// Refinement depth supported by the integer coordinates.
pub const TICK_BITS: u32 = 24;
/// Integer coordinate units per level-0 cell.
pub const TICKS: i64 = 1 << TICK_BITS;

/// Quadtree node. Leaves are the active cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub level: u32,
    pub parent: Option<usize>,
    /// South-west, south-east, north-west, north-east.
    pub children: Option<[usize; 4]>,
    /// Same-level-or-coarser node across the south, east, north and west edges.
    pub neighbors: [Option<usize>; 4],
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
    pub alive: bool,
}

impl Cell {
    pub fn is_leaf(&self) -> bool {
        self.alive && self.children.is_none()
    }

    pub fn corners(&self) -> [(i64, i64); 4] {
        [(self.x0, self.y0), (self.x1, self.y0), (self.x0, self.y1), (self.x1, self.y1)]
    }

    pub fn has_corner(&self, v: (i64, i64)) -> bool {
        (v.0 == self.x0 || v.0 == self.x1) && (v.1 == self.y0 || v.1 == self.y1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertexKind {
    Corner,
    Boundary,
    Crossing,
    TJunction,
}

impl VertexKind {
    /// Whether the vertex anchors basis functions.
    pub fn is_basis(self) -> bool {
        !matches!(self, VertexKind::TJunction)
    }

    pub fn code(self) -> char {
        match self {
            VertexKind::Corner => 'C',
            VertexKind::Boundary => 'B',
            VertexKind::Crossing => 'X',
            VertexKind::TJunction => 'T',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VertexRecord {
    pub x: i64,
    pub y: i64,
    pub kind: VertexKind,
    /// Dyadic level of the position: the level at which the vertex first becomes a cell corner.
    pub level: u32,
}

/// Outcome of one call to [`HierTMesh::refine`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefinementReport {
    /// Cells split, in execution order (including re-splits after level-rule removal).
    pub split: Vec<usize>,
    /// Leaves created by this call that are still leaves afterwards.
    pub new_leaves: Vec<usize>,
    /// Marked cells whose refinement needed the temporary removal of finer neighbours.
    pub level_rule: Vec<usize>,
    /// Cell ids released by removal (some are reused by later splits).
    pub removed: Vec<usize>,
    /// Basis vertices present after but not before the call.
    pub new_basis_vertices: Vec<(i64, i64)>,
    /// T-junctions promoted to crossing vertices.
    pub promoted: Vec<(i64, i64)>,
}

/// Hierarchical T-mesh over [0,1]^2 with an nx by ny level-0 grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HierTMesh {
    pub nx: usize,
    pub ny: usize,
    cells: Vec<Cell>,
    free: BTreeSet<usize>,
}

/// Dyadic level of one integer coordinate.
pub fn coord_level(x: i64) -> u32 {
    if x % TICKS == 0 {
        0
    } else {
        TICK_BITS - x.trailing_zeros()
    }
}

impl HierTMesh {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(PlateError::Argument("mesh needs nx, ny >= 1".into()));
        }
        let mut cells = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                cells.push(Cell {
                    level: 0,
                    parent: None,
                    children: None,
                    neighbors: [None; 4],
                    x0: i as i64 * TICKS,
                    y0: j as i64 * TICKS,
                    x1: (i + 1) as i64 * TICKS,
                    y1: (j + 1) as i64 * TICKS,
                    alive: true,
                });
            }
        }
        let mut m = HierTMesh { nx, ny, cells, free: BTreeSet::new() };
        m.update_neighbors();
        Ok(m)
    }

    pub fn width(&self) -> i64 {
        self.nx as i64 * TICKS
    }

    pub fn height(&self) -> i64 {
        self.ny as i64 * TICKS
    }

    pub fn cell(&self, id: usize) -> &Cell {
        &self.cells[id]
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        id < self.cells.len() && self.cells[id].is_leaf()
    }

    /// Leaf ids in ascending order.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i].is_leaf()).collect()
    }

    pub fn max_level(&self) -> u32 {
        self.cells.iter().filter(|c| c.alive).map(|c| c.level).max().unwrap_or(0)
    }

    /// Parametric rectangle (xi0, xi1, eta0, eta1).
    pub fn param_rect(&self, id: usize) -> [f64; 4] {
        let c = &self.cells[id];
        let (w, h) = (self.width() as f64, self.height() as f64);
        [c.x0 as f64 / w, c.x1 as f64 / w, c.y0 as f64 / h, c.y1 as f64 / h]
    }

    pub fn to_param(&self, v: (i64, i64)) -> (f64, f64) {
        (v.0 as f64 / self.width() as f64, v.1 as f64 / self.height() as f64)
    }

    /// Deepest node with level <= `max_level` containing the quadrant of (x,y) selected by the signs.
    pub fn node_at(&self, x: i64, y: i64, sx: i64, sy: i64, max_level: u32) -> Option<usize> {
        let (px, py) = (2 * x + sx, 2 * y + sy);
        if px <= 0 || py <= 0 || px >= 2 * self.width() || py >= 2 * self.height() {
            return None;
        }
        let i = (px / (2 * TICKS)) as usize;
        let j = (py / (2 * TICKS)) as usize;
        let mut id = i + self.nx * j;
        loop {
            let c = &self.cells[id];
            if c.level >= max_level {
                return Some(id);
            }
            match c.children {
                None => return Some(id),
                Some(ch) => {
                    let right = px > c.x0 + c.x1;
                    let top = py > c.y0 + c.y1;
                    id = ch[right as usize + 2 * top as usize];
                }
            }
        }
    }

    /// Leaf containing the quadrant of (x,y) selected by the signs.
    pub fn leaf_at(&self, x: i64, y: i64, sx: i64, sy: i64) -> Option<usize> {
        self.node_at(x, y, sx, sy, u32::MAX)
    }

    /// Leaf containing a parametric point; points on edges resolve to one adjacent leaf.
    pub fn locate(&self, xi: f64, eta: f64) -> usize {
        let w = self.width();
        let h = self.height();
        let x = ((xi * w as f64).floor() as i64).clamp(0, w);
        let y = ((eta * h as f64).floor() as i64).clamp(0, h);
        let sx = if x >= w { -1 } else { 1 };
        let sy = if y >= h { -1 } else { 1 };
        self.leaf_at(x, y, sx, sy).expect("point inside the parametric domain")
    }

    fn alloc(&mut self, cell: Cell) -> usize {
        if let Some(&id) = self.free.iter().next() {
            self.free.remove(&id);
            self.cells[id] = cell;
            id
        } else {
            self.cells.push(cell);
            self.cells.len() - 1
        }
    }

    fn split(&mut self, id: usize) -> [usize; 4] {
        let c = self.cells[id].clone();
        debug_assert!(c.is_leaf());
        let (xm, ym) = ((c.x0 + c.x1) / 2, (c.y0 + c.y1) / 2);
        let rects = [(c.x0, c.y0, xm, ym), (xm, c.y0, c.x1, ym), (c.x0, ym, xm, c.y1), (xm, ym, c.x1, c.y1)];
        let mut ids = [0; 4];
        for (k, r) in rects.iter().enumerate() {
            ids[k] = self.alloc(Cell {
                level: c.level + 1,
                parent: Some(id),
                children: None,
                neighbors: [None; 4],
                x0: r.0,
                y0: r.1,
                x1: r.2,
                y1: r.3,
                alive: true,
            });
        }
        self.cells[id].children = Some(ids);
        ids
    }

    /// Removes all descendants of `id`, returning the released ids.
    fn collapse(&mut self, id: usize) -> Vec<usize> {
        let mut released = Vec::new();
        let mut stack: Vec<usize> = self.cells[id].children.take().map(|c| c.to_vec()).unwrap_or_default();
        while let Some(c) = stack.pop() {
            if let Some(ch) = self.cells[c].children.take() {
                stack.extend(ch);
            }
            self.cells[c].alive = false;
            released.push(c);
        }
        released.sort_unstable();
        for &r in &released {
            self.free.insert(r);
        }
        released
    }

    /// Internal nodes of the subtree rooted at `id` as (level, x0, y0), in level order.
    fn subtree_splits(&self, id: usize) -> Vec<(u32, i64, i64)> {
        let mut out = Vec::new();
        let mut queue = std::collections::VecDeque::from([id]);
        while let Some(c) = queue.pop_front() {
            if let Some(ch) = self.cells[c].children {
                out.push((self.cells[c].level, self.cells[c].x0, self.cells[c].y0));
                queue.extend(ch);
            }
        }
        out
    }

    /// Node of exactly `level` whose lower-left corner is (x0,y0).
    fn node_by_position(&self, level: u32, x0: i64, y0: i64) -> Option<usize> {
        let id = self.node_at(x0, y0, 1, 1, level)?;
        let c = &self.cells[id];
        (c.level == level && c.x0 == x0 && c.y0 == y0).then_some(id)
    }

    /// Leaves touching edge `dir` (0 south, 1 east, 2 north, 3 west) of cell `id` from outside.
    pub fn edge_neighbor_leaves(&self, id: usize, dir: usize) -> Vec<usize> {
        let c = &self.cells[id];
        let mut out = Vec::new();
        let (mut t, end, fixed, horizontal, s) = match dir {
            0 => (c.x0, c.x1, c.y0, true, -1),
            1 => (c.y0, c.y1, c.x1, false, 1),
            2 => (c.x0, c.x1, c.y1, true, 1),
            _ => (c.y0, c.y1, c.x0, false, -1),
        };
        while t < end {
            let leaf = if horizontal { self.leaf_at(t, fixed, 1, s) } else { self.leaf_at(fixed, t, s, 1) };
            let Some(l) = leaf else { break };
            out.push(l);
            let lc = &self.cells[l];
            t = if horizontal { lc.x1 } else { lc.y1 };
        }
        out
    }

    /// Cross-insertion refinement of the given leaves, coarse levels first, with the level rule.
    pub fn refine(&mut self, cell_ids: &[usize]) -> Result<RefinementReport> {
        for &id in cell_ids {
            if !self.is_leaf(id) {
                return Err(PlateError::Argument(format!("cell {id} is not an active leaf")));
            }
        }
        let before = self.basis_vertex_set();
        let tjunctions_before: BTreeSet<(i64, i64)> =
            self.vertices().into_iter().filter(|v| v.kind == VertexKind::TJunction).map(|v| (v.x, v.y)).collect();
        let mut targets: Vec<(u32, i64, i64, usize)> = cell_ids
            .iter()
            .map(|&id| {
                let c = &self.cells[id];
                (c.level, c.x0, c.y0, id)
            })
            .collect();
        targets.sort_unstable_by_key(|t| (t.0, t.3));
        targets.dedup_by_key(|t| (t.0, t.1, t.2));
        let mut report = RefinementReport::default();
        let mut created = BTreeSet::new();
        for (level, x0, y0, orig) in targets {
            let Some(id) = self.node_by_position(level, x0, y0) else { continue };
            if !self.cells[id].is_leaf() {
                continue;
            }
            // Level rule: neighbours more than one level finer are removed, the cell is split,
            // and the removed subtrees are rebuilt in level order.
            let mut rebuild: Vec<(u32, i64, i64)> = Vec::new();
            for dir in 0..4 {
                let leaves = self.edge_neighbor_leaves(id, dir);
                if !leaves.iter().any(|&l| self.cells[l].level > level + 1) {
                    continue;
                }
                let c = &self.cells[id];
                let (px, py, sx, sy) = match dir {
                    0 => (c.x0, c.y0, 1, -1),
                    1 => (c.x1, c.y0, 1, 1),
                    2 => (c.x0, c.y1, 1, 1),
                    _ => (c.x0, c.y0, -1, 1),
                };
                let Some(nb) = self.node_at(px, py, sx, sy, level) else { continue };
                let Some(ch) = self.cells[nb].children else { continue };
                let c = self.cells[id].clone();
                for k in ch {
                    let kc = &self.cells[k];
                    let touches = match dir {
                        0 => kc.y1 == c.y0,
                        1 => kc.x0 == c.x1,
                        2 => kc.y0 == c.y1,
                        _ => kc.x1 == c.x0,
                    };
                    if touches && kc.children.is_some() {
                        rebuild.extend(self.subtree_splits(k));
                        let rel = self.collapse(k);
                        for r in &rel {
                            created.remove(r);
                        }
                        report.removed.extend(rel);
                    }
                }
            }
            if !rebuild.is_empty() {
                report.level_rule.push(orig);
            }
            let ch = self.split(id);
            report.split.push(id);
            created.extend(ch);
            rebuild.sort_unstable();
            for (l, x, y) in rebuild {
                let n = self
                    .node_by_position(l, x, y)
                    .ok_or_else(|| PlateError::Internal("level-rule rebuild lost a node".into()))?;
                let ch = self.split(n);
                report.split.push(n);
                created.extend(ch);
            }
        }
        self.update_neighbors();
        report.new_leaves = created.into_iter().filter(|&c| self.cells[c].is_leaf()).collect();
        let after = self.basis_vertex_set();
        report.new_basis_vertices = after.difference(&before).copied().collect();
        report.promoted = report.new_basis_vertices.iter().copied().filter(|v| tjunctions_before.contains(v)).collect();
        Ok(report)
    }

    /// Splits every leaf once.
    pub fn refine_uniform(&mut self) -> RefinementReport {
        let leaves = self.leaves();
        self.refine(&leaves).expect("leaves are valid")
    }

    fn update_neighbors(&mut self) {
        for id in 0..self.cells.len() {
            if !self.cells[id].alive {
                continue;
            }
            let c = &self.cells[id];
            let probes = [(c.x0, c.y0, 1, -1), (c.x1, c.y0, 1, 1), (c.x0, c.y1, 1, 1), (c.x0, c.y0, -1, 1)];
            let lvl = c.level;
            let nb = probes.map(|(x, y, sx, sy)| self.node_at(x, y, sx, sy, lvl));
            self.cells[id].neighbors = nb;
        }
    }

    /// Classification of a vertex position.
    pub fn classify(&self, v: (i64, i64)) -> VertexKind {
        let (w, h) = (self.width(), self.height());
        let on_x = v.0 == 0 || v.0 == w;
        let on_y = v.1 == 0 || v.1 == h;
        if on_x && on_y {
            return VertexKind::Corner;
        }
        if on_x || on_y {
            return VertexKind::Boundary;
        }
        for (sx, sy) in [(-1, -1), (1, -1), (-1, 1), (1, 1)] {
            let l = self.leaf_at(v.0, v.1, sx, sy).expect("interior vertex");
            if !self.cells[l].has_corner(v) {
                return VertexKind::TJunction;
            }
        }
        VertexKind::Crossing
    }

    /// All leaf corners with classification, sorted by (y, x).
    pub fn vertices(&self) -> Vec<VertexRecord> {
        let mut set = BTreeSet::new();
        for c in self.cells.iter().filter(|c| c.is_leaf()) {
            for v in c.corners() {
                set.insert((v.1, v.0));
            }
        }
        set.into_iter()
            .map(|(y, x)| VertexRecord {
                x,
                y,
                kind: self.classify((x, y)),
                level: coord_level(x).max(coord_level(y)),
            })
            .collect()
    }

    fn basis_vertex_set(&self) -> BTreeSet<(i64, i64)> {
        self.vertices().into_iter().filter(|v| v.kind.is_basis()).map(|v| (v.x, v.y)).collect()
    }

    /// Dimension of the bicubic C1 spline space, 4 (V_b + V_+).
    pub fn dimension(&self) -> usize {
        4 * self.vertices().iter().filter(|v| v.kind.is_basis()).count()
    }

    /// One line per leaf: id, level, dyadic rectangle as numerators over 2^TICK_BITS, corner kinds.
    pub fn dump(&self) -> String {
        let mut s = format!("# leaves {} nx {} ny {} denominator 2^{}\n", self.leaves().len(), self.nx, self.ny, TICK_BITS);
        s.push_str("# id level x0 x1 y0 y1 kinds(sw,se,nw,ne)\n");
        for id in self.leaves() {
            let c = &self.cells[id];
            let kinds: String = c.corners().iter().map(|&v| self.classify(v).code()).collect();
            s.push_str(&format!("{id} {} {} {} {} {} {kinds}\n", c.level, c.x0, c.x1, c.y0, c.y1));
        }
        s
    }

    /// Checks that the leaves tile the domain without overlap (exact integer area and pairwise tests).
    pub fn check_tiling(&self) -> Result<()> {
        let leaves = self.leaves();
        let area: i128 = leaves
            .iter()
            .map(|&l| {
                let c = &self.cells[l];
                (c.x1 - c.x0) as i128 * (c.y1 - c.y0) as i128
            })
            .sum();
        if area != self.width() as i128 * self.height() as i128 {
            return Err(PlateError::Internal("leaf areas do not sum to the domain".into()));
        }
        for &l in &leaves {
            let c = &self.cells[l];
            let probe = self.leaf_at(c.x0, c.y0, 1, 1);
            if probe != Some(l) {
                return Err(PlateError::Internal(format!("leaf {l} overlaps another leaf")));
            }
        }
        Ok(())
    }

    /// Leaf rectangles in canonical order, for comparing tilings independent of ids.
    pub fn tiling(&self) -> Vec<(i64, i64, i64, i64)> {
        let mut t: Vec<_> = self
            .leaves()
            .into_iter()
            .map(|l| {
                let c = &self.cells[l];
                (c.x0, c.y0, c.x1, c.y1)
            })
            .collect();
        t.sort_unstable();
        t
    }

    /// Leaves whose closure touches a patch edge, with their extent along it.
    pub fn boundary_leaves(&self, edge: crate::spline::Edge) -> Vec<(usize, i64, i64)> {
        use crate::spline::Edge;
        let (w, h) = (self.width(), self.height());
        let mut out = Vec::new();
        for l in self.leaves() {
            let c = &self.cells[l];
            let hit = match edge {
                Edge::South => c.y0 == 0,
                Edge::North => c.y1 == h,
                Edge::West => c.x0 == 0,
                Edge::East => c.x1 == w,
            };
            if hit {
                match edge {
                    Edge::South | Edge::North => out.push((l, c.x0, c.x1)),
                    _ => out.push((l, c.y0, c.y1)),
                }
            }
        }
        out
    }

    /// Vertex positions along an edge as tangential coordinates.
    pub fn edge_vertex_positions(&self, edge: crate::spline::Edge) -> BTreeSet<i64> {
        let mut s = BTreeSet::new();
        for (_, a, b) in self.boundary_leaves(edge) {
            s.insert(a);
            s.insert(b);
        }
        s
    }
}
