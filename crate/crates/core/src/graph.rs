//! Finite windows of bounded-degree graphs.
//!
//! All simulation runs on a finite window with free boundary: missing
//! neighbors simply never facilitate flips. Windows record which vertices
//! are clipped truncations of the infinite graph they model, so growth
//! checks and light-cone margins can restrict themselves to interior balls.

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

/// Opaque dense vertex handle; valid iff below the vertex count of its window.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct SiteId(u32);

impl SiteId {
    pub fn new(index: usize) -> Self {
        SiteId(index as u32)
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for SiteId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WindowKind {
    /// Segment of the two-sided line; both endpoints are clipped.
    Path,
    /// Initial segment of the half-line; only the far endpoint is clipped.
    HalfLine,
    /// Ball of the square lattice (diamond shape).
    Grid2d,
    /// Ball of the infinite `degree`-regular tree.
    RegularTree { degree: usize },
}

#[derive(Error, Debug)]
pub enum GraphError {
    #[error("radius must be at least 1")]
    ZeroRadius,
    #[error("window of kind {0:?} radius {1} exceeds the vertex cap {2}")]
    TooLarge(WindowKind, usize, usize),
    #[error("regular tree degree must be at least 2")]
    BadDegree,
    #[error("invalid site id {0} for a window of {1} vertices")]
    InvalidSite(usize, usize),
    #[error("no simple path of length {0} from the requested origin")]
    NoSimplePath(usize),
    #[error("no boundary-free center exists at radius {0}")]
    NoInteriorCenter(usize),
    #[error("growth parameters out of range: {0}")]
    BadGrowthParams(String),
    #[error("half-line is empty")]
    EmptyHalfLine,
}

/// Default cap on window sizes built through [`build_window`].
pub const VERTEX_CAP: usize = 2_000_000;

/// Immutable finite graph window. Adjacency is symmetric, loop-free and
/// connected; `kappa` is the true maximum degree.
#[derive(Clone, Debug)]
pub struct GraphView {
    adjacency: Vec<Vec<SiteId>>,
    kappa: usize,
    boundary: Vec<bool>,
    origin: SiteId,
    kind: WindowKind,
}

impl GraphView {
    fn from_parts(
        adjacency: Vec<Vec<SiteId>>,
        boundary: Vec<bool>,
        origin: SiteId,
        kind: WindowKind,
    ) -> Self {
        let mut adjacency = adjacency;
        for nbrs in adjacency.iter_mut() {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        let kappa = adjacency.iter().map(Vec::len).max().unwrap_or(0);
        let g = GraphView { adjacency, kappa, boundary, origin, kind };
        debug_assert!(g.validate());
        g
    }

    fn validate(&self) -> bool {
        let n = self.len();
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            for &v in nbrs {
                if v.index() >= n || v.index() == u {
                    return false;
                }
                if !self.adjacency[v.index()].contains(&SiteId::new(u)) {
                    return false;
                }
            }
        }
        // connectivity
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v.index()] {
                    seen[v.index()] = true;
                    count += 1;
                    queue.push_back(v.index());
                }
            }
        }
        count == n
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn origin(&self) -> SiteId {
        self.origin
    }

    pub fn contains(&self, x: SiteId) -> bool {
        x.index() < self.len()
    }

    pub fn neighbors(&self, x: SiteId) -> &[SiteId] {
        &self.adjacency[x.index()]
    }

    pub fn degree(&self, x: SiteId) -> usize {
        self.adjacency[x.index()].len()
    }

    /// True when `x` is a clipped truncation vertex of the modeled graph.
    pub fn is_boundary(&self, x: SiteId) -> bool {
        self.boundary[x.index()]
    }

    pub fn sites(&self) -> impl Iterator<Item = SiteId> + '_ {
        (0..self.len()).map(SiteId::new)
    }

    /// Distance from every vertex to the nearest clipped boundary vertex
    /// (`usize::MAX` when the window has no boundary).
    pub fn boundary_distances(&self) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::new();
        for u in 0..self.len() {
            if self.boundary[u] {
                dist[u] = 0;
                queue.push_back(u);
            }
        }
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v.index()] == usize::MAX {
                    dist[v.index()] = dist[u] + 1;
                    queue.push_back(v.index());
                }
            }
        }
        dist
    }

    /// Edge list as "u v" lines, 0-based ids, each undirected edge once.
    pub fn edge_list_text(&self) -> String {
        let mut out = String::new();
        for u in 0..self.len() {
            for &v in &self.adjacency[u] {
                if u < v.index() {
                    out.push_str(&format!("{} {}\n", u, v.index()));
                }
            }
        }
        out
    }

    fn check_site(&self, x: SiteId) -> Result<(), GraphError> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(GraphError::InvalidSite(x.index(), self.len()))
        }
    }
}

/// Build a finite window of the requested kind. Vertex ordering is
/// deterministic (BFS layers for trees, lexicographic for the grid).
pub fn build_window(kind: WindowKind, radius: usize) -> Result<GraphView, GraphError> {
    build_window_capped(kind, radius, VERTEX_CAP)
}

pub fn build_window_capped(
    kind: WindowKind,
    radius: usize,
    cap: usize,
) -> Result<GraphView, GraphError> {
    if radius == 0 {
        return Err(GraphError::ZeroRadius);
    }
    match kind {
        WindowKind::Path | WindowKind::HalfLine => {
            let n = radius + 1;
            if n > cap {
                return Err(GraphError::TooLarge(kind, radius, cap));
            }
            let mut adj = vec![Vec::new(); n];
            for i in 0..n - 1 {
                adj[i].push(SiteId::new(i + 1));
                adj[i + 1].push(SiteId::new(i));
            }
            let mut boundary = vec![false; n];
            boundary[n - 1] = true;
            if kind == WindowKind::Path {
                boundary[0] = true;
            }
            Ok(GraphView::from_parts(adj, boundary, SiteId::new(0), kind))
        }
        WindowKind::Grid2d => {
            let r = radius as i64;
            // ball |i|+|j| <= r, ordered lexicographically by (i, j)
            let mut coords = Vec::new();
            for i in -r..=r {
                let jr = r - i.abs();
                for j in -jr..=jr {
                    coords.push((i, j));
                }
            }
            let n = coords.len();
            if n > cap {
                return Err(GraphError::TooLarge(kind, radius, cap));
            }
            let index = |i: i64, j: i64| -> Option<usize> {
                if i.abs() + j.abs() > r {
                    return None;
                }
                coords.binary_search(&(i, j)).ok()
            };
            let mut adj = vec![Vec::new(); n];
            let mut boundary = vec![false; n];
            for (u, &(i, j)) in coords.iter().enumerate() {
                for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    if let Some(v) = index(i + di, j + dj) {
                        adj[u].push(SiteId::new(v));
                    }
                }
                boundary[u] = i.abs() + j.abs() == r;
            }
            let origin = SiteId::new(index(0, 0).unwrap());
            Ok(GraphView::from_parts(adj, boundary, origin, kind))
        }
        WindowKind::RegularTree { degree } => {
            if degree < 2 {
                return Err(GraphError::BadDegree);
            }
            // BFS-level ids: root 0, then level by level.
            let mut adj: Vec<Vec<SiteId>> = vec![Vec::new()];
            let mut level: Vec<usize> = vec![0];
            let mut frontier = vec![0usize];
            for depth in 1..=radius {
                let mut next = Vec::new();
                for &u in &frontier {
                    let children = if u == 0 { degree } else { degree - 1 };
                    for _ in 0..children {
                        let v = adj.len();
                        if v >= VERTEX_CAP.min(cap) {
                            return Err(GraphError::TooLarge(kind, radius, cap));
                        }
                        adj.push(Vec::new());
                        level.push(depth);
                        adj[u].push(SiteId::new(v));
                        adj[v].push(SiteId::new(u));
                        next.push(v);
                    }
                }
                frontier = next;
            }
            if adj.len() > cap {
                return Err(GraphError::TooLarge(kind, radius, cap));
            }
            let boundary: Vec<bool> = level.iter().map(|&l| l == radius).collect();
            Ok(GraphView::from_parts(adj, boundary, SiteId::new(0), kind))
        }
    }
}

/// Breadth-first shortest-path distance.
pub fn distance(g: &GraphView, x: SiteId, y: SiteId) -> usize {
    g.check_site(x).expect("valid site");
    g.check_site(y).expect("valid site");
    if x == y {
        return 0;
    }
    let d = distances_from(g, x);
    d[y.index()]
}

/// All distances from `x` (the window is connected, so every entry is finite).
pub fn distances_from(g: &GraphView, x: SiteId) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.len()];
    dist[x.index()] = 0;
    let mut queue = VecDeque::from([x]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if dist[v.index()] == usize::MAX {
                dist[v.index()] = dist[u.index()] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Growth-condition parameters: ball cardinality is compared against
/// `amplitude * exp(rate * r^(1 - taper))` (sub-exponential) or
/// `amplitude * r^degree` (polynomial).
#[derive(Clone, Copy, Debug)]
pub enum GrowthParams {
    SubExponential { amplitude: f64, rate: f64, taper: f64 },
    Polynomial { amplitude: f64, degree: f64 },
}

impl GrowthParams {
    fn validate(&self) -> Result<(), GraphError> {
        match *self {
            GrowthParams::SubExponential { amplitude, rate, taper } => {
                if amplitude <= 0.0 || rate <= 0.0 || !(0.0 < taper && taper < 1.0) {
                    return Err(GraphError::BadGrowthParams(format!(
                        "amplitude {amplitude}, rate {rate}, taper {taper}"
                    )));
                }
            }
            GrowthParams::Polynomial { amplitude, degree } => {
                if amplitude <= 0.0 || degree < 1.0 {
                    return Err(GraphError::BadGrowthParams(format!(
                        "amplitude {amplitude}, degree {degree}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn bound(&self, r: usize) -> f64 {
        let rf = r as f64;
        match *self {
            GrowthParams::SubExponential { amplitude, rate, taper } => {
                amplitude * (rate * rf.powf(1.0 - taper)).exp()
            }
            GrowthParams::Polynomial { amplitude, degree } => amplitude * rf.powf(degree),
        }
    }

    /// The polynomial bound is only stated for positive radii.
    fn min_radius(&self) -> usize {
        match self {
            GrowthParams::SubExponential { .. } => 0,
            GrowthParams::Polynomial { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthRow {
    pub radius: usize,
    pub max_ball: usize,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub rows: Vec<GrowthRow>,
    pub pass: bool,
}

/// Compare interior ball sizes against the growth bound for every radius up
/// to `r_max`. Only centers whose ball avoids the clipped boundary count.
pub fn check_growth(
    g: &GraphView,
    params: &GrowthParams,
    r_max: usize,
) -> Result<GrowthReport, GraphError> {
    params.validate()?;
    let d_boundary = g.boundary_distances();
    let r_min = params.min_radius();
    let mut max_ball = vec![0usize; r_max + 1];
    let mut have_center = vec![false; r_max + 1];
    for x in g.sites() {
        let free = d_boundary[x.index()];
        if free == 0 {
            continue;
        }
        // ball of radius r is boundary-free iff r < free
        let r_top = r_max.min(free.saturating_sub(1));
        let dist = distances_from(g, x);
        let mut counts = vec![0usize; r_top + 1];
        for &d in &dist {
            if d <= r_top {
                counts[d] += 1;
            }
        }
        let mut cum = 0usize;
        for (r, c) in counts.iter().enumerate() {
            cum += c;
            have_center[r] = true;
            if cum > max_ball[r] {
                max_ball[r] = cum;
            }
        }
    }
    let mut rows = Vec::new();
    for r in r_min..=r_max {
        if !have_center[r] {
            return Err(GraphError::NoInteriorCenter(r));
        }
        let bound = params.bound(r);
        rows.push(GrowthRow {
            radius: r,
            max_ball: max_ball[r],
            bound,
            pass: (max_ball[r] as f64) <= bound,
        });
    }
    let pass = rows.iter().all(|row| row.pass);
    Ok(GrowthReport { rows, pass })
}

/// Ordered site sequence with consecutive sites adjacent, all distinct.
#[derive(Clone, Debug)]
pub struct HalfLine {
    sites: Vec<SiteId>,
}

impl HalfLine {
    pub fn sites(&self) -> &[SiteId] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site(&self, i: usize) -> SiteId {
        self.sites[i]
    }

    pub fn position_of(&self, x: SiteId) -> Option<usize> {
        self.sites.iter().position(|&s| s == x)
    }
}

/// Deterministic simple path of `length` edges from `z0`
/// (lowest-SiteId-first greedy with backtracking).
pub fn embed_half_line(
    g: &GraphView,
    z0: SiteId,
    length: usize,
) -> Result<HalfLine, GraphError> {
    g.check_site(z0)?;
    let want = length + 1;
    let mut on_path = vec![false; g.len()];
    let mut path = vec![z0];
    on_path[z0.index()] = true;
    // stack of next-neighbor cursor per path element
    let mut cursor = vec![0usize];
    while path.len() < want {
        let u = *path.last().unwrap();
        let c = cursor.last_mut().unwrap();
        let nbrs = g.neighbors(u);
        let mut advanced = false;
        while *c < nbrs.len() {
            let v = nbrs[*c];
            *c += 1;
            if !on_path[v.index()] {
                path.push(v);
                on_path[v.index()] = true;
                cursor.push(0);
                advanced = true;
                break;
            }
        }
        if !advanced {
            // backtrack
            let dead = path.pop().unwrap();
            on_path[dead.index()] = false;
            cursor.pop();
            if path.is_empty() {
                return Err(GraphError::NoSimplePath(length));
            }
        }
    }
    Ok(HalfLine { sites: path })
}

/// Origin, shortest prefix path reaching a [`HalfLine`], and the half-line
/// continuation past the junction.
#[derive(Clone, Debug)]
pub struct ExtendedHalfLine {
    /// `y0, ..., y_r` with `y_r` on the half-line.
    prefix: Vec<SiteId>,
    /// Half-line sites after the junction.
    continuation: Vec<SiteId>,
    junction_index: usize,
}

impl ExtendedHalfLine {
    pub fn origin(&self) -> SiteId {
        self.prefix[0]
    }

    pub fn prefix(&self) -> &[SiteId] {
        &self.prefix
    }

    pub fn continuation(&self) -> &[SiteId] {
        &self.continuation
    }

    /// Index of the junction site within the underlying half-line.
    pub fn junction_index(&self) -> usize {
        self.junction_index
    }

    pub fn len(&self) -> usize {
        self.prefix.len() + self.continuation.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Site at line position `p` (prefix first, then continuation).
    pub fn site(&self, p: usize) -> SiteId {
        if p < self.prefix.len() {
            self.prefix[p]
        } else {
            self.continuation[p - self.prefix.len()]
        }
    }

    pub fn sequence(&self) -> Vec<SiteId> {
        let mut v = self.prefix.clone();
        v.extend_from_slice(&self.continuation);
        v
    }
}

/// Attach `y0` to `hl` by a shortest path (ties: lowest half-line index,
/// then lowest SiteId along the path) and continue along the half-line.
pub fn extend_half_line(
    g: &GraphView,
    y0: SiteId,
    hl: &HalfLine,
) -> Result<ExtendedHalfLine, GraphError> {
    g.check_site(y0)?;
    if hl.is_empty() {
        return Err(GraphError::EmptyHalfLine);
    }
    let dist = distances_from(g, y0);
    let (j, _) = hl
        .sites()
        .iter()
        .enumerate()
        .min_by_key(|(i, s)| (dist[s.index()], *i))
        .unwrap();
    let target = hl.site(j);
    // walk back from the target, always stepping to the lowest-id neighbor
    // one closer to y0
    let mut back = vec![target];
    let mut cur = target;
    while cur != y0 {
        let d = dist[cur.index()];
        let prev = g
            .neighbors(cur)
            .iter()
            .copied()
            .filter(|v| dist[v.index()] + 1 == d)
            .min()
            .expect("connected window");
        back.push(prev);
        cur = prev;
    }
    back.reverse(); // y0 ... target
    let continuation = hl.sites()[j + 1..].to_vec();
    Ok(ExtendedHalfLine { prefix: back, continuation, junction_index: j })
}
