//! Skeletonization and skeleton-to-graph conversion.
//!
//! Thinning marks Zhang–Suen candidates per subiteration and deletes them
//! sequentially only while they remain simple points, so 8-connected
//! components are never split or removed. A final pass deletes staircase
//! corners so that diagonal runs are one pixel wide.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::raster::{Keypoint, LabelMask};

/// `(x, y)` pixel coordinates.
pub type Pixel = (usize, usize);

/// Neighbour offsets in clockwise order starting north.
const RING: [(isize, isize); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

#[derive(Clone, PartialEq, Eq)]
pub struct Skeleton {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl std::fmt::Debug for Skeleton {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Skeleton")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("len", &self.len())
            .finish()
    }
}

impl Skeleton {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn is_set(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.pixels[y as usize * self.width + x as usize]
    }

    pub fn len(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|&p| p)
    }

    /// Set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(i, _)| (i % self.width, i / self.width))
    }

    pub fn neighbors(&self, (x, y): Pixel) -> impl Iterator<Item = Pixel> + '_ {
        RING.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            self.is_set(nx, ny).then_some((nx as usize, ny as usize))
        })
    }

    pub fn neighbor_count(&self, p: Pixel) -> usize {
        self.neighbors(p).count()
    }

    pub fn to_mask(&self) -> LabelMask {
        LabelMask::from_fn(self.width, self.height, |x, y| self.get(x, y))
    }
}

/// Yokoi 8-connectivity number; 1 means the pixel is simple.
fn connectivity(n: &[bool; 8]) -> u8 {
    let mut c = 0;
    for k in [0, 2, 4, 6] {
        let a = !n[k];
        let b = !n[k + 1];
        let d = !n[(k + 2) % 8];
        c += u8::from(a) - u8::from(a && b && d);
    }
    c
}

/// Number of 0→1 transitions around the ring.
fn transitions(n: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count()
}

struct Grid {
    stride: usize,
    cells: Vec<bool>,
    offsets: [isize; 8],
}

impl Grid {
    fn new(mask: &LabelMask) -> Self {
        let stride = mask.width() + 2;
        let mut cells = vec![false; stride * (mask.height() + 2)];
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                cells[(y + 1) * stride + x + 1] = mask.get(x, y) != 0;
            }
        }
        let s = stride as isize;
        let offsets = RING.map(|(dx, dy)| dy * s + dx);
        Self { stride, cells, offsets }
    }

    fn ring(&self, i: usize) -> [bool; 8] {
        self.offsets.map(|o| self.cells[(i as isize + o) as usize])
    }
}

/// Connectivity-preserving one-pixel-wide thinning. Any nonzero label counts
/// as foreground. Line ends eroded by the thinning are grown back along the
/// local skeleton direction until they leave the mask.
pub fn skeletonize(mask: &LabelMask) -> Skeleton {
    let mut g = Grid::new(mask);
    let mut live: Vec<usize> = (0..g.cells.len()).filter(|&i| g.cells[i]).collect();

    loop {
        let mut changed = false;
        for sub in 0..2 {
            let candidates: Vec<usize> = live
                .iter()
                .copied()
                .filter(|&i| {
                    let n = g.ring(i);
                    let b = n.iter().filter(|&&v| v).count();
                    let [p2, _, p4, _, p6, _, p8, _] = n;
                    let side = if sub == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    (2..=6).contains(&b) && transitions(&n) == 1 && side
                })
                .collect();
            for i in candidates {
                let n = g.ring(i);
                if n.iter().filter(|&&v| v).count() >= 2 && connectivity(&n) == 1 {
                    g.cells[i] = false;
                    changed = true;
                }
            }
            live.retain(|&i| g.cells[i]);
        }
        if !changed {
            break;
        }
    }

    // Staircase corners: a simple pixel with two orthogonal 4-neighbours is
    // redundant given the diagonal link between them.
    loop {
        let mut changed = false;
        for &i in &live {
            if !g.cells[i] {
                continue;
            }
            let n = g.ring(i);
            let corner = (n[0] && n[2]) || (n[2] && n[4]) || (n[4] && n[6]) || (n[6] && n[0]);
            if corner && n.iter().filter(|&&v| v).count() >= 2 && connectivity(&n) == 1 {
                g.cells[i] = false;
                changed = true;
            }
        }
        live.retain(|&i| g.cells[i]);
        if !changed {
            break;
        }
    }

    let (w, h) = mask.dims();
    let s = g.stride;
    let mut sk = Skeleton::from_fn(w, h, |x, y| g.cells[(y + 1) * s + x + 1]);
    extend_ends(&mut sk, mask);
    sk
}

/// Pixels walked back from an end to estimate its direction.
const END_BACKTRACK: usize = 8;

/// Distance from `p` to the nearest background pixel along the eight ring
/// directions.
fn ray_radius(mask: &LabelMask, p: Pixel) -> f64 {
    RING.iter()
        .map(|&(dx, dy)| {
            let mut k = 1;
            while mask.is_set(p.0 as isize + k * dx, p.1 as isize + k * dy) {
                k += 1;
            }
            k as f64 * (dx as f64).hypot(dy as f64)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Thinning bends line ends toward corners and erodes staircases. Cut each
/// end back by the local vessel radius, then regrow it straight until it
/// leaves the mask.
fn extend_ends(sk: &mut Skeleton, mask: &LabelMask) {
    let ends: Vec<Pixel> = sk.pixels().filter(|&p| sk.neighbor_count(p) == 1).collect();
    for tip in ends {
        if sk.neighbor_count(tip) != 1 {
            continue;
        }
        let mut path = vec![tip];
        let mut prev = tip;
        let mut cur = sk.neighbors(tip).next().expect("one neighbour");
        while path.len() < 4 * END_BACKTRACK {
            let next: Vec<Pixel> = sk.neighbors(cur).filter(|&q| q != prev).collect();
            path.push(cur);
            if next.len() != 1 {
                break;
            }
            prev = cur;
            cur = next[0];
        }
        // The last pixel may be a junction; keep it out of the trim.
        let free = path.len() - 1;
        let probe = path[END_BACKTRACK.min(free)];
        let trim = ray_radius(mask, probe).ceil() as usize;
        if free < trim + END_BACKTRACK / 2 {
            continue;
        }
        for &p in &path[..trim] {
            sk.pixels[p.1 * sk.width + p.0] = false;
        }
        let end = path[trim];
        let cur = path[(trim + END_BACKTRACK).min(free)];
        let (dx, dy) = (end.0 as f64 - cur.0 as f64, end.1 as f64 - cur.1 as f64);
        let norm = dx.hypot(dy);
        let (ux, uy) = (dx / norm, dy / norm);
        // Greedy walk along the ray: forward neighbours only, closest to the
        // ray first.
        let mut last = end;
        loop {
            let next = RING
                .iter()
                .filter_map(|&(sx, sy)| {
                    let (qx, qy) = (last.0 as isize + sx, last.1 as isize + sy);
                    let forward = (sx as f64 * ux + sy as f64 * uy) / (sx as f64).hypot(sy as f64);
                    if forward < 0.6 || !mask.is_set(qx, qy) || sk.is_set(qx, qy) {
                        return None;
                    }
                    let q = (qx as usize, qy as usize);
                    if sk.neighbors(q).any(|r| r != last) {
                        return None;
                    }
                    let (rx, ry) = (qx as f64 - end.0 as f64, qy as f64 - end.1 as f64);
                    Some((q, (rx * uy - ry * ux).abs()))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let Some((q, _)) = next else { break };
            sk.pixels[q.1 * sk.width + q.0] = true;
            last = q;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Endpoint,
    /// Anchor placed on a closed loop that has no junctions.
    Pass,
    Bifurcation,
    Crossing,
}

impl NodeKind {
    fn from_degree(d: usize) -> Self {
        match d {
            0 | 1 => NodeKind::Endpoint,
            2 => NodeKind::Pass,
            3 => NodeKind::Bifurcation,
            _ => NodeKind::Crossing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub kind: NodeKind,
    pub degree: usize,
    /// Skeleton pixels merged into this node.
    pub pixels: Vec<Pixel>,
}

impl Node {
    pub fn position(&self) -> Keypoint {
        Keypoint::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: usize,
    pub a: usize,
    pub b: usize,
    /// Ordered pixels from a pixel of node `a` to a pixel of node `b`.
    pub chain: Vec<Pixel>,
    pub length: f64,
}

impl Edge {
    pub fn other(&self, node: usize) -> usize {
        if self.a == node {
            self.b
        } else {
            self.a
        }
    }

    pub fn is_loop(&self) -> bool {
        self.a == self.b
    }

    /// Chain ordered away from `node`.
    pub fn chain_from(&self, node: usize) -> Vec<Pixel> {
        let mut c = self.chain.clone();
        if self.a != node {
            c.reverse();
        }
        c
    }

    /// Pixel halfway along the chain by arc length.
    pub fn midpoint(&self) -> Pixel {
        let half = self.length / 2.0;
        let mut acc = 0.0;
        for w in self.chain.windows(2) {
            acc += step_length(w[0], w[1]);
            if acc >= half {
                return w[1];
            }
        }
        self.chain[0]
    }
}

/// Parent/child relation produced by [`orient_graph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    /// Root node of each connected component.
    pub roots: Vec<usize>,
    /// Edge leading back toward the root, per node.
    pub parent_edge: Vec<Option<usize>>,
    /// Edges leading away from the root, per node, in edge-id order.
    pub children: Vec<Vec<usize>>,
    /// Upstream node of each edge; `None` for edges dropped to break cycles.
    pub edge_from: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselGraph {
    pub width: usize,
    pub height: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub orientation: Option<Orientation>,
}

impl VesselGraph {
    /// Incident edge ids per node; self-loops appear twice.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            inc[e.a].push(e.id);
            inc[e.b].push(e.id);
        }
        inc
    }

    pub fn count_kind(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}

pub fn step_length(p: Pixel, q: Pixel) -> f64 {
    if p.0 != q.0 && p.1 != q.1 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

pub fn chain_length(chain: &[Pixel]) -> f64 {
    chain.windows(2).map(|w| step_length(w[0], w[1])).sum()
}

struct WorkNode {
    pixels: Vec<Pixel>,
    alive: bool,
}

struct WorkEdge {
    a: usize,
    b: usize,
    chain: Vec<Pixel>,
    length: f64,
    alive: bool,
}

impl WorkEdge {
    fn other_end(&self, n: usize) -> usize {
        if self.a == n {
            self.b
        } else {
            self.a
        }
    }
}

struct Work {
    nodes: Vec<WorkNode>,
    edges: Vec<WorkEdge>,
}

impl Work {
    fn incident(&self, n: usize) -> Vec<usize> {
        let mut v = Vec::new();
        for (i, e) in self.edges.iter().enumerate() {
            if e.alive {
                if e.a == n {
                    v.push(i);
                }
                if e.b == n {
                    v.push(i);
                }
            }
        }
        v
    }

    fn push_edge(&mut self, a: usize, b: usize, chain: Vec<Pixel>) {
        let length = chain_length(&chain);
        self.edges.push(WorkEdge {
            a,
            b,
            chain,
            length,
            alive: true,
        });
    }

    /// Replace a degree-2 node by joining its two edges through its pixels.
    fn merge_through(&mut self, n: usize, e1: usize, e2: usize) {
        let mut c1 = self.edges[e1].chain.clone();
        if self.edges[e1].b != n {
            c1.reverse();
        }
        let u = if self.edges[e1].a == n {
            self.edges[e1].b
        } else {
            self.edges[e1].a
        };
        let mut c2 = self.edges[e2].chain.clone();
        if self.edges[e2].a != n {
            c2.reverse();
        }
        let v = if self.edges[e2].a == n {
            self.edges[e2].b
        } else {
            self.edges[e2].a
        };
        let bridge = cluster_path(&self.nodes[n].pixels, *c1.last().expect("chain"), c2[0]);
        let mut chain = c1;
        chain.extend_from_slice(&bridge[1..]);
        chain.extend_from_slice(&c2[1..]);
        self.edges[e1].alive = false;
        self.edges[e2].alive = false;
        self.nodes[n].alive = false;
        self.push_edge(u, v, chain);
    }

    /// Unit direction of edge `e` leaving node `n`, from the chain start to
    /// the pixel `probe` pixels along it.
    fn leaving_direction(&self, e: usize, n: usize, probe: f64) -> (f64, f64) {
        let edge = &self.edges[e];
        let mut chain = edge.chain.clone();
        if edge.a != n {
            chain.reverse();
        }
        let mut acc = 0.0;
        let mut end = *chain.last().expect("chain");
        for w in chain.windows(2) {
            acc += step_length(w[0], w[1]);
            if acc >= probe {
                end = w[1];
                break;
            }
        }
        let (dx, dy) = (end.0 as f64 - chain[0].0 as f64, end.1 as f64 - chain[0].1 as f64);
        let r = dx.hypot(dy).max(f64::EPSILON);
        (dx / r, dy / r)
    }

    /// Two vessels crossing at a non-right angle skeletonize into two
    /// junctions joined by a short edge. Such a pair is a crossing when its
    /// four outer branches form two straight continuations.
    fn is_split_crossing(&self, e: usize, max_len: f64) -> bool {
        const STRAIGHT_COS: f64 = -0.866;
        let edge = &self.edges[e];
        if edge.a == edge.b || edge.length > max_len {
            return false;
        }
        let outer = |n: usize| -> Option<[usize; 2]> {
            let inc = self.incident(n);
            if inc.len() != 3 {
                return None;
            }
            let rest: Vec<usize> = inc.into_iter().filter(|&i| i != e).collect();
            if rest.len() != 2 || rest.iter().any(|&i| self.edges[i].a == self.edges[i].b) {
                return None;
            }
            Some([rest[0], rest[1]])
        };
        let (Some(ou), Some(ov)) = (outer(edge.a), outer(edge.b)) else {
            return false;
        };
        let shared = |i: usize| self.edges[i].other_end(edge.a) == edge.b;
        if ou.iter().any(|&i| shared(i)) {
            return false;
        }
        let probe = max_len;
        let du = ou.map(|i| self.leaving_direction(i, edge.a, probe));
        let dv = ov.map(|i| self.leaving_direction(i, edge.b, probe));
        let dot = |p: (f64, f64), q: (f64, f64)| p.0 * q.0 + p.1 * q.1;
        (dot(du[0], dv[0]) <= STRAIGHT_COS && dot(du[1], dv[1]) <= STRAIGHT_COS)
            || (dot(du[0], dv[1]) <= STRAIGHT_COS && dot(du[1], dv[0]) <= STRAIGHT_COS)
    }

    /// Fold node `b` and edge `e` into node `a`.
    fn contract(&mut self, e: usize) {
        let (a, b) = (self.edges[e].a, self.edges[e].b);
        self.edges[e].alive = false;
        let mut pixels = std::mem::take(&mut self.nodes[b].pixels);
        let chain = &self.edges[e].chain;
        pixels.extend_from_slice(&chain[1..chain.len() - 1]);
        self.nodes[a].pixels.extend(pixels);
        self.nodes[b].alive = false;
        for edge in self.edges.iter_mut().filter(|x| x.alive) {
            if edge.a == b {
                edge.a = a;
            }
            if edge.b == b {
                edge.b = a;
            }
        }
    }

    fn merge_if_pass(&mut self, n: usize) {
        let inc = self.incident(n);
        if inc.len() == 2 && inc[0] != inc[1] {
            self.merge_through(n, inc[0], inc[1]);
        }
    }
}

/// Shortest 8-connected path between two pixels of a node cluster.
fn cluster_path(cluster: &[Pixel], from: Pixel, to: Pixel) -> Vec<Pixel> {
    if from == to {
        return vec![from];
    }
    let set: BTreeSet<Pixel> = cluster.iter().copied().collect();
    let mut prev = std::collections::BTreeMap::new();
    let mut queue = VecDeque::from([from]);
    prev.insert(from, from);
    while let Some(p) = queue.pop_front() {
        if p == to {
            break;
        }
        for &(dx, dy) in &RING {
            let q = ((p.0 as isize + dx) as usize, (p.1 as isize + dy) as usize);
            if set.contains(&q) && !prev.contains_key(&q) {
                prev.insert(q, p);
                queue.push_back(q);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[&cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// Build the segment graph of a skeleton, prune spurs shorter than
/// `prune_len`, merge pass-through nodes and fold junction pairs closer than
/// `2 * prune_len` that form a straight crossing into one node.
pub fn build_graph(s: &Skeleton, prune_len: f64) -> VesselGraph {
    let (w, h) = (s.width(), s.height());
    const NONE: u32 = u32::MAX;
    let idx = |p: Pixel| p.1 * w + p.0;
    let is_node = |p: Pixel| s.neighbor_count(p) != 2;

    let mut cluster = vec![NONE; w * h];
    let mut work = Work {
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    for p in s.pixels() {
        if cluster[idx(p)] != NONE || !is_node(p) {
            continue;
        }
        let id = work.nodes.len() as u32;
        let mut pixels = vec![p];
        cluster[idx(p)] = id;
        let mut head = 0;
        while head < pixels.len() {
            let q = pixels[head];
            head += 1;
            for r in s.neighbors(q) {
                if cluster[idx(r)] == NONE && is_node(r) {
                    cluster[idx(r)] = id;
                    pixels.push(r);
                }
            }
        }
        work.nodes.push(WorkNode { pixels, alive: true });
    }

    let mut visited = vec![false; w * h];
    for n in 0..work.nodes.len() {
        for pi in 0..work.nodes[n].pixels.len() {
            let p = work.nodes[n].pixels[pi];
            let starts: Vec<Pixel> = s.neighbors(p).collect();
            for q in starts {
                if cluster[idx(q)] != NONE || visited[idx(q)] {
                    continue;
                }
                let mut chain = vec![p, q];
                visited[idx(q)] = true;
                let (mut prev, mut cur) = (p, q);
                let end = loop {
                    let next = s
                        .neighbors(cur)
                        .find(|&r| r != prev)
                        .expect("path pixel has two neighbours");
                    chain.push(next);
                    if cluster[idx(next)] != NONE {
                        break cluster[idx(next)] as usize;
                    }
                    visited[idx(next)] = true;
                    prev = cur;
                    cur = next;
                };
                work.push_edge(n, end, chain);
            }
        }
    }

    // Closed loops without junctions get an anchor at their first pixel.
    for p in s.pixels() {
        if cluster[idx(p)] != NONE || visited[idx(p)] {
            continue;
        }
        let id = work.nodes.len();
        cluster[idx(p)] = id as u32;
        work.nodes.push(WorkNode {
            pixels: vec![p],
            alive: true,
        });
        let mut chain = vec![p];
        let (mut prev, mut cur) = (p, s.neighbors(p).next().expect("loop pixel"));
        while cur != p {
            visited[idx(cur)] = true;
            chain.push(cur);
            let next = s.neighbors(cur).find(|&r| r != prev).expect("loop pixel");
            prev = cur;
            cur = next;
        }
        chain.push(p);
        work.push_edge(id, id, chain);
    }

    // Short self-loops are pixel triangles around a node, not vessels.
    for e in 0..work.edges.len() {
        let edge = &work.edges[e];
        if edge.a == edge.b && edge.length < prune_len && work.incident(edge.a).len() > 2 {
            work.edges[e].alive = false;
        }
    }

    // Degree-2 clusters that were not spurs to begin with.
    for n in 0..work.nodes.len() {
        work.merge_if_pass(n);
    }

    loop {
        let mut degree = vec![0usize; work.nodes.len()];
        for e in work.edges.iter().filter(|e| e.alive) {
            degree[e.a] += 1;
            degree[e.b] += 1;
        }
        let spur = work
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.alive && e.length < prune_len && !(e.a == e.b))
            .filter(|(_, e)| (degree[e.a] == 1 && degree[e.b] >= 3) || (degree[e.b] == 1 && degree[e.a] >= 3))
            .min_by(|(i, x), (j, y)| x.length.total_cmp(&y.length).then(i.cmp(j)))
            .map(|(i, _)| i);
        let Some(e) = spur else { break };
        let (tip, junction) = if degree[work.edges[e].a] == 1 {
            (work.edges[e].a, work.edges[e].b)
        } else {
            (work.edges[e].b, work.edges[e].a)
        };
        work.edges[e].alive = false;
        work.nodes[tip].alive = false;
        work.merge_if_pass(junction);
    }

    let crossing_len = 2.0 * prune_len;
    while let Some(e) = (0..work.edges.len())
        .filter(|&e| work.edges[e].alive && work.is_split_crossing(e, crossing_len))
        .min_by(|&i, &j| work.edges[i].length.total_cmp(&work.edges[j].length).then(i.cmp(&j)))
    {
        work.contract(e);
    }

    let mut node_map = vec![usize::MAX; work.nodes.len()];
    let mut nodes = Vec::new();
    for (i, n) in work.nodes.iter().enumerate() {
        if n.alive {
            node_map[i] = nodes.len();
            let k = n.pixels.len() as f64;
            nodes.push(Node {
                id: nodes.len(),
                x: n.pixels.iter().map(|p| p.0 as f64).sum::<f64>() / k,
                y: n.pixels.iter().map(|p| p.1 as f64).sum::<f64>() / k,
                kind: NodeKind::Endpoint,
                degree: 0,
                pixels: n.pixels.clone(),
            });
        }
    }
    let mut edges = Vec::new();
    for e in work.edges.into_iter().filter(|e| e.alive) {
        let (a, b) = (node_map[e.a], node_map[e.b]);
        nodes[a].degree += 1;
        nodes[b].degree += 1;
        edges.push(Edge {
            id: edges.len(),
            a,
            b,
            chain: e.chain,
            length: e.length,
        });
    }
    for n in &mut nodes {
        n.kind = NodeKind::from_degree(n.degree);
    }
    VesselGraph {
        width: w,
        height: h,
        nodes,
        edges,
        orientation: None,
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Orient every component away from the node nearest `disc`. Cycles are cut
/// at the edge whose midpoint lies farthest from `disc`.
pub fn orient_graph(mut g: VesselGraph, disc: Keypoint) -> VesselGraph {
    let n = g.nodes.len();
    let dist = |p: Pixel| Keypoint::new(p.0 as f64, p.1 as f64).distance(disc);
    let mut order: Vec<usize> = (0..g.edges.len()).collect();
    order.sort_by(|&i, &j| {
        dist(g.edges[i].midpoint())
            .total_cmp(&dist(g.edges[j].midpoint()))
            .then(i.cmp(&j))
    });
    let mut uf: Vec<usize> = (0..n).collect();
    let mut tree = vec![false; g.edges.len()];
    for e in order {
        let (ra, rb) = (find(&mut uf, g.edges[e].a), find(&mut uf, g.edges[e].b));
        if ra != rb {
            uf[ra] = rb;
            tree[e] = true;
        }
    }

    let mut adj = vec![Vec::new(); n];
    for e in g.edges.iter().filter(|e| tree[e.id]) {
        adj[e.a].push(e.id);
        adj[e.b].push(e.id);
    }

    let mut comp_root: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = find(&mut uf, i);
        let better = comp_root[r]
            .is_none_or(|c: usize| g.nodes[i].position().distance(disc) < g.nodes[c].position().distance(disc));
        if better {
            comp_root[r] = Some(i);
        }
    }
    let mut roots: Vec<usize> = comp_root.into_iter().flatten().collect();
    roots.sort_unstable();

    let mut parent_edge = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut edge_from = vec![None; g.edges.len()];
    let mut seen = vec![false; n];
    for &r in &roots {
        seen[r] = true;
        let mut queue = VecDeque::from([r]);
        while let Some(u) = queue.pop_front() {
            for &e in &adj[u] {
                let v = g.edges[e].other(u);
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                parent_edge[v] = Some(e);
                children[u].push(e);
                edge_from[e] = Some(u);
                queue.push_back(v);
            }
        }
    }
    g.orientation = Some(Orientation {
        roots,
        parent_edge,
        children,
        edge_from,
    });
    g
}
