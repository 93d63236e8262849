//! Recursive partitioning of a grid into nested regions and knot selection.
//!
//! Each region at level `m < M` is split into `J_{m+1}` children by cutting the
//! longest side of its bounding box at balanced-count quantiles. Knots are then
//! chosen top-down: `r_m` per region at level `m < M`, and every remaining
//! point at the finest level, so each grid point is a knot exactly once.
//!
//! The tree also fixes the internal ordering used by the filter: finest regions
//! in lexicographic path order, points ascending by original index within a
//! region. Every region is then a contiguous range. Factor columns are ordered
//! finest level first, lexicographic within a level.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotMode {
    /// Knots spread over an equispaced template inside each region.
    #[default]
    Template,
    /// Knots at the cut points between children (`r_m = J_{m+1} - 1`).
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    /// Number of levels `M` below the root.
    pub levels: usize,
    /// Children per region at levels `1..=M` (`J_1, ..., J_M`).
    pub children: Vec<usize>,
    /// Knots per region at levels `0..=M`. The last entry is nominal: the finest
    /// level takes all remaining points.
    pub knots: Vec<usize>,
    #[serde(default)]
    pub knot_mode: KnotMode,
}

impl PartitionConfig {
    pub fn new(levels: usize, children: Vec<usize>, knots: Vec<usize>) -> Result<Self> {
        let c = Self {
            levels,
            children,
            knots,
            knot_mode: KnotMode::Template,
        };
        c.validate()?;
        Ok(c)
    }

    /// Same `J` and `r` at every level.
    pub fn uniform(levels: usize, children: usize, knots: usize) -> Result<Self> {
        Self::new(levels, vec![children; levels], vec![knots; levels + 1])
    }

    /// Knots at cut points; `J - 1` per region.
    pub fn boundary(levels: usize, children: Vec<usize>) -> Result<Self> {
        let mut knots: Vec<usize> = children.iter().map(|j| j.saturating_sub(1)).collect();
        knots.push(children.last().map_or(1, |j| j.saturating_sub(1)));
        let c = Self {
            levels,
            children,
            knots,
            knot_mode: KnotMode::Boundary,
        };
        c.validate()?;
        Ok(c)
    }

    /// The one-level tree behind the low-rank filter: `rank` knots at the root,
    /// every other point alone in its own finest region.
    pub fn low_rank(n: usize, rank: usize) -> Result<Self> {
        Self::new(1, vec![n], vec![rank, 1])
    }

    /// Nominal number of knots per finest chain, `sum_m r_m`.
    pub fn budget(&self) -> usize {
        self.knots.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidConfig(s));
        if self.children.len() != self.levels {
            return bad(format!(
                "{} child counts given for {} levels",
                self.children.len(),
                self.levels
            ));
        }
        if self.knots.len() != self.levels + 1 {
            return bad(format!(
                "{} knot counts given for {} levels (need M + 1)",
                self.knots.len(),
                self.levels
            ));
        }
        if let Some(m) = self.children.iter().position(|&j| j < 2) {
            return bad(format!("level {} needs at least two children per region", m + 1));
        }
        if let Some(m) = self.knots[..self.levels].iter().position(|&r| r == 0) {
            return bad(format!("level {m} needs at least one knot per region"));
        }
        if self.knot_mode == KnotMode::Boundary {
            for m in 0..self.levels {
                if self.knots[m] != self.children[m] - 1 {
                    return bad(format!(
                        "boundary knots need r_{m} = J_{} - 1 = {}",
                        m + 1,
                        self.children[m] - 1
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub path: Vec<usize>,
    pub level: usize,
    pub parent: Option<usize>,
    /// Ids of the children (consecutive).
    pub children: Range<usize>,
    /// Internal indices covered by the region.
    pub range: Range<usize>,
    /// Internal indices of the region's knots, ascending.
    pub knots: Vec<usize>,
    /// Factor columns belonging to the knots.
    pub columns: Range<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub split_axis: Option<usize>,
}

impl Region {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn is_finest(&self) -> bool {
        self.children.is_empty()
    }

    pub fn path_string(&self) -> String {
        path_string(&self.path)
    }
}

pub fn path_string(path: &[usize]) -> String {
    let mut s = String::from("root");
    for p in path {
        s.push('/');
        s.push_str(&format!("{p}"));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTree {
    config: PartitionConfig,
    dim: usize,
    regions: Vec<Region>,
    level_start: Vec<usize>,
    chains: Vec<Vec<usize>>,
    order: Vec<usize>,
    position: Vec<usize>,
    finest: Vec<usize>,
    knot_region: Vec<usize>,
    column_of: Vec<usize>,
    point_of_column: Vec<usize>,
}

/// Plain description of a tree, used for JSON export and import.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeLayout {
    pub n: usize,
    pub dim: usize,
    pub config: PartitionConfig,
    pub regions: Vec<RegionLayout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionLayout {
    pub path: Vec<usize>,
    pub level: usize,
    /// Original grid indices in the region, ascending.
    pub indices: Vec<usize>,
    /// Original grid indices of the region's knots, ascending.
    pub knots: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub split_axis: Option<usize>,
}

struct Node {
    path: Vec<usize>,
    level: usize,
    parent: Option<usize>,
    children: Range<usize>,
    members: Vec<usize>,
    /// Last point (in split order) of each child, for boundary knots.
    cut_points: Vec<usize>,
    split_axis: Option<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    knots: Vec<usize>,
}

fn bbox(grid: &Grid, members: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = grid.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for &i in members {
        for (k, &x) in grid.point(i).iter().enumerate() {
            lo[k] = lo[k].min(x);
            hi[k] = hi[k].max(x);
        }
    }
    (lo, hi)
}

fn box_distance2(p: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    p.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&x, (&l, &h))| {
            let d = if x < l {
                l - x
            } else if x > h {
                x - h
            } else {
                0.0
            };
            d * d
        })
        .sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `r` template locations spread over the box `[lo, hi]`.
fn template(lo: &[f64], hi: &[f64], r: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    let ext: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| h - l).collect();
    let mut counts = vec![1usize; d];
    while counts.iter().product::<usize>() < r {
        let mut best = 0;
        for k in 1..d {
            if ext[k] / counts[k] as f64 > ext[best] / counts[best] as f64 {
                best = k;
            }
        }
        counts[best] += 1;
    }
    let total: usize = counts.iter().product();
    let point = |mut flat: usize| -> Vec<f64> {
        (0..d)
            .map(|k| {
                let i = flat % counts[k];
                flat /= counts[k];
                lo[k] + (i as f64 + 0.5) / counts[k] as f64 * ext[k]
            })
            .collect()
    };
    (0..r)
        .map(|k| point(((k as f64 + 0.5) * total as f64 / r as f64) as usize))
        .collect()
}

fn split(grid: &Grid, members: &[usize], parts: usize) -> (usize, Vec<Vec<usize>>) {
    let (lo, hi) = bbox(grid, members);
    let mut axis = 0;
    for k in 1..grid.dim() {
        if hi[k] - lo[k] > hi[axis] - lo[axis] {
            axis = k;
        }
    }
    let mut sorted = members.to_vec();
    sorted.sort_by(|&a, &b| {
        let (pa, pb) = (grid.point(a), grid.point(b));
        pa[axis]
            .partial_cmp(&pb[axis])
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                pa.iter()
                    .zip(pb)
                    .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
            .then(a.cmp(&b))
    });
    let len = sorted.len();
    let (base, extra) = (len / parts, len % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for j in 0..parts {
        let size = base + usize::from(j < extra);
        out.push(sorted[start..start + size].to_vec());
        start += size;
    }
    (axis, out)
}

/// Builds the partition tree and selects knots.
pub fn build_partition(grid: &Grid, config: &PartitionConfig) -> Result<PartitionTree> {
    config.validate()?;
    let n = grid.len();
    let big_m = config.levels;

    let (lo, hi) = bbox(grid, &(0..n).collect::<Vec<_>>());
    let mut nodes = vec![Node {
        path: Vec::new(),
        level: 0,
        parent: None,
        children: 0..0,
        members: (0..n).collect(),
        cut_points: Vec::new(),
        split_axis: None,
        lower: lo,
        upper: hi,
        knots: Vec::new(),
    }];
    let mut level_start = vec![0, 1];
    for m in 0..big_m {
        let parts = config.children[m];
        let (a, b) = (level_start[m], level_start[m + 1]);
        for id in a..b {
            let members = nodes[id].members.clone();
            if members.len() < parts {
                return Err(Error::InfeasiblePartition {
                    path: path_string(&nodes[id].path),
                    reason: format!("{} points cannot fill {parts} children", members.len()),
                });
            }
            let (axis, chunks) = split(grid, &members, parts);
            let first = nodes.len();
            let mut cuts = Vec::with_capacity(parts);
            for (j, chunk) in chunks.into_iter().enumerate() {
                cuts.push(*chunk.last().expect("chunks are non-empty"));
                let (lo, hi) = bbox(grid, &chunk);
                let mut path = nodes[id].path.clone();
                path.push(j);
                nodes.push(Node {
                    path,
                    level: m + 1,
                    parent: Some(id),
                    children: 0..0,
                    members: chunk,
                    cut_points: Vec::new(),
                    split_axis: None,
                    lower: lo,
                    upper: hi,
                    knots: Vec::new(),
                });
            }
            nodes[id].children = first..nodes.len();
            nodes[id].cut_points = cuts;
            nodes[id].split_axis = Some(axis);
        }
        level_start.push(nodes.len());
    }

    select_knots(grid, config, &mut nodes, &level_start)?;
    assemble(config.clone(), grid.dim(), n, nodes, level_start)
}

fn select_knots(grid: &Grid, config: &PartitionConfig, nodes: &mut [Node], level_start: &[usize]) -> Result<()> {
    let n = grid.len();
    let big_m = config.levels;
    let mut finest_of = vec![0usize; n];
    for id in level_start[big_m]..level_start[big_m + 1] {
        for &i in &nodes[id].members {
            finest_of[i] = id;
        }
    }
    let mut taken = vec![false; n];
    let mut remaining: Vec<usize> = nodes.iter().map(|nd| nd.members.len()).collect();

    let take = |pt: usize, taken: &mut [bool], remaining: &mut Vec<usize>, nodes: &[Node]| {
        taken[pt] = true;
        let mut q = Some(finest_of[pt]);
        while let Some(id) = q {
            remaining[id] -= 1;
            q = nodes[id].parent;
        }
    };

    let nearest_in = |members: &[usize], target: &[f64], taken: &[bool]| -> Option<usize> {
        members
            .iter()
            .copied()
            .filter(|&i| !taken[i])
            .min_by(|&a, &b| {
                dist2(grid.point(a), target)
                    .partial_cmp(&dist2(grid.point(b), target))
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            })
    };

    for m in 0..big_m {
        for p in level_start[m]..level_start[m + 1] {
            let r = config.knots[m];
            if remaining[p] < r {
                return Err(Error::InfeasiblePartition {
                    path: path_string(&nodes[p].path),
                    reason: format!("{} unclaimed points for {r} knots at level {m}", remaining[p]),
                });
            }
            let mut chosen = Vec::with_capacity(r);
            match config.knot_mode {
                KnotMode::Template => {
                    for tp in template(&nodes[p].lower, &nodes[p].upper, r) {
                        let mut q = p;
                        while !nodes[q].children.is_empty() {
                            let kids = nodes[q].children.clone();
                            let most = kids.clone().map(|c| remaining[c]).max().unwrap_or(0);
                            let slack = most / 32;
                            q = kids
                                .filter(|&c| remaining[c] > 0 && remaining[c] + slack >= most)
                                .min_by(|&a, &b| {
                                    box_distance2(&tp, &nodes[a].lower, &nodes[a].upper)
                                        .partial_cmp(&box_distance2(&tp, &nodes[b].lower, &nodes[b].upper))
                                        .unwrap_or(Ordering::Equal)
                                        .then(a.cmp(&b))
                                })
                                .expect("a region with unclaimed points has a child with unclaimed points");
                        }
                        let pt = nearest_in(&nodes[q].members, &tp, &taken).expect("finest region has points left");
                        take(pt, &mut taken, &mut remaining, nodes);
                        chosen.push(pt);
                    }
                }
                KnotMode::Boundary => {
                    let kids = nodes[p].children.clone();
                    for (j, c) in kids.enumerate().take(r) {
                        let cut = nodes[p].cut_points[j];
                        let pt = if taken[cut] {
                            let target = grid.point(cut).to_vec();
                            nearest_in(&nodes[c].members, &target, &taken).ok_or_else(|| {
                                Error::InfeasiblePartition {
                                    path: path_string(&nodes[c].path),
                                    reason: "no unclaimed point left for a boundary knot".into(),
                                }
                            })?
                        } else {
                            cut
                        };
                        take(pt, &mut taken, &mut remaining, nodes);
                        chosen.push(pt);
                    }
                }
            }
            nodes[p].knots = chosen;
        }
    }
    for f in level_start[big_m]..level_start[big_m + 1] {
        nodes[f].knots = nodes[f].members.iter().copied().filter(|&i| !taken[i]).collect();
    }
    Ok(())
}

fn assemble(
    config: PartitionConfig,
    dim: usize,
    n: usize,
    nodes: Vec<Node>,
    level_start: Vec<usize>,
) -> Result<PartitionTree> {
    let big_m = config.levels;
    let finest_ids = level_start[big_m]..level_start[big_m + 1];

    let mut order = Vec::with_capacity(n);
    let mut ranges: Vec<Range<usize>> = vec![0..0; nodes.len()];
    for f in finest_ids.clone() {
        let mut m = nodes[f].members.clone();
        m.sort_unstable();
        let start = order.len();
        order.extend_from_slice(&m);
        ranges[f] = start..order.len();
    }
    ensure_dim("partition coverage", n, order.len())?;
    let mut position = vec![usize::MAX; n];
    for (k, &o) in order.iter().enumerate() {
        if o >= n || position[o] != usize::MAX {
            return Err(Error::InvalidConfig(format!("grid index {o} missing or repeated in the tree")));
        }
        position[o] = k;
    }
    for id in (0..finest_ids.start).rev() {
        let kids = nodes[id].children.clone();
        if kids.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "region {} above the finest level has no children",
                path_string(&nodes[id].path)
            )));
        }
        ranges[id] = ranges[kids.start].start..ranges[kids.end - 1].end;
        if ranges[id].len() != nodes[id].members.len() {
            return Err(Error::InvalidConfig(format!(
                "children of {} do not cover it",
                path_string(&nodes[id].path)
            )));
        }
    }

    let mut finest = vec![0usize; n];
    for f in finest_ids.clone() {
        for k in ranges[f].clone() {
            finest[k] = f;
        }
    }

    let mut chains: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
    for (id, nd) in nodes.iter().enumerate() {
        let mut c = match nd.parent {
            Some(p) => chains[p].clone(),
            None => Vec::new(),
        };
        c.push(id);
        chains.push(c);
    }

    let mut knot_region = vec![usize::MAX; n];
    let mut region_knots: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
    for (id, nd) in nodes.iter().enumerate() {
        let mut ks: Vec<usize> = nd.knots.iter().map(|&o| position[o]).collect();
        ks.sort_unstable();
        for &k in &ks {
            if !ranges[id].contains(&k) {
                return Err(Error::InvalidConfig(format!(
                    "knot {} lies outside region {}",
                    order[k],
                    path_string(&nd.path)
                )));
            }
            if knot_region[k] != usize::MAX {
                return Err(Error::InvalidConfig(format!("grid index {} is a knot twice", order[k])));
            }
            knot_region[k] = id;
        }
        region_knots.push(ks);
    }
    if let Some(k) = knot_region.iter().position(|&r| r == usize::MAX) {
        return Err(Error::InvalidConfig(format!("grid index {} is never a knot", order[k])));
    }

    let mut columns: Vec<Range<usize>> = vec![0..0; nodes.len()];
    let mut column_of = vec![0usize; n];
    let mut point_of_column = Vec::with_capacity(n);
    for m in (0..=big_m).rev() {
        for id in level_start[m]..level_start[m + 1] {
            let start = point_of_column.len();
            for &k in &region_knots[id] {
                column_of[k] = point_of_column.len();
                point_of_column.push(k);
            }
            columns[id] = start..point_of_column.len();
        }
    }

    let regions = nodes
        .into_iter()
        .zip(region_knots)
        .enumerate()
        .map(|(id, (nd, knots))| Region {
            path: nd.path,
            level: nd.level,
            parent: nd.parent,
            children: nd.children,
            range: ranges[id].clone(),
            knots,
            columns: columns[id].clone(),
            lower: nd.lower,
            upper: nd.upper,
            split_axis: nd.split_axis,
        })
        .collect();

    Ok(PartitionTree {
        config,
        dim,
        regions,
        level_start,
        chains,
        order,
        position,
        finest,
        knot_region,
        column_of,
        point_of_column,
    })
}

impl PartitionTree {
    pub fn config(&self) -> &PartitionConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `M`, the finest level.
    pub fn levels(&self) -> usize {
        self.config.levels
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, id: usize) -> &Region {
        &self.regions[id]
    }

    /// Region ids at level `m`, in lexicographic order.
    pub fn level(&self, m: usize) -> Range<usize> {
        self.level_start[m]..self.level_start[m + 1]
    }

    pub fn finest_regions(&self) -> Range<usize> {
        self.level(self.levels())
    }

    /// Ids of the ancestors of `id` from the root down to `id` itself.
    pub fn chain(&self, id: usize) -> &[usize] {
        &self.chains[id]
    }

    /// `order[k]` is the original index of internal index `k`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// `position[i]` is the internal index of original index `i`.
    pub fn position(&self) -> &[usize] {
        &self.position
    }

    /// Finest region containing internal index `k`.
    pub fn finest_of(&self, k: usize) -> usize {
        self.finest[k]
    }

    /// Region whose knot set contains internal index `k`.
    pub fn knot_region(&self, k: usize) -> usize {
        self.knot_region[k]
    }

    pub fn column_of(&self, k: usize) -> usize {
        self.column_of[k]
    }

    pub fn point_of_column(&self, c: usize) -> usize {
        self.point_of_column[c]
    }

    /// Largest number of knots along any root-to-leaf chain (the realized `N`).
    pub fn max_chain_knots(&self) -> usize {
        self.finest_regions()
            .map(|f| self.chain(f).iter().map(|&q| self.regions[q].knots.len()).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn to_internal<T: Clone>(&self, v: &[T]) -> Result<Vec<T>> {
        ensure_dim("vector length", self.n(), v.len())?;
        Ok(self.order.iter().map(|&o| v[o].clone()).collect())
    }

    pub fn to_original<T: Clone>(&self, v: &[T]) -> Result<Vec<T>> {
        ensure_dim("vector length", self.n(), v.len())?;
        Ok(self.position.iter().map(|&k| v[k].clone()).collect())
    }

    pub fn layout(&self) -> TreeLayout {
        let regions = self
            .regions
            .iter()
            .map(|r| {
                let mut indices: Vec<usize> = r.range.clone().map(|k| self.order[k]).collect();
                indices.sort_unstable();
                let mut knots: Vec<usize> = r.knots.iter().map(|&k| self.order[k]).collect();
                knots.sort_unstable();
                RegionLayout {
                    path: r.path.clone(),
                    level: r.level,
                    indices,
                    knots,
                    lower: r.lower.clone(),
                    upper: r.upper.clone(),
                    split_axis: r.split_axis,
                }
            })
            .collect();
        TreeLayout {
            n: self.n(),
            dim: self.dim,
            config: self.config.clone(),
            regions,
        }
    }

    /// Rebuilds a tree from its layout, checking that it is a valid nested
    /// partition with every point a knot exactly once.
    pub fn from_layout(layout: &TreeLayout) -> Result<Self> {
        layout.config.validate()?;
        let big_m = layout.config.levels;
        let mut nodes: Vec<Node> = Vec::with_capacity(layout.regions.len());
        let mut level_start = vec![0usize];
        let mut by_path: alloc::collections::BTreeMap<Vec<usize>, usize> = Default::default();
        for (id, r) in layout.regions.iter().enumerate() {
            if r.level != r.path.len() || r.level > big_m {
                return Err(Error::InvalidConfig(format!(
                    "region {} has inconsistent level {}",
                    path_string(&r.path),
                    r.level
                )));
            }
            while level_start.len() <= r.level {
                level_start.push(id);
            }
            if level_start.len() != r.level + 1 {
                return Err(Error::InvalidConfig("regions are not listed level by level".into()));
            }
            let parent = if r.path.is_empty() {
                if id != 0 {
                    return Err(Error::InvalidConfig("the root must come first".into()));
                }
                None
            } else {
                let pp = &r.path[..r.path.len() - 1];
                Some(*by_path.get(pp).ok_or_else(|| {
                    Error::InvalidConfig(format!("region {} has no parent", path_string(&r.path)))
                })?)
            };
            if let Some(p) = parent {
                let kids = &mut nodes[p].children;
                let expected = kids.end - kids.start;
                if *r.path.last().unwrap() != expected || (expected > 0 && kids.end != id) {
                    return Err(Error::InvalidConfig(format!(
                        "children of {} are not listed consecutively in order",
                        path_string(&r.path[..r.path.len() - 1])
                    )));
                }
                if expected == 0 {
                    *kids = id..id + 1;
                } else {
                    kids.end = id + 1;
                }
            }
            by_path.insert(r.path.clone(), id);
            nodes.push(Node {
                path: r.path.clone(),
                level: r.level,
                parent,
                children: 0..0,
                members: r.indices.clone(),
                cut_points: Vec::new(),
                split_axis: r.split_axis,
                lower: r.lower.clone(),
                upper: r.upper.clone(),
                knots: r.knots.clone(),
            });
        }
        level_start.push(nodes.len());
        if level_start.len() != big_m + 2 {
            return Err(Error::InvalidConfig("tree depth does not match its configuration".into()));
        }
        for (id, nd) in nodes.iter().enumerate() {
            if nd.level < big_m && nd.children.len() != layout.config.children[nd.level] {
                return Err(Error::InvalidConfig(format!(
                    "region {} has {} children, expected {}",
                    path_string(&nd.path),
                    nd.children.len(),
                    layout.config.children[nd.level]
                )));
            }
            let mut union: Vec<usize> =
                nd.children.clone().flat_map(|c| nodes[c].members.iter().copied()).collect();
            if !nd.children.is_empty() {
                union.sort_unstable();
                let mut own = nodes[id].members.clone();
                own.sort_unstable();
                if union != own {
                    return Err(Error::InvalidConfig(format!(
                        "children of {} do not partition it",
                        path_string(&nd.path)
                    )));
                }
            }
        }
        assemble(layout.config.clone(), layout.dim, layout.n, nodes, level_start)
    }
}
