//! Navigable-small-world approximate nearest-neighbor index over
//! metric-transformed points, plus the exact brute-force oracle the tests
//! compare it against.
//!
//! Points are pre-transformed by the metric factor, so the graph only ever
//! sees plain squared Euclidean distance. All tie-breaking is by lower id
//! and the beam search only terminates early once its result set is
//! saturated, which makes a search with `ef_search = N` explore every
//! reachable node — the basis of the exactness contract against the
//! oracle. A post-build connectivity pass guarantees every node is
//! reachable from the entry point on the bottom layer.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Graph construction and search parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnParams {
    /// Degree bound M: links kept per node on upper layers (2M on layer 0).
    pub max_links: usize,
    /// Beam width while inserting.
    pub ef_construction: usize,
    /// Beam width while querying; raising it toward N trades speed for
    /// exactness.
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for AnnParams {
    fn default() -> Self {
        AnnParams {
            max_links: 16,
            ef_construction: 200,
            ef_search: 100,
            seed: 0,
        }
    }
}

impl AnnParams {
    fn validate(&self) -> Result<()> {
        if self.max_links < 2 {
            return Err(Error::param("max_links", "must be at least 2"));
        }
        if self.ef_construction < self.max_links {
            return Err(Error::param(
                "ef_construction",
                "must be at least max_links",
            ));
        }
        if self.ef_search < 1 {
            return Err(Error::param("ef_search", "must be at least 1"));
        }
        Ok(())
    }
}

/// Query result: ids into the indexed point set with their squared
/// distances, sorted ascending with ties broken by lower id.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub ids: Vec<usize>,
    pub sq_dists: Vec<f64>,
}

impl NeighborSet {
    fn from_sorted(pairs: Vec<(Dist, usize)>) -> Self {
        NeighborSet {
            ids: pairs.iter().map(|&(_, id)| id).collect(),
            sq_dists: pairs.iter().map(|&(d, _)| d.0).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Total-ordered distance key; ties in the f64 value fall back to node id
/// through tuple ordering at the use sites.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Reusable visited-set with generation stamps so builds do not pay an
/// O(N) clear per insertion.
struct Visited {
    stamp: Vec<u32>,
    generation: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            stamp: vec![0; n],
            generation: 0,
        }
    }

    fn advance(&mut self) {
        if self.generation == u32::MAX {
            self.stamp.fill(0);
            self.generation = 0;
        }
        self.generation += 1;
    }

    /// True when `id` had not been visited in the current generation.
    fn visit(&mut self, id: usize) -> bool {
        if self.stamp[id] == self.generation {
            false
        } else {
            self.stamp[id] = self.generation;
            true
        }
    }

    /// Pulls the stamp for `id` toward the cache ahead of the `visit` call.
    #[inline]
    fn prefetch(&self, id: usize) {
        #[cfg(target_arch = "x86_64")]
        unsafe {
            use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
            _mm_prefetch(self.stamp.as_ptr().add(id) as *const i8, _MM_HINT_T0);
        }
        #[cfg(not(target_arch = "x86_64"))]
        let _ = id;
    }
}

/// Layered proximity graph over a fixed point set. Immutable after build;
/// queries take `&self` and may run concurrently.
#[derive(Debug, Clone)]
pub struct AnnIndex {
    points: Vec<f64>,
    dim: usize,
    n: usize,
    /// Layer-0 adjacency packed at a fixed stride per node so the hot
    /// expansion loop walks contiguous memory. The stride leaves one slot
    /// above the degree cap to absorb the transient overflow between a
    /// back-link push and the prune that follows it.
    links0: Vec<u32>,
    len0: Vec<u32>,
    /// Upper-layer adjacency, `upper[id][layer-1]`; empty for the vast
    /// majority of nodes that only live on layer 0.
    upper: Vec<Vec<Vec<u32>>>,
    /// Symmetric (node, neighbor) edges appended by the connectivity pass.
    /// Kept outside the capped arena so no later prune can undo them;
    /// sorted for lookup, and almost always empty.
    bridges: Vec<(u32, u32)>,
    entry: usize,
    max_level: usize,
    params: AnnParams,
}

fn sq_dist_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.len() {
        let diff = a[j] - b[j];
        acc += diff * diff;
    }
    acc
}

impl AnnIndex {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &AnnParams {
        &self.params
    }

    fn point(&self, id: usize) -> &[f64] {
        &self.points[id * self.dim..(id + 1) * self.dim]
    }

    fn dist_to(&self, id: usize, query: &[f64]) -> Dist {
        Dist(sq_dist_slices(self.point(id), query))
    }

    /// Arena slots per node on layer 0: the degree cap plus the transient
    /// slot used between a push and its prune.
    #[inline]
    fn stride0(&self) -> usize {
        2 * self.params.max_links + 1
    }

    #[inline]
    fn links0_at(&self, id: usize) -> &[u32] {
        let start = id * self.stride0();
        &self.links0[start..start + self.len0[id] as usize]
    }

    #[inline]
    fn links_at(&self, id: usize, layer: usize) -> &[u32] {
        if layer == 0 {
            self.links0_at(id)
        } else {
            &self.upper[id][layer - 1]
        }
    }

    fn push_link(&mut self, id: usize, layer: usize, nb: u32) {
        if layer == 0 {
            let slot = id * self.stride0() + self.len0[id] as usize;
            debug_assert!(slot < (id + 1) * self.stride0());
            self.links0[slot] = nb;
            self.len0[id] += 1;
        } else {
            self.upper[id][layer - 1].push(nb);
        }
    }

    fn set_links(&mut self, id: usize, layer: usize, list: Vec<u32>) {
        if layer == 0 {
            let start = id * self.stride0();
            self.links0[start..start + list.len()].copy_from_slice(&list);
            self.len0[id] = list.len() as u32;
        } else {
            self.upper[id][layer - 1] = list;
        }
    }

    /// Link lists never hold duplicates, so removing the first match is
    /// removing the only one.
    fn remove_link(&mut self, id: usize, layer: usize, target: u32) {
        if layer == 0 {
            let start = id * self.stride0();
            let len = self.len0[id] as usize;
            let slice = &mut self.links0[start..start + len];
            if let Some(pos) = slice.iter().position(|&x| x == target) {
                slice.copy_within(pos + 1.., pos);
                self.len0[id] -= 1;
            }
        } else {
            self.upper[id][layer - 1].retain(|&x| x != target);
        }
    }

    /// Layer-0 bridge neighbors of `id`; callers skip the call entirely
    /// while `bridges` is empty, which is the overwhelming norm.
    fn bridge_links(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        let id = id as u32;
        let start = self.bridges.partition_point(|&(a, _)| a < id);
        self.bridges[start..]
            .iter()
            .take_while(move |&&(a, _)| a == id)
            .map(|&(_, b)| b as usize)
    }

    /// Hints the CPU to pull a point's coordinates toward the cache. The
    /// traversal visits points in data-dependent order, so overlapping the
    /// fetch of the next hop with the current distance computation is what
    /// keeps large builds from stalling on every expansion.
    #[inline]
    fn prefetch_point(&self, id: usize) {
        #[cfg(target_arch = "x86_64")]
        unsafe {
            use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
            _mm_prefetch(
                self.points.as_ptr().add(id * self.dim) as *const i8,
                _MM_HINT_T0,
            );
        }
        #[cfg(not(target_arch = "x86_64"))]
        let _ = id;
    }

    /// Pulls the head of a node's layer-0 link row toward the cache; issued
    /// when the node enters the candidate heap, well before its expansion.
    #[inline]
    fn prefetch_links0(&self, id: usize) {
        #[cfg(target_arch = "x86_64")]
        unsafe {
            use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
            let base = self.links0.as_ptr().add(id * self.stride0()) as *const i8;
            _mm_prefetch(base, _MM_HINT_T0);
            _mm_prefetch(base.add(64), _MM_HINT_T0);
        }
        #[cfg(not(target_arch = "x86_64"))]
        let _ = id;
    }

    /// Scores `nb` against the query and folds it into the beam state.
    #[inline]
    fn consider(
        &self,
        nb: usize,
        query: &[f64],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
        results: &mut BinaryHeap<(Dist, usize)>,
        candidates: &mut BinaryHeap<Reverse<(Dist, usize)>>,
    ) {
        if !visited.visit(nb) {
            return;
        }
        let entry = (self.dist_to(nb, query), nb);
        if results.len() < ef {
            if layer == 0 {
                self.prefetch_links0(nb);
            }
            results.push(entry);
            candidates.push(Reverse(entry));
        } else if entry < *results.peek().expect("results non-empty") {
            if layer == 0 {
                self.prefetch_links0(nb);
            }
            results.push(entry);
            results.pop();
            candidates.push(Reverse(entry));
        }
    }

    /// Beam search within one layer. Termination only happens once the
    /// result heap holds `ef` nodes, so `ef ≥ N` degenerates to full
    /// traversal of the reachable component.
    fn search_layer(
        &self,
        query: &[f64],
        entry: usize,
        ef: usize,
        layer: usize,
        visited: &mut Visited,
    ) -> Vec<(Dist, usize)> {
        visited.advance();
        let mut candidates: BinaryHeap<Reverse<(Dist, usize)>> = BinaryHeap::new();
        let mut results: BinaryHeap<(Dist, usize)> = BinaryHeap::new();
        visited.visit(entry);
        let d0 = self.dist_to(entry, query);
        candidates.push(Reverse((d0, entry)));
        results.push((d0, entry));

        while let Some(&Reverse(candidate)) = candidates.peek() {
            let worst = *results.peek().expect("results never empty");
            if results.len() >= ef && candidate > worst {
                break;
            }
            candidates.pop();
            let nbs = self.links_at(candidate.1, layer);
            for &nb in nbs {
                self.prefetch_point(nb as usize);
                visited.prefetch(nb as usize);
            }
            for &nb in nbs {
                self.consider(
                    nb as usize,
                    query,
                    ef,
                    layer,
                    visited,
                    &mut results,
                    &mut candidates,
                );
            }
            if layer == 0 && !self.bridges.is_empty() {
                for nb in self.bridge_links(candidate.1) {
                    self.consider(nb, query, ef, layer, visited, &mut results, &mut candidates);
                }
            }
        }
        let mut out = results.into_vec();
        out.sort_unstable();
        out
    }

    /// Greedy descent used for routing above the target layer; moves only
    /// on strict improvement, so it terminates and ignores ties. Only ever
    /// called for layers ≥ 1, so bridges (layer 0) never apply.
    fn greedy_step(&self, query: &[f64], mut ep: usize, layer: usize) -> usize {
        let mut best = self.dist_to(ep, query);
        loop {
            let mut improved = false;
            let nbs = self.links_at(ep, layer);
            for &nb in nbs {
                self.prefetch_point(nb as usize);
            }
            for &nb in nbs {
                let d = self.dist_to(nb as usize, query);
                if d < best {
                    best = d;
                    ep = nb as usize;
                    improved = true;
                }
            }
            if !improved {
                return ep;
            }
        }
    }

    fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.max_links
        } else {
            self.params.max_links
        }
    }

    /// Walks candidates in distance order (ties by id) and keeps one only
    /// if it is closer to the anchor than to everything kept before it.
    /// Plain closest-`cap` selection hoards links inside dense clusters and
    /// the graph loses the long-range hops that keep searches short; this
    /// spread-out rule is what keeps build time near-linear in N.
    fn select_diverse(&self, candidates: &[(Dist, usize)], cap: usize) -> Vec<usize> {
        let mut kept: Vec<usize> = Vec::with_capacity(cap);
        for &(d_anchor, cand) in candidates {
            if kept.len() == cap {
                break;
            }
            let diverse = kept
                .iter()
                .all(|&s| Dist(sq_dist_slices(self.point(cand), self.point(s))) >= d_anchor);
            if diverse {
                kept.push(cand);
            }
        }
        kept
    }

    /// Re-selects the links of `node` down to `cap` and removes the dropped
    /// back-edges so adjacency stays symmetric.
    fn prune(&mut self, node: usize, layer: usize, cap: usize) {
        let mut scored: Vec<(Dist, usize)> = self
            .links_at(node, layer)
            .iter()
            .map(|&nb| {
                let nb = nb as usize;
                (Dist(sq_dist_slices(self.point(node), self.point(nb))), nb)
            })
            .collect();
        scored.sort_unstable();
        let kept = self.select_diverse(&scored, cap);
        let dropped: Vec<usize> = scored
            .iter()
            .map(|&(_, id)| id)
            .filter(|id| !kept.contains(id))
            .collect();
        self.set_links(node, layer, kept.iter().map(|&id| id as u32).collect());
        for d in dropped {
            self.remove_link(d, layer, node as u32);
        }
    }

    fn insert(&mut self, id: usize, level: usize, visited: &mut Visited) {
        self.upper[id] = vec![Vec::new(); level];
        if id == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }
        let query = self.point(id).to_vec();
        let mut ep = self.entry;
        if self.max_level > level {
            for layer in (level + 1..=self.max_level).rev() {
                ep = self.greedy_step(&query, ep, layer);
            }
        }
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&query, ep, self.params.ef_construction, layer, visited);
            ep = found[0].1;
            let selected = self.select_diverse(&found, self.params.max_links);
            for nb in selected {
                self.push_link(id, layer, nb as u32);
                self.push_link(nb, layer, id as u32);
                let cap = self.cap(layer);
                if self.links_at(nb, layer).len() > cap {
                    self.prune(nb, layer, cap);
                }
            }
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = id;
        }
    }

    /// Marks everything reachable from `start` on layer 0 (bridges
    /// included) and drains the queue.
    fn flood_fill(&self, start: usize, reached: &mut [bool]) {
        let mut queue = std::collections::VecDeque::new();
        reached[start] = true;
        queue.push_back(start);
        while let Some(node) = queue.pop_front() {
            for &nb in self.links0_at(node) {
                let nb = nb as usize;
                if !reached[nb] {
                    reached[nb] = true;
                    queue.push_back(nb);
                }
            }
            if !self.bridges.is_empty() {
                for nb in self.bridge_links(node) {
                    if !reached[nb] {
                        reached[nb] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
    }

    /// Guarantees every node is reachable from the entry point on layer 0:
    /// any stranded component (possible in principle after aggressive
    /// pruning) is bridged to its nearest reached node. Almost always a
    /// no-op.
    fn connect_stragglers(&mut self) {
        let mut reached = vec![false; self.n];
        self.flood_fill(self.entry, &mut reached);
        for id in 0..self.n {
            if reached[id] {
                continue;
            }
            let mut best: Option<(Dist, usize)> = None;
            for other in 0..self.n {
                if reached[other] {
                    let cand = (
                        Dist(sq_dist_slices(self.point(id), self.point(other))),
                        other,
                    );
                    if best.is_none() || cand < best.unwrap() {
                        best = Some(cand);
                    }
                }
            }
            let (_, anchor) = best.expect("entry node is always reached");
            self.bridges.push((id as u32, anchor as u32));
            self.bridges.push((anchor as u32, id as u32));
            // Kept sorted while we go: flood_fill looks bridges up by node.
            self.bridges.sort_unstable();
            self.flood_fill(id, &mut reached);
        }
    }

    /// Top-k query. `exclude_id` is traversed like any other node but never
    /// returned, so querying with an indexed point while excluding it
    /// yields its true neighbors.
    pub fn k_neighbor(
        &self,
        query: ArrayView1<'_, f64>,
        k: usize,
        exclude_id: Option<usize>,
    ) -> Result<NeighborSet> {
        if k < 1 {
            return Err(Error::param("k", "must be at least 1"));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let q: Vec<f64> = query.iter().cloned().collect();
        let mut visited = Visited::new(self.n);
        let mut ep = self.entry;
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy_step(&q, ep, layer);
        }
        let want = k + usize::from(exclude_id.is_some());
        let ef = self.params.ef_search.max(want);
        let mut found = self.search_layer(&q, ep, ef, 0, &mut visited);
        if let Some(ex) = exclude_id {
            found.retain(|&(_, id)| id != ex);
        }
        found.truncate(k);
        Ok(NeighborSet::from_sorted(found))
    }

    /// K-neighbor filtered to squared distance strictly below `radius`
    /// (the radius compares against the squared form). May be empty.
    pub fn r_neighbor(
        &self,
        query: ArrayView1<'_, f64>,
        k: usize,
        radius: f64,
        exclude_id: Option<usize>,
    ) -> Result<NeighborSet> {
        if !(radius > 0.0) {
            return Err(Error::param("radius", "must be positive"));
        }
        let mut set = self.k_neighbor(query, k, exclude_id)?;
        let keep = set.sq_dists.partition_point(|&d| d < radius);
        set.ids.truncate(keep);
        set.sq_dists.truncate(keep);
        Ok(set)
    }
}

/// Builds the layered graph over all points (rows). Deterministic for a
/// fixed seed: levels come from one seeded stream in id order and every
/// tie-break is by lower id.
pub fn build_index(points: ArrayView2<'_, f64>, params: &AnnParams) -> Result<AnnIndex> {
    params.validate()?;
    let n = points.nrows();
    if n == 0 {
        return Err(Error::EmptyInput {
            context: "index points",
        });
    }
    let dim = points.ncols();
    let mut flat = Vec::with_capacity(n * dim);
    for row in points.rows() {
        flat.extend(row.iter().cloned());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let ml = 1.0 / (params.max_links as f64).ln();
    let levels: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            (-(1.0 - u).ln() * ml).floor() as usize
        })
        .collect();

    if n > u32::MAX as usize {
        return Err(Error::param("points", "more rows than the index can hold"));
    }
    let stride0 = 2 * params.max_links + 1;
    let mut index = AnnIndex {
        points: flat,
        dim,
        n,
        links0: vec![0; n * stride0],
        len0: vec![0; n],
        upper: vec![Vec::new(); n],
        bridges: Vec::new(),
        entry: 0,
        max_level: 0,
        params: *params,
    };
    let mut visited = Visited::new(n);
    for id in 0..n {
        index.insert(id, levels[id], &mut visited);
    }
    index.connect_stragglers();
    Ok(index)
}

/// Exact top-k by squared Euclidean distance over the same point matrix the
/// index was built from; shares the distance kernel with the index so the
/// two routes agree bitwise. Ties break toward the lower index.
pub fn brute_force_knn(
    points: ArrayView2<'_, f64>,
    query: ArrayView1<'_, f64>,
    k: usize,
    exclude_id: Option<usize>,
) -> Result<NeighborSet> {
    if points.nrows() == 0 {
        return Err(Error::EmptyInput {
            context: "oracle points",
        });
    }
    if k < 1 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if query.len() != points.ncols() {
        return Err(Error::DimensionMismatch {
            expected: points.ncols(),
            got: query.len(),
        });
    }
    let q: Vec<f64> = query.iter().cloned().collect();
    let mut row_buf = vec![0.0; points.ncols()];
    let mut scored: Vec<(Dist, usize)> = Vec::with_capacity(points.nrows());
    for (id, row) in points.rows().into_iter().enumerate() {
        if exclude_id == Some(id) {
            continue;
        }
        let d = match row.as_slice() {
            Some(slice) => sq_dist_slices(slice, &q),
            None => {
                for (dst, &v) in row_buf.iter_mut().zip(row.iter()) {
                    *dst = v;
                }
                sq_dist_slices(&row_buf, &q)
            }
        };
        scored.push((Dist(d), id));
    }
    scored.sort_unstable();
    scored.truncate(k);
    Ok(NeighborSet::from_sorted(scored))
}
