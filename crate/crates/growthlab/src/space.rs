//! Explored metric balls of Cayley, cusped, and quotient models, with
//! distance, geodesic, annulus, net, and dead-end queries carrying explicit
//! validity radii.
//!
//! Vertices get canonical ids assigned layer by layer (distance from the
//! basepoint, then representative order), so two builds of the same space
//! produce identical graphs.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::presentation::{GroupSpec, SpaceSpec};
use crate::word::{Letter, Word};
use crate::wordproblem::{
    stock_quotient_targets, FingerprintScheme, PermTarget, StrategyKind, WordProblem, WpError,
};

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("vertex {0} is not in the explored ball")]
    VertexNotInBall(u32),
    #[error("query needs radius {needed} but only {explored} is explored")]
    OutOfRadius { needed: u32, explored: u32 },
    #[error("distance between {x} and {y} cannot be certified exact in this ball")]
    ConfidenceInsufficient { x: u32, y: u32 },
    #[error("insufficient radius: answer {answer} at dist0 {dist0} needs slack {slack}")]
    InsufficientRadius { answer: u32, dist0: u32, slack: u32 },
    #[error("vertex budget {budget} exceeded; layer sizes so far: {layers:?}")]
    MemoryBudget { budget: usize, layers: Vec<usize> },
    #[error("unsupported model: {0}")]
    Unsupported(String),
    #[error("separated net needs exact pairwise distances in this model")]
    InexactPair,
    #[error("corrupt serialized ball: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Wp(#[from] WpError),
}

/// FNV-1a with a fixed seed, so map iteration order is identical across runs.
#[derive(Default)]
pub struct FnvHasher(u64);

impl Hasher for FnvHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        let mut h = if self.0 == 0 { 0xcbf29ce484222325 } else { self.0 };
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        self.0 = h;
    }
}

pub type FixedState = BuildHasherDefault<FnvHasher>;

/// Vertex address: group element word, horoball depth (0 = orbit), and which
/// peripheral's horoball (0 when depth = 0).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct VKey {
    word: Word,
    depth: u32,
    peri: u8,
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub max_vertices: usize,
    /// Permutation targets for interning when normal forms are not canonical;
    /// None tries the stock targets and falls back to pairwise checks.
    pub fingerprints: Option<Vec<PermTarget>>,
}

impl Default for BuildOptions {
    fn default() -> BuildOptions {
        BuildOptions { max_vertices: 6_000_000, fingerprints: None }
    }
}

pub struct SpaceGraph {
    space: SpaceSpec,
    radius: u32,
    reps: Vec<Word>,
    depth: Vec<u32>,
    peri: Vec<u8>,
    dist0: Vec<u32>,
    orbit: Vec<bool>,
    /// layers[n] = ids at dist0 == n; ids are consecutive within a layer.
    layers: Vec<Vec<u32>>,
    adj_off: Vec<u32>,
    adj: Vec<u32>,
    index: HashMap<VKey, u32, FixedState>,
    wp: WordProblem,
    /// Some geodesic between any two ball vertices stays inside the ball
    /// (trees, flats, and tree-times-flat products).
    ball_convex: bool,
}

impl std::fmt::Debug for SpaceGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpaceGraph")
            .field("label", &self.space_label())
            .field("radius", &self.radius)
            .field("vertices", &self.vertex_count())
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DistanceAnswer {
    pub value: u32,
    pub exact: bool,
}

/// All geodesics between two ball vertices, as a DAG.
#[derive(Clone, Debug)]
pub struct GeodesicDag {
    pub source: u32,
    pub target: u32,
    pub dist: u32,
    /// Ball vertex ids on some geodesic, topologically ordered (by distance
    /// from source, then id).
    pub verts: Vec<u32>,
    /// Distance from source, parallel to verts.
    pub dsrc: Vec<u32>,
    /// Edges as index pairs into verts, oriented away from the source.
    pub edges: Vec<(u32, u32)>,
    pub count: BigUint,
}

impl GeodesicDag {
    /// Index of a ball vertex id inside verts, if present.
    pub fn position(&self, id: u32) -> Option<usize> {
        self.verts.iter().position(|&v| v == id)
    }

    /// One concrete geodesic: from the source, always take the
    /// smallest-id successor. Deterministic across rebuilds.
    pub fn canonical_path(&self) -> Vec<u32> {
        let mut at = self.position(self.source).expect("source is in the DAG");
        let mut path = vec![self.verts[at]];
        while self.verts[at] != self.target {
            let next = self
                .edges
                .iter()
                .filter(|&&(a, _)| a as usize == at)
                .map(|&(_, b)| b as usize)
                .min_by_key(|&b| self.verts[b])
                .expect("every non-target DAG vertex has a successor");
            at = next;
            path.push(self.verts[at]);
        }
        path
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthSeries {
    pub delta: u32,
    /// counts[n] = number of marked-orbit vertices with |dist0 - n| <= delta.
    pub counts: Vec<u64>,
    /// Which space and subset the counts describe.
    pub label: String,
}

/// Flattens nested quotients: innermost group plus every normal word from the
/// quotient chain folded into the relator list.
pub fn effective_group(space: &SpaceSpec) -> GroupSpec {
    match space {
        SpaceSpec::Cayley { group } => group.clone(),
        SpaceSpec::Cusped { group, .. } => group.clone(),
        SpaceSpec::Quotient { base, normals } => {
            let mut g = effective_group(base);
            g.relators.extend(normals.iter().cloned());
            g
        }
    }
}

fn root_group_name(space: &SpaceSpec) -> &str {
    match space {
        SpaceSpec::Cayley { group } | SpaceSpec::Cusped { group, .. } => &group.name,
        SpaceSpec::Quotient { base, .. } => root_group_name(base),
    }
}

enum Interner {
    /// Canonical normal forms: the word itself is the key.
    Canonical,
    /// Non-canonical reduction: alias map plus fingerprint buckets plus
    /// pairwise confirmation through the word problem.
    Buckets {
        scheme: Option<FingerprintScheme>,
        buckets: HashMap<Vec<u64>, Vec<u32>, FixedState>,
        aliases: HashMap<Word, u32, FixedState>,
    },
}

struct BallBuilder {
    wp: WordProblem,
    interner: Interner,
    keys: Vec<VKey>,
    dist0: Vec<u32>,
    index: HashMap<VKey, u32, FixedState>,
    /// Directed edges discovered so far; endpoints are final ids.
    edges: Vec<(u32, u32)>,
    layers: Vec<Vec<u32>>,
    budget: usize,
}

impl BallBuilder {
    fn new(wp: WordProblem, opts: &BuildOptions) -> BallBuilder {
        let nf_canonical = wp.normal_form(&Word::id()).canonical;
        let interner = if nf_canonical {
            Interner::Canonical
        } else {
            let scheme = match &opts.fingerprints {
                Some(targets) => FingerprintScheme::new(&wp.group, targets.clone()).ok(),
                None => FingerprintScheme::new(&wp.group, stock_quotient_targets()).ok(),
            };
            Interner::Buckets { scheme, buckets: HashMap::default(), aliases: HashMap::default() }
        };
        BallBuilder {
            wp,
            interner,
            keys: Vec::new(),
            dist0: Vec::new(),
            index: HashMap::default(),
            edges: Vec::new(),
            layers: Vec::new(),
            budget: opts.max_vertices,
        }
    }

    /// Resolves a candidate key against registered vertices, consulting the
    /// word problem when normal forms are not canonical.
    fn lookup(&mut self, key: &VKey) -> Option<u32> {
        if let Some(&id) = self.index.get(key) {
            return Some(id);
        }
        if key.depth > 0 {
            return None;
        }
        if let Interner::Buckets { scheme, buckets, aliases } = &mut self.interner {
            if let Some(&id) = aliases.get(&key.word) {
                return Some(id);
            }
            let fp = scheme.as_ref().map(|s| s.fingerprint(&key.word)).unwrap_or_default();
            if let Some(ids) = buckets.get(&fp) {
                for &id in ids {
                    let probe = key.word.inverse().multiply(&self.keys[id as usize].word);
                    if self.wp.is_identity(&probe).ok() == Some(true) {
                        aliases.insert(key.word.clone(), id);
                        return Some(id);
                    }
                }
            }
        }
        None
    }

    fn register(&mut self, key: VKey, id: u32) {
        self.index.insert(key.clone(), id);
        if key.depth == 0 {
            if let Interner::Buckets { scheme, buckets, aliases } = &mut self.interner {
                let fp = scheme.as_ref().map(|s| s.fingerprint(&key.word)).unwrap_or_default();
                buckets.entry(fp).or_default().push(id);
                aliases.insert(key.word.clone(), id);
            }
        }
        self.keys.push(key);
    }

    /// Runs BFS out to `radius`; `expand` lists the neighbor keys of a vertex.
    fn run(
        &mut self,
        origin: VKey,
        radius: u32,
        mut expand: impl FnMut(&WordProblem, &VKey) -> Vec<VKey>,
    ) -> Result<(), SpaceError> {
        self.dist0.push(0);
        self.register(origin, 0);
        self.layers.push(vec![0]);
        for d in 0..radius {
            let frontier = self.layers[d as usize].clone();
            // (parent id, Ok(existing id) | Err(index into fresh)).
            let mut pending: Vec<(u32, Result<u32, u32>)> = Vec::new();
            let mut fresh: Vec<VKey> = Vec::new();
            let mut fresh_index: HashMap<VKey, u32, FixedState> = HashMap::default();
            // Same-layer coincidences under non-canonical forms are caught by
            // bucketing the fresh vertices as well.
            let mut fresh_buckets: HashMap<Vec<u64>, Vec<u32>, FixedState> = HashMap::default();
            for &u in &frontier {
                let key = self.keys[u as usize].clone();
                for nk in expand(&self.wp, &key) {
                    if let Some(id) = self.lookup(&nk) {
                        pending.push((u, Ok(id)));
                        continue;
                    }
                    if let Some(&fi) = fresh_index.get(&nk) {
                        pending.push((u, Err(fi)));
                        continue;
                    }
                    let mut matched = None;
                    if nk.depth == 0 {
                        if let Interner::Buckets { scheme, .. } = &self.interner {
                            let fp = scheme
                                .as_ref()
                                .map(|s| s.fingerprint(&nk.word))
                                .unwrap_or_default();
                            if let Some(fis) = fresh_buckets.get(&fp) {
                                for &fi in fis {
                                    let fk = &fresh[fi as usize];
                                    if fk.depth != 0 {
                                        continue;
                                    }
                                    let probe = nk.word.inverse().multiply(&fk.word);
                                    if self.wp.is_identity(&probe).ok() == Some(true) {
                                        matched = Some(fi);
                                        break;
                                    }
                                }
                            }
                            if matched.is_none() {
                                fresh_buckets.entry(fp).or_default().push(fresh.len() as u32);
                            }
                        }
                    }
                    match matched {
                        Some(fi) => {
                            fresh_index.insert(nk, fi);
                            pending.push((u, Err(fi)));
                        }
                        None => {
                            let fi = fresh.len() as u32;
                            fresh_index.insert(nk.clone(), fi);
                            fresh.push(nk);
                            pending.push((u, Err(fi)));
                        }
                    }
                }
            }
            if fresh.is_empty() {
                break;
            }
            if self.keys.len() + fresh.len() > self.budget {
                return Err(SpaceError::MemoryBudget {
                    budget: self.budget,
                    layers: self.layers.iter().map(|l| l.len()).collect(),
                });
            }
            // Canonical ids: sort the new layer by representative.
            let mut order: Vec<u32> = (0..fresh.len() as u32).collect();
            order.sort_by(|&i, &j| {
                let a = &fresh[i as usize];
                let b = &fresh[j as usize];
                a.word
                    .shortlex_cmp(&b.word)
                    .then(a.depth.cmp(&b.depth))
                    .then(a.peri.cmp(&b.peri))
            });
            let base = self.keys.len() as u32;
            let mut final_of = vec![0u32; fresh.len()];
            let mut layer = Vec::with_capacity(fresh.len());
            for (pos, &fi) in order.iter().enumerate() {
                let id = base + pos as u32;
                final_of[fi as usize] = id;
                layer.push(id);
            }
            for &fi in &order {
                self.dist0.push(d + 1);
                let key = fresh[fi as usize].clone();
                self.register(key, final_of[fi as usize]);
            }
            for (u, tgt) in pending {
                let v = match tgt {
                    Ok(id) => id,
                    Err(fi) => final_of[fi as usize],
                };
                if u != v {
                    self.edges.push((u, v));
                }
            }
            self.layers.push(layer);
        }
        Ok(())
    }

    fn finish(self, space: SpaceSpec, radius: u32, ball_convex: bool) -> SpaceGraph {
        let n = self.keys.len();
        // Undirected symmetric CSR, sorted and deduplicated.
        let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(self.edges.len() * 2);
        for &(u, v) in &self.edges {
            pairs.push((u, v));
            pairs.push((v, u));
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut adj_off = vec![0u32; n + 1];
        for &(u, _) in &pairs {
            adj_off[u as usize + 1] += 1;
        }
        for i in 0..n {
            adj_off[i + 1] += adj_off[i];
        }
        let adj: Vec<u32> = pairs.iter().map(|&(_, v)| v).collect();

        let mut reps = Vec::with_capacity(n);
        let mut depth = Vec::with_capacity(n);
        let mut peri = Vec::with_capacity(n);
        let mut orbit = Vec::with_capacity(n);
        for k in &self.keys {
            reps.push(k.word.clone());
            depth.push(k.depth);
            peri.push(k.peri);
            orbit.push(k.depth == 0);
        }
        SpaceGraph {
            space,
            radius,
            reps,
            depth,
            peri,
            dist0: self.dist0,
            orbit,
            layers: self.layers,
            adj_off,
            adj,
            index: self.index,
            wp: self.wp,
            ball_convex,
        }
    }
}

/// True when some geodesic between any two ball vertices stays in the ball:
/// trees (free, free products), flats, and products of a tree with a flat
/// (graph models whose non-central generators are pairwise non-commuting).
fn classify_ball_convex(wp: &WordProblem) -> bool {
    match wp.kind() {
        StrategyKind::Free | StrategyKind::FreeProduct => true,
        StrategyKind::Graph => {
            let rank = wp.group.alphabet.rank();
            let mut commute = vec![vec![false; rank]; rank];
            for &(x, y) in &wp.group.commute {
                commute[x][y] = true;
                commute[y][x] = true;
            }
            let central: Vec<bool> =
                (0..rank).map(|g| (0..rank).all(|h| h == g || commute[g][h])).collect();
            (0..rank)
                .all(|g| central[g] || (0..rank).all(|h| h == g || central[h] || !commute[g][h]))
        }
        _ => false,
    }
}

pub fn build_ball(space: &SpaceSpec, radius: u32) -> Result<SpaceGraph, SpaceError> {
    build_ball_with(space, radius, &BuildOptions::default())
}

pub fn build_ball_with(
    space: &SpaceSpec,
    radius: u32,
    opts: &BuildOptions,
) -> Result<SpaceGraph, SpaceError> {
    match space {
        SpaceSpec::Cayley { .. } | SpaceSpec::Quotient { .. } => {
            let group = effective_group(space);
            let wp = WordProblem::new(&group);
            if wp.kind() == StrategyKind::Dehn
                && !wp.small_cancellation_report().map_or(false, |r| r.verdict)
            {
                return Err(SpaceError::Unsupported(
                    "no decidable word-problem strategy for this presentation".into(),
                ));
            }
            let convex = classify_ball_convex(&wp);
            let mut b = BallBuilder::new(wp, opts);
            let letters: Vec<Letter> = b.wp.edge_letters();
            b.run(VKey { word: Word::id(), depth: 0, peri: 0 }, radius, move |wp, key| {
                letters
                    .iter()
                    .map(|&l| VKey {
                        word: wp.normal_form(&key.word.multiply(&Word::letter(l))).word,
                        depth: 0,
                        peri: 0,
                    })
                    .collect()
            })?;
            Ok(b.finish(space.clone(), radius, convex))
        }
        SpaceSpec::Cusped { group, peripherals } => {
            build_cusped(space, group, peripherals, radius, opts)
        }
    }
}

/// Quotient-specific entry point; the ball realizes the quotient metric
/// exactly because generators project to generators.
pub fn build_quotient_ball(space: &SpaceSpec, radius: u32) -> Result<SpaceGraph, SpaceError> {
    match space {
        SpaceSpec::Quotient { .. } => build_ball(space, radius),
        _ => Err(SpaceError::Unsupported("build_quotient_ball needs a quotient space".into())),
    }
}

fn build_cusped(
    space: &SpaceSpec,
    group: &GroupSpec,
    peripherals: &[Vec<usize>],
    radius: u32,
    opts: &BuildOptions,
) -> Result<SpaceGraph, SpaceError> {
    if peripherals.is_empty() {
        return Err(SpaceError::Unsupported("cusped space needs at least one peripheral".into()));
    }
    let wp = WordProblem::new(group);
    let mut peri_gens = Vec::new();
    for p in peripherals {
        if p.len() != 1 {
            return Err(SpaceError::Unsupported(
                "only single-generator peripheral subgroups are supported".into(),
            ));
        }
        let g = p[0];
        let one = Word::letter(Letter::new(g, false));
        if !wp.has_infinite_order(&one)? {
            return Err(SpaceError::Unsupported(format!(
                "peripheral generator {} has finite order",
                wp.group.alphabet.name(g)
            )));
        }
        peri_gens.push(g);
    }
    let letters: Vec<Letter> = wp.edge_letters();
    let mut b = BallBuilder::new(wp, opts);
    let n_peri = peri_gens.len();
    b.run(VKey { word: Word::id(), depth: 0, peri: 0 }, radius, move |wp, key| {
        let mut out = Vec::new();
        if key.depth == 0 {
            for &l in &letters {
                out.push(VKey {
                    word: wp.normal_form(&key.word.multiply(&Word::letter(l))).word,
                    depth: 0,
                    peri: 0,
                });
            }
            for pi in 0..n_peri {
                out.push(VKey { word: key.word.clone(), depth: 1, peri: pi as u8 });
            }
        } else {
            let pi = key.peri as usize;
            let g = peri_gens[pi];
            out.push(VKey {
                word: key.word.clone(),
                depth: key.depth - 1,
                peri: if key.depth == 1 { 0 } else { key.peri },
            });
            out.push(VKey { word: key.word.clone(), depth: key.depth + 1, peri: key.peri });
            // Horizontal edges: peripheral shifts of length up to 2^depth.
            let span: i64 = 1i64 << key.depth.min(30);
            let gen = Word::letter(Letter::new(g, false));
            for j in 1..=span {
                for sgn in [1i64, -1] {
                    let shift = gen.pow(sgn * j);
                    out.push(VKey {
                        word: wp.normal_form(&key.word.multiply(&shift)).word,
                        depth: key.depth,
                        peri: key.peri,
                    });
                }
            }
        }
        out
    })?;
    Ok(b.finish(space.clone(), radius, false))
}

impl SpaceGraph {
    pub fn space(&self) -> &SpaceSpec {
        &self.space
    }
    pub fn wp(&self) -> &WordProblem {
        &self.wp
    }
    pub fn radius(&self) -> u32 {
        self.radius
    }
    pub fn vertex_count(&self) -> usize {
        self.reps.len()
    }
    pub fn rep(&self, id: u32) -> &Word {
        &self.reps[id as usize]
    }
    pub fn depth(&self, id: u32) -> u32 {
        self.depth[id as usize]
    }
    pub fn dist0(&self, id: u32) -> u32 {
        self.dist0[id as usize]
    }
    pub fn in_orbit(&self, id: u32) -> bool {
        self.orbit[id as usize]
    }
    pub fn neighbors(&self, id: u32) -> &[u32] {
        let a = self.adj_off[id as usize] as usize;
        let b = self.adj_off[id as usize + 1] as usize;
        &self.adj[a..b]
    }
    pub fn layer(&self, n: u32) -> &[u32] {
        static EMPTY: [u32; 0] = [];
        self.layers.get(n as usize).map(|l| l.as_slice()).unwrap_or(&EMPTY)
    }
    pub fn explored_layers(&self) -> u32 {
        self.layers.len() as u32 - 1
    }
    pub fn ball_convex(&self) -> bool {
        self.ball_convex
    }

    /// Orbit vertex for a group word, if its element lies in the ball.
    pub fn orbit_vertex(&self, w: &Word) -> Option<u32> {
        let nf = self.wp.normal_form(w);
        let key = VKey { word: nf.word, depth: 0, peri: 0 };
        if let Some(&id) = self.index.get(&key) {
            return Some(id);
        }
        if !nf.canonical {
            // Non-canonical forms: scan orbit vertices via the word problem.
            for (i, r) in self.reps.iter().enumerate() {
                if self.orbit[i] {
                    let probe = key.word.inverse().multiply(r);
                    if self.wp.is_identity(&probe).ok() == Some(true) {
                        return Some(i as u32);
                    }
                }
            }
        }
        None
    }

    /// Horoball vertex lookup for cusped spaces.
    pub fn cusp_vertex(&self, w: &Word, depth: u32, peri: u8) -> Option<u32> {
        let nf = self.wp.normal_form(w).word;
        self.index
            .get(&VKey { word: nf, depth, peri: if depth == 0 { 0 } else { peri } })
            .copied()
    }

    /// Multi-source BFS distances inside the ball; `blocked` vertices are
    /// impassable and never reached. u32::MAX marks unreached vertices.
    pub fn bfs_rows(&self, sources: &[u32], blocked: Option<&[bool]>) -> Vec<u32> {
        let n = self.vertex_count();
        let mut dist = vec![u32::MAX; n];
        let mut frontier = Vec::new();
        for &s in sources {
            if blocked.map_or(false, |b| b[s as usize]) {
                continue;
            }
            if dist[s as usize] == u32::MAX {
                dist[s as usize] = 0;
                frontier.push(s);
            }
        }
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in self.neighbors(u) {
                    if dist[v as usize] == u32::MAX && !blocked.map_or(false, |b| b[v as usize]) {
                        dist[v as usize] = d;
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        dist
    }

    /// Exact distance via the group when normal forms are geodesic; BFS with
    /// the containment rule otherwise.
    pub fn distance(&self, x: u32, y: u32) -> Result<DistanceAnswer, SpaceError> {
        let n = self.vertex_count() as u32;
        if x >= n {
            return Err(SpaceError::VertexNotInBall(x));
        }
        if y >= n {
            return Err(SpaceError::VertexNotInBall(y));
        }
        if x == y {
            return Ok(DistanceAnswer { value: 0, exact: true });
        }
        let orbit_pair = self.orbit[x as usize] && self.orbit[y as usize];
        if orbit_pair && self.wp.geodesic_nf() && !matches!(self.space, SpaceSpec::Cusped { .. }) {
            let w = self.reps[x as usize].inverse().multiply(&self.reps[y as usize]);
            return Ok(DistanceAnswer { value: self.wp.length(&w) as u32, exact: true });
        }
        let rows = self.bfs_rows(&[x], None);
        let value = rows[y as usize];
        if value == u32::MAX {
            return Err(SpaceError::ConfidenceInsufficient { x, y });
        }
        let dx = self.dist0[x as usize];
        let dy = self.dist0[y as usize];
        let rule = (2 * dx + dy).min(2 * dy + dx) <= self.radius;
        let exit = value < (self.radius + 1 - dx) + (self.radius + 1 - dy);
        Ok(DistanceAnswer { value, exact: self.ball_convex || rule || exit })
    }

    /// All geodesics between x and y, when every geodesic provably stays in
    /// the explored ball (containment rule, or a convex model).
    pub fn geodesics_between(&self, x: u32, y: u32) -> Result<GeodesicDag, SpaceError> {
        let n = self.vertex_count() as u32;
        if x >= n {
            return Err(SpaceError::VertexNotInBall(x));
        }
        if y >= n {
            return Err(SpaceError::VertexNotInBall(y));
        }
        let dx0 = self.dist0[x as usize];
        let dy0 = self.dist0[y as usize];
        let rule = (2 * dx0 + dy0).min(2 * dy0 + dx0) <= self.radius;
        if !rule && !self.ball_convex {
            return Err(SpaceError::ConfidenceInsufficient { x, y });
        }
        let dx = self.bfs_rows(&[x], None);
        let dy = self.bfs_rows(&[y], None);
        let d = dx[y as usize];
        if d == u32::MAX {
            return Err(SpaceError::ConfidenceInsufficient { x, y });
        }
        let mut verts: Vec<u32> = (0..n)
            .filter(|&v| {
                dx[v as usize] != u32::MAX
                    && dy[v as usize] != u32::MAX
                    && dx[v as usize] + dy[v as usize] == d
            })
            .collect();
        verts.sort_by_key(|&v| (dx[v as usize], v));
        let pos: HashMap<u32, u32, FixedState> =
            verts.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect();
        let mut edges = Vec::new();
        for (i, &u) in verts.iter().enumerate() {
            for &v in self.neighbors(u) {
                if let Some(&j) = pos.get(&v) {
                    if dx[v as usize] == dx[u as usize] + 1 {
                        edges.push((i as u32, j));
                    }
                }
            }
        }
        edges.sort_unstable();
        // Path counts from the source by topological DP.
        let mut counts = vec![BigUint::from(0u32); verts.len()];
        counts[0] = BigUint::from(1u32);
        for &(i, j) in &edges {
            let add = counts[i as usize].clone();
            counts[j as usize] += add;
        }
        let count = counts[verts.len() - 1].clone();
        let dsrc = verts.iter().map(|&v| dx[v as usize]).collect();
        Ok(GeodesicDag { source: x, target: y, dist: d, verts, dsrc, edges, count })
    }

    /// Marked-orbit vertices with |dist0 - n| <= delta, sorted by id.
    pub fn annulus(&self, n: u32, delta: u32) -> Result<Vec<u32>, SpaceError> {
        if n + delta > self.radius {
            return Err(SpaceError::OutOfRadius { needed: n + delta, explored: self.radius });
        }
        let lo = n.saturating_sub(delta);
        let hi = n + delta;
        let mut out = Vec::new();
        for d in lo..=hi {
            for &v in self.layer(d) {
                if self.orbit[v as usize] {
                    out.push(v);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn sphere_count(&self, n: u32) -> u64 {
        self.layer(n).iter().filter(|&&v| self.orbit[v as usize]).count() as u64
    }

    pub fn ball_count(&self, n: u32) -> u64 {
        (0..=n).map(|d| self.sphere_count(d)).sum()
    }

    /// Annulus counts a_n for n + delta <= radius.
    pub fn growth_series(&self, delta: u32) -> GrowthSeries {
        let top = self.radius.saturating_sub(delta);
        let counts = (0..=top)
            .map(|n| {
                let lo = n.saturating_sub(delta);
                let hi = n + delta;
                (lo..=hi).map(|d| self.sphere_count(d)).sum()
            })
            .collect();
        GrowthSeries {
            delta,
            counts,
            label: format!("orbit annuli of {} (delta {})", self.space_label(), delta),
        }
    }

    pub fn space_label(&self) -> String {
        match &self.space {
            SpaceSpec::Cayley { group } => group.name.clone(),
            SpaceSpec::Cusped { group, .. } => format!("cusped {}", group.name),
            SpaceSpec::Quotient { normals, .. } => {
                format!("{} quotient ({} normals)", root_group_name(&self.space), normals.len())
            }
        }
    }

    /// Greedy maximal subset of `points` with pairwise distance > r, scanning
    /// in id order. Every excluded point is within r of a kept point.
    pub fn separated_net(&self, points: &[u32], r: u32) -> Result<Vec<u32>, SpaceError> {
        let word_metric_ok =
            self.wp.geodesic_nf() && !matches!(self.space, SpaceSpec::Cusped { .. });
        if !self.ball_convex && !word_metric_ok {
            return Err(SpaceError::InexactPair);
        }
        let mut pts: Vec<u32> = points.to_vec();
        pts.sort_unstable();
        pts.dedup();
        if r == 0 {
            return Ok(pts);
        }
        let mut kept: Vec<u32> = Vec::new();
        let mut near = vec![false; self.vertex_count()];
        for &p in &pts {
            // An in-ball BFS can only overestimate distances, so a hit within
            // r soundly excludes; for convex models a miss is exact too, and
            // otherwise the word metric decides.
            if near[p as usize] {
                continue;
            }
            if !self.ball_convex {
                let mut nearby = false;
                for &k in &kept {
                    let w = self.reps[p as usize].inverse().multiply(&self.reps[k as usize]);
                    if (self.wp.length(&w) as u32) <= r {
                        nearby = true;
                        break;
                    }
                }
                if nearby {
                    near[p as usize] = true;
                    continue;
                }
            }
            kept.push(p);
            // Mark everything within r of the newly kept point.
            let mut frontier = vec![p];
            near[p as usize] = true;
            for _ in 0..r {
                let mut next = Vec::new();
                for &u in &frontier {
                    for &v in self.neighbors(u) {
                        if !near[v as usize] {
                            near[v as usize] = true;
                            next.push(v);
                        }
                    }
                }
                frontier = next;
            }
        }
        Ok(kept)
    }

    /// Vertices lying on some geodesic from the basepoint of length `radius`
    /// (descending reachability from the outermost layer).
    fn full_geodesic_support(&self) -> Vec<bool> {
        let mut on = vec![false; self.vertex_count()];
        let top = self.explored_layers();
        for &v in self.layer(top) {
            on[v as usize] = true;
        }
        for d in (0..top).rev() {
            for &v in self.layer(d) {
                if self
                    .neighbors(v)
                    .iter()
                    .any(|&u| self.dist0[u as usize] == d + 1 && on[u as usize])
                {
                    on[v as usize] = true;
                }
            }
        }
        on
    }

    /// Least r such that some geodesic from the basepoint of length `radius`
    /// passes within r of x; 0 iff x lies on such a geodesic. The slack guard
    /// rejects answers a larger ball could still change.
    pub fn dead_end_depth(&self, x: u32, slack: u32) -> Result<u32, SpaceError> {
        if x as usize >= self.vertex_count() {
            return Err(SpaceError::VertexNotInBall(x));
        }
        let depths = self.dead_end_depths(slack);
        match depths[x as usize] {
            Some(d) => Ok(d),
            None => Err(SpaceError::InsufficientRadius {
                answer: u32::MAX,
                dist0: self.dist0[x as usize],
                slack,
            }),
        }
    }

    /// Depths for every vertex passing the slack guard (None where a larger
    /// ball could change the answer).
    pub fn dead_end_depths(&self, slack: u32) -> Vec<Option<u32>> {
        let support = self.full_geodesic_support();
        let sources: Vec<u32> =
            (0..self.vertex_count() as u32).filter(|&v| support[v as usize]).collect();
        let rows = self.bfs_rows(&sources, None);
        (0..self.vertex_count())
            .map(|i| {
                let d = rows[i];
                if d == u32::MAX || self.dist0[i] + d + slack > self.radius {
                    None
                } else {
                    Some(d)
                }
            })
            .collect()
    }

    // -- serialization ------------------------------------------------------

    /// Versioned binary layout: magic, version, digest, radius, vertex table,
    /// adjacency, layers. The caller owns the digest semantics.
    pub fn to_bytes(&self, digest: &[u8; 32]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        push_u32(&mut out, FORMAT_VERSION);
        out.extend_from_slice(digest);
        push_u32(&mut out, self.radius);
        push_u32(&mut out, self.vertex_count() as u32);
        for i in 0..self.vertex_count() {
            let w = &self.reps[i];
            push_u32(&mut out, w.len() as u32);
            for &l in w.letters() {
                out.push(l.0);
            }
            push_u32(&mut out, self.depth[i]);
            out.push(self.peri[i]);
            push_u32(&mut out, self.dist0[i]);
            out.push(self.orbit[i] as u8);
        }
        push_u32(&mut out, self.adj.len() as u32);
        for &o in &self.adj_off {
            push_u32(&mut out, o);
        }
        for &a in &self.adj {
            push_u32(&mut out, a);
        }
        push_u32(&mut out, self.layers.len() as u32);
        for l in &self.layers {
            push_u32(&mut out, l.len() as u32);
            for &v in l {
                push_u32(&mut out, v);
            }
        }
        out
    }

    /// Rebuilds a graph from to_bytes output; the word problem is
    /// reconstructed from the space description. Returns the stored digest
    /// for the caller to verify.
    pub fn from_bytes(
        space: &SpaceSpec,
        bytes: &[u8],
    ) -> Result<(SpaceGraph, [u8; 32]), SpaceError> {
        let mut c = Cursor { bytes, at: 0 };
        let magic = c.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(SpaceError::Corrupt("bad magic".into()));
        }
        let version = c.u32()?;
        if version != FORMAT_VERSION {
            return Err(SpaceError::Corrupt(format!("unsupported version {}", version)));
        }
        let mut digest = [0u8; 32];
        digest.copy_from_slice(c.take(32)?);
        let radius = c.u32()?;
        let n = c.u32()? as usize;
        let mut reps = Vec::with_capacity(n);
        let mut depth = Vec::with_capacity(n);
        let mut peri = Vec::with_capacity(n);
        let mut dist0 = Vec::with_capacity(n);
        let mut orbit = Vec::with_capacity(n);
        for _ in 0..n {
            let len = c.u32()? as usize;
            let ls = c.take(len)?;
            reps.push(Word(ls.iter().map(|&b| Letter(b)).collect()));
            depth.push(c.u32()?);
            peri.push(c.byte()?);
            dist0.push(c.u32()?);
            orbit.push(c.byte()? != 0);
        }
        let m = c.u32()? as usize;
        let mut adj_off = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            adj_off.push(c.u32()?);
        }
        let mut adj = Vec::with_capacity(m);
        for _ in 0..m {
            adj.push(c.u32()?);
        }
        let nl = c.u32()? as usize;
        let mut layers = Vec::with_capacity(nl);
        for _ in 0..nl {
            let ll = c.u32()? as usize;
            let mut layer = Vec::with_capacity(ll);
            for _ in 0..ll {
                layer.push(c.u32()?);
            }
            layers.push(layer);
        }
        if !c.done() {
            return Err(SpaceError::Corrupt("trailing bytes".into()));
        }
        let group = effective_group(space);
        let wp = WordProblem::new(&group);
        let ball_convex = !matches!(space, SpaceSpec::Cusped { .. }) && classify_ball_convex(&wp);
        let mut index: HashMap<VKey, u32, FixedState> = HashMap::default();
        for i in 0..n {
            index.insert(VKey { word: reps[i].clone(), depth: depth[i], peri: peri[i] }, i as u32);
        }
        Ok((
            SpaceGraph {
                space: space.clone(),
                radius,
                reps,
                depth,
                peri,
                dist0,
                orbit,
                layers,
                adj_off,
                adj,
                index,
                wp,
                ball_convex,
            },
            digest,
        ))
    }
}

const MAGIC: &[u8] = b"GLBC";
const FORMAT_VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SpaceError> {
        if self.at + n > self.bytes.len() {
            return Err(SpaceError::Corrupt("truncated".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn byte(&mut self) -> Result<u8, SpaceError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, SpaceError> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}
