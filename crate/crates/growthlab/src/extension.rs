//! Extension machinery built on a calibrated triple of independent
//! contracting elements: connector selection, extension maps, large free
//! sub-semigroups, barrier detection, barrier-free and concave-region
//! enumeration, and free-product combination certificates.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracting::{
    build_projection_table, build_projection_table_with, check_admissible, estimate_contraction,
    fellow_travel_check,
    independence_test_in, is_contracting_element_in, proj_diameter_with, AdmissiblePath,
    AxisApproximation, CertificateStatus, ContractingCertificate, ContractingError,
    IndependenceVerdict, PathSegment, ProjectionTable, ScanOptions, XSet,
};
use crate::growth::{count_series, critical_exponent, GrowthError};
use crate::space::{GrowthSeries, SpaceError, SpaceGraph};
use crate::word::Word;
use crate::wordproblem::WpError;

#[derive(Debug, Error)]
pub enum ExtensionError {
    #[error("no contracting triple: generator `{gen}` {reason}")]
    NoContractingTriple { gen: String, reason: String },
    #[error("generators {i} and {j} are commensurable: h{i}^{p} = h{j}^{q}")]
    NotIndependent { i: usize, j: usize, p: i64, q: i64 },
    #[error("no axis accepts the pair at tau: projections {projections:?}")]
    NoConnector { projections: [u32; 3] },
    #[error("selection kept {kept} of {z} elements, below the 1/16 bound {need}")]
    SelectionTooSmall { kept: usize, z: usize, need: usize },
    #[error("input set is empty")]
    EmptySet,
    #[error("ball radius {radius} too small: the construction needs {needed}")]
    RadiusInsufficient { needed: u32, radius: u32 },
    #[error("target exponent {target} is not below the ambient estimate {ambient}")]
    TargetTooHigh { target: f64, ambient: f64 },
    #[error("concave window has M1 = {m1} > M2 = {m2}")]
    InvalidWindow { m1: u32, m2: u32 },
    #[error("subgroups intersect nontrivially: witness `{witness}`")]
    NontrivialIntersection { witness: String },
    #[error("projection diameter {observed} reaches the unbounded bar {bound}")]
    UnboundedProjection { observed: u32, bound: u32 },
    #[error("first subgroup orbit is not contracting (observed diameter {observed})")]
    NotContracting { observed: u32 },
    #[error("free-semigroup words collide: `{left}` = `{right}`")]
    FreenessViolated { left: String, right: String },
    #[error("geodesic is broken at step {0}")]
    BrokenGeodesic(usize),
    #[error("path enumeration budget {0} exhausted")]
    Budget(u64),
    #[error("system was calibrated on {expected}, ball is {got}")]
    BallMismatch { expected: String, got: String },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Contracting(#[from] ContractingError),
    #[error(transparent)]
    Wp(#[from] WpError),
    #[error(transparent)]
    Growth(#[from] GrowthError),
}

// ---------------------------------------------------------------------------
// Calibrated systems

/// Measured calibration constants, emitted as a JSON sidecar so experiments
/// can be reproduced from config alone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub space: String,
    pub radius: u32,
    pub generators: [String; 3],
    pub connector_power: i64,
    pub d_param: u32,
    pub tau: u32,
    pub epsilon0: u32,
    pub seed: u64,
    pub training_pairs: usize,
}

/// Three pairwise independent contracting elements with their measured
/// constants. Immutable after calibration; all operations take the same ball
/// the system was calibrated on.
pub struct ContractingSystem {
    pub h: [Word; 3],
    pub axes: [AxisApproximation; 3],
    /// Verdicts for the pairs (0,1), (0,2), (1,2).
    pub independence: [IndependenceVerdict; 3],
    pub certificates: [ContractingCertificate; 3],
    /// Connector power N: d(o, h_i^N o) and d(o, h_i^2N o) both exceed D.
    pub connector_power: i64,
    /// Normal forms of h_i^N.
    pub connectors: [Word; 3],
    pub epsilon0: u32,
    pub tau: u32,
    pub d_param: u32,
    pub seed: u64,
    pub record: CalibrationRecord,
    tables: [ProjectionTable; 3],
    space: String,
    radius: u32,
}

impl ContractingSystem {
    fn check_ball(&self, ball: &SpaceGraph) -> Result<(), ExtensionError> {
        let got = ball.space_label();
        if got != self.space || ball.radius() != self.radius {
            return Err(ExtensionError::BallMismatch {
                expected: format!("{} radius {}", self.space, self.radius),
                got: format!("{} radius {}", got, ball.radius()),
            });
        }
        Ok(())
    }
}

/// Canonical geodesic from the origin to `v`: descend along dist0 taking the
/// smallest-id neighbor each step. Returned origin-first, `v` last.
pub fn canonical_ray(ball: &SpaceGraph, v: u32) -> Vec<u32> {
    let mut path = vec![v];
    let mut cur = v;
    while ball.dist0(cur) > 0 {
        let d = ball.dist0(cur);
        let mut best = u32::MAX;
        for &u in ball.neighbors(cur) {
            if ball.dist0(u) + 1 == d && u < best {
                best = u;
            }
        }
        debug_assert!(best != u32::MAX, "ball layers connect to the origin");
        path.push(best);
        cur = best;
    }
    path.reverse();
    path
}

/// Vertices of `prefix * [o, w o]` when they all lie in the ball.
fn translate_leg(ball: &SpaceGraph, prefix: &Word, leg: &[u32]) -> Option<Vec<u32>> {
    leg.iter()
        .map(|&r| ball.orbit_vertex(&prefix.multiply(ball.rep(r))))
        .collect()
}

/// Projection diameter of an origin-anchored ray, trimmed to the table's
/// trust region. Rays start on the system axes, and the untrusted part of
/// a ray is a tail that only recedes from the set, so its projection is
/// frozen at the last trusted vertex and the trim loses nothing.
fn proj_diam_of(
    ball: &SpaceGraph,
    table: &ProjectionTable,
    verts: &[u32],
) -> Result<u32, ExtensionError> {
    let trusted: Vec<u32> = verts
        .iter()
        .copied()
        .take_while(|&v| table.included[v as usize])
        .collect();
    if trusted.is_empty() && !verts.is_empty() {
        let radius = ball.radius();
        return Err(ExtensionError::RadiusInsufficient { needed: radius + 1, radius });
    }
    Ok(proj_diameter_with(ball, table, &trusted, &[])?)
}

/// Builds and measures a contracting system from three candidate generators.
///
/// Order of checks: each generator must individually be contracting, the
/// three must be pairwise independent, and then tau, D, N, epsilon0 are
/// measured on a seeded training set.
pub fn calibrate(
    ball: &SpaceGraph,
    gens: &[Word; 3],
    seed: u64,
) -> Result<ContractingSystem, ExtensionError> {
    let wp = ball.wp();
    let al = &ball.space().group().alphabet;
    let opts = ScanOptions::default();
    let mut certs = Vec::new();
    for h in gens.iter() {
        let cert = match is_contracting_element_in(ball, h, &opts) {
            Ok(c) => c,
            Err(ContractingError::TrivialElement) => {
                return Err(ExtensionError::NoContractingTriple {
                    gen: al.print_word(h),
                    reason: "is trivial".to_string(),
                })
            }
            Err(ContractingError::FiniteOrder) => {
                return Err(ExtensionError::NoContractingTriple {
                    gen: al.print_word(h),
                    reason: "has finite order".to_string(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        if cert.status == CertificateStatus::Refuted {
            return Err(ExtensionError::NoContractingTriple {
                gen: al.print_word(h),
                reason: "is not contracting here".to_string(),
            });
        }
        certs.push(cert);
    }
    let mut indep = Vec::new();
    for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
        match independence_test_in(ball, &gens[i], &gens[j])? {
            IndependenceVerdict::Commensurable { p, q } => {
                return Err(ExtensionError::NotIndependent { i, j, p, q })
            }
            v => indep.push(v),
        }
    }
    let axes = [
        crate::contracting::axis_in_ball(ball, &gens[0])?,
        crate::contracting::axis_in_ball(ball, &gens[1])?,
        crate::contracting::axis_in_ball(ball, &gens[2])?,
    ];
    // Projection targets are the swept axes (powers of h plus the geodesic
    // vertices between them), matching what the paths actually hug.
    let tables = [
        build_projection_table_with(ball, &XSet::saturated_axis(ball, &gens[0])?, true)?,
        build_projection_table_with(ball, &XSet::saturated_axis(ball, &gens[1])?, true)?,
        build_projection_table_with(ball, &XSet::saturated_axis(ball, &gens[2])?, true)?,
    ];

    // Training orbit: seeded sample within radius/3 so full g-f-h paths
    // stay inside the ball, taken with their inverses.
    let radius = ball.radius();
    let cap = (radius / 3).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<u32> = (1..=cap)
        .flat_map(|d| ball.layer(d).to_vec())
        .filter(|&v| ball.in_orbit(v))
        .collect();
    pool.shuffle(&mut rng);
    let train: Vec<u32> = pool.into_iter().take(24).collect();
    if train.len() < 4 {
        return Err(ExtensionError::RadiusInsufficient { needed: 6, radius });
    }

    // tau: every training word must project small onto some axis, so the
    // max of the per-word minimum plus one leaves each word at least one
    // usable connector direction.
    let mut tau_raw = 0u32;
    let mut words: Vec<Word> = Vec::new();
    for &v in &train {
        words.push(ball.rep(v).clone());
        words.push(ball.rep(v).inverse());
    }
    for w in &words {
        let Some(v) = ball.orbit_vertex(w) else { continue };
        let ray = canonical_ray(ball, v);
        let mut diams = [0u32; 3];
        for k in 0..3 {
            diams[k] = proj_diam_of(ball, &tables[k], &ray)?;
        }
        tau_raw = tau_raw.max(*diams.iter().min().unwrap());
    }
    let tau = tau_raw + 1;

    // D and N: the smallest D whose connector power passes the suite. Two
    // halves: extended products over every ordered pair of pooled words
    // must never be trivial (word-problem check, no ball bound), and every
    // pair whose full g-f-h path fits the ball must pass admissibility and
    // fellow-travel quality. A short connector fails the first half through
    // collapse pairs like (x a^-1, a^-1 x^-1) swallowing it whole.
    let mut uniq_words: Vec<Word> = Vec::new();
    {
        // The full depth-2 shell joins the sampled words so the collapsing
        // pairs are present at every radius, not only when the draw finds
        // them.
        let shallow: Vec<Word> = (1..=2u32)
            .flat_map(|d| ball.layer(d).to_vec())
            .filter(|&v| ball.in_orbit(v))
            .flat_map(|v| [ball.rep(v).clone(), ball.rep(v).inverse()])
            .collect();
        let mut seen = HashSet::new();
        for w in words.iter().chain(shallow.iter()) {
            if seen.insert(al.print_word(&wp.normal_form(w).word)) {
                uniq_words.push(w.clone());
            }
        }
    }
    let eps_cap = (radius / 3).max(2);
    let pairs: Vec<(u32, u32)> = train
        .chunks(2)
        .filter(|c| c.len() == 2)
        .map(|c| (c[0], c[1]))
        .collect();
    let mut chosen: Option<(u32, i64, [Word; 3], u32)> = None;
    'dsearch: for d in 1..=cap {
        let mut power = None;
        for np in 1..=(4 * radius as i64) {
            if (0..3).all(|i| wp.length(&gens[i].pow(np)) as u32 > d) {
                power = Some(np);
                break;
            }
        }
        let Some(np) = power else { break };
        let conns = [
            wp.normal_form(&gens[0].pow(np)).word,
            wp.normal_form(&gens[1].pow(np)).word,
            wp.normal_form(&gens[2].pow(np)).word,
        ];
        for g in &uniq_words {
            for h in &uniq_words {
                let Some(pick) = connector_for(ball, &tables, tau, g, h)? else {
                    continue 'dsearch;
                };
                let product = g.multiply(&conns[pick]).multiply(h);
                if wp.is_identity(&product)? {
                    continue 'dsearch;
                }
            }
        }
        let mut eps_seen = 0u32;
        let mut fitted = 0usize;
        for &(gv, hv) in &pairs {
            let g = ball.rep(gv).clone();
            let h = ball.rep(hv).clone();
            let Some(pick) = connector_for(ball, &tables, tau, &g, &h)? else {
                continue 'dsearch;
            };
            let path = match single_segment_path(ball, &g, &conns[pick], pick, gens, &certs, &h)
            {
                Some(p) => p,
                None => continue,
            };
            let verdict = fellow_travel_check(ball, &path, d, tau)?;
            let quality = verdict.pass
                && verdict.quasi_constant.map_or(false, |q| q <= 8.0)
                && verdict.epsilon.map_or(false, |e| e <= eps_cap);
            if !quality {
                continue 'dsearch;
            }
            fitted += 1;
            eps_seen = eps_seen.max(verdict.epsilon.unwrap_or(0));
        }
        if fitted == 0 {
            continue;
        }
        chosen = Some((d, np, conns, eps_seen));
        break;
    }
    let Some((d_param, connector_power, connectors, eps_seen)) = chosen else {
        return Err(ExtensionError::RadiusInsufficient { needed: cap + 1, radius });
    };
    let epsilon0 = eps_seen.max(1);

    let record = CalibrationRecord {
        space: ball.space_label(),
        radius,
        generators: [
            al.print_word(&gens[0]),
            al.print_word(&gens[1]),
            al.print_word(&gens[2]),
        ],
        connector_power,
        d_param,
        tau,
        epsilon0,
        seed,
        training_pairs: pairs.len(),
    };
    let certificates: [ContractingCertificate; 3] =
        [certs[0].clone(), certs[1].clone(), certs[2].clone()];
    let independence: [IndependenceVerdict; 3] =
        [indep[0].clone(), indep[1].clone(), indep[2].clone()];
    Ok(ContractingSystem {
        h: gens.clone(),
        axes,
        independence,
        certificates,
        connector_power,
        connectors,
        epsilon0,
        tau,
        d_param,
        seed,
        record,
        tables,
        space: ball.space_label(),
        radius,
    })
}

/// g-f-h as a one-segment admissible path: lead-in up to g, the connector
/// leg as the segment on the translated axis, and the h-leg trailing.
fn single_segment_path(
    ball: &SpaceGraph,
    g: &Word,
    f: &Word,
    axis: usize,
    gens: &[Word; 3],
    certs: &[ContractingCertificate],
    h: &Word,
) -> Option<AdmissiblePath> {
    let vg = ball.orbit_vertex(g)?;
    let lead_in = canonical_ray(ball, vg);
    let vf = ball.orbit_vertex(f)?;
    let f_ray = canonical_ray(ball, vf);
    let seg_verts = translate_leg(ball, g, &f_ray)?;
    let gf = ball.wp().normal_form(&g.multiply(f)).word;
    let vh = ball.orbit_vertex(h)?;
    let h_ray = canonical_ray(ball, vh);
    let tail = translate_leg(ball, &gf, &h_ray)?;
    // Translates of a contracting set contract with the same constant, so
    // the base-axis certificate transfers to the shifted segment.
    let seg = PathSegment {
        verts: seg_verts,
        set: XSet::translated_saturated_axis(ball, g, &gens[axis]).ok()?,
        certificate: Some(certs[axis].clone()),
    };
    Some(AdmissiblePath { lead_in, segments: vec![seg], connectors: vec![tail] })
}

// ---------------------------------------------------------------------------
// Connector selection

#[derive(Clone, Debug)]
pub struct ConnectorChoice {
    /// Which of the three axes accepted the pair.
    pub index: usize,
    /// The connector word h_index^N.
    pub word: Word,
    /// Both inputs were the identity, so the choice fell back to axis 0.
    pub flagged_default: bool,
    /// Per-axis max of the two leg projections, measured.
    pub projections: [u32; 3],
}

fn connector_for(
    ball: &SpaceGraph,
    tables: &[ProjectionTable; 3],
    tau: u32,
    g: &Word,
    h: &Word,
) -> Result<Option<usize>, ExtensionError> {
    let radius = ball.radius();
    let vg = ball
        .orbit_vertex(&g.inverse())
        .ok_or(ExtensionError::RadiusInsufficient { needed: radius + 1, radius })?;
    let vh = ball
        .orbit_vertex(h)
        .ok_or(ExtensionError::RadiusInsufficient { needed: radius + 1, radius })?;
    let in_ray = canonical_ray(ball, vg);
    let out_ray = canonical_ray(ball, vh);
    for k in 0..3 {
        let pin = proj_diam_of(ball, &tables[k], &in_ray)?;
        let pout = proj_diam_of(ball, &tables[k], &out_ray)?;
        if pin <= tau && pout <= tau {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Picks the connector for the junction g|h: the first axis onto which both
/// the incoming geodesic [o, g^-1 o] and the outgoing [o, h o] project
/// within tau. Pure in (g, h) given the system.
pub fn choose_connector(
    sys: &ContractingSystem,
    ball: &SpaceGraph,
    g: &Word,
    h: &Word,
) -> Result<ConnectorChoice, ExtensionError> {
    sys.check_ball(ball)?;
    let wp = ball.wp();
    if wp.is_identity(g)? && wp.is_identity(h)? {
        // Neither side constrains the choice; take axis 0 and say so.
        return Ok(ConnectorChoice {
            index: 0,
            word: sys.connectors[0].clone(),
            flagged_default: true,
            projections: [0, 0, 0],
        });
    }
    let radius = ball.radius();
    let vg = ball
        .orbit_vertex(&g.inverse())
        .ok_or(ExtensionError::RadiusInsufficient { needed: radius + 1, radius })?;
    let vh = ball
        .orbit_vertex(h)
        .ok_or(ExtensionError::RadiusInsufficient { needed: radius + 1, radius })?;
    let in_ray = canonical_ray(ball, vg);
    let out_ray = canonical_ray(ball, vh);
    let mut projections = [0u32; 3];
    let mut pick = None;
    for k in 0..3 {
        let pin = proj_diam_of(ball, &sys.tables[k], &in_ray)?;
        let pout = proj_diam_of(ball, &sys.tables[k], &out_ray)?;
        projections[k] = pin.max(pout);
        if pick.is_none() && pin <= sys.tau && pout <= sys.tau {
            pick = Some(k);
        }
    }
    match pick {
        Some(index) => Ok(ConnectorChoice {
            index,
            word: sys.connectors[index].clone(),
            flagged_default: false,
            projections,
        }),
        None => Err(ExtensionError::NoConnector { projections }),
    }
}

// ---------------------------------------------------------------------------
// Extension maps

#[derive(Clone, Debug)]
pub struct ExtensionResult {
    /// Normal form of a_1 f_1 a_2 f_2 ... a_n.
    pub element: Word,
    /// The labeled path when every leg vertex lies inside the ball; single
    /// letters have no connector structure and carry no path.
    pub path: Option<AdmissiblePath>,
    /// Axis index per junction.
    pub connectors_used: Vec<usize>,
    /// Max distance from a path vertex to the canonical geodesic between
    /// the endpoints, when the path exists.
    pub max_offset: Option<u32>,
}

/// Inserts connectors between consecutive letters: W = (a_1, ..., a_n) maps
/// to a_1 f_1 a_2 f_2 ... f_{n-1} a_n with f_i chosen per junction.
pub fn extension_map(
    sys: &ContractingSystem,
    ball: &SpaceGraph,
    letters: &[Word],
) -> Result<ExtensionResult, ExtensionError> {
    sys.check_ball(ball)?;
    if letters.is_empty() {
        return Err(ExtensionError::EmptySet);
    }
    let wp = ball.wp();
    if letters.len() == 1 {
        return Ok(ExtensionResult {
            element: wp.normal_form(&letters[0]).word,
            path: None,
            connectors_used: Vec::new(),
            max_offset: None,
        });
    }
    let mut connectors_used = Vec::new();
    for pair in letters.windows(2) {
        connectors_used.push(choose_connector(sys, ball, &pair[0], &pair[1])?.index);
    }
    let mut product = letters[0].clone();
    let mut prefixes = Vec::new();
    for (i, k) in connectors_used.iter().enumerate() {
        prefixes.push(wp.normal_form(&product).word);
        product = product.multiply(&sys.connectors[*k]).multiply(&letters[i + 1]);
    }
    let element = wp.normal_form(&product).word;

    // Path legs, all translated from canonical origin rays; any vertex
    // outside the ball downgrades the result to element-only.
    let path = build_extension_path(sys, ball, letters, &connectors_used, &prefixes);
    let max_offset = match &path {
        Some(p) => {
            let target = ball.orbit_vertex(&element);
            target.map(|t| {
                let geo = canonical_ray(ball, t);
                let rows = ball.bfs_rows(&geo, None);
                p.trace().iter().map(|&v| rows[v as usize]).max().unwrap_or(0)
            })
        }
        None => None,
    };
    Ok(ExtensionResult { element, path, connectors_used, max_offset })
}

fn build_extension_path(
    sys: &ContractingSystem,
    ball: &SpaceGraph,
    letters: &[Word],
    picks: &[usize],
    prefixes: &[Word],
) -> Option<AdmissiblePath> {
    let wp = ball.wp();
    let v1 = ball.orbit_vertex(&letters[0])?;
    let lead_in = canonical_ray(ball, v1);
    let mut segments = Vec::new();
    let mut connectors = Vec::new();
    for (j, &k) in picks.iter().enumerate() {
        let prefix = &prefixes[j];
        let vf = ball.orbit_vertex(&sys.connectors[k])?;
        let f_ray = canonical_ray(ball, vf);
        let seg_verts = translate_leg(ball, prefix, &f_ray)?;
        segments.push(PathSegment {
            verts: seg_verts,
            set: XSet::shifted_axis(prefix, &sys.h[k]),
            certificate: Some(sys.certificates[k].clone()),
        });
        let after = wp.normal_form(&prefix.multiply(&sys.connectors[k])).word;
        let va = ball.orbit_vertex(&letters[j + 1])?;
        let a_ray = canonical_ray(ball, va);
        connectors.push(translate_leg(ball, &after, &a_ray)?);
    }
    Some(AdmissiblePath { lead_in, segments, connectors })
}

// ---------------------------------------------------------------------------
// Large semigroup selection

#[derive(Clone, Debug)]
pub struct Selection {
    /// The shared axis that accepted every kept element on both sides.
    pub axis: usize,
    pub connector: Word,
    /// Kept subset of the input net, ascending vertex ids.
    pub members: Vec<u32>,
    pub z_size: usize,
    /// Members removed by the admissibility verification.
    pub dropped: usize,
}

/// Two-sided filtering of an R-separated set: keeps the largest bucket of
/// elements whose [o, go] and [o, g^-1 o] both project within tau onto one
/// shared axis, then verifies the a f and a f^2 paths.
pub fn large_semigroup_select(
    sys: &ContractingSystem,
    ball: &SpaceGraph,
    z: &[u32],
) -> Result<Selection, ExtensionError> {
    sys.check_ball(ball)?;
    if z.is_empty() {
        return Err(ExtensionError::EmptySet);
    }
    let mut buckets: [Vec<u32>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for &v in z {
        let fwd = canonical_ray(ball, v);
        let g = ball.rep(v).clone();
        let Some(vi) = ball.orbit_vertex(&g.inverse()) else { continue };
        let bwd = canonical_ray(ball, vi);
        for k in 0..3 {
            let pf = proj_diam_of(ball, &sys.tables[k], &fwd)?;
            let pb = proj_diam_of(ball, &sys.tables[k], &bwd)?;
            if pf <= sys.tau && pb <= sys.tau {
                buckets[k].push(v);
            }
        }
    }
    let axis = (0..3).max_by_key(|&k| (buckets[k].len(), 2 - k)).unwrap_or(0);
    let need = z.len().div_ceil(16);
    let members = buckets[axis].clone();
    let connector = sys.connectors[axis].clone();
    let dropped = z.len() - members.len();
    if members.len() < need {
        return Err(ExtensionError::SelectionTooSmall {
            kept: members.len(),
            z: z.len(),
            need,
        });
    }
    Ok(Selection { axis, connector, members, z_size: z.len(), dropped })
}

/// a-then-f as lead-in plus one axis segment (no trailing leg).
fn single_segment_path_nohead(
    ball: &SpaceGraph,
    g: &Word,
    f: &Word,
    axis: usize,
    gens: &[Word; 3],
    certs: &[ContractingCertificate; 3],
) -> Option<AdmissiblePath> {
    let vg = ball.orbit_vertex(g)?;
    let lead_in = canonical_ray(ball, vg);
    let vf = ball.orbit_vertex(f)?;
    let f_ray = canonical_ray(ball, vf);
    let seg_verts = translate_leg(ball, g, &f_ray)?;
    let seg = PathSegment {
        verts: seg_verts,
        set: XSet::shifted_axis(g, &gens[axis]),
        certificate: Some(certs[axis].clone()),
    };
    Some(AdmissiblePath { lead_in, segments: vec![seg], connectors: Vec::new() })
}

// ---------------------------------------------------------------------------
// Free sub-semigroups

#[derive(Debug)]
pub struct SemigroupBundle {
    /// Alphabet A as elements of the annulus.
    pub alphabet: Vec<Word>,
    pub connector: Word,
    pub axis: usize,
    /// S = A . f, normal forms.
    pub generators: Vec<Word>,
    pub k_omega: u32,
    pub delta: u32,
    pub r_sep: u32,
    /// Measured net density #Z / #X.
    pub theta: f64,
    pub z_size: usize,
    pub x_size: usize,
    /// Growth rate of the free semigroup on S from the length functional
    /// sum exp(-w l_s) = 1.
    pub omega_hat: f64,
    /// Products counted inside the ambient ball.
    pub series: GrowthSeries,
    pub checked_words: usize,
    /// Freeness verified exhaustively up to this formal length.
    pub checked_len: usize,
    /// Max fellow-travel constant over the depth-1 branches.
    pub branch_epsilon: u32,
}

const FREENESS_BUDGET: usize = 200000;

fn solve_length_functional(lengths: &[u32]) -> f64 {
    if lengths.len() <= 1 {
        return 0.0;
    }
    let eval = |w: f64| -> f64 { lengths.iter().map(|&l| (-w * l as f64).exp()).sum() };
    let mut lo = 0.0f64;
    let mut hi = 4.0f64;
    while eval(hi) > 1.0 {
        hi *= 2.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if eval(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Builds a free sub-semigroup with growth above `omega_target`: scans the
/// annulus level k upward, nets it at R = 2(2 eps0 + delta), runs the
/// two-sided selection, and accepts the first level whose measured rate
/// clears the target.
pub fn build_free_semigroup(
    sys: &ContractingSystem,
    ball: &SpaceGraph,
    omega_target: f64,
    delta: u32,
) -> Result<SemigroupBundle, ExtensionError> {
    sys.check_ball(ball)?;
    let wp = ball.wp();
    let ambient = critical_exponent(&ball.growth_series(delta))?;
    if omega_target >= ambient.window {
        return Err(ExtensionError::TargetTooHigh {
            target: omega_target,
            ambient: ambient.window,
        });
    }
    let r_sep = 2 * (2 * sys.epsilon0 + delta);
    let radius = ball.radius();
    let k_min = (2 * sys.epsilon0 + 1).max(5);
    let mut last_err = ExtensionError::RadiusInsufficient { needed: k_min + delta, radius };
    for k in k_min..=radius.saturating_sub(delta) {
        let x = ball.annulus(k, delta)?;
        if x.is_empty() {
            continue;
        }
        let z = ball.separated_net(&x, r_sep)?;
        let theta = z.len() as f64 / x.len() as f64;
        // Level bookkeeping: delta_rate >= ((k+D)w - 2^-k theta)/k >= w and
        // the annulus must outnumber exp(k delta_rate).
        let frac =
            ((k + delta) as f64 * omega_target - 2f64.powi(-(k as i32)) * theta) / k as f64;
        let delta_rate = frac.max(omega_target);
        if (x.len() as f64) <= (k as f64 * delta_rate).exp() {
            continue;
        }
        let sel = match large_semigroup_select(sys, ball, &z) {
            Ok(s) => s,
            Err(e @ ExtensionError::SelectionTooSmall { .. }) => {
                last_err = e;
                continue;
            }
            Err(e) => return Err(e),
        };
        let alphabet: Vec<Word> = sel.members.iter().map(|&v| ball.rep(v).clone()).collect();
        let generators: Vec<Word> = alphabet
            .iter()
            .map(|a| wp.normal_form(&a.multiply(&sel.connector)).word)
            .collect();
        let lengths: Vec<u32> = generators.iter().map(|s| wp.length(s) as u32).collect();
        let omega_hat = solve_length_functional(&lengths);
        if omega_hat <= omega_target {
            continue;
        }

        // Branch quality: each depth-1 branch must fellow-travel within the
        // calibrated constant.
        let mut branch_epsilon = 0;
        for a in &alphabet {
            let path = single_segment_path_nohead(
                ball,
                a,
                &sel.connector,
                sel.axis,
                &sys.h,
                &sys.certificates,
            )
            .ok_or(ExtensionError::RadiusInsufficient { needed: k + delta, radius })?;
            let verdict = fellow_travel_check(ball, &path, sys.d_param, sys.tau)?;
            if !verdict.pass {
                return Err(ExtensionError::RadiusInsufficient { needed: k + delta, radius });
            }
            branch_epsilon = branch_epsilon.max(verdict.epsilon.unwrap_or(0));
        }

        let (checked_words, checked_len, product_verts) =
            verify_freeness(ball, &generators, wp)?;
        let series = count_series(ball, delta, "semigroup products", |_, v| {
            product_verts.contains(&v)
        })?;
        return Ok(SemigroupBundle {
            alphabet,
            connector: sel.connector,
            axis: sel.axis,
            generators,
            k_omega: k,
            delta,
            r_sep,
            theta,
            z_size: sel.z_size,
            x_size: x.len(),
            omega_hat,
            series,
            checked_words,
            checked_len,
            branch_epsilon,
        });
    }
    Err(last_err)
}

/// Exhaustive injectivity of formal S-words up to the deepest length whose
/// word count fits the budget; collisions are an error, not a downgrade.
fn verify_freeness(
    ball: &SpaceGraph,
    generators: &[Word],
    wp: &crate::wordproblem::WordProblem,
) -> Result<(usize, usize, HashSet<u32>), ExtensionError> {
    let m = generators.len();
    let mut depth = 1usize;
    let mut total = m;
    while depth < 4 {
        let next = total + m.pow(depth as u32 + 1);
        if next > FREENESS_BUDGET {
            break;
        }
        total = next;
        depth += 1;
    }
    let mut seen: HashMap<String, String> = HashMap::new();
    let mut verts = HashSet::new();
    let mut stack: Vec<(Word, Vec<usize>)> = vec![(Word::id(), Vec::new())];
    let mut checked = 0usize;
    while let Some((w, formal)) = stack.pop() {
        if !formal.is_empty() {
            checked += 1;
            let nf = wp.normal_form(&w).word;
            let key = nf_key(&nf);
            let desc = format_formal(&formal);
            if let Some(prev) = seen.get(&key) {
                return Err(ExtensionError::FreenessViolated {
                    left: prev.clone(),
                    right: desc,
                });
            }
            seen.insert(key, desc);
            if let Some(v) = ball.orbit_vertex(&nf) {
                verts.insert(v);
            }
        }
        if formal.len() < depth {
            for (i, s) in generators.iter().enumerate() {
                let mut ext = formal.clone();
                ext.push(i);
                stack.push((w.multiply(s), ext));
            }
        }
    }
    Ok((checked, depth, verts))
}

fn nf_key(w: &Word) -> String {
    w.letters().iter().map(|l| l.0 as char).collect()
}

fn format_formal(ix: &[usize]) -> String {
    let parts: Vec<String> = ix.iter().map(|i| format!("s{}", i)).collect();
    parts.join(" ")
}

// ---------------------------------------------------------------------------
// Barriers

#[derive(Clone, Debug)]
pub struct BarrierWitness {
    pub t: Word,
    pub f: Word,
    /// Realized distance from t o to the geodesic.
    pub dist_t: u32,
    /// Realized distance from t f o to the geodesic.
    pub dist_tf: u32,
}

/// Searches the eps-neighborhood of an oriented geodesic for a barrier:
/// t o lands within eps at some index i and t f o within eps at some j >= i.
/// Candidates run in ascending vertex id, so the witness is deterministic.
pub fn detect_barrier(
    ball: &SpaceGraph,
    gamma: &[u32],
    eps: u32,
    f: &Word,
) -> Result<Option<BarrierWitness>, ExtensionError> {
    if gamma.is_empty() {
        return Err(ExtensionError::EmptySet);
    }
    for (i, pair) in gamma.windows(2).enumerate() {
        if !ball.neighbors(pair[0]).contains(&pair[1]) {
            return Err(ExtensionError::BrokenGeodesic(i));
        }
    }
    let radius = ball.radius();
    let top = gamma.iter().map(|&v| ball.dist0(v)).max().unwrap_or(0);
    if top + 2 * eps > radius {
        return Err(ExtensionError::RadiusInsufficient { needed: top + 2 * eps, radius });
    }
    let rows = ball.bfs_rows(gamma, None);
    // First and last gamma index within eps, per ball vertex.
    let n = ball.vertex_count();
    let mut minpos = vec![u32::MAX; n];
    let mut maxpos = vec![u32::MAX; n];
    for (i, &gv) in gamma.iter().enumerate() {
        let ri = ball.bfs_rows(&[gv], None);
        for v in 0..n {
            if ri[v] <= eps {
                if minpos[v] == u32::MAX {
                    minpos[v] = i as u32;
                }
                maxpos[v] = i as u32;
            }
        }
    }
    for t in 0..n as u32 {
        if !ball.in_orbit(t) || rows[t as usize] > eps {
            continue;
        }
        // Pre: top + 2 eps <= radius, so an off-ball t f o is genuinely
        // farther than eps from the geodesic and the skip is exact.
        let tf = ball.rep(t).multiply(f);
        let Some(v) = ball.orbit_vertex(&tf) else { continue };
        if rows[v as usize] > eps {
            continue;
        }
        if minpos[t as usize] <= maxpos[v as usize] && maxpos[v as usize] != u32::MAX {
            return Ok(Some(BarrierWitness {
                t: ball.rep(t).clone(),
                f: f.clone(),
                dist_t: rows[t as usize],
                dist_tf: rows[v as usize],
            }));
        }
    }
    Ok(None)
}

#[derive(Debug)]
pub struct BarrierFreeReport {
    pub eps: u32,
    pub m: u32,
    pub f: Word,
    /// Barrier-free orbit vertices with dist0 <= n + delta, ascending.
    pub members: Vec<u32>,
    pub series: GrowthSeries,
}

const PATH_BUDGET: u64 = 4096;

/// Elements admitting some barrier-free geodesic between B(o, M) and
/// B(g o, M). The eps = 0, M = 0 case with a short barrier word runs as a
/// whole-ball sweep; everything else enumerates geodesics per element under
/// a budget.
pub fn barrier_free_set(
    ball: &SpaceGraph,
    eps: u32,
    m: u32,
    f: &Word,
    n: u32,
    delta: u32,
) -> Result<BarrierFreeReport, ExtensionError> {
    let radius = ball.radius();
    if n + delta + m + 2 * eps > radius {
        return Err(ExtensionError::RadiusInsufficient {
            needed: n + delta + m + 2 * eps,
            radius,
        });
    }
    let vf = ball
        .orbit_vertex(f)
        .ok_or(ExtensionError::RadiusInsufficient { needed: radius + 1, radius })?;
    let lf = ball.dist0(vf);
    if lf == 0 {
        // The identity barrier sits on every geodesic vertex.
        return Err(ExtensionError::EmptySet);
    }
    let nverts = ball.vertex_count();
    let members: Vec<u32> = if eps == 0 && m == 0 && lf <= 2 {
        sweep_barrier_free(ball, f, lf, n + delta)?
    } else {
        let mut out = Vec::new();
        for v in 0..nverts as u32 {
            if !ball.in_orbit(v) || ball.dist0(v) > n + delta {
                continue;
            }
            if element_barrier_free(ball, v, eps, m, f)? {
                out.push(v);
            }
        }
        out
    };
    let set: HashSet<u32> = members.iter().copied().collect();
    let al = &ball.space().group().alphabet;
    let label = format!("barrier-free(eps={}, M={}, f={})", eps, m, al.print_word(f));
    let series = count_series(ball, delta, &label, |_, v| set.contains(&v))?;
    Ok(BarrierFreeReport { eps, m, f: f.clone(), members, series })
}

/// Whole-ball reachability avoiding f-arcs, for eps = 0, M = 0 and
/// d(o, f o) in {1, 2}. An arc is a directed jump x -> x f realized along
/// an outward geodesic; a vertex is barrier-free iff some arc-free outward
/// path reaches it.
fn sweep_barrier_free(
    ball: &SpaceGraph,
    f: &Word,
    lf: u32,
    top: u32,
) -> Result<Vec<u32>, ExtensionError> {
    let n = ball.vertex_count();
    // f-successor of each orbit vertex, when inside the ball.
    let mut succ = vec![u32::MAX; n];
    for v in 0..n as u32 {
        if ball.in_orbit(v) {
            if let Some(w) = ball.orbit_vertex(&ball.rep(v).multiply(f)) {
                succ[v as usize] = w;
            }
        }
    }
    let origin = ball
        .orbit_vertex(&Word::id())
        .ok_or(ExtensionError::RadiusInsufficient { needed: 0, radius: ball.radius() })?;
    let mut members = Vec::new();
    if lf == 1 {
        let mut reach = vec![false; n];
        reach[origin as usize] = true;
        for d in 1..=top {
            for &v in ball.layer(d) {
                let ok = ball.neighbors(v).iter().any(|&u| {
                    ball.dist0(u) + 1 == d && reach[u as usize] && succ[u as usize] != v
                });
                if ok {
                    reach[v as usize] = true;
                }
            }
        }
        for v in 0..n as u32 {
            if ball.in_orbit(v) && ball.dist0(v) <= top && reach[v as usize] {
                members.push(v);
            }
        }
    } else {
        // States are outward edges; the arc constraint looks back two steps.
        let mut reach_edge: HashSet<(u32, u32)> = HashSet::new();
        let mut reach_vert = vec![false; n];
        reach_vert[origin as usize] = true;
        for &v in ball.layer(1) {
            reach_edge.insert((origin, v));
            reach_vert[v as usize] = true;
        }
        for d in 2..=top {
            for &w in ball.layer(d) {
                for &v in ball.neighbors(w) {
                    if ball.dist0(v) + 1 != d {
                        continue;
                    }
                    let ok = ball.neighbors(v).iter().any(|&u| {
                        ball.dist0(u) + 1 == ball.dist0(v)
                            && reach_edge.contains(&(u, v))
                            && succ[u as usize] != w
                    });
                    if ok {
                        reach_edge.insert((v, w));
                        reach_vert[w as usize] = true;
                    }
                }
            }
        }
        for v in 0..n as u32 {
            if ball.in_orbit(v) && ball.dist0(v) <= top && reach_vert[v as usize] {
                members.push(v);
            }
        }
    }
    Ok(members)
}

/// Per-element existential check: some geodesic between the M-balls with no
/// ordered barrier, enumerated under the path budget.
fn element_barrier_free(
    ball: &SpaceGraph,
    v: u32,
    eps: u32,
    m: u32,
    f: &Word,
) -> Result<bool, ExtensionError> {
    let mut starts = vec![ball.orbit_vertex(&Word::id()).unwrap_or(0)];
    if m > 0 {
        let rows = ball.bfs_rows(&starts.clone(), None);
        starts = (0..ball.vertex_count() as u32).filter(|&u| rows[u as usize] <= m).collect();
    }
    let rows_v = ball.bfs_rows(&[v], None);
    let ends: Vec<u32> = if m == 0 {
        vec![v]
    } else {
        (0..ball.vertex_count() as u32).filter(|&u| rows_v[u as usize] <= m).collect()
    };
    for &p in &starts {
        let rows_p = ball.bfs_rows(&[p], None);
        for &q in &ends {
            if rows_p[q as usize] == u32::MAX {
                continue;
            }
            let dag = ball.geodesics_between(p, q)?;
            let mut budget = PATH_BUDGET;
            if some_path_barrier_free(ball, &dag, p, q, eps, f, &mut budget)? {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn some_path_barrier_free(
    ball: &SpaceGraph,
    dag: &crate::space::GeodesicDag,
    p: u32,
    q: u32,
    eps: u32,
    f: &Word,
    budget: &mut u64,
) -> Result<bool, ExtensionError> {
    // Outward adjacency within the DAG.
    let mut next: HashMap<u32, Vec<u32>> = HashMap::new();
    for &(a, b) in &dag.edges {
        next.entry(a).or_default().push(b);
    }
    for v in next.values_mut() {
        v.sort_unstable();
    }
    let mut stack = vec![vec![p]];
    while let Some(path) = stack.pop() {
        if *budget == 0 {
            return Err(ExtensionError::Budget(PATH_BUDGET));
        }
        *budget -= 1;
        let last = *path.last().unwrap();
        if last == q {
            if !path_has_barrier(ball, &path, eps, f)? {
                return Ok(true);
            }
            continue;
        }
        if let Some(succs) = next.get(&last) {
            for &s in succs {
                let mut ext = path.clone();
                ext.push(s);
                stack.push(ext);
            }
        }
    }
    Ok(false)
}

fn path_has_barrier(
    ball: &SpaceGraph,
    gamma: &[u32],
    eps: u32,
    f: &Word,
) -> Result<bool, ExtensionError> {
    // Candidate barriers are orbit vertices within eps of the path.
    let mut cands: Vec<(u32, u32)> = Vec::new();
    let mut minpos: HashMap<u32, usize> = HashMap::new();
    let mut maxpos: HashMap<u32, usize> = HashMap::new();
    for (i, &gv) in gamma.iter().enumerate() {
        let ri = ball.bfs_rows(&[gv], None);
        for u in 0..ball.vertex_count() as u32 {
            if ri[u as usize] <= eps {
                minpos.entry(u).or_insert(i);
                maxpos.insert(u, i);
                if ball.in_orbit(u) {
                    cands.push((u, ri[u as usize]));
                }
            }
        }
    }
    cands.sort_unstable();
    cands.dedup_by_key(|c| c.0);
    for (t, _) in cands {
        let tf = ball.rep(t).multiply(f);
        let Some(w) = ball.orbit_vertex(&tf) else { continue };
        match (minpos.get(&t), maxpos.get(&w)) {
            (Some(&i), Some(&j)) if i <= j => return Ok(true),
            _ => {}
        }
    }
    Ok(false)
}

// ---------------------------------------------------------------------------
// Concave regions

#[derive(Debug)]
pub struct ConcaveReport {
    pub m1: u32,
    pub m2: u32,
    /// Members ascending; smallest peripheral-power threshold is up to the
    /// caller's reading of the series.
    pub members: Vec<u32>,
    pub series: GrowthSeries,
}

/// Elements g with a geodesic from B(o, M2) to B(g o, M2), of length at
/// least 2, whose interior vertices all avoid the M1-neighborhood of the
/// orbit. Witness pairs are checked through a filtered BFS in which only
/// interior-allowed vertices propagate.
pub fn concave_region(
    ball: &SpaceGraph,
    m1: u32,
    m2: u32,
    n: u32,
    delta: u32,
) -> Result<ConcaveReport, ExtensionError> {
    if m1 > m2 {
        return Err(ExtensionError::InvalidWindow { m1, m2 });
    }
    let radius = ball.radius();
    if n + delta + m2 > radius {
        return Err(ExtensionError::RadiusInsufficient { needed: n + delta + m2, radius });
    }
    let nv = ball.vertex_count();
    let orbit: Vec<u32> = (0..nv as u32).filter(|&v| ball.in_orbit(v)).collect();
    let odist = ball.bfs_rows(&orbit, None);
    let allowed: Vec<bool> = (0..nv).map(|v| odist[v] > m1).collect();

    // Endpoint candidates near the origin, with full and filtered rows.
    let p_set: Vec<u32> = (0..nv as u32).filter(|&v| ball.dist0(v) <= m2).collect();
    let mut p_rows = Vec::new();
    for &p in &p_set {
        let full = ball.bfs_rows(&[p], None);
        let mut blocked: Vec<bool> = allowed.iter().map(|&a| !a).collect();
        blocked[p as usize] = false;
        let filt = ball.bfs_rows(&[p], Some(&blocked));
        p_rows.push((p, full, filt));
    }

    let mut members = Vec::new();
    for g in 0..nv as u32 {
        if !ball.in_orbit(g) || ball.dist0(g) > n + delta || ball.dist0(g) + m2 > radius {
            continue;
        }
        if g == 0 && ball.dist0(g) == 0 {
            continue;
        }
        // q runs over the local M2-ball around g o.
        let mut q_ball = vec![g];
        let mut seen: HashSet<u32> = q_ball.iter().copied().collect();
        let mut frontier = q_ball.clone();
        for _ in 0..m2 {
            let mut nextf = Vec::new();
            for &u in &frontier {
                for &w in ball.neighbors(u) {
                    if seen.insert(w) {
                        nextf.push(w);
                        q_ball.push(w);
                    }
                }
            }
            frontier = nextf;
        }
        let mut member = false;
        'pairs: for (p, full, filt) in &p_rows {
            for &q in &q_ball {
                let d = full[q as usize];
                if d == u32::MAX || d < 2 {
                    continue;
                }
                // Exactness gate: the whole geodesic stays inside the ball.
                if ball.dist0(*p) + d > radius {
                    continue;
                }
                // A clean-interior geodesic ends with a step from a vertex
                // the filtered BFS reached at distance d - 1.
                let clean = ball
                    .neighbors(q)
                    .iter()
                    .any(|&u| filt[u as usize] != u32::MAX && filt[u as usize] == d - 1);
                if clean {
                    member = true;
                    break 'pairs;
                }
            }
        }
        if member {
            members.push(g);
        }
    }
    let set: HashSet<u32> = members.iter().copied().collect();
    let label = format!("concave({}, {})", m1, m2);
    let series = count_series(ball, delta, &label, |_, v| set.contains(&v))?;
    Ok(ConcaveReport { m1, m2, members, series })
}

// ---------------------------------------------------------------------------
// Free-product combination

#[derive(Debug)]
pub struct FreeProductVerdict {
    pub certified: bool,
    pub words_checked: usize,
    /// Max deviation of an alternating product's length from the sum of its
    /// syllable lengths.
    pub max_defect: u32,
    pub h_letters: usize,
    pub k_letters: usize,
    /// Measured projection diameter of the K-orbit onto the H-orbit.
    pub proj_diam: u32,
}

const FP_BUDGET: usize = 25000;

fn subgroup_orbit(ball: &SpaceGraph, gens: &[Word]) -> Vec<u32> {
    let origin = ball.orbit_vertex(&Word::id());
    let mut seen: HashSet<u32> = origin.into_iter().collect();
    let mut frontier: Vec<u32> = seen.iter().copied().collect();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &v in &frontier {
            for g in gens {
                for w in [ball.rep(v).multiply(g), ball.rep(v).multiply(&g.inverse())] {
                    if let Some(u) = ball.orbit_vertex(&w) {
                        if seen.insert(u) {
                            next.push(u);
                        }
                    }
                }
            }
        }
        frontier = next;
    }
    let mut out: Vec<u32> = seen.into_iter().collect();
    out.sort_unstable();
    out
}

/// Desk-scale freeness certificate for <H, K> = H * K: H must be a
/// contracting subgroup, K must project boundedly onto it, and every
/// alternating word in deep letters (lengths > D) must be nontrivial with
/// additive length defect bounded by the structure.
pub fn free_product_combine(
    ball: &SpaceGraph,
    h_gens: &[Word],
    k_gens: &[Word],
    d_bound: u32,
) -> Result<FreeProductVerdict, ExtensionError> {
    if h_gens.is_empty() || k_gens.is_empty() {
        return Err(ExtensionError::EmptySet);
    }
    let wp = ball.wp();
    let al = &ball.space().group().alphabet;
    let h_orbit = subgroup_orbit(ball, h_gens);
    let k_orbit = subgroup_orbit(ball, k_gens);
    let h_set: HashSet<u32> = h_orbit.iter().copied().collect();
    for &v in &k_orbit {
        if ball.dist0(v) > 0 && h_set.contains(&v) {
            return Err(ExtensionError::NontrivialIntersection {
                witness: al.print_word(ball.rep(v)),
            });
        }
    }
    let h_x = XSet::Explicit(h_orbit.clone());
    let h_cert = estimate_contraction(ball, &h_x)?;
    if h_cert.status == CertificateStatus::Refuted {
        return Err(ExtensionError::NotContracting { observed: h_cert.observed });
    }
    let table = build_projection_table(ball, &h_x)?;
    let mut proj_diam = 0;
    for &v in &k_orbit {
        proj_diam = proj_diam.max(proj_diameter_with(ball, &table, &[v], &[])?);
    }
    // Also the joint diameter across the whole K-orbit.
    proj_diam = proj_diam.max(proj_diameter_with(ball, &table, &k_orbit, &[])?);
    let bound = 2 * ball.radius() / 3;
    if proj_diam >= bound {
        return Err(ExtensionError::UnboundedProjection { observed: proj_diam, bound });
    }

    let deep = |orbit: &[u32]| -> Vec<Word> {
        orbit
            .iter()
            .filter(|&&v| ball.dist0(v) > d_bound)
            .map(|&v| ball.rep(v).clone())
            .collect()
    };
    let h_letters = deep(&h_orbit);
    let k_letters = deep(&k_orbit);
    if h_letters.is_empty() || k_letters.is_empty() {
        return Err(ExtensionError::RadiusInsufficient {
            needed: d_bound + 1,
            radius: ball.radius(),
        });
    }

    // Alternating words up to 4 syllables, both starting sides; products via
    // the word problem only, so lengths may exceed the ball with no loss.
    let mut certified = true;
    let mut words_checked = 0usize;
    let mut max_defect = 0u32;
    let mut seen: HashSet<String> = HashSet::new();
    let mut stack: Vec<(Word, u32, bool)> = Vec::new();
    for (side, letters) in [(false, &h_letters), (true, &k_letters)] {
        for l in letters {
            stack.push((l.clone(), wp.length(l) as u32, side));
        }
    }
    let mut syllables = 1;
    while syllables < 4 && !stack.is_empty() {
        let mut next_stack = Vec::new();
        for (w, syl_len, last_k) in &stack {
            words_checked += 1;
            if words_checked > FP_BUDGET {
                return Err(ExtensionError::Budget(FP_BUDGET as u64));
            }
            let nf = wp.normal_form(w).word;
            if nf.is_empty() || !seen.insert(al.print_word(&nf)) {
                certified = false;
            }
            let defect = (wp.length(&nf) as i64 - *syl_len as i64).unsigned_abs() as u32;
            max_defect = max_defect.max(defect);
            let next_letters = if *last_k { &h_letters } else { &k_letters };
            for l in next_letters {
                next_stack.push((
                    w.multiply(l),
                    syl_len + wp.length(l) as u32,
                    !*last_k,
                ));
            }
        }
        stack = next_stack;
        syllables += 1;
    }
    for (w, syl_len, _) in &stack {
        words_checked += 1;
        if words_checked > FP_BUDGET {
            return Err(ExtensionError::Budget(FP_BUDGET as u64));
        }
        let nf = wp.normal_form(w).word;
        if nf.is_empty() || !seen.insert(al.print_word(&nf)) {
            certified = false;
        }
        let defect = (wp.length(&nf) as i64 - *syl_len as i64).unsigned_abs() as u32;
        max_defect = max_defect.max(defect);
    }
    Ok(FreeProductVerdict {
        certified,
        words_checked,
        max_defect,
        h_letters: h_letters.len(),
        k_letters: k_letters.len(),
        proj_diam,
    })
}

// ---------------------------------------------------------------------------
// Contracting elements nearby

#[derive(Debug)]
pub struct NearbyChoice {
    pub index: usize,
    pub f: Word,
    /// Normal form of g f.
    pub product: Word,
    pub certificate: ContractingCertificate,
}

/// Finds f in the connector set with g f contracting: the first axis onto
/// which both [o, g o] and [o, g^-1 o] project within tau.
pub fn contracting_nearby(
    sys: &ContractingSystem,
    ball: &SpaceGraph,
    g: &Word,
) -> Result<NearbyChoice, ExtensionError> {
    sys.check_ball(ball)?;
    let wp = ball.wp();
    let opts = ScanOptions::default();
    if wp.is_identity(g)? {
        let f = sys.connectors[0].clone();
        let certificate = is_contracting_element_in(ball, &f, &opts)?;
        return Ok(NearbyChoice { index: 0, f: f.clone(), product: f, certificate });
    }
    let vg = ball
        .orbit_vertex(g)
        .ok_or(ExtensionError::RadiusInsufficient { needed: 0, radius: ball.radius() })?;
    let vi = ball
        .orbit_vertex(&g.inverse())
        .ok_or(ExtensionError::RadiusInsufficient { needed: 0, radius: ball.radius() })?;
    let fwd = canonical_ray(ball, vg);
    let bwd = canonical_ray(ball, vi);
    let mut projections = [0u32; 3];
    let mut pick = None;
    for k in 0..3 {
        let pf = proj_diam_of(ball, &sys.tables[k], &fwd)?;
        let pb = proj_diam_of(ball, &sys.tables[k], &bwd)?;
        projections[k] = pf.max(pb);
        if pick.is_none() && pf <= sys.tau && pb <= sys.tau {
            pick = Some(k);
        }
    }
    let Some(index) = pick else {
        return Err(ExtensionError::NoConnector { projections });
    };
    let f = sys.connectors[index].clone();
    let product = wp.normal_form(&g.multiply(&f)).word;
    let certificate = is_contracting_element_in(ball, &product, &opts)?;
    Ok(NearbyChoice { index, f, product, certificate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presentation::stock;
    use crate::space::build_ball;

    fn f2(r: u32) -> SpaceGraph {
        build_ball(&stock::cayley(stock::free2()), r).unwrap()
    }

    fn grid(r: u32) -> SpaceGraph {
        build_ball(&stock::cayley(stock::grid()), r).unwrap()
    }

    fn word(g: &SpaceGraph, text: &str) -> Word {
        g.space().group().alphabet.parse_word(text).unwrap()
    }

    fn v(g: &SpaceGraph, text: &str) -> u32 {
        let w = word(g, text);
        g.orbit_vertex(&w).unwrap()
    }

    fn f2_triple(g: &SpaceGraph) -> [Word; 3] {
        [word(g, "a"), word(g, "b"), word(g, "a b")]
    }

    fn f2_sys(r: u32) -> (SpaceGraph, ContractingSystem) {
        let g = f2(r);
        let sys = calibrate(&g, &f2_triple(&g), 7).unwrap();
        (g, sys)
    }

    #[test]
    fn calibrate_f2_reports_tree_constants() {
        let (_g, sys) = f2_sys(8);
        for cert in &sys.certificates {
            assert_eq!(cert.status, CertificateStatus::CertifiedUpToRadius);
        }
        for verdict in &sys.independence {
            assert!(matches!(verdict, IndependenceVerdict::Independent { .. }));
        }
        assert!(sys.tau <= 3, "tree projections are tiny, got tau {}", sys.tau);
        assert!(sys.d_param <= 2);
        assert!((1..=3).contains(&sys.epsilon0));
        // Connectors clear D.
        for f in sys.connectors.iter() {
            assert!(f.len() as u32 > sys.d_param);
        }
        assert!(sys.connector_power >= 1);
        assert!((4..=12).contains(&sys.record.training_pairs));
        assert_eq!(sys.record.generators[2], "ab");
    }

    #[test]
    fn calibrate_grid_has_no_contracting_triple() {
        let g = grid(6);
        let gens = [word(&g, "a"), word(&g, "b"), word(&g, "a b")];
        match calibrate(&g, &gens, 7) {
            Err(ExtensionError::NoContractingTriple { .. }) => {}
            other => panic!("expected NoContractingTriple, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn connector_choice_matches_tree_cases() {
        let (g, sys) = f2_sys(8);
        let n = sys.connector_power;
        // Powers of a on both sides force the b-axis.
        let c = choose_connector(&sys, &g, &word(&g, "a^-5"), &word(&g, "a^5")).unwrap();
        assert_eq!(c.index, 1);
        assert_eq!(c.word, word(&g, &format!("b^{}", n)));
        assert!(!c.flagged_default);
        // b-powers leave the a-axis clean, which comes first.
        let c = choose_connector(&sys, &g, &word(&g, "b^3"), &word(&g, "b^-3")).unwrap();
        assert_eq!(c.index, 0);
        // The (ab)-word also projects trivially onto the a-axis.
        let ab4 = word(&g, "a b a b a b a b");
        let c = choose_connector(&sys, &g, &ab4, &ab4.inverse()).unwrap();
        assert_eq!(c.index, 0);
        // Identity on both sides falls back with the flag.
        let c = choose_connector(&sys, &g, &Word::id(), &Word::id()).unwrap();
        assert_eq!(c.index, 0);
        assert!(c.flagged_default);
        // Same inputs, same choice.
        let first = choose_connector(&sys, &g, &word(&g, "a^-5"), &word(&g, "a^5")).unwrap();
        let again = choose_connector(&sys, &g, &word(&g, "a^-5"), &word(&g, "a^5")).unwrap();
        assert_eq!(again.index, first.index);
        assert_eq!(again.projections, first.projections);
        assert!(first.projections[0] >= 5, "the a-axis sees the whole power");
    }

    #[test]
    fn extension_map_inserts_connectors() {
        let (g, sys) = f2_sys(8);
        let n = sys.connector_power as usize;
        let letters = vec![word(&g, "b"), word(&g, "b")];
        let res = extension_map(&sys, &g, &letters).unwrap();
        assert_eq!(res.element.len(), n + 2);
        assert_eq!(res.element, word(&g, &format!("b a^{} b", n)));
        assert_eq!(res.connectors_used, vec![0]);
        let path = res.path.expect("short path fits the ball");
        assert_eq!(path.segments.len(), 1);
        assert_eq!(path.lead_in, vec![v(&g, ""), v(&g, "b")]);
        let verdict = check_admissible(&g, &path, sys.d_param, sys.tau).unwrap();
        assert!(verdict.pass, "verdict {:?}", verdict);
        assert!(res.max_offset.unwrap() <= sys.epsilon0);
        // A single letter has no connector structure.
        let single = extension_map(&sys, &g, &letters[..1]).unwrap();
        assert_eq!(single.element, word(&g, "b"));
        assert!(single.path.is_none());
        assert!(single.connectors_used.is_empty());
    }

    #[test]
    fn extension_map_additivity_and_injectivity() {
        let (g, sys) = f2_sys(8);
        let wp = g.wp();
        // Alphabet: a 2-separated net in the 3-sphere, one word per length-2
        // prefix. Unseparated letters (distance 2 apart) genuinely collide:
        // both halves of x a^-1 | a y and x a | a^-1 y flank the same core.
        let sphere: Vec<u32> = g.annulus(3, 0).unwrap();
        let net = g.separated_net(&sphere, 2).unwrap();
        let alphabet: Vec<Word> = net.iter().map(|&u| g.rep(u).clone()).collect();
        assert_eq!(alphabet.len(), 12);
        let mut seen: HashMap<String, Vec<usize>> = HashMap::new();
        let al = &g.space().group().alphabet;
        let mut count = 0;
        let ids: Vec<usize> = (0..alphabet.len()).collect();
        for len in 1..=3usize {
            let mut tuple = vec![0usize; len];
            loop {
                let letters: Vec<Word> = tuple.iter().map(|&i| alphabet[i].clone()).collect();
                let res = extension_map(&sys, &g, &letters).unwrap();
                count += 1;
                // Additivity within 2 n eps0.
                let mut expect = letters.iter().map(|w| wp.length(w) as i64).sum::<i64>();
                for &k in &res.connectors_used {
                    expect += wp.length(&sys.connectors[k]) as i64;
                }
                let got = wp.length(&res.element) as i64;
                assert!(
                    (got - expect).abs() <= 2 * len as i64 * sys.epsilon0 as i64,
                    "length defect too large: {} vs {}",
                    got,
                    expect
                );
                let key = al.print_word(&res.element);
                if let Some(prev) = seen.insert(key, tuple.clone()) {
                    panic!("collision between {:?} and {:?}", prev, tuple);
                }
                // Next tuple in lexicographic order.
                let mut pos = len;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    tuple[pos] += 1;
                    if tuple[pos] < ids.len() {
                        break;
                    }
                    tuple[pos] = 0;
                    if pos == 0 {
                        pos = usize::MAX;
                        break;
                    }
                }
                if pos == usize::MAX {
                    break;
                }
            }
        }
        assert_eq!(count, 12 + 144 + 1728);
    }

    #[test]
    fn raag_injectivity_with_calibrated_triple() {
        let g = build_ball(&stock::cayley(stock::raag_path()), 8).unwrap();
        // a and c generate a free pair; b commutes with both, so the three
        // elements below are loxodromic off every standard flat.
        let gens = [word(&g, "a c"), word(&g, "c a"), word(&g, "a c^-1")];
        let sys = calibrate(&g, &gens, 7).unwrap();
        let wp = g.wp();
        let sphere: Vec<u32> = g.annulus(2, 0).unwrap();
        let net = g.separated_net(&sphere, 2).unwrap();
        let alphabet: Vec<Word> = net.iter().map(|&u| g.rep(u).clone()).collect();
        assert!(alphabet.len() >= 4, "net too small: {}", alphabet.len());
        let al = &g.space().group().alphabet;
        let mut seen: HashMap<String, (usize, usize)> = HashMap::new();
        for (i, x) in alphabet.iter().enumerate() {
            for (j, y) in alphabet.iter().enumerate() {
                let letters = [x.clone(), y.clone()];
                let res = extension_map(&sys, &g, &letters).unwrap();
                assert!(!wp.is_identity(&res.element).unwrap());
                let key = al.print_word(&res.element);
                if let Some(prev) = seen.insert(key, (i, j)) {
                    panic!("collision between {:?} and {:?}", prev, (i, j));
                }
            }
        }
        assert_eq!(seen.len(), alphabet.len() * alphabet.len());
    }

    #[test]
    fn selection_keeps_a_sixteenth() {
        let (g, sys) = f2_sys(8);
        let sphere: Vec<u32> = g.annulus(4, 0).unwrap();
        let z = g.separated_net(&sphere, 2).unwrap();
        let sel = large_semigroup_select(&sys, &g, &z).unwrap();
        assert!(sel.members.len() * 16 >= z.len());
        assert!(!sel.members.is_empty());
        // Selected products are contracting elements.
        let wp = g.wp();
        for &m in sel.members.iter().take(3) {
            let prod = wp.normal_form(&g.rep(m).multiply(&sel.connector)).word;
            let cert = is_contracting_element_in(&g, &prod, &ScanOptions::default()).unwrap();
            assert_eq!(cert.status, CertificateStatus::CertifiedUpToRadius);
        }
        // A singleton set trivially survives.
        let one = large_semigroup_select(&sys, &g, &z[..1]).unwrap();
        assert_eq!(one.members.len(), 1);
    }

    #[test]
    fn semigroup_levels_increase() {
        let g = f2(10);
        let sys = calibrate(&g, &f2_triple(&g), 7).unwrap();
        let b1 = build_free_semigroup(&sys, &g, 0.15, 0).unwrap();
        assert!(b1.omega_hat > 0.15);
        assert!(b1.omega_hat < 3f64.ln());
        assert!(b1.checked_len >= 2);
        assert!(b1.branch_epsilon <= sys.epsilon0 + 1);
        let b2 = build_free_semigroup(&sys, &g, b1.omega_hat, 0).unwrap();
        assert!(b2.omega_hat > b1.omega_hat);
        assert!(b2.omega_hat < 3f64.ln());
        assert!(b2.k_omega > b1.k_omega);
        // Target at the ambient estimate is rejected.
        match build_free_semigroup(&sys, &g, 1.2, 0) {
            Err(ExtensionError::TargetTooHigh { .. }) => {}
            other => panic!("expected TargetTooHigh, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn barrier_witnesses_match_tree_scan() {
        let g = f2(8);
        let f = word(&g, "a^2");
        let b_leg = canonical_ray(&g, v(&g, "b^6"));
        assert!(detect_barrier(&g, &b_leg, 0, &f).unwrap().is_none());
        let a_leg = canonical_ray(&g, v(&g, "a^6"));
        let w = detect_barrier(&g, &a_leg, 0, &f).unwrap().expect("identity is a barrier");
        assert!(w.t.is_empty());
        assert_eq!((w.dist_t, w.dist_tf), (0, 0));
        let w = detect_barrier(&g, &b_leg, 1, &f).unwrap().expect("a^-1 works at eps 1");
        assert_eq!(w.t, word(&g, "a^-1"));
        assert_eq!((w.dist_t, w.dist_tf), (1, 1));
    }

    #[test]
    fn barrier_free_counts_follow_recurrence() {
        let g = f2(8);
        let rep = barrier_free_set(&g, 0, 0, &word(&g, "a"), 8, 0).unwrap();
        // Freely reduced words over {a^-1, b, b^-1}: x_n = 2 x_{n-1} + x_{n-2}.
        let mut spheres = vec![0u64; 9];
        for &m in &rep.members {
            spheres[g.dist0(m) as usize] += 1;
        }
        assert_eq!(spheres, vec![1, 3, 7, 17, 41, 99, 239, 577, 1393]);
        assert_eq!(rep.series.counts[..9], spheres[..9]);
        // Heredity: a canonical witness path stays inside the member set.
        let set: HashSet<u32> = rep.members.iter().copied().collect();
        for &m in rep.members.iter().filter(|&&m| g.dist0(m) > 0) {
            assert!(
                g.neighbors(m)
                    .iter()
                    .any(|&u| g.dist0(u) + 1 == g.dist0(m) && set.contains(&u)),
                "member {} has no barrier-free parent",
                m
            );
        }
    }

    #[test]
    fn barrier_monotone_in_eps() {
        let g = f2(6);
        let f = word(&g, "a");
        let v0 = barrier_free_set(&g, 0, 0, &f, 2, 0).unwrap();
        let v1 = barrier_free_set(&g, 1, 0, &f, 2, 0).unwrap();
        let big: HashSet<u32> = v0.members.iter().copied().collect();
        for &m in &v1.members {
            assert!(big.contains(&m), "eps=1 member {} missing at eps=0", m);
        }
        assert!(v1.members.len() < v0.members.len());
    }

    #[test]
    fn concave_region_empty_in_tree() {
        let g = f2(6);
        let rep = concave_region(&g, 1, 1, 4, 0).unwrap();
        assert!(rep.members.is_empty());
        assert!(rep.series.counts.iter().all(|&c| c == 0));
        match concave_region(&g, 3, 1, 4, 0) {
            Err(ExtensionError::InvalidWindow { .. }) => {}
            other => panic!("expected InvalidWindow, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn free_product_certificate_and_rejection() {
        let g = f2(8);
        let verdict =
            free_product_combine(&g, &[word(&g, "a")], &[word(&g, "b")], 3).unwrap();
        assert!(verdict.certified);
        assert_eq!(verdict.max_defect, 0);
        assert!(verdict.words_checked > 100);
        assert!(verdict.proj_diam <= 1);
        match free_product_combine(&g, &[word(&g, "a")], &[word(&g, "a^2")], 3) {
            Err(ExtensionError::NontrivialIntersection { witness }) => {
                assert!(witness.contains('a'));
            }
            other => panic!("expected intersection, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn contracting_nearby_follows_projection_rule() {
        let (g, sys) = f2_sys(10);
        let choice = contracting_nearby(&sys, &g, &word(&g, "a^5")).unwrap();
        assert_eq!(choice.index, 1);
        let n = sys.connector_power;
        assert_eq!(choice.product, word(&g, &format!("a^5 b^{}", n)));
        let id_choice = contracting_nearby(&sys, &g, &Word::id()).unwrap();
        assert_eq!(id_choice.index, 0);
        assert_eq!(
            id_choice.certificate.status,
            CertificateStatus::CertifiedUpToRadius
        );
    }
}
