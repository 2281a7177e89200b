//! Spatially contiguous taxel masking. Masked regions grow by accretion
//! over a nearest-neighbor graph built from 3D taxel positions, so a
//! mask hides connected patches of skin rather than salt-and-pepper
//! noise, and crosses pad boundaries wherever pads sit close together.

use crate::error::{ModelError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use skinssl_sim::signal::TactileWindow;

pub const NEIGHBORS: usize = 6;

/// Symmetric adjacency: i ~ j when j is one of i's 6 nearest taxels or
/// i is one of j's.
#[derive(Debug, Clone)]
pub struct TaxelGraph {
    adj: Vec<Vec<usize>>,
}

impl TaxelGraph {
    pub fn build(positions: &[[f64; 3]]) -> TaxelGraph {
        let n = positions.len();
        let k = NEIGHBORS.min(n.saturating_sub(1));
        let mut adj: Vec<Vec<usize>> = vec![Vec::with_capacity(2 * k); n];
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
        for i in 0..n {
            dist.clear();
            for (j, q) in positions.iter().enumerate() {
                if j == i {
                    continue;
                }
                let p = positions[i];
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                dist.push((d2, j));
            }
            dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &(_, j) in dist.iter().take(k) {
                if !adj[i].contains(&j) {
                    adj[i].push(j);
                }
                // symmetric closure
                if !adj[j].contains(&i) {
                    adj[j].push(i);
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        TaxelGraph { adj }
    }

    pub fn from_window(window: &TactileWindow) -> TaxelGraph {
        TaxelGraph::build(&last_frame_positions(window))
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }
}

/// Taxel positions at the final frame of a window, the pose the mask
/// geometry is computed in.
pub fn last_frame_positions(window: &TactileWindow) -> Vec<[f64; 3]> {
    let n = window.taxel_count();
    let last = window.p.len() - 3 * n;
    (0..n)
        .map(|t| {
            let o = last + 3 * t;
            [
                f64::from(window.p[o]),
                f64::from(window.p[o + 1]),
                f64::from(window.p[o + 2]),
            ]
        })
        .collect()
}

/// One masked view of a window. `kept` and `masked` are sorted id
/// lists partitioning 0..n; `trace` replays mask growth as
/// (taxel, started_fresh_region) pairs for contiguity audits.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMask {
    pub kept: Vec<usize>,
    pub masked: Vec<usize>,
    pub retention: f64,
    pub trace: Vec<(usize, bool)>,
}

impl ViewMask {
    /// A view that keeps every taxel.
    pub fn full(n: usize) -> ViewMask {
        ViewMask { kept: (0..n).collect(), masked: Vec::new(), retention: 1.0, trace: Vec::new() }
    }
}

/// Grow a contiguous mask until exactly `n - round(retention * n)`
/// taxels are hidden. Starts from 1-3 seeds; whenever the frontier of
/// a region is exhausted a fresh seed opens a new region.
pub fn make_block_mask(graph: &TaxelGraph, retention: f64, rng: &mut ChaCha8Rng) -> Result<ViewMask> {
    if !(0.0..=1.0).contains(&retention) {
        return Err(ModelError::InvalidInput(format!("retention {retention} outside [0, 1]")));
    }
    let n = graph.len();
    let keep = (retention * n as f64).round() as usize;
    let to_mask = n - keep;
    let mut masked = vec![false; n];
    let mut trace = Vec::with_capacity(to_mask);

    if to_mask > 0 {
        let seeds = rng.gen_range(1..=3usize).min(to_mask);
        let mut in_frontier = vec![false; n];
        let mut frontier: Vec<usize> = Vec::new();
        let mut remaining = to_mask;
        let mut mask_one = |t: usize,
                            fresh: bool,
                            masked: &mut Vec<bool>,
                            frontier: &mut Vec<usize>,
                            in_frontier: &mut Vec<bool>| {
            masked[t] = true;
            trace.push((t, fresh));
            for &nb in graph.neighbors(t) {
                if !masked[nb] && !in_frontier[nb] {
                    in_frontier[nb] = true;
                    frontier.push(nb);
                }
            }
        };
        let fresh_seed = |masked: &mut Vec<bool>, rng: &mut ChaCha8Rng| loop {
            let t = rng.gen_range(0..n);
            if !masked[t] {
                return t;
            }
        };
        for _ in 0..seeds {
            let t = fresh_seed(&mut masked, rng);
            mask_one(t, true, &mut masked, &mut frontier, &mut in_frontier);
            remaining -= 1;
        }
        while remaining > 0 {
            // lazily drop frontier entries masked since insertion
            let pick = loop {
                if frontier.is_empty() {
                    break None;
                }
                let i = rng.gen_range(0..frontier.len());
                let t = frontier.swap_remove(i);
                if !masked[t] {
                    break Some(t);
                }
            };
            match pick {
                Some(t) => mask_one(t, false, &mut masked, &mut frontier, &mut in_frontier),
                None => {
                    let t = fresh_seed(&mut masked, rng);
                    mask_one(t, true, &mut masked, &mut frontier, &mut in_frontier);
                }
            }
            remaining -= 1;
        }
    }

    let mut kept_ids = Vec::with_capacity(keep);
    let mut masked_ids = Vec::with_capacity(to_mask);
    for (t, &m) in masked.iter().enumerate() {
        if m {
            masked_ids.push(t);
        } else {
            kept_ids.push(t);
        }
    }
    Ok(ViewMask { kept: kept_ids, masked: masked_ids, retention, trace })
}

/// Check that a mask's trace is a valid accretion: every non-seed
/// entry touches some earlier-masked taxel.
pub fn trace_is_contiguous(graph: &TaxelGraph, mask: &ViewMask) -> bool {
    let mut seen = vec![false; graph.len()];
    for &(t, fresh) in &mask.trace {
        if !fresh {
            let touches = graph.neighbors(t).iter().any(|&nb| seen[nb]);
            if !touches {
                return false;
            }
        }
        seen[t] = true;
    }
    true
}

/// How many views a pretraining step builds and how much of the skin
/// each keeps. Teachers see only the (larger) global views; students
/// see all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewSpec {
    pub n_global: usize,
    pub n_local: usize,
    pub global_retention: (f64, f64),
    pub local_retention: (f64, f64),
}

impl Default for ViewSpec {
    fn default() -> Self {
        ViewSpec {
            n_global: 2,
            n_local: 8,
            global_retention: (0.4, 1.0),
            local_retention: (0.1, 0.4),
        }
    }
}

impl ViewSpec {
    pub fn total(&self) -> usize {
        self.n_global + self.n_local
    }

    pub fn validate(&self) -> Result<()> {
        let ok_range = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi <= 1.0;
        if !ok_range(self.global_retention) || !ok_range(self.local_retention) {
            return Err(ModelError::InvalidInput("view retention ranges must be within (0, 1]".into()));
        }
        if self.local_retention.1 > self.global_retention.0 {
            return Err(ModelError::InvalidInput(
                "local views must not retain more than the smallest global view".into(),
            ));
        }
        if self.n_global == 0 {
            return Err(ModelError::InvalidInput("need at least one global view".into()));
        }
        Ok(())
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// All masked views for one window, globals first.
pub fn build_views(
    graph: &TaxelGraph,
    spec: &ViewSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ViewMask>> {
    let mut views = Vec::with_capacity(spec.total());
    for _ in 0..spec.n_global {
        let r = sample_range(rng, spec.global_retention);
        views.push(make_block_mask(graph, r, rng)?);
    }
    for _ in 0..spec.n_local {
        let r = sample_range(rng, spec.local_retention);
        views.push(make_block_mask(graph, r, rng)?);
    }
    Ok(views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use skinssl_sim::hand::{build_default_layout, forward_kinematics, rest_baseline_config};
    use skinssl_sim::rng::substream;

    fn rest_graph() -> TaxelGraph {
        let layout = build_default_layout();
        let fk = forward_kinematics(&layout, &rest_baseline_config()).unwrap();
        TaxelGraph::build(&fk.positions)
    }

    #[test]
    fn graph_is_symmetric_with_degree_at_least_six() {
        let g = rest_graph();
        assert_eq!(g.len(), 368);
        for i in 0..g.len() {
            assert!(g.neighbors(i).len() >= NEIGHBORS);
            for &j in g.neighbors(i) {
                assert!(g.are_adjacent(j, i), "asymmetric edge {i}-{j}");
            }
        }
    }

    #[test]
    fn full_retention_masks_nothing() {
        let g = rest_graph();
        let mut rng = substream(1, "mask");
        let m = make_block_mask(&g, 1.0, &mut rng).unwrap();
        assert!(m.masked.is_empty());
        assert_eq!(m.kept.len(), 368);
        assert!(m.trace.is_empty());
    }

    #[test]
    fn mask_cardinality_is_exact_rounding() {
        let g = rest_graph();
        let mut rng = substream(2, "mask");
        for &r in &[0.1, 0.25, 0.4, 0.5, 0.73, 0.999] {
            let m = make_block_mask(&g, r, &mut rng).unwrap();
            let want = (r * 368.0).round() as usize;
            assert_eq!(m.kept.len(), want, "retention {r}");
            assert_eq!(m.masked.len(), 368 - want);
        }
    }

    #[test]
    fn kept_and_masked_partition_the_taxels() {
        let g = rest_graph();
        let mut rng = substream(3, "mask");
        let m = make_block_mask(&g, 0.3, &mut rng).unwrap();
        let mut all: Vec<usize> = m.kept.iter().chain(&m.masked).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..368).collect::<Vec<_>>());
        assert!(m.kept.windows(2).all(|w| w[0] < w[1]));
        assert!(m.masked.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn traces_are_contiguous_accretions() {
        let g = rest_graph();
        let mut rng = substream(4, "mask");
        for i in 0..200 {
            let r = 0.1 + 0.85 * (i as f64 / 200.0);
            let m = make_block_mask(&g, r, &mut rng).unwrap();
            assert!(trace_is_contiguous(&g, &m), "retention {r}");
            let seeds = m.trace.iter().filter(|(_, fresh)| *fresh).count();
            assert!(seeds >= 1 || m.trace.is_empty());
            // trace covers exactly the masked set
            let mut from_trace: Vec<usize> = m.trace.iter().map(|(t, _)| *t).collect();
            from_trace.sort_unstable();
            assert_eq!(from_trace, m.masked);
        }
    }

    #[test]
    fn tampered_trace_fails_the_contiguity_audit() {
        let g = rest_graph();
        let mut rng = substream(5, "mask");
        let mut m = make_block_mask(&g, 0.5, &mut rng).unwrap();
        // claim a far-away taxel was grown by accretion
        let masked_first = m.trace[0].0;
        let far = (0..368)
            .find(|&t| !m.masked.contains(&t) && !g.are_adjacent(t, masked_first))
            .unwrap();
        m.trace.insert(1, (far, false));
        assert!(!trace_is_contiguous(&g, &m));
    }

    #[test]
    fn views_follow_the_spec_layout() {
        let g = rest_graph();
        let spec = ViewSpec::default();
        spec.validate().unwrap();
        let mut rng = substream(6, "views");
        let views = build_views(&g, &spec, &mut rng).unwrap();
        assert_eq!(views.len(), 10);
        for v in &views[..2] {
            assert!(v.retention >= 0.4 && v.retention <= 1.0);
            assert_eq!(v.kept.len(), (v.retention * 368.0).round() as usize);
        }
        for v in &views[2..] {
            assert!(v.retention >= 0.1 && v.retention <= 0.4);
            assert_eq!(v.kept.len(), (v.retention * 368.0).round() as usize);
        }
    }

    #[test]
    fn bad_view_specs_are_rejected() {
        let mut s = ViewSpec::default();
        s.local_retention = (0.1, 0.6);
        assert!(s.validate().is_err());
        let mut s = ViewSpec::default();
        s.global_retention = (0.0, 1.0);
        assert!(s.validate().is_err());
        let mut s = ViewSpec::default();
        s.n_global = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn masks_are_deterministic_given_the_stream() {
        let g = rest_graph();
        let a = make_block_mask(&g, 0.42, &mut substream(7, "m")).unwrap();
        let b = make_block_mask(&g, 0.42, &mut substream(7, "m")).unwrap();
        assert_eq!(a, b);
        let c = make_block_mask(&g, 0.42, &mut substream(8, "m")).unwrap();
        assert_ne!(a, c);
    }
}
