//! Correlation clustering of Word Usage Graphs.
//!
//! Edge weights are compared with a threshold `τ` (2.5 on the four-point
//! scale). An edge with weight `w >= τ` pulls its endpoints together, one
//! with `w < τ` pushes them apart. The loss of a clustering is
//!
//! ```text
//! Σ_{intra-cluster, w < τ} (τ - w)  +  Σ_{inter-cluster, w >= τ} (w - τ)
//! ```
//!
//! Unjudged pairs carry no edge and cost nothing wherever they end up.
//! Minimizing the loss is NP-hard; [`correlation_cluster`] uses simulated
//! annealing with restarts, [`brute_force_cluster`] enumerates all set
//! partitions of small graphs and serves as a test oracle.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wug::{SenseClustering, WordUsageGraph};

pub const DEFAULT_THRESHOLD: f64 = 2.5;

/// Largest graph [`brute_force_cluster`] accepts (Bell(12) = 4,213,597 partitions).
pub const BRUTE_FORCE_MAX_NODES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringParams {
    pub threshold: f64,
    pub restarts: usize,
    /// Annealing sweeps per restart; one sweep proposes one move per node.
    pub max_iterations: usize,
    pub seed: u64,
    /// When false, non-isolated singletons are merged into the cluster
    /// that costs least after optimization.
    pub allow_singletons: bool,
    /// Starting temperature relative to the largest `|w - τ|`.
    pub initial_temperature: f64,
    /// Final temperature as a fraction of the starting one.
    pub final_temperature: f64,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        ClusteringParams {
            threshold: DEFAULT_THRESHOLD,
            restarts: 10,
            max_iterations: 100,
            seed: 0,
            allow_singletons: true,
            initial_temperature: 1.0,
            final_temperature: 1e-3,
        }
    }
}

impl ClusteringParams {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidSpec("restarts and max_iterations must be at least 1".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidSpec("clustering threshold must be finite".into()));
        }
        if !(self.initial_temperature > 0.0 && self.final_temperature > 0.0 && self.final_temperature <= 1.0) {
            return Err(Error::InvalidSpec("temperatures must be positive, final <= 1".into()));
        }
        Ok(())
    }
}

/// Loss of `clustering` on `graph`; every node must be assigned.
pub fn clustering_loss(graph: &WordUsageGraph, clustering: &SenseClustering, threshold: f64) -> Result<f64> {
    if let Some(id) = graph.node_ids().find(|id| clustering.label(id).is_none()) {
        return Err(Error::Unassigned(id.to_owned()));
    }
    Ok(graph
        .edges()
        .map(|(a, b, e)| {
            let together = clustering.label(a) == clustering.label(b);
            edge_cost(e.weight, threshold, together)
        })
        .sum())
}

fn edge_cost(weight: f64, threshold: f64, together: bool) -> f64 {
    match (together, weight < threshold) {
        (true, true) => threshold - weight,
        (false, false) => weight - threshold,
        _ => 0.0,
    }
}

/// Dense view of the non-isolated part of a graph.
struct Problem {
    /// Neighbours with shifted weights `w - τ`.
    adjacency: Vec<Vec<(usize, f64)>>,
    scale: f64,
}

impl Problem {
    fn cost(&self, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (v, nbrs) in self.adjacency.iter().enumerate() {
            for &(u, s) in nbrs {
                if u > v {
                    total += if labels[u] == labels[v] { (-s).max(0.0) } else { s.max(0.0) };
                }
            }
        }
        total
    }
}

/// Mutable clustering state with per-cluster sizes.
struct State {
    labels: Vec<usize>,
    sizes: Vec<usize>,
    /// Unused label slots, so "new cluster" is O(1).
    free: Vec<usize>,
}

impl State {
    fn new(labels: Vec<usize>, n: usize) -> State {
        let mut sizes = vec![0; n];
        for &l in &labels {
            sizes[l] += 1;
        }
        let free = (0..n).rev().filter(|&l| sizes[l] == 0).collect();
        State { labels, sizes, free }
    }

    fn relabel(&mut self, v: usize, to: usize) {
        let from = self.labels[v];
        if from == to {
            return;
        }
        self.sizes[from] -= 1;
        if self.sizes[from] == 0 {
            self.free.push(from);
        }
        if self.sizes[to] == 0 {
            let pos = self.free.iter().rposition(|&l| l == to).expect("empty label is free");
            self.free.swap_remove(pos);
        }
        self.sizes[to] += 1;
        self.labels[v] = to;
    }

    /// Label of an empty cluster, if one exists.
    fn empty_label(&self) -> Option<usize> {
        self.free.last().copied()
    }
}

/// Sum of shifted weights from `v` into each cluster it touches.
fn attraction(p: &Problem, st: &State, v: usize) -> HashMap<usize, f64> {
    let mut acc = HashMap::new();
    for &(u, s) in &p.adjacency[v] {
        *acc.entry(st.labels[u]).or_insert(0.0) += s;
    }
    acc
}

/// Greedy descent: move each node to its best cluster until nothing improves.
///
/// For node `v`, the cost of sitting in cluster `k` is `C - S_k` where
/// `S_k` is the summed shifted weight into `k` and `C` does not depend on
/// `k`; a new cluster has `S = 0`.
fn descend(p: &Problem, st: &mut State) {
    let n = st.labels.len();
    loop {
        let mut improved = false;
        for v in 0..n {
            let acc = attraction(p, st, v);
            let current = acc.get(&st.labels[v]).copied().unwrap_or(0.0);
            let mut best_gain = 1e-12;
            let mut best = None;
            let mut targets: Vec<(&usize, &f64)> = acc.iter().collect();
            targets.sort_by_key(|(l, _)| **l);
            for (&l, &s) in targets {
                if l != st.labels[v] && s - current > best_gain {
                    best_gain = s - current;
                    best = Some(l);
                }
            }
            if -current > best_gain && st.sizes[st.labels[v]] > 1 {
                best = st.empty_label();
            }
            if let Some(to) = best {
                st.relabel(v, to);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}

fn anneal(p: &Problem, params: &ClusteringParams, seed: u64, start_singletons: bool) -> (Vec<usize>, f64) {
    let n = p.adjacency.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial: Vec<usize> = if start_singletons {
        (0..n).collect()
    } else {
        let k = rng.random_range(1..=n);
        (0..n).map(|_| rng.random_range(0..k)).collect()
    };
    let mut st = State::new(initial, n);

    let t0 = params.initial_temperature * p.scale;
    let steps = params.max_iterations * n;
    let cooling = params.final_temperature.powf(1.0 / steps.max(1) as f64);
    let mut temperature = t0;

    let mut best_labels = st.labels.clone();
    let mut best_cost = p.cost(&st.labels);
    let mut cost = best_cost;

    for _ in 0..steps {
        let v = rng.random_range(0..n);
        let from = st.labels[v];
        // candidate: any non-empty cluster other than v's, or a fresh one
        let occupied = n - st.free.len();
        let choice = rng.random_range(0..occupied);
        let to = if choice + 1 == occupied {
            match st.empty_label() {
                Some(l) if st.sizes[from] > 1 => l,
                _ => {
                    temperature *= cooling;
                    continue;
                }
            }
        } else {
            let mut seen = 0;
            let mut pick = from;
            for l in 0..n {
                if st.sizes[l] > 0 && l != from {
                    if seen == choice {
                        pick = l;
                        break;
                    }
                    seen += 1;
                }
            }
            pick
        };
        if to != from {
            let mut s_from = 0.0;
            let mut s_to = 0.0;
            for &(u, s) in &p.adjacency[v] {
                let l = st.labels[u];
                if l == from {
                    s_from += s;
                } else if l == to {
                    s_to += s;
                }
            }
            let delta = s_from - s_to;
            if delta <= 0.0 || rng.random::<f64>() < (-delta / temperature).exp() {
                st.relabel(v, to);
                cost += delta;
                if cost < best_cost - 1e-12 {
                    best_cost = cost;
                    best_labels.clone_from(&st.labels);
                }
            }
        }
        temperature *= cooling;
    }

    let mut finals = Vec::with_capacity(2);
    finals.push(st.labels.clone());
    finals.push(best_labels);
    finals
        .into_iter()
        .map(|labels| {
            let mut s = State::new(labels, n);
            descend(p, &mut s);
            let c = p.cost(&s.labels);
            (s.labels, c)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("two candidates")
}

/// Derives the seed of restart `index` from the master seed (splitmix64).
fn restart_seed(master: u64, index: usize) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Clusters a graph by simulated annealing over single-node moves.
///
/// Each restart anneals from its own seed (restart 0 starts from all
/// singletons, the others from random labelings) and finishes with greedy
/// descent. The lowest-loss result wins; ties go to the earlier restart.
/// Nodes without edges become singletons. Labels are renumbered from 0 in
/// order of each cluster's smallest usage id, with isolated nodes last.
pub fn correlation_cluster(graph: &WordUsageGraph, params: &ClusteringParams) -> Result<SenseClustering> {
    params.validate()?;
    let ids: Vec<&str> = graph.node_ids().collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut full_adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ids.len()];
    for (a, b, e) in graph.edges() {
        let s = e.weight - params.threshold;
        full_adj[index[a]].push((index[b], s));
        full_adj[index[b]].push((index[a], s));
    }

    // isolated nodes are kept out of the search
    let active: Vec<usize> = (0..ids.len()).filter(|&i| !full_adj[i].is_empty()).collect();
    let compact: HashMap<usize, usize> = active.iter().enumerate().map(|(c, &i)| (i, c)).collect();
    let adjacency: Vec<Vec<(usize, f64)>> = active
        .iter()
        .map(|&i| full_adj[i].iter().map(|&(u, s)| (compact[&u], s)).collect())
        .collect();
    let scale = adjacency
        .iter()
        .flatten()
        .map(|(_, s)| s.abs())
        .fold(0.0, f64::max)
        .max(1e-9);
    let problem = Problem { adjacency, scale };

    let mut labels: Vec<usize> = Vec::new();
    if !active.is_empty() {
        let results: Vec<(Vec<usize>, f64)> = (0..params.restarts)
            .into_par_iter()
            .map(|r| anneal(&problem, params, restart_seed(params.seed, r), r == 0))
            .collect();
        let mut best = 0;
        for (r, res) in results.iter().enumerate() {
            if res.1 < results[best].1 - 1e-12 {
                best = r;
            }
        }
        labels = results.into_iter().nth(best).expect("restarts >= 1").0;
        if !params.allow_singletons {
            absorb_singletons(&problem, &mut labels);
        }
    }

    // canonical numbering: active clusters first, then isolated nodes
    let mut renumber: HashMap<usize, i64> = HashMap::new();
    let mut out = SenseClustering::new();
    for (c, &i) in active.iter().enumerate() {
        let next = renumber.len() as i64;
        let l = *renumber.entry(labels[c]).or_insert(next);
        out.insert(ids[i], l)?;
    }
    let mut next = renumber.len() as i64;
    for (i, id) in ids.iter().enumerate() {
        if full_adj[i].is_empty() {
            out.insert(id, next)?;
            next += 1;
        }
    }
    Ok(out)
}

fn absorb_singletons(p: &Problem, labels: &mut [usize]) {
    let n = labels.len();
    for v in 0..n {
        let alone = labels.iter().filter(|&&l| l == labels[v]).count() == 1;
        if !alone {
            continue;
        }
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for &(u, s) in &p.adjacency[v] {
            match acc.iter_mut().find(|(l, _)| *l == labels[u]) {
                Some(e) => e.1 += s,
                None => acc.push((labels[u], s)),
            }
        }
        acc.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        if let Some(&(l, _)) = acc.first() {
            labels[v] = l;
        }
    }
}

/// Exact minimum-loss clustering by enumerating every set partition.
///
/// Ties are broken by fewer clusters, then by the lexicographically
/// smallest assignment over nodes in id order (labels numbered by first
/// occurrence).
pub fn brute_force_cluster(graph: &WordUsageGraph, threshold: f64) -> Result<(SenseClustering, f64)> {
    let ids: Vec<&str> = graph.node_ids().collect();
    let n = ids.len();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(Error::TooLarge {
            nodes: n,
            max: BRUTE_FORCE_MAX_NODES,
        });
    }
    if n == 0 {
        return Ok((SenseClustering::new(), 0.0));
    }
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let edges: Vec<(usize, usize, f64)> = graph
        .edges()
        .map(|(a, b, e)| (index[a], index[b], e.weight))
        .collect();

    let mut rgs = vec![0usize; n];
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    loop {
        let loss: f64 = edges
            .iter()
            .map(|&(a, b, w)| edge_cost(w, threshold, rgs[a] == rgs[b]))
            .sum();
        let clusters = rgs.iter().max().unwrap() + 1;
        let better = match &best {
            None => true,
            Some((bl, bc, _)) => loss < bl - 1e-9 || ((loss - bl).abs() <= 1e-9 && clusters < *bc),
        };
        if better {
            best = Some((loss, clusters, rgs.clone()));
        }
        if !next_restricted_growth(&mut rgs) {
            break;
        }
    }

    let (loss, _, labels) = best.expect("at least one partition");
    let clustering = ids
        .iter()
        .zip(labels)
        .map(|(id, l)| ((*id).to_owned(), l as i64))
        .collect();
    Ok((clustering, loss))
}

/// Advances a restricted growth string (a[0] = 0, a[i] <= 1 + max(a[..i]))
/// to its lexicographic successor. Returns false after the last one.
fn next_restricted_growth(a: &mut [usize]) -> bool {
    let n = a.len();
    for i in (1..n).rev() {
        let max_prefix = a[..i].iter().copied().max().unwrap_or(0);
        if a[i] <= max_prefix {
            a[i] += 1;
            for x in &mut a[i + 1..] {
                *x = 0;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wug::{CharSpan, Grouping, Usage};

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> WordUsageGraph {
        let usages: Vec<Usage> = (0..n)
            .map(|i| Usage {
                id: format!("u{i:02}"),
                lemma: "w".into(),
                pos: None,
                date: None,
                grouping: Grouping::Earlier,
                context: "w".into(),
                target_span: CharSpan::new(0, 1),
                sentence_span: None,
                extra: Default::default(),
            })
            .collect();
        let names: Vec<String> = (0..n).map(|i| format!("u{i:02}")).collect();
        WordUsageGraph::from_scores(
            &usages,
            edges.iter().map(|&(a, b, w)| (names[a].as_str(), names[b].as_str(), w)),
        )
        .unwrap()
    }

    fn labels(c: &SenseClustering) -> Vec<i64> {
        c.iter().map(|(_, l)| l).collect()
    }

    fn clustering(ls: &[i64]) -> SenseClustering {
        ls.iter().enumerate().map(|(i, &l)| (format!("u{i:02}"), l)).collect()
    }

    #[test]
    fn loss_examples() {
        let all_high = graph(3, &[(0, 1, 4.0), (1, 2, 4.0), (0, 2, 4.0)]);
        assert_eq!(clustering_loss(&all_high, &clustering(&[0, 0, 0]), 2.5).unwrap(), 0.0);

        let tri = graph(3, &[(0, 1, 4.0), (1, 2, 4.0), (0, 2, 2.0)]);
        assert_eq!(clustering_loss(&tri, &clustering(&[0, 0, 0]), 2.5).unwrap(), 0.5);
        assert_eq!(clustering_loss(&tri, &clustering(&[0, 0, 1]), 2.5).unwrap(), 1.5);
        // label names do not matter
        assert_eq!(clustering_loss(&tri, &clustering(&[7, 7, -3]), 2.5).unwrap(), 1.5);

        let pair = graph(2, &[(0, 1, 1.0)]);
        assert_eq!(clustering_loss(&pair, &clustering(&[0, 1]), 2.5).unwrap(), 0.0);

        let exact = graph(2, &[(0, 1, 2.5)]);
        assert_eq!(clustering_loss(&exact, &clustering(&[0, 0]), 2.5).unwrap(), 0.0);
        assert_eq!(clustering_loss(&exact, &clustering(&[0, 1]), 2.5).unwrap(), 0.0);

        assert!(matches!(
            clustering_loss(&tri, &clustering(&[0, 0]), 2.5),
            Err(Error::Unassigned(_))
        ));
    }

    #[test]
    fn restricted_growth_counts_bell_numbers() {
        for (n, bell) in [(1, 1), (2, 2), (3, 5), (4, 15), (5, 52), (6, 203)] {
            let mut a = vec![0; n];
            let mut count = 1;
            while next_restricted_growth(&mut a) {
                count += 1;
            }
            assert_eq!(count, bell, "n = {n}");
        }
    }

    #[test]
    fn brute_force_examples() {
        let single = graph(1, &[]);
        let (c, loss) = brute_force_cluster(&single, 2.5).unwrap();
        assert_eq!((labels(&c), loss), (vec![0], 0.0));

        let tri = graph(3, &[(0, 1, 4.0), (1, 2, 4.0), (0, 2, 2.0)]);
        let (c, loss) = brute_force_cluster(&tri, 2.5).unwrap();
        assert_eq!((labels(&c), loss), (vec![0, 0, 0], 0.5));

        let cycle = graph(4, &[(0, 1, 4.0), (1, 2, 1.0), (2, 3, 4.0), (3, 0, 1.0)]);
        let (c, loss) = brute_force_cluster(&cycle, 2.5).unwrap();
        assert_eq!((labels(&c), loss), (vec![0, 0, 1, 1], 0.0));

        // isolated nodes tie at zero loss; fewest clusters wins
        let loose = graph(3, &[]);
        assert_eq!(labels(&brute_force_cluster(&loose, 2.5).unwrap().0), vec![0, 0, 0]);

        assert!(matches!(brute_force_cluster(&graph(13, &[]), 2.5), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn planted_cliques() {
        let mut edges = Vec::new();
        for block in [[0, 1, 2], [3, 4, 5]] {
            for i in 0..3 {
                for j in i + 1..3 {
                    edges.push((block[i], block[j], 4.0));
                }
            }
        }
        edges.push((2, 3, 1.0));
        let g = graph(6, &edges);
        let c = correlation_cluster(&g, &ClusteringParams::default()).unwrap();
        assert_eq!(labels(&c), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(clustering_loss(&g, &c, 2.5).unwrap(), 0.0);
        let (oracle, loss) = brute_force_cluster(&g, 2.5).unwrap();
        assert_eq!(loss, 0.0);
        assert!(oracle.same_partition(&c));
    }

    #[test]
    fn complete_graphs() {
        let n = 5;
        let mut high = Vec::new();
        let mut low = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                high.push((i, j, 4.0));
                low.push((i, j, 1.0));
            }
        }
        let p = ClusteringParams::default();
        assert_eq!(correlation_cluster(&graph(n, &high), &p).unwrap().cluster_count(), 1);
        assert_eq!(correlation_cluster(&graph(n, &low), &p).unwrap().cluster_count(), n);
    }

    #[test]
    fn isolated_nodes_are_singletons() {
        let g = graph(4, &[(0, 1, 4.0)]);
        let c = correlation_cluster(&g, &ClusteringParams::default()).unwrap();
        assert_eq!(labels(&c), vec![0, 0, 1, 2]);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let g = graph(
            6,
            &[(0, 1, 3.0), (1, 2, 2.0), (2, 3, 3.5), (3, 4, 1.5), (4, 5, 4.0), (0, 5, 2.0), (1, 4, 3.0)],
        );
        let p = ClusteringParams {
            seed: 17,
            ..Default::default()
        };
        assert_eq!(correlation_cluster(&g, &p).unwrap(), correlation_cluster(&g, &p).unwrap());
    }

    #[test]
    fn no_singletons_mode_merges_attached_singletons() {
        // node 2 only has a repulsive edge, so the optimizer leaves it alone
        let g = graph(3, &[(0, 1, 4.0), (1, 2, 2.0)]);
        let free = correlation_cluster(&g, &ClusteringParams::default()).unwrap();
        assert_eq!(free.cluster_count(), 2);
        let merged = correlation_cluster(
            &g,
            &ClusteringParams {
                allow_singletons: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(merged.cluster_count(), 1);
    }

    #[test]
    fn rejects_bad_params() {
        let g = graph(2, &[(0, 1, 4.0)]);
        let p = ClusteringParams {
            restarts: 0,
            ..Default::default()
        };
        assert!(matches!(correlation_cluster(&g, &p), Err(Error::InvalidSpec(_))));
    }
}
