//! Hierarchical density-based clustering over a precomputed distance
//! matrix, with excess-of-mass cluster selection.

use serde::{Deserialize, Serialize};

/// Distances below this are treated as equal to it when converted to
/// density levels (`lambda = 1 / distance`).
const MIN_DISTANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// Neighbourhood size for core distances, counting the point itself;
    /// 1 makes every core distance zero.
    pub min_samples: usize,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 2,
            min_samples: 1,
        }
    }
}

/// Edge of the single-linkage dendrogram: node `n + i` joins `left` and
/// `right` at `distance`.
#[derive(Debug, Clone, Copy)]
struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

fn core_distances(dist: &[Vec<f64>], min_samples: usize) -> Vec<f64> {
    dist.iter()
        .map(|row| {
            let mut r = row.clone();
            r.sort_by(f64::total_cmp);
            r[(min_samples.max(1) - 1).min(r.len() - 1)]
        })
        .collect()
}

/// Prim's algorithm on the dense mutual-reachability graph.
fn minimum_spanning_tree(dist: &[Vec<f64>], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = dist.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![(f64::INFINITY, 0usize); n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let mr = dist[current][j].max(core[current]).max(core[j]);
            if mr < best[j].0 {
                best[j] = (mr, current);
            }
        }
        let next = (0..n)
            .filter(|&j| !in_tree[j])
            .min_by(|&a, &b| best[a].0.total_cmp(&best[b].0).then(a.cmp(&b)))
            .unwrap();
        edges.push((best[next].1, next, best[next].0));
        in_tree[next] = true;
        current = next;
    }
    edges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn single_linkage(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<Merge> {
    edges.sort_by(|a, b| {
        a.2.total_cmp(&b.2)
            .then(a.0.min(a.1).cmp(&b.0.min(b.1)))
            .then(a.0.max(a.1).cmp(&b.0.max(b.1)))
    });
    let mut parent: Vec<usize> = (0..2 * n).collect();
    let mut size = vec![1usize; 2 * n];
    let mut merges = Vec::with_capacity(n - 1);
    for (a, b, d) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let node = n + merges.len();
        parent[ra] = node;
        parent[rb] = node;
        size[node] = size[ra] + size[rb];
        merges.push(Merge {
            left: ra,
            right: rb,
            distance: d,
            size: size[node],
        });
    }
    merges
}

/// Row of the condensed tree: `child` (a point `< n`, or cluster id
/// offset by `n`) leaves cluster `parent` at density `lambda`.
#[derive(Debug, Clone, Copy)]
struct Condensed {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn leaves(n: usize, merges: &[Merge], node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if x < n {
            out.push(x);
        } else {
            let m = merges[x - n];
            stack.push(m.right);
            stack.push(m.left);
        }
    }
}

fn condense(n: usize, merges: &[Merge], min_cluster_size: usize) -> (Vec<Condensed>, usize) {
    let node_size = |x: usize| if x < n { 1 } else { merges[x - n].size };
    let root = 2 * n - 2;
    let mut rows = Vec::new();
    let mut clusters = 1;
    // (dendrogram node, cluster it currently belongs to)
    let mut queue = std::collections::VecDeque::from([(root, 0usize)]);
    while let Some((node, cluster)) = queue.pop_front() {
        if node < n {
            continue;
        }
        let m = merges[node - n];
        let lambda = 1.0 / m.distance.max(MIN_DISTANCE);
        let (ls, rs) = (node_size(m.left), node_size(m.right));
        let big_l = ls >= min_cluster_size;
        let big_r = rs >= min_cluster_size;
        let fall_out = |child: usize, rows: &mut Vec<Condensed>| {
            let mut pts = Vec::new();
            leaves(n, merges, child, &mut pts);
            for p in pts {
                rows.push(Condensed {
                    parent: cluster,
                    child: p,
                    lambda,
                    size: 1,
                });
            }
        };
        match (big_l, big_r) {
            (true, true) => {
                for (child, size) in [(m.left, ls), (m.right, rs)] {
                    let id = clusters;
                    clusters += 1;
                    rows.push(Condensed {
                        parent: cluster,
                        child: n + id,
                        lambda,
                        size,
                    });
                    queue.push_back((child, id));
                }
            }
            (false, false) => {
                fall_out(m.left, &mut rows);
                fall_out(m.right, &mut rows);
            }
            (true, false) => {
                fall_out(m.right, &mut rows);
                queue.push_back((m.left, cluster));
            }
            (false, true) => {
                fall_out(m.left, &mut rows);
                queue.push_back((m.right, cluster));
            }
        }
    }
    (rows, clusters)
}

/// Cluster label per point, `None` for outliers. Labels are numbered by
/// the lowest point index they contain.
///
/// The root of the cluster tree takes part in the excess-of-mass selection
/// like any other cluster, so a single dense group yields one cluster.
/// Fewer points than `min_cluster_size` are all outliers.
pub fn hdbscan(dist: &[Vec<f64>], params: &HdbscanParams) -> Vec<Option<usize>> {
    let n = dist.len();
    let mcs = params.min_cluster_size.max(2);
    if n < mcs {
        return vec![None; n];
    }
    let core = core_distances(dist, params.min_samples);
    let merges = single_linkage(n, minimum_spanning_tree(dist, &core));
    let (rows, count) = condense(n, &merges, mcs);

    let mut birth = vec![0.0; count];
    let mut parent_of = vec![None; count];
    for r in rows.iter().filter(|r| r.child >= n) {
        birth[r.child - n] = r.lambda;
        parent_of[r.child - n] = Some(r.parent);
    }
    let mut stability = vec![0.0; count];
    for r in &rows {
        stability[r.parent] += (r.lambda - birth[r.parent]) * r.size as f64;
    }

    // children always carry larger ids than their parent
    let mut selected = vec![false; count];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); count];
    for c in 1..count {
        children[parent_of[c].unwrap()].push(c);
    }
    for c in (0..count).rev() {
        if children[c].is_empty() {
            selected[c] = true;
            continue;
        }
        let subtree: f64 = children[c].iter().map(|&k| stability[k]).sum();
        if subtree > stability[c] {
            stability[c] = subtree;
        } else {
            selected[c] = true;
            let mut stack = children[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(children[k].iter().copied());
            }
        }
    }

    let mut point_cluster = vec![0usize; n];
    for r in rows.iter().filter(|r| r.child < n) {
        point_cluster[r.child] = r.parent;
    }
    let mut names: Vec<Option<usize>> = vec![None; count];
    let mut next = 0;
    (0..n)
        .map(|p| {
            let mut c = Some(point_cluster[p]);
            while let Some(k) = c {
                if selected[k] {
                    break;
                }
                c = parent_of[k];
            }
            c.map(|k| {
                *names[k].get_or_insert_with(|| {
                    next += 1;
                    next - 1
                })
            })
        })
        .collect()
}
