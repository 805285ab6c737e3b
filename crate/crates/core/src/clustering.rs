//! Global speaker clustering of segment embeddings and conversion of the
//! labelled segments into a diarization.

use crate::diarization::{sort_entries, union_intervals, Diarization, DiarizationEntry};
use crate::embedding::l2_normalize;
use crate::hdbscan::{hdbscan, HdbscanParams};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 - a.b` for unit vectors, clamped at 0.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    (1.0 - dot(a, b)).max(0.0)
}

fn normalized(embeddings: &[Vec<f64>]) -> Vec<Vec<f64>> {
    embeddings
        .iter()
        .map(|e| {
            let mut v = e.clone();
            l2_normalize(&mut v);
            v
        })
        .collect()
}

pub fn cosine_distance_matrix(embeddings: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let unit = normalized(embeddings);
    unit.iter()
        .enumerate()
        .map(|(i, a)| {
            unit.iter()
                .enumerate()
                .map(|(j, b)| if i == j { 0.0 } else { cosine_distance(a, b) })
                .collect()
        })
        .collect()
}

/// HDBSCAN over pairwise cosine distances; `None` marks outliers.
pub fn cluster_embeddings(embeddings: &[Vec<f64>], params: &HdbscanParams) -> Vec<Option<usize>> {
    hdbscan(&cosine_distance_matrix(embeddings), params)
}

/// Gives each outlier the label of the cluster whose renormalised mean
/// embedding is closest (ties: lowest label). Without any cluster, all
/// segments form cluster 0.
pub fn reassign_outliers(labels: &[Option<usize>], embeddings: &[Vec<f64>]) -> Vec<usize> {
    let Some(count) = labels.iter().flatten().max().map(|m| m + 1) else {
        return vec![0; labels.len()];
    };
    let unit = normalized(embeddings);
    let dim = unit.first().map_or(0, Vec::len);
    let mut centroids = vec![vec![0.0; dim]; count];
    for (l, e) in labels.iter().zip(&unit) {
        if let Some(l) = l {
            for (c, x) in centroids[*l].iter_mut().zip(e) {
                *c += x;
            }
        }
    }
    centroids.iter_mut().for_each(|c| l2_normalize(c));
    labels
        .iter()
        .zip(&unit)
        .map(|(l, e)| {
            l.unwrap_or_else(|| {
                let mut best = (f64::INFINITY, 0);
                for (k, c) in centroids.iter().enumerate() {
                    let d = cosine_distance(e, c);
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                best.1
            })
        })
        .collect()
}

/// Unions the `(start, end)` extents of equally labelled segments and
/// names labels `spk0, spk1, ...` in order of their earliest segment.
pub fn merge_and_emit(extents: &[(f64, f64)], labels: &[usize]) -> Diarization {
    let mut order: Vec<usize> = (0..extents.len()).collect();
    order.sort_by(|&a, &b| extents[a].0.total_cmp(&extents[b].0).then(a.cmp(&b)));
    let mut names: Vec<(usize, Vec<(f64, f64)>)> = Vec::new();
    for i in order {
        let slot = match names.iter().position(|(l, _)| *l == labels[i]) {
            Some(s) => s,
            None => {
                names.push((labels[i], Vec::new()));
                names.len() - 1
            }
        };
        names[slot].1.push(extents[i]);
    }
    let mut entries = Vec::new();
    for (k, (_, mut iv)) in names.into_iter().enumerate() {
        for (s, e) in union_intervals(&mut iv) {
            if e > s {
                entries.push(DiarizationEntry::new(format!("spk{k}"), s, e));
            }
        }
    }
    sort_entries(&mut entries);
    Diarization { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn partition(labels: &[Option<usize>]) -> Vec<Vec<usize>> {
        let mut groups: std::collections::BTreeMap<Option<usize>, Vec<usize>> = Default::default();
        for (i, l) in labels.iter().enumerate() {
            groups.entry(*l).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort();
        out
    }

    fn blobs(rng: &mut ChaCha8Rng, per: usize) -> Vec<Vec<f64>> {
        let centres = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mut out = Vec::new();
        for c in centres {
            for _ in 0..per {
                out.push(c.iter().map(|x| x + rng.random_range(-0.1..0.1)).collect());
            }
        }
        out
    }

    #[test]
    fn order_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let emb = blobs(&mut rng, 6);
        let base = cluster_embeddings(&emb, &HdbscanParams::default());
        // min_cluster_size 2 may split a noisy blob, but never across blobs
        for group in partition(&base) {
            if base[group[0]].is_some() {
                assert!(group.iter().all(|&i| i / 6 == group[0] / 6));
            }
        }
        let mut perm: Vec<usize> = (0..emb.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| emb[i].clone()).collect();
        let labels = cluster_embeddings(&shuffled, &HdbscanParams::default());
        let mut unshuffled = vec![None; emb.len()];
        for (pos, &i) in perm.iter().enumerate() {
            unshuffled[i] = labels[pos];
        }
        assert_eq!(partition(&unshuffled), partition(&base));
        let scaled: Vec<Vec<f64>> = emb
            .iter()
            .map(|e| {
                let s = rng.random_range(0.1..10.0);
                e.iter().map(|x| x * s).collect()
            })
            .collect();
        assert_eq!(partition(&cluster_embeddings(&scaled, &HdbscanParams::default())), partition(&base));
    }

    #[test]
    fn outlier_rules() {
        let emb = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let labels = vec![Some(0), Some(0), Some(1), Some(1), None, None];
        assert_eq!(reassign_outliers(&labels, &emb), vec![0, 0, 1, 1, 0, 0]);
        assert_eq!(reassign_outliers(&[None, None], &emb[..2]), vec![0, 0]);
    }

    #[test]
    fn merging() {
        let d = merge_and_emit(&[(3.0, 8.0), (0.0, 5.0), (4.0, 6.0), (2.0, 3.0)], &[7, 7, 2, 7]);
        assert_eq!(
            d.entries,
            vec![DiarizationEntry::new("spk0", 0.0, 8.0), DiarizationEntry::new("spk1", 4.0, 6.0)]
        );
        let d = merge_and_emit(&[(0.0, 5.0), (3.0, 8.0)], &[0, 1]);
        assert_eq!(d.entries.len(), 2);
        let d = merge_and_emit(&[(1.0, 4.0), (1.0, 4.0)], &[0, 0]);
        assert_eq!(d.entries, vec![DiarizationEntry::new("spk0", 1.0, 4.0)]);
    }
}
