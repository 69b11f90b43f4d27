use super::{Digraph, DigraphVariant, TimeDigraphSpec};
use crate::error::{Error, Result};

/// Series digraph on `n` time steps: edge `i → l` for `l > i` whenever the
/// offset `l − i` is adjacent (if enabled) or a multiple of `d` below `k·d`.
pub fn build_series_digraph(n: usize, spec: &TimeDigraphSpec) -> Result<Digraph> {
    if n < 1 {
        return Err(Error::InvalidArgument("series digraph needs at least one node".into()));
    }
    spec.validate()?;
    let offsets = forward_offsets(spec);
    let mut edges = Vec::new();
    for i in 0..n {
        for &delta in &offsets {
            if i + delta < n {
                edges.push((i, i + delta));
            }
        }
    }
    Digraph::new(n, edges)
}

fn forward_offsets(spec: &TimeDigraphSpec) -> Vec<usize> {
    let mut offs: Vec<usize> = (1..spec.k).map(|m| m * spec.d).collect();
    if spec.include_adjacent {
        offs.push(1);
    }
    offs.sort_unstable();
    offs.dedup();
    offs
}

/// Node index of `v_{ij}` (time `i`, channel `j`) in a grid digraph.
pub fn grid_node(i: usize, j: usize, m: usize) -> usize {
    i * m + j
}

/// Grid digraph on `n` time steps × `m` channels. Nodes are ordered
/// time-major. Same-time pairs across channels are joined in both
/// directions.
pub fn build_grid_digraph(n: usize, m: usize, spec: &TimeDigraphSpec) -> Result<Digraph> {
    if n < 1 || m < 1 {
        return Err(Error::InvalidArgument(format!("invalid grid dimensions {n}×{m}")));
    }
    let dense = match spec.variant {
        DigraphVariant::DenseGrid => true,
        DigraphVariant::Grid => {
            spec.validate()?;
            false
        }
        DigraphVariant::Series => {
            return Err(Error::InvalidArgument("grid builder called with series variant".into()))
        }
    };
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..m {
            for l in i..n {
                let delta = l - i;
                if !dense && !(delta == 0 || spec.connects(delta)) {
                    continue;
                }
                for k in 0..m {
                    if delta == 0 && j == k {
                        continue;
                    }
                    edges.push((grid_node(i, j, m), grid_node(l, k, m)));
                }
            }
        }
    }
    Digraph::new(n * m, edges)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn edge_set(g: &Digraph) -> BTreeSet<(usize, usize)> {
        g.edges().iter().copied().collect()
    }

    #[test]
    fn small_series_example() {
        let g = build_series_digraph(3, &TimeDigraphSpec::series(1, 2)).unwrap();
        assert_eq!(edge_set(&g), BTreeSet::from([(0, 1), (1, 2)]));
        let one = build_series_digraph(1, &TimeDigraphSpec::series(4, 32)).unwrap();
        assert_eq!(one.num_edges(), 0);
        assert!(build_series_digraph(0, &TimeDigraphSpec::series(1, 1)).is_err());
    }

    #[test]
    fn supervised_series_out_degree() {
        let g = build_series_digraph(640, &TimeDigraphSpec::series(4, 32)).unwrap();
        let max_out = (0..640).map(|i| g.out_edges(i).len()).max().unwrap();
        assert_eq!(max_out, 32);
        assert!(g.edges().iter().all(|&(i, l)| l > i && l - i < 128));
    }

    #[test]
    fn dense_grid_examples() {
        let spec = TimeDigraphSpec {
            variant: DigraphVariant::DenseGrid,
            ..TimeDigraphSpec::series(1, 1)
        };
        let g = build_grid_digraph(2, 1, &spec).unwrap();
        assert_eq!(edge_set(&g), BTreeSet::from([(0, 1)]));
        let g = build_grid_digraph(1, 2, &spec).unwrap();
        assert_eq!(edge_set(&g), BTreeSet::from([(0, 1), (1, 0)]));
    }

    #[test]
    fn restricted_grid_matches_figure_layout() {
        let spec = TimeDigraphSpec {
            variant: DigraphVariant::Grid,
            ..TimeDigraphSpec::series(4, 3)
        };
        let g = build_grid_digraph(9, 1, &spec).unwrap();
        let mut expected: BTreeSet<(usize, usize)> = (0..8).map(|i| (i, i + 1)).collect();
        for i in 0..9 {
            for s in [4, 8] {
                if i + s < 9 {
                    expected.insert((i, i + s));
                }
            }
        }
        assert_eq!(edge_set(&g), expected);
    }
}
