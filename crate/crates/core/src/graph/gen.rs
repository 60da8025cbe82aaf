//! Synthetic graph generators: Erdős–Rényi and Barabási–Albert
//! preferential attachment. Both emit undirected edges once (callers
//! double them for directed storage) and are pure functions of the seed.

use crate::rng::SplitMix64;

/// G(n, p): every unordered pair independently with probability `p`.
pub fn gen_er(n: u32, p: f64, seed: u64) -> Vec<(u32, u32)> {
    assert!((0.0..=1.0).contains(&p), "probability out of range");
    let mut rng = SplitMix64::derive(seed, 0x6572);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.next_f64() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Preferential attachment: a complete core of `m + 1` vertices, then
/// every new vertex attaches `m` edges to distinct existing vertices
/// chosen proportionally to degree (endpoint-list sampling).
pub fn gen_ba(n: u32, m: u32, seed: u64) -> Vec<(u32, u32)> {
    assert!(m >= 1, "attachment count must be positive");
    let core = m + 1;
    assert!(n >= core, "need at least m+1 vertices");
    let mut rng = SplitMix64::derive(seed, 0x6261);
    let mut edges = Vec::new();
    // Every endpoint appears once per incident edge; uniform draws from
    // this list are degree-proportional draws.
    let mut endpoints: Vec<u32> = Vec::new();
    for i in 0..core {
        for j in (i + 1)..core {
            edges.push((i, j));
            endpoints.push(i);
            endpoints.push(j);
        }
    }
    let mut chosen = Vec::with_capacity(m as usize);
    for v in core..n {
        chosen.clear();
        while chosen.len() < m as usize {
            let t = endpoints[rng.next_below(endpoints.len() as u64) as usize];
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        for &t in &chosen {
            edges.push((v, t));
            endpoints.push(v);
            endpoints.push(t);
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_full_probability_is_complete() {
        let edges = gen_er(4, 1.0, 1);
        assert_eq!(edges.len(), 6);
    }

    #[test]
    fn er_zero_probability_is_empty() {
        assert!(gen_er(100, 0.0, 1).is_empty());
    }

    #[test]
    fn er_is_deterministic() {
        assert_eq!(gen_er(50, 0.1, 9), gen_er(50, 0.1, 9));
        assert_ne!(gen_er(50, 0.1, 9), gen_er(50, 0.1, 10));
    }

    #[test]
    fn ba_size_and_heavy_tail() {
        let n = 1000u32;
        let m = 5u32;
        let edges = gen_ba(n, m, 7);
        // m edges per vertex beyond the core, plus the core clique.
        let expect = (n - m - 1) as usize * m as usize + (m as usize * (m as usize + 1)) / 2;
        assert_eq!(edges.len(), expect);

        let mut deg = vec![0u32; n as usize];
        for &(a, b) in &edges {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        let mean = deg.iter().map(|&d| d as f64).sum::<f64>() / n as f64;
        let max = *deg.iter().max().unwrap() as f64;
        assert!(
            max >= 10.0 * mean,
            "no heavy tail: max {max}, mean {mean}"
        );
    }

    #[test]
    fn ba_is_deterministic() {
        assert_eq!(gen_ba(200, 3, 4), gen_ba(200, 3, 4));
    }
}
