//! Arc-factored tree search: Chu-Liu-Edmonds with a single-root
//! constraint, an exhaustive oracle for small sentences, and greedy heads.

use crate::autodiff::{Real, Tensor};
use crate::NnError;

/// `(n+1) x (n+1)` matrix; entry `[h][m]` scores head `h` for modifier `m`.
/// Index 0 is the artificial root; column 0 and the diagonal are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcScores {
    size: usize,
    data: Vec<f64>,
}

impl ArcScores {
    /// All-zero scores for `n` tokens.
    pub fn zeros(n: usize) -> Self {
        ArcScores {
            size: n + 1,
            data: vec![0.0; (n + 1) * (n + 1)],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let size = rows.len();
        if size < 2 || rows.iter().any(|r| r.len() != size) {
            return Err(NnError::Config(format!(
                "arc scores must be a square matrix of size at least 2, got {} rows",
                size
            )));
        }
        Ok(ArcScores {
            size,
            data: rows.concat(),
        })
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self, NnError> {
        if t.rows != t.cols || t.rows < 2 {
            return Err(NnError::Shape {
                op: "arc_scores",
                left: t.shape(),
                right: t.shape(),
            });
        }
        Ok(ArcScores {
            size: t.rows,
            data: t.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
        })
    }

    /// Number of real tokens.
    pub fn n(&self) -> usize {
        self.size - 1
    }

    pub fn get(&self, head: usize, modifier: usize) -> f64 {
        self.data[head * self.size + modifier]
    }

    pub fn set(&mut self, head: usize, modifier: usize, v: f64) {
        self.data[head * self.size + modifier] = v;
    }

    /// Sum of `score[heads[m-1]][m]`, accumulated left to right.
    pub fn tree_score(&self, heads: &[usize]) -> f64 {
        heads
            .iter()
            .enumerate()
            .map(|(i, &h)| self.get(h, i + 1))
            .fold(0.0, |acc, v| acc + v)
    }

    fn masked_rows(&self) -> Vec<Vec<f64>> {
        (0..self.size)
            .map(|h| {
                (0..self.size)
                    .map(|m| if m == 0 || h == m { f64::NEG_INFINITY } else { self.get(h, m) })
                    .collect()
            })
            .collect()
    }
}

/// Per-modifier argmax over heads, smaller head on ties; may be cyclic.
pub fn greedy_heads(a: &ArcScores) -> Vec<usize> {
    (1..=a.n())
        .map(|m| {
            let mut best = 0;
            let mut best_score = a.get(0, m);
            for h in 1..=a.n() {
                if h != m && a.get(h, m) > best_score {
                    best = h;
                    best_score = a.get(h, m);
                }
            }
            best
        })
        .collect()
}

fn find_cycle(parent: &[usize]) -> Option<Vec<usize>> {
    let n = parent.len();
    // 0 unvisited, 1 on current path, 2 done
    let mut state = vec![0u8; n];
    state[0] = 2;
    for start in 1..n {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = parent[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&p| p == v).expect("node on path");
            return Some(path[pos..].to_vec());
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

/// Maximum arborescence rooted at node 0 over a dense score matrix whose
/// forbidden edges hold negative infinity. Returns a parent per node.
fn chu_liu_edmonds(s: &[Vec<f64>]) -> Vec<usize> {
    let n = s.len();
    let mut parent = vec![0usize; n];
    for v in 1..n {
        let mut best: Option<(usize, f64)> = None;
        for (u, row) in s.iter().enumerate() {
            if u != v && best.map_or(true, |(_, b)| row[v] > b) {
                best = Some((u, row[v]));
            }
        }
        parent[v] = best.map_or(0, |(u, _)| u);
    }
    let Some(cycle) = find_cycle(&parent) else {
        return parent;
    };

    let mut in_cycle = vec![false; n];
    for &v in &cycle {
        in_cycle[v] = true;
    }
    let outside: Vec<usize> = (0..n).filter(|&v| !in_cycle[v]).collect();
    let c = outside.len();
    let m = c + 1;
    let mut contracted = vec![vec![f64::NEG_INFINITY; m]; m];
    let mut enters = vec![usize::MAX; m];
    let mut leaves = vec![usize::MAX; m];
    for (i, &u) in outside.iter().enumerate() {
        for (j, &v) in outside.iter().enumerate() {
            if i != j {
                contracted[i][j] = s[u][v];
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for &v in &cycle {
            let w = s[u][v] - s[parent[v]][v];
            if best.map_or(true, |(_, b)| w > b) {
                best = Some((v, w));
            }
        }
        if let Some((v, w)) = best {
            contracted[i][c] = w;
            enters[i] = v;
        }
        if u != 0 {
            let mut best: Option<(usize, f64)> = None;
            for &x in &cycle {
                if best.map_or(true, |(_, b)| s[x][u] > b) {
                    best = Some((x, s[x][u]));
                }
            }
            if let Some((x, w)) = best {
                contracted[c][i] = w;
                leaves[i] = x;
            }
        }
    }

    let sub = chu_liu_edmonds(&contracted);
    let mut result = parent;
    for (j, &v) in outside.iter().enumerate().skip(1) {
        result[v] = if sub[j] == c { leaves[j] } else { outside[sub[j]] };
    }
    let from = sub[c];
    result[enters[from]] = outside[from];
    result
}

/// Highest-scoring tree with exactly one child of the root. Non-projective
/// trees are allowed.
pub fn decode_mst(a: &ArcScores) -> Vec<usize> {
    let n = a.n();
    if n == 1 {
        return vec![0];
    }
    let rows = a.masked_rows();
    let heads = chu_liu_edmonds(&rows)[1..].to_vec();
    if heads.iter().filter(|&&h| h == 0).count() == 1 {
        return heads;
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 1..=n {
        let mut constrained = rows.clone();
        for m in 1..=n {
            if m != r {
                constrained[0][m] = f64::NEG_INFINITY;
            }
        }
        let heads = chu_liu_edmonds(&constrained)[1..].to_vec();
        let score = a.tree_score(&heads);
        if best.as_ref().map_or(true, |(_, b)| score > *b) {
            best = Some((heads, score));
        }
    }
    best.expect("n >= 2 gives candidates").0
}

fn reaches_root(heads: &[usize]) -> bool {
    (1..=heads.len()).all(|start| {
        let mut v = start;
        for _ in 0..heads.len() {
            if v == 0 {
                return true;
            }
            v = heads[v - 1];
        }
        v == 0
    })
}

/// Exhaustive single-root search for `n <= 7`; ties go to the
/// lexicographically smallest head sequence.
pub fn brute_force_mst(a: &ArcScores) -> Result<Vec<usize>, NnError> {
    let n = a.n();
    if n > 7 {
        return Err(NnError::Config(format!("brute-force search limited to 7 tokens, got {n}")));
    }
    let mut heads = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let valid = heads.iter().enumerate().all(|(i, &h)| h != i + 1)
            && heads.iter().filter(|&&h| h == 0).count() == 1
            && reaches_root(&heads);
        if valid {
            let score = a.tree_score(&heads);
            if best.as_ref().map_or(true, |(_, b)| score > *b) {
                best = Some((heads.clone(), score));
            }
        }
        // next sequence in lexicographic order
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(best.expect("a chain tree always exists").0);
            }
            pos -= 1;
            if heads[pos] < n {
                heads[pos] += 1;
                for h in heads.iter_mut().skip(pos + 1) {
                    *h = 0;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> ArcScores {
        let rows: Vec<Vec<f64>> = (0..=n)
            .map(|_| (0..=n).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        ArcScores::from_rows(&rows).unwrap()
    }

    fn two_token_example() -> ArcScores {
        let mut a = ArcScores::zeros(2);
        a.set(0, 1, 5.0);
        a.set(0, 2, 1.0);
        a.set(1, 2, 3.0);
        a.set(2, 1, 0.0);
        a
    }

    #[test]
    fn single_token() {
        let a = ArcScores::zeros(1);
        assert_eq!(decode_mst(&a), vec![0]);
        assert_eq!(brute_force_mst(&a).unwrap(), vec![0]);
        assert_eq!(greedy_heads(&a), vec![0]);
    }

    #[test]
    fn two_token_hand_example() {
        let a = two_token_example();
        // single-root trees: [0,1] = 5 + 3, [2,0] = 0 + 1
        assert_eq!(decode_mst(&a), vec![0, 1]);
        assert_eq!(a.tree_score(&[0, 1]), 8.0);
        assert_eq!(brute_force_mst(&a).unwrap(), vec![0, 1]);
    }

    #[test]
    fn equal_scores_pick_smallest_sequence() {
        let a = ArcScores::zeros(3);
        assert_eq!(brute_force_mst(&a).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn brute_force_refuses_long_sentences() {
        assert!(brute_force_mst(&ArcScores::zeros(8)).is_err());
    }

    #[test]
    fn greedy_keeps_cycles() {
        let mut a = ArcScores::zeros(2);
        a.set(2, 1, 4.0);
        a.set(1, 2, 4.0);
        assert_eq!(greedy_heads(&a), vec![2, 1]);
    }

    #[test]
    fn greedy_matches_column_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(1..9);
            let a = random_scores(&mut rng, n);
            let g = greedy_heads(&a);
            for m in 1..=n {
                for h in 0..=n {
                    if h != m {
                        assert!(a.get(h, m) <= a.get(g[m - 1], m));
                    }
                }
            }
        }
    }

    #[test]
    fn multiple_roots_are_resolved() {
        // every token prefers the root
        let mut a = ArcScores::zeros(3);
        for m in 1..=3 {
            a.set(0, m, 10.0);
        }
        a.set(2, 1, 1.0);
        a.set(2, 3, 2.0);
        let heads = decode_mst(&a);
        assert_eq!(heads, vec![2, 0, 2]);
        assert_eq!(heads, brute_force_mst(&a).unwrap());
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..200 {
            let n = if trial < 150 { 6 } else { rng.gen_range(1..6) };
            let a = random_scores(&mut rng, n);
            let fast = decode_mst(&a);
            let slow = brute_force_mst(&a).unwrap();
            assert!(ordfree_core::conllu::validate_heads(&fast).is_empty(), "{fast:?}");
            assert_eq!(fast.iter().filter(|&&h| h == 0).count(), 1);
            assert_eq!(a.tree_score(&fast), a.tree_score(&slow), "trial {trial}");
        }
    }

    #[test]
    fn handles_long_random_sentences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = random_scores(&mut rng, 60);
            let heads = decode_mst(&a);
            assert!(ordfree_core::conllu::validate_heads(&heads).is_empty());
            let greedy = greedy_heads(&a);
            if ordfree_core::conllu::validate_heads(&greedy).is_empty() {
                assert!(a.tree_score(&heads) >= a.tree_score(&greedy));
            }
        }
    }
}
