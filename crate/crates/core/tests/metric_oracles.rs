//! Closed-form metrics against brute-force oracles written independently
//! here, over every label vector of length 2..=5 on up to 3 categories.

use std::time::Instant;

use darklabel_core::evaluation::{
    accuracy, cohen_kappa, kendall_tau_b, levenshtein, mse, normalized_edit_similarity, spearman,
};
use darklabel_core::Error;
use proptest::prelude::*;

const TOL: f64 = 1e-9;

/// All vectors of length `n` over `0..k`.
fn all_vectors(n: usize, k: u32) -> Vec<Vec<u32>> {
    (0..k.pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let d = code % k;
                    code /= k;
                    d
                })
                .collect()
        })
        .collect()
}

/// Kappa from integer confusion-matrix counts:
/// `(n * trace - sum(row * col)) / (n^2 - sum(row * col))`.
fn kappa_oracle(a: &[u32], b: &[u32], k: usize) -> f64 {
    let n = a.len() as i64;
    let mut m = vec![vec![0i64; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        m[x as usize][y as usize] += 1;
    }
    let trace: i64 = (0..k).map(|i| m[i][i]).sum();
    let chance: i64 = (0..k)
        .map(|i| {
            let row: i64 = m[i].iter().sum();
            let col: i64 = m.iter().map(|r| r[i]).sum();
            row * col
        })
        .sum();
    if n * n == chance {
        return 1.0;
    }
    (n * trace - chance) as f64 / (n * n - chance) as f64
}

/// Rank by counting: 1 + #smaller + (#equal - 1) / 2.
fn counting_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let smaller = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    pearson_oracle(&counting_ranks(a), &counting_ranks(b))
}

/// Sign-product sum over all pairs with the tie-corrected denominator.
fn kendall_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let sgn = |d: f64| (d > 0.0) as i64 - (d < 0.0) as i64;
    let mut s = 0i64;
    let (mut tied_a, mut tied_b) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            s += sgn(a[i] - a[j]) * sgn(b[i] - b[j]);
            tied_a += (a[i] == a[j]) as i64;
            tied_b += (b[i] == b[j]) as i64;
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    s as f64 / (((n0 - tied_a) * (n0 - tied_b)) as f64).sqrt()
}

fn is_constant(v: &[u32]) -> bool {
    v.iter().all(|&x| x == v[0])
}

#[test]
fn kappa_matches_confusion_matrix_oracle() {
    let start = Instant::now();
    let mut checked = 0;
    for k in 2..=3u32 {
        for n in 1..=5 {
            let vectors = all_vectors(n, k);
            for a in &vectors {
                for b in &vectors {
                    let got: f64 = cohen_kappa(a, b).unwrap();
                    let want = kappa_oracle(a, b, k as usize);
                    assert!((got - want).abs() <= TOL, "{a:?} {b:?}: {got} vs {want}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 60_000);
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn rank_correlations_match_oracles() {
    let start = Instant::now();
    for k in 2..=3u32 {
        for n in 2..=5 {
            let vectors = all_vectors(n, k);
            for a in &vectors {
                for b in &vectors {
                    let fa: Vec<f64> = a.iter().map(|&x| x as f64).collect();
                    let fb: Vec<f64> = b.iter().map(|&x| x as f64).collect();
                    if is_constant(a) || is_constant(b) {
                        assert!(matches!(
                            spearman(&fa, &fb),
                            Err(Error::DegenerateConstantVector)
                        ));
                        assert!(matches!(
                            kendall_tau_b(&fa, &fb),
                            Err(Error::DegenerateConstantVector)
                        ));
                        continue;
                    }
                    let rho: f64 = spearman(&fa, &fb).unwrap();
                    let tau: f64 = kendall_tau_b(&fa, &fb).unwrap();
                    assert!(
                        (rho - spearman_oracle(&fa, &fb)).abs() <= TOL,
                        "{a:?} {b:?}"
                    );
                    assert!((tau - kendall_oracle(&fa, &fb)).abs() <= TOL, "{a:?} {b:?}");
                }
            }
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

fn permutations(n: usize) -> Vec<Vec<f64>> {
    fn go(rest: &mut Vec<f64>, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            cur.push(x);
            go(rest, cur, out);
            cur.pop();
            rest.insert(i, x);
        }
    }
    let mut out = Vec::new();
    go(
        &mut (1..=n).map(|x| x as f64).collect(),
        &mut Vec::new(),
        &mut out,
    );
    out
}

#[test]
fn permutations_without_ties_match_textbook_forms() {
    for n in 2..=5 {
        let identity: Vec<f64> = (1..=n).map(|x| x as f64).collect();
        for p in permutations(n) {
            let d2: f64 = identity.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
            let nf = n as f64;
            let rho_closed = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
            let rho: f64 = spearman(&identity, &p).unwrap();
            assert!((rho - rho_closed).abs() <= TOL);
            let tau: f64 = kendall_tau_b(&identity, &p).unwrap();
            assert!((tau - kendall_oracle(&identity, &p)).abs() <= TOL);
        }
    }
}

#[test]
fn hand_examples() {
    let acc: f64 = accuracy(&[Some("P"), Some("P"), Some("N")], &["P", "N", "N"]).unwrap();
    assert_eq!(acc, 2.0 / 3.0);
    let acc: f64 = accuracy(&[None, Some("P")], &["P", "P"]).unwrap();
    assert_eq!(acc, 0.5);
    let acc: f64 = accuracy(&[Some(1), Some(2)], &[1, 2]).unwrap();
    assert_eq!(acc, 1.0);

    let m = mse::<f64>(&[Some(1), Some(3), Some(5)], &[1, 1, 5]).unwrap();
    assert_eq!((m.mse, m.excluded), (4.0 / 3.0, 0));
    let m = mse::<f64>(&[None, Some(2)], &[1, 2]).unwrap();
    assert_eq!((m.mse, m.excluded), (0.0, 1));
    let m = mse::<f64>(&[Some(2), Some(4)], &[2, 4]).unwrap();
    assert_eq!((m.mse, m.excluded), (0.0, 0));
    assert!(matches!(mse::<f64>(&[None], &[1]), Err(Error::AllExcluded)));

    let k: f64 = cohen_kappa(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap();
    assert_eq!(k, 0.0);
    let k: f64 = cohen_kappa(&[1, 1, 2, 2, 3], &[1, 1, 2, 3, 3]).unwrap();
    assert!((k - (0.8 - 0.32) / 0.68).abs() < 1e-12);
    assert!((k - 0.7059).abs() < 1e-4);
    let k: f64 = cohen_kappa(&["a", "b"], &["a", "b"]).unwrap();
    assert_eq!(k, 1.0);

    let up = [1.0, 2.0, 3.0, 4.0];
    let down = [4.0, 3.0, 2.0, 1.0];
    assert_eq!(spearman::<f64>(&up, &up).unwrap(), 1.0);
    assert_eq!(kendall_tau_b::<f64>(&up, &up).unwrap(), 1.0);
    assert_eq!(spearman::<f64>(&up, &down).unwrap(), -1.0);
    assert_eq!(kendall_tau_b::<f64>(&up, &down).unwrap(), -1.0);
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [1.0, 3.0, 2.0, 4.0, 5.0];
    assert!((spearman::<f64>(&a, &b).unwrap() - 0.9).abs() < 1e-12);
    assert!((kendall_tau_b::<f64>(&a, &b).unwrap() - 0.8).abs() < 1e-12);

    assert!(matches!(
        accuracy::<f64, &str>(&[Some("a")], &["a", "b"]),
        Err(Error::LengthMismatch(1, 2))
    ));
    assert!(matches!(accuracy::<f64, &str>(&[], &[]), Err(Error::Empty)));
}

#[test]
fn edit_similarity_examples() {
    assert_eq!(normalized_edit_similarity::<f64>("abc", "abc"), 1.0);
    assert_eq!(
        normalized_edit_similarity::<f64>("kitten", "sitting"),
        1.0 - 3.0 / 7.0
    );
    assert_eq!(normalized_edit_similarity::<f64>("", "abc"), 0.0);
    assert_eq!(levenshtein("kitten", "sitting"), 3);
}

/// Full-matrix Levenshtein, the textbook recurrence.
fn levenshtein_oracle(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1)
                .min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn levenshtein_is_a_metric(a in "[abcé ]{0,8}", b in "[abcé ]{0,8}", c in "[abcé ]{0,8}") {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein_oracle(&a, &b));
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        let s: f64 = normalized_edit_similarity(&a, &b);
        prop_assert_eq!(s, normalized_edit_similarity::<f64>(&b, &a));
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s == 1.0, a == b);
    }

    #[test]
    fn accuracy_and_mse_are_permutation_equivariant(
        pairs in prop::collection::vec((prop::option::of(1u32..=5), 1u32..=5), 1..20),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let split = |v: &[(Option<u32>, u32)]| -> (Vec<Option<u32>>, Vec<u32>) {
            v.iter().cloned().unzip()
        };
        let (p1, g1) = split(&pairs);
        let (p2, g2) = split(&shuffled);
        let a1: f64 = accuracy(&p1, &g1).unwrap();
        let a2: f64 = accuracy(&p2, &g2).unwrap();
        prop_assert!((a1 - a2).abs() < 1e-12);
        match (mse::<f64>(&p1, &g1), mse::<f64>(&p2, &g2)) {
            (Ok(m1), Ok(m2)) => {
                prop_assert!((m1.mse - m2.mse).abs() < 1e-12);
                prop_assert_eq!(m1.excluded, m2.excluded);
            }
            (Err(Error::AllExcluded), Err(Error::AllExcluded)) => {}
            other => prop_assert!(false, "{:?}", other),
        }
    }
}
