//! Factorization of the small symmetric systems arising in local fits.
//!
//! The normal matrices here are k x k with k at most degree + 1 (univariate)
//! or dim + 1 (multivariate), so a dense LDL^T with diagonal pivoting on a
//! flat buffer is both simple and fast enough for the cross-validation hot
//! loop, where it runs once per candidate bandwidth per left-out point.

/// Result of [`ldl_factor`]: the numerical rank and the ratio of the largest
/// to smallest accepted pivot (infinite when the matrix is rank deficient).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Factorization {
    pub rank: usize,
    pub condition: f64,
}

impl Factorization {
    pub fn is_full_rank(&self, k: usize) -> bool {
        self.rank == k
    }
}

/// Relative pivot threshold below which a column is declared dependent.
const PIVOT_TOLERANCE: f64 = 1e-14;

/// Factors the symmetric positive semidefinite matrix `a` (k x k, row-major,
/// both triangles populated) as `P A P^T = L D L^T`, choosing the largest
/// remaining diagonal entry as the pivot at each step.
///
/// On return the strict lower triangle of `a` holds `L` and the diagonal
/// holds `D`, both in pivoted order; `perm[j]` is the original index of the
/// j-th pivot. Entries above the diagonal are left stale.
pub(crate) fn ldl_factor(a: &mut [f64], k: usize, perm: &mut [usize]) -> Factorization {
    debug_assert_eq!(a.len(), k * k);
    debug_assert_eq!(perm.len(), k);
    for (j, p) in perm.iter_mut().enumerate() {
        *p = j;
    }
    if k == 0 {
        return Factorization {
            rank: 0,
            condition: 1.0,
        };
    }
    let scale = (0..k).map(|i| a[i * k + i]).fold(0.0f64, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Factorization {
            rank: 0,
            condition: f64::INFINITY,
        };
    }
    let tolerance = scale * PIVOT_TOLERANCE;
    let mut d_max = 0.0f64;
    let mut d_min = f64::INFINITY;
    for j in 0..k {
        let mut p = j;
        for i in j + 1..k {
            if a[i * k + i] > a[p * k + p] {
                p = i;
            }
        }
        let pivot = a[p * k + p];
        if !(pivot > tolerance) {
            return Factorization {
                rank: j,
                condition: f64::INFINITY,
            };
        }
        if p != j {
            swap_symmetric(a, k, j, p);
            perm.swap(j, p);
        }
        d_max = d_max.max(pivot);
        d_min = d_min.min(pivot);
        // scale column j into multipliers, then update the trailing block
        for i in j + 1..k {
            a[i * k + j] /= pivot;
        }
        for i in j + 1..k {
            let li = a[i * k + j];
            for m in j + 1..k {
                a[i * k + m] -= li * pivot * a[m * k + j];
            }
        }
    }
    Factorization {
        rank: k,
        condition: d_max / d_min,
    }
}

fn swap_symmetric(a: &mut [f64], k: usize, i: usize, j: usize) {
    for c in 0..k {
        a.swap(i * k + c, j * k + c);
    }
    for r in 0..k {
        a.swap(r * k + i, r * k + j);
    }
}

/// Solves `A x = b` given the output of [`ldl_factor`] on a full-rank
/// matrix. `x` and `b` may alias other storage but not each other.
pub(crate) fn ldl_solve(a: &[f64], k: usize, perm: &[usize], b: &[f64], x: &mut [f64]) {
    debug_assert_eq!(b.len(), k);
    debug_assert_eq!(x.len(), k);
    // work in pivoted order inside x, unpermute at the end
    for j in 0..k {
        x[j] = b[perm[j]];
    }
    for j in 0..k {
        let xj = x[j];
        for i in j + 1..k {
            x[i] -= a[i * k + j] * xj;
        }
    }
    for (j, v) in x.iter_mut().enumerate() {
        *v /= a[j * k + j];
    }
    for j in (0..k).rev() {
        let mut acc = x[j];
        for i in j + 1..k {
            acc -= a[i * k + j] * x[i];
        }
        x[j] = acc;
    }
    // x currently holds the solution in pivoted order
    let mut scratch = [0.0f64; 8];
    let tmp: &mut [f64] = if k <= 8 {
        &mut scratch[..k]
    } else {
        return unpermute_heap(perm, x, k);
    };
    tmp.copy_from_slice(&x[..k]);
    for j in 0..k {
        x[perm[j]] = tmp[j];
    }
}

fn unpermute_heap(perm: &[usize], x: &mut [f64], k: usize) {
    let tmp = x.to_vec();
    for j in 0..k {
        x[perm[j]] = tmp[j];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_spd(k: usize, rng: &mut impl Rng) -> Vec<f64> {
        // G^T G + small ridge is symmetric positive definite
        let g = DMatrix::<f64>::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
        let a = g.transpose() * &g + DMatrix::identity(k, k) * 1e-3;
        a.row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
            .collect()
    }

    fn solve_via_ldl(a: &[f64], k: usize, b: &[f64]) -> Option<(Vec<f64>, f64)> {
        let mut fac = a.to_vec();
        let mut perm = vec![0usize; k];
        let f = ldl_factor(&mut fac, k, &mut perm);
        if !f.is_full_rank(k) {
            return None;
        }
        let mut x = vec![0.0; k];
        ldl_solve(&fac, k, &perm, b, &mut x);
        Some((x, f.condition))
    }

    #[test]
    fn matches_nalgebra_on_random_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for k in 1..=6 {
            for _ in 0..50 {
                let a = random_spd(k, &mut rng);
                let b: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let (x, condition) = solve_via_ldl(&a, k, &b).expect("SPD matrix must factor");
                let am = DMatrix::from_row_slice(k, k, &a);
                let reference = am
                    .clone()
                    .lu()
                    .solve(&DVector::from_column_slice(&b))
                    .expect("nalgebra solve");
                for i in 0..k {
                    assert!(
                        (x[i] - reference[i]).abs() < 1e-8 * (1.0 + reference[i].abs()),
                        "k={k} i={i}: {} vs {}",
                        x[i],
                        reference[i]
                    );
                }
                assert!(condition >= 1.0);
            }
        }
    }

    #[test]
    fn detects_rank_deficiency() {
        // rank-1 matrix v v^T
        let v = [1.0, -2.0, 0.5];
        let mut a = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                a[i * 3 + j] = v[i] * v[j];
            }
        }
        let mut perm = vec![0usize; 3];
        let f = ldl_factor(&mut a, 3, &mut perm);
        assert!(!f.is_full_rank(3));
        assert_eq!(f.rank, 1);
        assert!(f.condition.is_infinite());
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let mut a = vec![0.0; 4];
        let mut perm = vec![0usize; 2];
        let f = ldl_factor(&mut a, 2, &mut perm);
        assert_eq!(f.rank, 0);
    }

    #[test]
    fn condition_reflects_diagonal_spread() {
        // diagonal matrix: pivots are exactly the entries
        let mut a = vec![4.0, 0.0, 0.0, 1e-4];
        let mut perm = vec![0usize; 2];
        let f = ldl_factor(&mut a, 2, &mut perm);
        assert!(f.is_full_rank(2));
        assert!((f.condition - 4e4).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn reconstructs_rhs(seed in 0u64..500) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let k = rng.gen_range(1..=5);
            let a = random_spd(k, &mut rng);
            let b: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (x, _) = solve_via_ldl(&a, k, &b).unwrap();
            for i in 0..k {
                let mut acc = 0.0;
                for j in 0..k {
                    acc += a[i * k + j] * x[j];
                }
                prop_assert!((acc - b[i]).abs() < 1e-7);
            }
        }
    }
}
