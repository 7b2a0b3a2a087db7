//! Plain Nelder-Mead on R^k for the full-matrix bandwidth search.
//!
//! Nothing here knows about bandwidths; the caller optimizes over an
//! unconstrained parameterization and maps back afterwards. The search
//! tracks the best point ever evaluated, not just the final simplex, so a
//! non-convergent run still returns something no worse than anything it
//! visited.

pub(crate) struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Converged when the spread of simplex function values drops below this.
    pub f_tolerance: f64,
}

pub(crate) struct NelderMeadOutcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECTION: f64 = 1.0;
const EXPANSION: f64 = 2.0;
const CONTRACTION: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Relative perturbation used to build the initial simplex, with an
/// absolute floor for coordinates at zero.
const INITIAL_STEP_RELATIVE: f64 = 0.05;
const INITIAL_STEP_ABSOLUTE: f64 = 2.5e-4;

pub(crate) fn minimize(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    options: &NelderMeadOptions,
) -> NelderMeadOutcome {
    let dim = x0.len();
    let f0 = f(x0);
    let mut best = x0.to_vec();
    let mut best_value = f0;
    if options.max_iterations == 0 || dim == 0 {
        return NelderMeadOutcome {
            best,
            best_value,
            iterations: 0,
            converged: false,
        };
    }

    let track = |x: &[f64], v: f64, best: &mut Vec<f64>, best_value: &mut f64| {
        if v < *best_value {
            *best_value = v;
            best.copy_from_slice(x);
        }
    };

    // vertex 0 is x0, vertex j+1 perturbs coordinate j
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    let mut values: Vec<f64> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    values.push(f0);
    for j in 0..dim {
        let mut v = x0.to_vec();
        let step = if v[j] != 0.0 {
            INITIAL_STEP_RELATIVE * v[j].abs()
        } else {
            INITIAL_STEP_ABSOLUTE
        };
        v[j] += step;
        let fv = f(&v);
        track(&v, fv, &mut best, &mut best_value);
        simplex.push(v);
        values.push(fv);
    }

    let mut centroid = vec![0.0; dim];
    let mut candidate = vec![0.0; dim];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iterations {
        iterations += 1;
        // order the simplex: index of best, worst, second worst
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let lo = order[0];
        let hi = order[dim];
        let second_hi = order[dim.saturating_sub(1)];

        if values[hi] - values[lo] <= options.f_tolerance {
            converged = true;
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (j, vertex) in simplex.iter().enumerate() {
            if j == hi {
                continue;
            }
            for (c, x) in centroid.iter_mut().zip(vertex) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= dim as f64);

        let reflect_into = |candidate: &mut [f64], coeff: f64, centroid: &[f64], worst: &[f64]| {
            for i in 0..candidate.len() {
                candidate[i] = centroid[i] + coeff * (centroid[i] - worst[i]);
            }
        };

        reflect_into(&mut candidate, REFLECTION, &centroid, &simplex[hi]);
        let f_reflect = f(&candidate);
        track(&candidate, f_reflect, &mut best, &mut best_value);

        if f_reflect < values[lo] {
            // try to expand further in the same direction
            let reflected = candidate.clone();
            reflect_into(&mut candidate, EXPANSION, &centroid, &simplex[hi]);
            let f_expand = f(&candidate);
            track(&candidate, f_expand, &mut best, &mut best_value);
            if f_expand < f_reflect {
                simplex[hi].copy_from_slice(&candidate);
                values[hi] = f_expand;
            } else {
                simplex[hi].copy_from_slice(&reflected);
                values[hi] = f_reflect;
            }
        } else if f_reflect < values[second_hi] {
            simplex[hi].copy_from_slice(&candidate);
            values[hi] = f_reflect;
        } else {
            // contract toward the centroid, from the better of worst/reflected
            let (anchor, f_anchor) = if f_reflect < values[hi] {
                (candidate.clone(), f_reflect)
            } else {
                (simplex[hi].clone(), values[hi])
            };
            for i in 0..dim {
                candidate[i] = centroid[i] + CONTRACTION * (anchor[i] - centroid[i]);
            }
            let f_contract = f(&candidate);
            track(&candidate, f_contract, &mut best, &mut best_value);
            if f_contract < f_anchor {
                simplex[hi].copy_from_slice(&candidate);
                values[hi] = f_contract;
            } else {
                // shrink everything toward the best vertex
                let anchor_vertex = simplex[lo].clone();
                for (j, vertex) in simplex.iter_mut().enumerate() {
                    if j == lo {
                        continue;
                    }
                    for (x, a) in vertex.iter_mut().zip(&anchor_vertex) {
                        *x = a + SHRINK * (*x - a);
                    }
                    values[j] = f(vertex);
                    track(vertex, values[j], &mut best, &mut best_value);
                }
            }
        }
    }

    NelderMeadOutcome {
        best,
        best_value,
        iterations,
        converged,
    }
}
