//! Subtraction-free elimination kernels for generator matrices.
//!
//! All routines work on off-diagonal rates only and rebuild diagonals as sums
//! of non-negative quantities (Grassmann–Taksar–Heyman style state
//! reduction), so no cancellation of like-signed numbers occurs.

use std::collections::VecDeque;

use nalgebra::DMatrix;

/// Elimination hit a state with no remaining exit rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular {
    pub state: usize,
}

/// Stationary vector of an irreducible generator given by its off-diagonal
/// rates (the diagonal of `rates` is ignored).
pub fn gth_stationary(rates: &DMatrix<f64>) -> Result<Vec<f64>, Singular> {
    let n = rates.nrows();
    let mut a = rates.clone();
    let mut exit = vec![0.0; n];
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| a[(k, j)]).sum();
        if !(s > 0.0) {
            return Err(Singular { state: k });
        }
        exit[k] = s;
        for i in 0..k {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            let f = aik / s;
            for j in 0..k {
                if j != i {
                    a[(i, j)] += f * a[(k, j)];
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    if n == 0 {
        return Ok(pi);
    }
    pi[0] = 1.0;
    for k in 1..n {
        let inflow: f64 = (0..k).map(|i| pi[i] * a[(i, k)]).sum();
        pi[k] = inflow / exit[k];
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// `reach[i][j]`: `j` can be reached from `i` along positive rates.
fn reachability(rates: &DMatrix<f64>) -> Vec<Vec<bool>> {
    let n = rates.nrows();
    (0..n)
        .map(|start| {
            let mut seen = vec![false; n];
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                for j in 0..n {
                    if j != i && rates[(i, j)] > 0.0 && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            seen
        })
        .collect()
}

/// Closed communicating classes, each sorted, ordered by smallest member.
pub fn closed_classes(rates: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = rates.nrows();
    let reach = reachability(rates);
    let mut assigned = vec![false; n];
    let mut classes = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let class: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        class.iter().for_each(|&j| assigned[j] = true);
        let closed = (0..n).all(|j| !reach[i][j] || class.contains(&j));
        if closed {
            classes.push(class);
        }
    }
    classes
}

/// Every extreme stationary distribution of a (possibly reducible) generator:
/// one per closed class, supported on that class.
pub fn extreme_stationary(rates: &DMatrix<f64>) -> Result<Vec<Vec<f64>>, Singular> {
    let n = rates.nrows();
    closed_classes(rates)
        .into_iter()
        .map(|class| {
            let sub =
                DMatrix::from_fn(class.len(), class.len(), |i, j| rates[(class[i], class[j])]);
            let local = gth_stationary(&sub).map_err(|s| Singular {
                state: class[s.state],
            })?;
            let mut full = vec![0.0; n];
            for (i, &k) in class.iter().enumerate() {
                full[k] = local[i];
            }
            Ok(full)
        })
        .collect()
}

/// Mean absorption times of a transient set.
///
/// `rates` holds the off-diagonal rates inside the transient set, `exit` the
/// total rate from each transient state into the absorbing set. Solves
/// `(exit_k + Σ_l a(k,l)) τ_k − Σ_l a(k,l) τ_l = 1`. Returns the states that
/// cannot reach absorption when the system is singular.
pub fn absorption_times(rates: &DMatrix<f64>, exit: &[f64]) -> Result<Vec<f64>, Vec<usize>> {
    let n = exit.len();
    // States that cannot reach an exit make the system singular.
    let mut can_exit: Vec<bool> = exit.iter().map(|&e| e > 0.0).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            if !can_exit[i] && (0..n).any(|j| j != i && rates[(i, j)] > 0.0 && can_exit[j]) {
                can_exit[i] = true;
                changed = true;
            }
        }
    }
    let stuck: Vec<usize> = (0..n).filter(|&i| !can_exit[i]).collect();
    if !stuck.is_empty() {
        return Err(stuck);
    }

    let mut a = rates.clone();
    let mut e = exit.to_vec();
    let mut rhs = vec![1.0; n];
    let mut diag = vec![0.0; n];
    for k in (0..n).rev() {
        let d = e[k] + (0..k).map(|l| a[(k, l)]).sum::<f64>();
        diag[k] = d;
        for i in 0..k {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            let f = aik / d;
            for l in 0..k {
                if l != i {
                    a[(i, l)] += f * a[(k, l)];
                }
            }
            e[i] += f * e[k];
            rhs[i] += f * rhs[k];
        }
    }
    let mut tau = vec![0.0; n];
    for k in 0..n {
        let carried: f64 = (0..k).map(|l| a[(k, l)] * tau[l]).sum();
        tau[k] = (rhs[k] + carried) / diag[k];
    }
    Ok(tau)
}

/// Off-diagonal rates of a generator whose nonzeros satisfy `|i − j| ≤ width`.
///
/// Level-major numbering of a queue with `|K|` environment states gives
/// `width = 2|K| − 1`.
#[derive(Debug, Clone)]
pub struct BandedRates {
    size: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedRates {
    pub fn new(size: usize, width: usize) -> Self {
        Self {
            size,
            width,
            data: vec![0.0; size * (2 * width + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(
            i.abs_diff(j) <= self.width,
            "({i},{j}) outside band {}",
            self.width
        );
        i * (2 * self.width + 1) + (j + self.width - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.width {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, rate: f64) {
        if i != j {
            let o = self.offset(i, j);
            self.data[o] += rate;
        }
    }

    /// Stationary vector by state reduction from the last state down.
    ///
    /// Fill-in stays inside the band, so the cost is `O(size · width²)`.
    pub fn stationary(mut self) -> Result<Vec<f64>, Singular> {
        let n = self.size;
        let w = self.width;
        let mut exit = vec![0.0; n];
        for k in (1..n).rev() {
            let lo = k.saturating_sub(w);
            let s: f64 = (lo..k).map(|j| self.get(k, j)).sum();
            if !(s > 0.0) {
                return Err(Singular { state: k });
            }
            exit[k] = s;
            for i in lo..k {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                let f = aik / s;
                for j in lo..k {
                    if j != i {
                        let akj = self.get(k, j);
                        if akj != 0.0 {
                            let o = self.offset(i, j);
                            self.data[o] += f * akj;
                        }
                    }
                }
            }
        }
        let mut pi = vec![0.0; n];
        if n == 0 {
            return Ok(pi);
        }
        pi[0] = 1.0;
        for k in 1..n {
            let lo = k.saturating_sub(w);
            let inflow: f64 = (lo..k).map(|i| pi[i] * self.get(i, k)).sum();
            pi[k] = inflow / exit[k];
            // Heavy upper levels (non-ergodic truncations) would overflow.
            if pi[k] > 1e250 {
                pi[..=k].iter_mut().for_each(|p| *p *= 1e-250);
            }
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        Ok(pi)
    }
}
