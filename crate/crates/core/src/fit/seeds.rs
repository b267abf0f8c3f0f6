//! Starting points for the cosine fit.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Common step of an equally spaced grid, if it is one.
pub(crate) fn uniform_step(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let ok = h > 0.0
        && times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.max(1e-300) * 10.0);
    ok.then_some(h)
}

fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let eps = svd.singular_values.max() * 1e-13 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps).ok()
}

/// Roots of `x^k - Σ c_m x^m`.
fn monic_roots(c: &DVector<f64>) -> Vec<Complex64> {
    let k = c.len();
    let mut comp = DMatrix::zeros(k, k);
    for i in 1..k {
        comp[(i, i - 1)] = 1.0;
    }
    for m in 0..k {
        comp[(m, k - 1)] = c[m];
    }
    comp.complex_eigenvalues().iter().copied().collect()
}

/// `(y[i-1] + y[i+1]) / 2`; acts on `cos(ω t)` as multiplication by `cos(ω h)`.
fn average_shift(y: &[f64]) -> Vec<f64> {
    y.windows(3).map(|w| 0.5 * (w[0] + w[2])).collect()
}

/// Frequencies of an undamped cosine sum on a uniform grid.
///
/// Linear prediction in the operator `S` above: the sequence is annihilated
/// by `Π (S - cos ω_k h)`. A constant term is removed first with `S - 1`.
pub(crate) fn cosine_prony(y: &[f64], h: f64, k: usize, dc: bool) -> Option<Vec<f64>> {
    if k == 0 {
        return Some(Vec::new());
    }
    let base: Vec<f64> = if dc {
        average_shift(y)
            .iter()
            .zip(&y[1..])
            .map(|(s, v)| s - v)
            .collect()
    } else {
        y.to_vec()
    };
    let len = base.len();
    if len < 3 * k {
        return None;
    }
    let mut powers = vec![base];
    for _ in 0..k {
        let next = average_shift(powers.last().unwrap());
        powers.push(next);
    }
    // powers[m][i] sits at index i + m of the base sequence.
    let rows = len - 2 * k;
    let a = DMatrix::from_fn(rows, k, |r, m| powers[m][r + k - m]);
    let b = DVector::from_fn(rows, |r, _| powers[k][r]);
    let c = lstsq(&a, &b)?;
    let mut omegas: Vec<f64> = monic_roots(&c)
        .iter()
        .map(|x| x.re.clamp(-1.0, 1.0).acos() / h)
        .collect();
    omegas.sort_by(f64::total_cmp);
    Some(omegas)
}

/// Poles `z = exp((-γ + iω) h)` of a sum of `m` complex exponentials.
pub fn matrix_pencil(y: &[f64], m: usize) -> Option<Vec<Complex64>> {
    let n = y.len();
    if m == 0 || n < 2 * m + 1 {
        return None;
    }
    let l = (n / 2).max(m);
    if n - l < m {
        return None;
    }
    let hankel = DMatrix::from_fn(n - l, l + 1, |i, j| y[i + j]);
    let svd = hankel.svd(false, true);
    let vt = svd.v_t?;
    let v = vt.rows(0, m).transpose();
    let v1 = v.rows(0, l).into_owned();
    let v2 = v.rows(1, l).into_owned();
    let pinv = v1.pseudo_inverse(1e-13).ok()?;
    let g = pinv * v2;
    Some(g.complex_eigenvalues().iter().copied().collect())
}

/// Frequencies and a common decay rate read off pencil poles.
pub(crate) fn damped_from_poles(poles: &[Complex64], h: f64, k: usize) -> Option<(Vec<f64>, f64)> {
    let mut upper: Vec<&Complex64> = poles.iter().filter(|z| z.im > 1e-12).collect();
    if upper.len() < k {
        return None;
    }
    // Keep the strongest-persisting poles when noise adds spurious ones.
    upper.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    upper.truncate(k);
    let mut omegas: Vec<f64> = upper.iter().map(|z| z.arg() / h).collect();
    omegas.sort_by(f64::total_cmp);
    let mut rates: Vec<f64> = upper.iter().map(|z| -z.norm().ln() / h).collect();
    rates.sort_by(f64::total_cmp);
    let gamma = if rates.is_empty() {
        0.0
    } else {
        rates[rates.len() / 2].max(0.0)
    };
    Some((omegas, gamma))
}

/// Residual sum of squares of `y` against `1, cos(ω_j t)`.
fn cosine_rss(times: &[f64], y: &[f64], omegas: &[f64]) -> f64 {
    let a = DMatrix::from_fn(times.len(), omegas.len() + 1, |i, c| {
        if c == 0 {
            1.0
        } else {
            (omegas[c - 1] * times[i]).cos()
        }
    });
    let b = DVector::from_column_slice(y);
    match lstsq(&a, &b) {
        Some(x) => (a * x - b).norm_squared(),
        None => f64::INFINITY,
    }
}

/// Frequencies from a zero-padded (×16) cosine periodogram.
///
/// Peaks are picked one at a time, each jointly fitted with those already
/// chosen, then every pick is re-searched with the others held. The flag is
/// set when a pick lands on an existing one, i.e. fewer than `k` distinct
/// peaks exist.
pub(crate) fn periodogram_peaks(times: &[f64], y: &[f64], k: usize) -> (Vec<f64>, bool) {
    if k == 0 {
        return (Vec::new(), false);
    }
    let n = times.len();
    let span = times[n - 1] - times[0];
    let h = if n > 1 { span / (n - 1) as f64 } else { 1.0 };
    let nyquist = PI / h;
    let d_omega = 2.0 * PI / (16.0 * (span + h));
    let grid: Vec<f64> = (1..(nyquist / d_omega).ceil() as usize)
        .map(|j| j as f64 * d_omega)
        .collect();

    let best_with = |others: &[f64]| -> f64 {
        let mut trial = others.to_vec();
        trial.push(0.0);
        let last = trial.len() - 1;
        let mut best = (f64::INFINITY, grid[0]);
        for &w in &grid {
            trial[last] = w;
            let r = cosine_rss(times, y, &trial);
            if r < best.0 {
                best = (r, w);
            }
        }
        best.1
    };

    let mut omegas: Vec<f64> = Vec::with_capacity(k);
    for _ in 0..k {
        let w = best_with(&omegas);
        omegas.push(w);
    }
    for _ in 0..4 {
        let before = omegas.clone();
        for j in 0..k {
            let others: Vec<f64> = omegas
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .map(|(_, w)| *w)
                .collect();
            omegas[j] = best_with(&others);
        }
        if omegas == before {
            break;
        }
    }
    omegas.sort_by(f64::total_cmp);
    let mut flagged = false;
    for j in 1..k {
        if omegas[j] - omegas[j - 1] < 0.5 * d_omega {
            flagged = true;
            omegas[j] = omegas[j - 1] + d_omega;
        }
    }
    (omegas, flagged)
}

/// Weighted linear least squares for amplitudes and optional constant at
/// fixed frequencies and decay.
pub(crate) fn linear_amplitudes(
    times: &[f64],
    y: &[f64],
    sqrt_w: &[f64],
    omegas: &[f64],
    gamma: f64,
    dc: bool,
) -> (Vec<f64>, f64) {
    let k = omegas.len();
    let cols = k + usize::from(dc);
    if cols == 0 {
        return (Vec::new(), 0.0);
    }
    let a = DMatrix::from_fn(times.len(), cols, |i, c| {
        let e = (-gamma * times[i]).exp() * sqrt_w[i];
        if c < k {
            e * (omegas[c] * times[i]).cos()
        } else {
            e
        }
    });
    let b = DVector::from_fn(times.len(), |i, _| y[i] * sqrt_w[i]);
    match lstsq(&a, &b) {
        Some(x) => {
            let amps = x.rows(0, k).iter().copied().collect();
            (amps, if dc { x[k] } else { 0.0 })
        }
        None => (vec![0.0; k], 0.0),
    }
}
