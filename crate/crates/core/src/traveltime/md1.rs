//! Waiting-time distribution of the M/D/1 queue.
//!
//! The classical closed series
//!
//! P(W ≤ t) = (1 − ρ) Σ_{j=0}^{⌊t/D⌋} e^{λ(t − jD)} (−λ(t − jD))^j / j!
//!
//! is exact, but its terms alternate in sign and grow like e^{2λt}, so in
//! double precision it is only usable for small λt. Beyond that point the
//! CDF is continued with the renewal equation it satisfies,
//!
//! G(t) = 1 − ρ + (ρ / D) ∫_{t−D}^{t} G(s) ds,     G(s) = 0 for s < 0,
//!
//! integrated over the piecewise-linear interpolant of the already computed
//! samples. The recursion is a contraction (ρ < 1), so rounding does not grow.

/// Largest accepted rounding-error estimate for a series evaluation.
const SERIES_ERROR_BUDGET: f64 = 1e-10;

/// Series value of P(W ≤ t) and an estimate of its rounding error, or `None`
/// when more than `max_terms` terms would be needed.
pub fn waiting_cdf_series(lambda: f64, mu: f64, t: f64, max_terms: usize) -> Option<(f64, f64)> {
    if t < 0.0 {
        return Some((0.0, 0.0));
    }
    let rho = lambda / mu;
    if lambda == 0.0 {
        return Some((1.0, 0.0));
    }
    let d = 1.0 / mu;
    // j runs while j·D ≤ t
    let last = (t * mu).floor() as usize;
    let terms = last + 1;
    if terms > max_terms {
        return None;
    }
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    let mut ln_fact = 0.0;
    for j in 0..terms {
        if j > 0 {
            ln_fact += (j as f64).ln();
        }
        let x = lambda * (t - j as f64 * d);
        let x = x.max(0.0);
        let magnitude = if j == 0 {
            x.exp()
        } else if x == 0.0 {
            0.0
        } else {
            (x + j as f64 * x.ln() - ln_fact).exp()
        };
        let signed = if j % 2 == 0 { magnitude } else { -magnitude };
        sum += signed;
        abs_sum += magnitude;
    }
    let value = (1.0 - rho) * sum;
    let err = (1.0 - rho) * abs_sum * f64::EPSILON * terms as f64 * 4.0;
    Some((value.clamp(0.0, 1.0), err))
}

/// P(W ≤ j·step) for j = 0..len.
pub fn waiting_cdf_grid(lambda: f64, mu: f64, step: f64, len: usize, max_terms: usize) -> Vec<f64> {
    let mut g = Vec::with_capacity(len);
    if len == 0 {
        return g;
    }
    if lambda <= 0.0 {
        g.resize(len, 1.0);
        return g;
    }
    let rho = lambda / mu;
    let d = 1.0 / mu;
    let k = rho / d;

    // cumulative integral of the interpolant at each node
    let mut cum = Vec::with_capacity(len);
    let mut use_series = true;
    for n in 0..len {
        let u = n as f64 * step;
        let mut value = None;
        if use_series {
            match waiting_cdf_series(lambda, mu, u, max_terms) {
                Some((v, err)) if err <= SERIES_ERROR_BUDGET => value = Some(v),
                _ => use_series = false,
            }
        }
        let v = match value {
            Some(v) => v,
            None if n == 0 => 1.0 - rho,
            None => {
                let (a, b) = window_integral(&g, &cum, n, step, u - d);
                ((1.0 - rho + k * a) / (1.0 - k * b)).clamp(0.0, 1.0)
            }
        };
        let c = if n == 0 {
            0.0
        } else {
            cum[n - 1] + 0.5 * step * (g[n - 1] + v)
        };
        g.push(v);
        cum.push(c);
    }
    // enforce monotonicity against rounding
    for n in 1..len {
        if g[n] < g[n - 1] {
            g[n] = g[n - 1];
        }
    }
    g
}

/// ∫_{lower}^{u_n} of the interpolant, written as a + b·G_n since the newest
/// sample G_n is still unknown.
fn window_integral(g: &[f64], cum: &[f64], n: usize, step: f64, lower: f64) -> (f64, f64) {
    let prev = n - 1;
    // ∫_0^{u_n} = cum[prev] + step/2 (g[prev] + G_n)
    let mut a = cum[prev] + 0.5 * step * g[prev];
    let mut b = 0.5 * step;
    if lower <= 0.0 {
        return (a, b);
    }
    let m = ((lower / step).floor() as usize).min(prev);
    let dx = lower - m as f64 * step;
    if m == prev {
        // lower end falls in the newest cell
        a -= cum[prev] + dx * g[prev] - dx * dx / (2.0 * step) * g[prev];
        b -= dx * dx / (2.0 * step);
    } else {
        let below = cum[m] + dx * g[m] + dx * dx / (2.0 * step) * (g[m + 1] - g[m]);
        a -= below;
    }
    (a, b)
}

/// Pollaczek–Khinchine mean sojourn time of M/D/1: D + λD² / (2(1 − ρ)).
pub fn mean_sojourn(lambda: f64, mu: f64) -> f64 {
    let d = 1.0 / mu;
    let rho = lambda / mu;
    d + lambda * d * d / (2.0 * (1.0 - rho))
}
