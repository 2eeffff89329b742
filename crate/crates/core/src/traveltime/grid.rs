//! CDFs sampled on a uniform lattice and their convolution.

/// CDF samples `cdf[j] = F(origin + j·step)`. The distribution has no mass
/// below `origin`; `cdf[0]` is the atom at `origin` if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub origin: f64,
    pub step: f64,
    pub cdf: Vec<f64>,
}

impl Grid {
    pub fn last_time(&self) -> f64 {
        self.origin + self.step * (self.cdf.len().saturating_sub(1)) as f64
    }

    /// Linear interpolation between samples, right-continuous at the origin.
    /// Times within a relative 1e−12 of the origin count as the origin so
    /// that floating-point sums of constant service times land on the atom.
    pub fn cdf_at(&self, t: f64) -> f64 {
        let snap = 1e-12 * self.origin.abs().max(self.step);
        if t < self.origin - snap || self.cdf.is_empty() {
            return 0.0;
        }
        let x = ((t - self.origin) / self.step).max(0.0);
        let j = x.floor() as usize;
        if j + 1 >= self.cdf.len() {
            return *self.cdf.last().unwrap();
        }
        let frac = x - j as f64;
        self.cdf[j] + frac * (self.cdf[j + 1] - self.cdf[j])
    }

    /// Left limit F(t−).
    pub fn cdf_before(&self, t: f64) -> f64 {
        let snap = 1e-12 * self.origin.abs().max(self.step);
        if t <= self.origin + snap {
            0.0
        } else {
            self.cdf_at(t)
        }
    }

    /// Grows or truncates the sample vector to `len`, padding with the last
    /// value.
    pub fn resized(mut self, len: usize) -> Grid {
        let pad = self.cdf.last().copied().unwrap_or(0.0);
        self.cdf.resize(len, pad);
        self
    }

    /// ∫_0^{last_time} (1 − F(t)) dt.
    pub fn mean(&self) -> f64 {
        let body: f64 = self
            .cdf
            .windows(2)
            .map(|w| 0.5 * self.step * ((1.0 - w[0]) + (1.0 - w[1])))
            .sum();
        self.origin + body
    }
}

/// Distribution of X + Y for independent X ~ `a`, Y ~ `b` on the lattice
/// `a.origin + b.origin + k·step`, k < `len`.
///
/// Y's mass on each cell (t_{j−1}, t_j] is placed at the cell midpoint and
/// its atom at the origin is kept exact; F_X is linearly interpolated at the
/// half-integer offsets. Both inputs need at least `len + 1` samples.
pub fn convolve(a: &Grid, b: &Grid, len: usize) -> Grid {
    debug_assert!((a.step - b.step).abs() <= 1e-12 * a.step);
    let step = a.step;
    let a = a.clone().resized(len + 1);
    let b = b.clone().resized(len + 1);

    let atom = b.cdf[0];
    let mass: Vec<f64> = b.cdf.windows(2).map(|w| w[1] - w[0]).collect();
    let half: Vec<f64> = a.cdf.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();

    let mut out = Vec::with_capacity(len);
    let mut running = 0.0f64;
    for k in 0..len {
        // Σ_{j=1}^{k} mass[j−1] · half[k−j]
        let tail: f64 = mass[..k]
            .iter()
            .zip(half[..k].iter().rev())
            .map(|(m, h)| m * h)
            .sum();
        let v = (atom * a.cdf[k] + tail).clamp(0.0, 1.0).max(running);
        running = v;
        out.push(v);
    }
    Grid {
        origin: a.origin + b.origin,
        step,
        cdf: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn exp_grid(rate: f64, step: f64, len: usize) -> Grid {
        Grid {
            origin: 0.0,
            step,
            cdf: (0..len).map(|j| 1.0 - (-rate * j as f64 * step).exp()).collect(),
        }
    }

    #[test]
    fn point_mass_is_identity() {
        let x = exp_grid(2.0, 0.01, 300);
        let unit = Grid {
            origin: 0.5,
            step: 0.01,
            cdf: vec![1.0; 300],
        };
        let shifted = convolve(&x, &unit, 250);
        assert_eq!(shifted.origin, 0.5);
        for k in 0..250 {
            assert_abs_diff_eq!(shifted.cdf[k], x.cdf[k], epsilon = 1e-15);
        }
        let other_way = convolve(&unit, &x, 250);
        for k in 0..250 {
            assert_abs_diff_eq!(other_way.cdf[k], x.cdf[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn two_exponentials() {
        // rates 2 and 1: F(t) = 1 − 2e^{−t} + e^{−2t}
        let step = 1e-3;
        let g = convolve(&exp_grid(2.0, step, 8001), &exp_grid(1.0, step, 8001), 8000);
        for k in (0..8000).step_by(400) {
            let t = k as f64 * step;
            let exact = 1.0 - 2.0 * (-t).exp() + (-2.0 * t).exp();
            assert_abs_diff_eq!(g.cdf[k], exact, epsilon = 1e-6);
        }
    }

    #[test]
    fn interpolation_and_left_limit() {
        let g = Grid {
            origin: 1.0,
            step: 0.5,
            cdf: vec![0.4, 0.6, 1.0],
        };
        assert_eq!(g.cdf_at(0.99), 0.0);
        assert_eq!(g.cdf_at(1.0), 0.4);
        assert_eq!(g.cdf_at(1.0 - 1e-15), 0.4);
        assert_eq!(g.cdf_before(1.0), 0.0);
        assert_abs_diff_eq!(g.cdf_at(1.25), 0.5, epsilon = 1e-15);
        assert_eq!(g.cdf_at(5.0), 1.0);
    }
}
