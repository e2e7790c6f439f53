//! Composite Newton–Cotes rules on uniform node sets.

/// Evenly spaced nodes from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n)
                .map(|k| if k == n - 1 { b } else { a + k as f64 * h })
                .collect()
        }
    }
}

/// Composite Simpson weights for `n` uniformly spaced nodes with spacing `h`.
///
/// An odd number of intervals closes with Simpson's 3/8 rule over the last
/// three; two nodes fall back to the trapezoid rule. All weights are
/// positive.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    match n {
        0 | 1 => return w,
        2 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
            return w;
        }
        _ => {}
    }
    let intervals = n - 1;
    let simpson_intervals = if intervals.is_multiple_of(2) {
        intervals
    } else {
        intervals - 3
    };
    for k in (0..simpson_intervals).step_by(2) {
        w[k] += h / 3.0;
        w[k + 1] += 4.0 * h / 3.0;
        w[k + 2] += h / 3.0;
    }
    if simpson_intervals < intervals {
        let k = simpson_intervals;
        w[k] += 3.0 * h / 8.0;
        w[k + 1] += 9.0 * h / 8.0;
        w[k + 2] += 9.0 * h / 8.0;
        w[k + 3] += 3.0 * h / 8.0;
    }
    w
}

/// Integrates `f` over `[a, b]` with `n` Simpson nodes.
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    if n < 2 || a == b {
        return 0.0;
    }
    let h = (b - a) / (n - 1) as f64;
    linspace(a, b, n)
        .into_iter()
        .zip(simpson_weights(n, h))
        .map(|(x, w)| w * f(x))
        .sum()
}

/// Neumaier-compensated sum, independent of magnitude ordering.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}
