//! Streaming accumulators shared by the orbit and comparison code.

use serde::Serialize;

use crate::dynamics::Sign;

/// Running mean with a batch-means standard error.
///
/// Values are grouped into consecutive batches of fixed size; the standard
/// error is the spread of the batch means over √(number of batches).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMeans {
    batch_size: u64,
    batches: Vec<f64>,
    current_sum: f64,
    current_len: u64,
    total_sum: f64,
    count: u64,
}

impl BatchMeans {
    /// Sized so that `expected` values fill `batches` batches.
    pub fn new(expected: u64, batches: u64) -> Self {
        let batch_size = (expected / batches.max(1)).max(1);
        BatchMeans { batch_size, batches: Vec::new(), current_sum: 0.0, current_len: 0, total_sum: 0.0, count: 0 }
    }

    #[inline]
    pub fn push(&mut self, v: f64) {
        self.current_sum += v;
        self.current_len += 1;
        self.total_sum += v;
        self.count += 1;
        if self.current_len == self.batch_size {
            self.batches.push(self.current_sum / self.batch_size as f64);
            self.current_sum = 0.0;
            self.current_len = 0;
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.total_sum / self.count as f64
        }
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    /// NaN with fewer than two complete batches.
    pub fn std_error(&self) -> f64 {
        let k = self.batches.len();
        if k < 2 {
            return f64::NAN;
        }
        let m = self.batches.iter().sum::<f64>() / k as f64;
        let var = self.batches.iter().map(|b| (b - m) * (b - m)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    }

    /// Appends the other accumulator's complete batches. A pending partial
    /// batch of `other` only contributes to the mean.
    pub fn merge(&mut self, other: &BatchMeans) {
        self.batches.extend_from_slice(&other.batches);
        self.total_sum += other.total_sum;
        self.count += other.count;
    }
}

/// Mean and standard error of an i.i.d. sample.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

pub const DEFAULT_BINS: usize = 400;
pub const DEFAULT_ZMAX: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiberHistogram {
    pub bins: Vec<f64>,
    /// z < −zmax
    pub below: f64,
    /// z ≥ zmax
    pub above: f64,
    /// the point z = ∞
    pub infinity: f64,
}

impl FiberHistogram {
    fn new(bins: usize) -> Self {
        FiberHistogram { bins: vec![0.0; bins], below: 0.0, above: 0.0, infinity: 0.0 }
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum::<f64>() + self.below + self.above + self.infinity
    }

    fn merge(&mut self, o: &FiberHistogram) {
        for (a, b) in self.bins.iter_mut().zip(&o.bins) {
            *a += b;
        }
        self.below += o.below;
        self.above += o.above;
        self.infinity += o.infinity;
    }
}

/// Two-fiber weighted histogram over z with exact mass bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    pub zmax: f64,
    pub plus: FiberHistogram,
    pub minus: FiberHistogram,
    pub total: f64,
}

impl Default for EmpiricalMeasure {
    fn default() -> Self {
        EmpiricalMeasure::new(DEFAULT_BINS, DEFAULT_ZMAX)
    }
}

impl EmpiricalMeasure {
    pub fn new(bins: usize, zmax: f64) -> Self {
        EmpiricalMeasure { zmax, plus: FiberHistogram::new(bins), minus: FiberHistogram::new(bins), total: 0.0 }
    }

    pub fn bin_count(&self) -> usize {
        self.plus.bins.len()
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * self.zmax / self.bin_count() as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        -self.zmax + i as f64 * self.bin_width()
    }

    pub fn fiber(&self, nu: Sign) -> &FiberHistogram {
        match nu {
            Sign::Plus => &self.plus,
            Sign::Minus => &self.minus,
        }
    }

    fn fiber_mut(&mut self, nu: Sign) -> &mut FiberHistogram {
        match nu {
            Sign::Plus => &mut self.plus,
            Sign::Minus => &mut self.minus,
        }
    }

    /// Adds `weight` at z (`f64::INFINITY` or NaN-free ±inf for the ∞ point).
    #[inline]
    pub fn record(&mut self, z: f64, nu: Sign, weight: f64) {
        let zmax = self.zmax;
        let n = self.bin_count();
        let width = self.bin_width();
        let h = self.fiber_mut(nu);
        if !z.is_finite() {
            h.infinity += weight;
        } else if z < -zmax {
            h.below += weight;
        } else if z >= zmax {
            h.above += weight;
        } else {
            let i = (((z + zmax) / width) as usize).min(n - 1);
            h.bins[i] += weight;
        }
        self.total += weight;
    }

    pub fn merge(&mut self, o: &EmpiricalMeasure) {
        assert_eq!(self.bin_count(), o.bin_count(), "histograms must share bins");
        self.plus.merge(&o.plus);
        self.minus.merge(&o.minus);
        self.total += o.total;
    }

    pub fn fiber_mass(&self, nu: Sign) -> f64 {
        self.fiber(nu).total()
    }

    /// Mass of the fiber on (−∞, z], splitting a partially covered bin
    /// proportionally. z must lie in [−zmax, zmax].
    pub fn cumulative(&self, nu: Sign, z: f64) -> f64 {
        let h = self.fiber(nu);
        let pos = ((z + self.zmax) / self.bin_width()).clamp(0.0, self.bin_count() as f64);
        let full = pos.floor() as usize;
        let mut m = h.below + h.bins[..full].iter().sum::<f64>();
        if full < self.bin_count() {
            m += (pos - full as f64) * h.bins[full];
        }
        m
    }

    /// Mass of the fiber on [z1, z2] ⊂ [−zmax, zmax].
    pub fn mass_between(&self, nu: Sign, z1: f64, z2: f64) -> f64 {
        self.cumulative(nu, z2) - self.cumulative(nu, z1)
    }

    /// Mass outside [−r, r] including ∞, both fibers. Requires r ≤ zmax.
    pub fn mass_outside(&self, r: f64) -> f64 {
        [Sign::Plus, Sign::Minus]
            .iter()
            .map(|&nu| self.fiber_mass(nu) - self.mass_between(nu, -r, r))
            .sum()
    }

    /// Rows (z_bin_lo, z_bin_hi, mass_plus, mass_minus).
    pub fn rows(&self) -> Vec<(f64, f64, f64, f64)> {
        (0..self.bin_count())
            .map(|i| (self.edge(i), self.edge(i + 1), self.plus.bins[i], self.minus.bins[i]))
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> crate::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["z_bin_lo", "z_bin_hi", "mass_plus", "mass_minus"])?;
        for (lo, hi, p, m) in self.rows() {
            out.serialize((lo, hi, p, m))?;
        }
        out.flush().map_err(|e| crate::Error::Csv(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_means_oracle() {
        let mut b = BatchMeans::new(100, 10);
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64).collect();
        for &x in &xs {
            b.push(x);
        }
        let means: Vec<f64> = xs.chunks(10).map(|c| c.iter().sum::<f64>() / 10.0).collect();
        let (m, se) = mean_and_se(&means);
        assert!((b.mean() - xs.iter().sum::<f64>() / 100.0).abs() < 1e-12);
        assert!((b.mean() - m).abs() < 1e-12);
        assert!((b.std_error() - se).abs() < 1e-12);
    }

    #[test]
    fn histogram_mass_accounting() {
        let mut h = EmpiricalMeasure::default();
        for (z, nu) in [(0.0, Sign::Plus), (-1.3, Sign::Minus), (2.0, Sign::Plus), (f64::INFINITY, Sign::Minus)] {
            h.record(z, nu, 1.0);
        }
        h.record(1.25, Sign::Plus, 2.0);
        assert_eq!(h.total, 6.0);
        assert_eq!(h.fiber_mass(Sign::Plus) + h.fiber_mass(Sign::Minus), 6.0);
        assert_eq!(h.plus.above, 3.0);
        assert_eq!(h.minus.below, 1.0);
        assert_eq!(h.minus.infinity, 1.0);
        assert_eq!(h.mass_outside(1.0), 5.0);
    }

    #[test]
    fn cumulative_interpolates_inside_bins() {
        let mut h = EmpiricalMeasure::new(10, 1.0);
        h.record(0.05, Sign::Plus, 4.0); // bin [0, 0.2)
        assert!((h.cumulative(Sign::Plus, 0.1) - 2.0).abs() < 1e-12);
        assert!((h.mass_between(Sign::Plus, -1.0, 1.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn edges_hit_unit_interval() {
        let h = EmpiricalMeasure::default();
        assert!((h.edge(40) + 1.0).abs() < 1e-12);
        assert!((h.edge(360) - 1.0).abs() < 1e-12);
    }
}
