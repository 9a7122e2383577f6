//! Time-crystal diagnostics: the equal-space `S^z S^z` correlator, Rényi
//! entropies of the one-site physical state, and the bond-dimension
//! convergence measure δ.

use std::io::{Read, Write};

use thiserror::Error;

use crate::environment::{one_site_rdm, EnvError, Environment, SiteRdm};
use crate::state::{Pattern, Sublattice, UnitCell};
use crate::tensor::{hermitian_eigh, DenseTensor, TensorError};

/// Column order of every time-series CSV.
pub const CSV_COLUMNS: [&str; 13] = [
    "cycle",
    "time",
    "czz_A",
    "czz_B",
    "czz_mean",
    "sz_A",
    "sz_B",
    "renyi_half_A",
    "renyi_half_B",
    "renyi_one_A",
    "renyi_one_B",
    "trunc_weight_max",
    "ctm_iters",
];

/// Default δ threshold, in correlator units.
pub const DEFAULT_DELTA_THRESHOLD: f64 = 0.01;

const DENSITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ObservableError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Environment(#[from] EnvError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for ObservableError {
    fn from(e: csv::Error) -> Self {
        ObservableError::Csv(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RenyiOrder {
    Half,
    One,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub cycle: usize,
    pub time: f64,
    /// Indexed by [`Sublattice::index`].
    pub czz: [f64; 2],
    pub sz: [f64; 2],
    pub renyi_half: [f64; 2],
    pub renyi_one: [f64; 2],
    /// Largest discarded weight since the previous record.
    pub trunc_weight_max: f64,
    pub ctm_iters: usize,
}

impl MeasurementRecord {
    pub fn czz_mean(&self) -> f64 {
        0.5 * (self.czz[0] + self.czz[1])
    }

    /// Builds a record from the physical one-site states of A and B.
    pub fn from_physical(
        cycle: usize,
        time: f64,
        physical: [&DenseTensor; 2],
        pattern: Pattern,
    ) -> Result<Self, ObservableError> {
        let mut rec = MeasurementRecord {
            cycle,
            time,
            czz: [0.0; 2],
            sz: [0.0; 2],
            renyi_half: [0.0; 2],
            renyi_one: [0.0; 2],
            trunc_weight_max: 0.0,
            ctm_iters: 0,
        };
        for site in Sublattice::BOTH {
            let k = site.index();
            let rho = physical[k];
            rec.sz[k] = sz_expectation(rho)?;
            rec.czz[k] = pattern.initial_sz(site) * rec.sz[k];
            rec.renyi_half[k] = renyi_entropy(rho, RenyiOrder::Half)?;
            rec.renyi_one[k] = renyi_entropy(rho, RenyiOrder::One)?;
        }
        Ok(rec)
    }

    fn fields(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.16e}");
        vec![
            self.cycle.to_string(),
            f(self.time),
            f(self.czz[0]),
            f(self.czz[1]),
            f(self.czz_mean()),
            f(self.sz[0]),
            f(self.sz[1]),
            f(self.renyi_half[0]),
            f(self.renyi_half[1]),
            f(self.renyi_one[0]),
            f(self.renyi_one[1]),
            f(self.trunc_weight_max),
            self.ctm_iters.to_string(),
        ]
    }
}

/// `⟨S^z⟩` of a physical one-site density matrix.
pub fn sz_expectation(rho: &DenseTensor) -> Result<f64, ObservableError> {
    if rho.shape() != [2, 2] {
        return Err(ObservableError::Argument(format!("expected a 2x2 density matrix, got {:?}", rho.shape())));
    }
    Ok(0.5 * (rho.get(&[0, 0]).re - rho.get(&[1, 1]).re))
}

/// Rényi entropy of order `alpha`, divided by `log 2`.
pub fn renyi_entropy(rho: &DenseTensor, alpha: RenyiOrder) -> Result<f64, ObservableError> {
    if rho.shape() != [2, 2] {
        return Err(ObservableError::Argument(format!("expected a 2x2 density matrix, got {:?}", rho.shape())));
    }
    let tr = rho.trace()?;
    if (tr.re - 1.0).abs() > DENSITY_TOL || tr.im.abs() > DENSITY_TOL {
        return Err(ObservableError::Argument(format!("density matrix trace {tr} is not 1")));
    }
    if rho.hermiticity_error()? > DENSITY_TOL {
        return Err(ObservableError::Argument("density matrix is not Hermitian".into()));
    }
    let (values, _) = hermitian_eigh(rho)?;
    if values[0] < -DENSITY_TOL {
        return Err(ObservableError::Argument(format!("density matrix has eigenvalue {:.3e}", values[0])));
    }
    let p: Vec<f64> = values.iter().map(|&x| x.max(0.0)).collect();
    let s = match alpha {
        RenyiOrder::Half => 2.0 * p.iter().map(|x| x.sqrt()).sum::<f64>().ln(),
        RenyiOrder::One => -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>(),
    };
    // adding +0 turns a negative zero into a positive one
    Ok(s / std::f64::consts::LN_2 + 0.0)
}

/// `s_i(0)·⟨S^z_i⟩` per sublattice for a z-product initial pattern.
pub fn correlator_zz(cell: &UnitCell, env: &Environment, pattern: Pattern) -> Result<[f64; 2], ObservableError> {
    let mut out = [0.0; 2];
    for site in Sublattice::BOTH {
        let rdm = one_site_rdm(cell, env, site)?;
        out[site.index()] = pattern.initial_sz(site) * sz_expectation(&rdm.physical)?;
    }
    Ok(out)
}

/// Full record from a converged environment.
pub fn measure(
    cell: &UnitCell,
    env: &Environment,
    pattern: Pattern,
    cycle: usize,
    time: f64,
) -> Result<(MeasurementRecord, [SiteRdm; 2]), ObservableError> {
    let ra = one_site_rdm(cell, env, Sublattice::A)?;
    let rb = one_site_rdm(cell, env, Sublattice::B)?;
    let mut rec = MeasurementRecord::from_physical(cycle, time, [&ra.physical, &rb.physical], pattern)?;
    rec.ctm_iters = env.iterations();
    Ok((rec, [ra, rb]))
}

/// Writes the header and one row per record.
pub fn write_csv(mut out: impl Write, records: &[MeasurementRecord]) -> Result<(), ObservableError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|e| ObservableError::Csv(e.to_string()))?;
    Ok(())
}

/// Streams records into an open CSV, header first.
pub struct CsvSink<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W, header: bool) -> Result<Self, ObservableError> {
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        if header {
            inner.write_record(CSV_COLUMNS)?;
        }
        Ok(Self { inner })
    }

    pub fn push(&mut self, r: &MeasurementRecord) -> Result<(), ObservableError> {
        self.inner.write_record(r.fields())?;
        self.inner.flush().map_err(|e| ObservableError::Csv(e.to_string()))
    }
}

/// Parses a CSV written by [`write_csv`], enforcing the column contract.
pub fn read_csv(input: impl Read) -> Result<Vec<MeasurementRecord>, ObservableError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(ObservableError::Csv(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let num = |k: usize| -> Result<f64, ObservableError> {
            let v: f64 = row[k]
                .parse()
                .map_err(|_| ObservableError::Csv(format!("row {}: column {} is not a number", line + 2, CSV_COLUMNS[k])))?;
            Ok(v)
        };
        let int = |k: usize| -> Result<usize, ObservableError> {
            row[k]
                .parse()
                .map_err(|_| ObservableError::Csv(format!("row {}: column {} is not an integer", line + 2, CSV_COLUMNS[k])))
        };
        let rec = MeasurementRecord {
            cycle: int(0)?,
            time: num(1)?,
            czz: [num(2)?, num(3)?],
            sz: [num(5)?, num(6)?],
            renyi_half: [num(7)?, num(8)?],
            renyi_one: [num(9)?, num(10)?],
            trunc_weight_max: num(11)?,
            ctm_iters: int(12)?,
        };
        if (rec.czz_mean() - num(4)?).abs() > 1e-15 {
            return Err(ObservableError::Csv(format!("row {}: czz_mean is not the mean of czz_A and czz_B", line + 2)));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    /// `(time, δ)` per aligned record.
    pub delta: Vec<(f64, f64)>,
    /// First time with δ above the threshold, or the last time.
    pub cutoff_time: f64,
    /// Record index of the cutoff; `None` when δ never exceeded the threshold.
    pub cutoff_index: Option<usize>,
    pub threshold: f64,
}

/// δ(t) = max over sublattices of `|C_low − C_high|`.
pub fn convergence_delta(
    low: &[MeasurementRecord],
    high: &[MeasurementRecord],
    threshold: f64,
) -> Result<ConvergenceReport, ObservableError> {
    if !(threshold >= 0.0) {
        return Err(ObservableError::Argument(format!("threshold {threshold} must be nonnegative")));
    }
    check_aligned(low, high)?;
    if low.is_empty() {
        return Err(ObservableError::Argument("empty series".into()));
    }
    let delta: Vec<(f64, f64)> = low
        .iter()
        .zip(high)
        .map(|(a, b)| (a.time, (a.czz[0] - b.czz[0]).abs().max((a.czz[1] - b.czz[1]).abs())))
        .collect();
    let cutoff_index = delta.iter().position(|&(_, d)| d > threshold);
    let cutoff_time = match cutoff_index {
        Some(k) => delta[k].0,
        None => delta.last().map(|x| x.0).unwrap_or(0.0),
    };
    Ok(ConvergenceReport { delta, cutoff_time, cutoff_index, threshold })
}

fn check_aligned(a: &[MeasurementRecord], b: &[MeasurementRecord]) -> Result<(), ObservableError> {
    if a.len() != b.len() {
        return Err(ObservableError::Argument(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        if x.cycle != y.cycle || (x.time - y.time).abs() > 1e-9 * x.time.abs().max(1.0) {
            return Err(ObservableError::Argument(format!(
                "record {k} misaligned: (cycle {}, t={}) vs (cycle {}, t={})",
                x.cycle, x.time, y.cycle, y.time
            )));
        }
    }
    Ok(())
}

impl ConvergenceReport {
    pub fn write_csv(&self, out: impl Write) -> Result<(), ObservableError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["time", "delta"])?;
        for &(t, d) in &self.delta {
            w.write_record([format!("{t:.16e}"), format!("{d:.16e}")])?;
        }
        w.flush().map_err(|e| ObservableError::Csv(e.to_string()))
    }

    pub fn summary(&self) -> String {
        let max = self.delta.iter().map(|x| x.1).fold(0.0, f64::max);
        format!(
            "threshold {:.6e}\ncutoff_time {:.16e}\nexceeded {}\nmax_delta {:.16e}\n",
            self.threshold,
            self.cutoff_time,
            self.cutoff_index.is_some(),
            max
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C64;

    fn rec(cycle: usize, czz: f64) -> MeasurementRecord {
        MeasurementRecord {
            cycle,
            time: cycle as f64 * 0.1,
            czz: [czz, czz],
            sz: [0.5, -0.5],
            renyi_half: [0.0; 2],
            renyi_one: [0.0; 2],
            trunc_weight_max: 0.0,
            ctm_iters: 1,
        }
    }

    #[test]
    fn renyi_closed_forms() {
        let mixed = DenseTensor::diag(&[0.5, 0.5]);
        for a in [RenyiOrder::Half, RenyiOrder::One] {
            assert!((renyi_entropy(&mixed, a).unwrap() - 1.0).abs() < 1e-14);
            assert!(renyi_entropy(&DenseTensor::diag(&[1.0, 0.0]), a).unwrap().abs() < 1e-14);
        }
        let rho = DenseTensor::diag(&[0.75, 0.25]);
        let s1 = (-(0.75f64).ln() * 0.75 - 0.25 * (0.25f64).ln()) / 2f64.ln();
        assert!((renyi_entropy(&rho, RenyiOrder::One).unwrap() - s1).abs() < 1e-14);
        assert!((s1 - 0.8113).abs() < 1e-4);
        assert!(renyi_entropy(&rho, RenyiOrder::Half).unwrap() >= s1);
    }

    #[test]
    fn renyi_rejects_invalid_states() {
        assert!(renyi_entropy(&DenseTensor::diag(&[0.7, 0.7]), RenyiOrder::One).is_err());
        assert!(renyi_entropy(&DenseTensor::diag(&[1.2, -0.2]), RenyiOrder::One).is_err());
        assert!(renyi_entropy(&DenseTensor::identity(3), RenyiOrder::One).is_err());
        let skew = DenseTensor::from_rows(&[&[C64::new(0.5, 0.0), C64::new(0.3, 0.0)], &[C64::new(0.0, 0.0), C64::new(0.5, 0.0)]])
            .unwrap();
        assert!(renyi_entropy(&skew, RenyiOrder::Half).is_err());
    }

    #[test]
    fn neel_record_at_start() {
        let up = DenseTensor::diag(&[1.0, 0.0]);
        let down = DenseTensor::diag(&[0.0, 1.0]);
        let r = MeasurementRecord::from_physical(0, 0.0, [&up, &down], Pattern::Neel).unwrap();
        assert_eq!(r.czz, [0.25, 0.25]);
        assert_eq!(r.sz, [0.5, -0.5]);
        let flipped = MeasurementRecord::from_physical(1, 0.1, [&down, &up], Pattern::Neel).unwrap();
        assert_eq!(flipped.czz_mean(), -0.25);
    }

    #[test]
    fn csv_roundtrip_and_contract() {
        let records: Vec<_> = (0..5).map(|k| rec(k, 0.25 * (-1f64).powi(k as i32) / 3.0)).collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert!(text.lines().nth(1).unwrap().split(',').all(|f| !f.is_empty()));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, records);
        assert!(read_csv("cycle,time\n0,0\n".as_bytes()).is_err());
    }

    #[test]
    fn identical_series_never_cut() {
        let s: Vec<_> = (0..10).map(|k| rec(k, 0.2)).collect();
        let r = convergence_delta(&s, &s, 0.01).unwrap();
        assert!(r.delta.iter().all(|x| x.1 == 0.0));
        assert_eq!(r.cutoff_index, None);
        assert_eq!(r.cutoff_time, s[9].time);
    }

    #[test]
    fn synthetic_jump_sets_cutoff() {
        let low: Vec<_> = (0..12).map(|k| rec(k, 0.1)).collect();
        let mut high = low.clone();
        high[7].czz[1] += 0.02;
        let r = convergence_delta(&low, &high, 0.01).unwrap();
        assert_eq!(r.cutoff_index, Some(7));
        assert_eq!(r.cutoff_time, low[7].time);
    }

    #[test]
    fn misaligned_series_rejected() {
        let a: Vec<_> = (0..4).map(|k| rec(k, 0.1)).collect();
        assert!(convergence_delta(&a, &a[..3], 0.01).is_err());
        let mut b = a.clone();
        b[2].cycle = 9;
        assert!(convergence_delta(&a, &b, 0.01).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn renyi_half_dominates_von_neumann(p in 0.0f64..=1.0, re in -1.0f64..1.0, im in -1.0f64..1.0) {
                // any 2x2 density matrix: p, 1-p on the diagonal, coherence inside the PSD bound
                let bound = (p * (1.0 - p)).sqrt();
                let c = C64::new(re, im) * bound / C64::new(re, im).norm().max(1.0);
                let rho = DenseTensor::from_rows(&[&[C64::new(p, 0.0), c], &[c.conj(), C64::new(1.0 - p, 0.0)]]).unwrap();
                let half = renyi_entropy(&rho, RenyiOrder::Half).unwrap();
                let one = renyi_entropy(&rho, RenyiOrder::One).unwrap();
                prop_assert!(half >= one - 1e-9);
                prop_assert!((-1e-9..=1.0 + 1e-9).contains(&half));
                prop_assert!((-1e-9..=1.0 + 1e-9).contains(&one));
            }

            #[test]
            fn cutoff_is_monotone_in_threshold(seed in any::<u64>(), t1 in 0.0f64..0.05, t2 in 0.0f64..0.05) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let low: Vec<_> = (0..20).map(|k| rec(k, rng.gen_range(-0.25..0.25))).collect();
                let high: Vec<_> = low.iter().map(|r| {
                    let mut r = r.clone();
                    r.czz[0] += rng.gen_range(-0.05..0.05);
                    r
                }).collect();
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                let a = convergence_delta(&low, &high, lo).unwrap();
                let b = convergence_delta(&low, &high, hi).unwrap();
                prop_assert!(a.cutoff_time <= b.cutoff_time);
                prop_assert!(a.delta.iter().all(|x| x.1 >= 0.0));
            }
        }
    }
}
