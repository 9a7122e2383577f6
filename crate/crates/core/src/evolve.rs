//! Simple-update Trotter evolution of the checkerboard cell.

use std::time::{Duration, Instant};

use crate::model::{GateOperator, GateSchedule, LinkClass};
use crate::state::{link_axis, regularized_inverse, Sublattice, UnitCell};
use crate::tensor::{contract, matrix_qr, svd_split, DenseTensor, TensorError, DEFAULT_SVD_CUTOFF};

#[derive(Debug, thiserror::Error)]
pub enum EvolveError {
    #[error("gate of shape {gate:?} does not fit fused dimension {fused}")]
    GateMismatch { gate: Vec<usize>, fused: usize },

    #[error("simple update on link {link} failed: {source}")]
    Numerical { link: LinkClass, source: TensorError },

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which sublattice(s) a one-site gate acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    A,
    B,
    Both,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    /// Largest discarded weight per link class, indexed like [`LinkClass::index`].
    pub discarded: [f64; 4],
    pub max_bond: usize,
    pub gate_count: usize,
    /// Truncations that cut through a degenerate multiplet.
    pub split_multiplets: usize,
    pub wall_time: Duration,
}

impl StepDiagnostics {
    pub fn max_discarded(&self) -> f64 {
        self.discarded.iter().copied().fold(0.0, f64::max)
    }

    pub fn merge(&mut self, other: &StepDiagnostics) {
        for k in 0..4 {
            self.discarded[k] = self.discarded[k].max(other.discarded[k]);
        }
        self.max_bond = self.max_bond.max(other.max_bond);
        self.gate_count += other.gate_count;
        self.split_multiplets += other.split_multiplets;
        self.wall_time += other.wall_time;
    }
}

pub fn apply_one_site_gate(cell: &mut UnitCell, gate: &DenseTensor, target: Target) -> Result<(), EvolveError> {
    let q = cell.fused_dim();
    if gate.shape() != [q, q] {
        return Err(EvolveError::GateMismatch { gate: gate.shape().to_vec(), fused: q });
    }
    let sites: &[Sublattice] = match target {
        Target::A => &[Sublattice::A],
        Target::B => &[Sublattice::B],
        Target::Both => &Sublattice::BOTH,
    };
    for &site in sites {
        let t = cell.tensor_mut(site);
        *t = contract(gate, t, &[(1, 0)])?;
    }
    Ok(())
}

/// One simple-update step on link `class`.
///
/// `gate` has axes `(out_a, out_b, in_a, in_b)` and acts on the leading
/// factor of extent `q` of each fused index (`q = 2` for a gate on the
/// physical spins alone, `q = 2 d_a` for a gate on the full fused site).
/// Everything outside that factor and the link itself is split off by a QR
/// decomposition first, so the truncated SVD only sees the reduced bond.
pub fn apply_link_gate(
    cell: &mut UnitCell,
    gate: &DenseTensor,
    class: LinkClass,
    max_bond: usize,
    cutoff: f64,
) -> Result<StepDiagnostics, EvolveError> {
    let start = Instant::now();
    let fused = cell.fused_dim();
    let q = gate.shape()[0];
    if gate.rank() != 4 || gate.shape().iter().any(|&d| d != q) || fused % q != 0 {
        return Err(EvolveError::GateMismatch { gate: gate.shape().to_vec(), fused });
    }
    let spectator = fused / q;
    let numerical = |source: TensorError| EvolveError::Numerical { link: class, source };

    // Mean-field environment: absorb the full weights of the three other links.
    let reduce = |site: Sublattice| -> Result<(DenseTensor, DenseTensor, Vec<usize>, Vec<usize>), TensorError> {
        let mut t = cell.tensor(site).clone();
        let ax = link_axis(site, class);
        let others: Vec<usize> = (1..=4).filter(|&k| k != ax).collect();
        for &k in &others {
            t.scale_axis(k, cell.weight(crate::state::axis_link(site, k)))?;
        }
        let shape = t.shape().to_vec();
        let mut split_shape = vec![q, spectator];
        split_shape.extend_from_slice(&shape[1..]);
        let t = t.reshape(&split_shape)?;
        // (spectator, others..., q, bond)
        let mut perm = vec![1];
        perm.extend(others.iter().map(|&k| k + 1));
        perm.push(0);
        perm.push(ax + 1);
        let t = t.permute(&perm)?;
        let outer_dims: Vec<usize> = perm[..4].iter().map(|&k| split_shape[k]).collect();
        let rows: usize = outer_dims.iter().product();
        let bond = shape[ax];
        let (qm, r) = matrix_qr(&t.reshape(&[rows, q * bond])?)?;
        let k = r.shape()[0];
        Ok((qm, r.reshape(&[k, q, bond])?, outer_dims, others))
    };

    let (q_a, r_a, outer_a, others_a) = reduce(Sublattice::A).map_err(numerical)?;
    let (q_b, r_b, outer_b, others_b) = reduce(Sublattice::B).map_err(numerical)?;

    let mut r_a = r_a;
    r_a.scale_axis(2, cell.weight(class)).map_err(numerical)?;
    // theta(k_a, q_a, k_b, q_b) → apply gate → (o_a, o_b, k_a, k_b)
    let theta = contract(&r_a, &r_b, &[(2, 2)]).map_err(numerical)?;
    let theta = contract(gate, &theta, &[(2, 1), (3, 3)]).map_err(numerical)?;
    let split = svd_split(&theta, &[2, 0], max_bond, cutoff).map_err(numerical)?;

    let norm = split.singular_values.iter().map(|s| s * s).sum::<f64>().sqrt();
    let new_weights: Vec<f64> = split.singular_values.iter().map(|s| s / norm).collect();
    let chi = new_weights.len();

    // A: Q_a(rows, k_a) · U(k_a, o_a, χ) → (spectator, others..., o_a, χ)
    let u = split.left_isometry;
    let new_a = contract(&q_a, &u, &[(1, 0)]).map_err(numerical)?;
    // B: V(χ, o_b, k_b) · Q_b(rows, k_b) → (χ, o_b, spectator, others...)
    let new_b = contract(&split.right_isometry, &q_b, &[(2, 1)]).map_err(numerical)?;

    let rebuild = |site: Sublattice,
                   t: DenseTensor,
                   outer: &[usize],
                   others: &[usize],
                   layout_after_outer: bool|
     -> Result<DenseTensor, TensorError> {
        // normalise to (spectator, o1, o2, o3, o, χ)
        let mut shape = outer.to_vec();
        shape.extend([q, chi]);
        let t = if layout_after_outer {
            t.reshape(&shape)?
        } else {
            let mut s = vec![chi, q];
            s.extend_from_slice(outer);
            t.reshape(&s)?.permute(&[2, 3, 4, 5, 1, 0])?
        };
        let ax = link_axis(site, class);
        // target layout (o, spectator, v1, v2, v3, v4)
        let mut perm = vec![4, 0];
        for v in 1..=4 {
            if v == ax {
                perm.push(5);
            } else {
                perm.push(1 + others.iter().position(|&k| k == v).expect("other axis"));
            }
        }
        let t = t.permute(&perm)?;
        let mut fused_shape = vec![q * spectator];
        fused_shape.extend_from_slice(&t.shape()[2..]);
        let mut t = t.reshape(&fused_shape)?;
        for &k in others {
            t.scale_axis(k, &regularized_inverse(cell.weight(crate::state::axis_link(site, k))))?;
        }
        let n = t.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(TensorError::Numerical(format!("site tensor norm {n} after update")));
        }
        Ok(t.scale_real(n.recip()))
    };

    let a = rebuild(Sublattice::A, new_a, &outer_a, &others_a, true).map_err(numerical)?;
    let b = rebuild(Sublattice::B, new_b, &outer_b, &others_b, false).map_err(numerical)?;
    cell.a = a;
    cell.b = b;
    cell.weights[class.index()] = new_weights;

    let mut diag = StepDiagnostics {
        max_bond: cell.bond_dims().into_iter().max().unwrap_or(1),
        gate_count: 1,
        split_multiplets: usize::from(split.split_multiplet),
        wall_time: start.elapsed(),
        ..Default::default()
    };
    diag.discarded[class.index()] = split.discarded_weight;
    Ok(diag)
}

/// When the measurement hook fires.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cadence {
    /// At the end of every period.
    Stroboscopic,
    /// After every Trotter step and every flip slice as well.
    PerTrotterStep,
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    pub max_bond: usize,
    pub svd_cutoff: f64,
    pub cadence: Cadence,
    /// Call the hook once before the first gate.
    pub emit_initial: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { max_bond: 4, svd_cutoff: DEFAULT_SVD_CUTOFF, cadence: Cadence::Stroboscopic, emit_initial: true }
    }
}

/// Where in the drive a measurement happens.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurePoint {
    /// Completed periods for stroboscopic points; the period in progress otherwise.
    pub cycle: usize,
    pub time: f64,
    pub stroboscopic: bool,
    /// Largest discarded weight since the previous measurement.
    pub max_truncation: f64,
}

/// Applies `schedule` for `n_cycles` periods starting at period `start_cycle`,
/// calling `hook` at the measurement points selected by `options.cadence`.
/// Returns one diagnostics record per period.
pub fn run_floquet<E, F>(
    cell: &mut UnitCell,
    schedule: &GateSchedule,
    start_cycle: usize,
    n_cycles: usize,
    options: &EvolveOptions,
    mut hook: F,
) -> Result<Vec<StepDiagnostics>, E>
where
    E: From<EvolveError>,
    F: FnMut(&MeasurePoint, &UnitCell) -> Result<(), E>,
{
    let period = schedule.params.period;
    if options.emit_initial {
        let point = MeasurePoint { cycle: start_cycle, time: start_cycle as f64 * period, stroboscopic: true, max_truncation: 0.0 };
        hook(&point, cell)?;
    }
    let mut history = Vec::with_capacity(n_cycles);
    for cycle in start_cycle..start_cycle + n_cycles {
        let started = Instant::now();
        let mut diag = StepDiagnostics::default();
        let mut since_measure = 0.0f64;
        for (k, gate) in schedule.gates.iter().enumerate() {
            match &gate.operator {
                GateOperator::OneSite(u) => {
                    apply_one_site_gate(cell, u, Target::Both)?;
                    diag.gate_count += 1;
                }
                GateOperator::Link(class, g) => {
                    let d = apply_link_gate(cell, g, *class, options.max_bond, options.svd_cutoff)?;
                    since_measure = since_measure.max(d.max_discarded());
                    diag.merge(&d);
                }
            }
            let last = k + 1 == schedule.gates.len();
            if last || (options.cadence == Cadence::PerTrotterStep && gate.step_boundary) {
                let point = MeasurePoint {
                    cycle: if last { cycle + 1 } else { cycle },
                    time: if last { (cycle + 1) as f64 * period } else { cycle as f64 * period + gate.offset_after },
                    stroboscopic: last,
                    max_truncation: since_measure,
                };
                hook(&point, cell)?;
                since_measure = 0.0;
            }
        }
        diag.max_bond = diag.max_bond.max(cell.bond_dims().into_iter().max().unwrap_or(1));
        diag.wall_time = started.elapsed();
        history.push(diag);
    }
    Ok(history)
}
