//! Exact state-vector dynamics on small finite lattices.
//!
//! Sites are numbered row-major, `i = y·Lx + x`, with `y` growing downward.
//! Site `(x, y)` belongs to sublattice `A` when `x + y` is even. Each site owns
//! two register digits, the spin (extent 2) followed by the ancilla level
//! (extent `d_a`), so a digit pair reads as the fused index `spin·d_a + level`.

use std::fmt;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::evolve::Cadence;
use crate::model::{
    ancilla_levels, field_gate, heisenberg_bond, spin_half_operators, GateOperator, GateRole, GateSchedule, LinkClass,
    ModelError, ModelParams,
};
use crate::observables::{renyi_entropy, sz_expectation, MeasurementRecord, ObservableError, RenyiOrder};
use crate::state::{Pattern, Sublattice};
use crate::tensor::{hermitian_exponential, DenseTensor, TensorError};

/// Default cap on stored amplitudes per state vector (64 MiB).
pub const DEFAULT_MAX_AMPLITUDES: usize = 1 << 22;
/// Default cap on enumerated disorder configurations.
pub const DEFAULT_MAX_CONFIGS: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("invalid lattice: {0}")]
    Lattice(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Open,
    Periodic,
}

impl std::str::FromStr for Boundary {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open" => Ok(Boundary::Open),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(format!("unknown boundary '{other}' (expected open or periodic)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatticeSpec {
    pub lx: usize,
    pub ly: usize,
    pub boundary: Boundary,
}

/// A nearest-neighbour pair `(A site, B site)` and its class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    pub class: LinkClass,
}

impl LatticeSpec {
    pub fn new(lx: usize, ly: usize, boundary: Boundary) -> Result<Self, OracleError> {
        if lx == 0 || ly == 0 {
            return Err(OracleError::Lattice(format!("{lx}x{ly} has no sites")));
        }
        if boundary == Boundary::Periodic {
            for (name, n) in [("Lx", lx), ("Ly", ly)] {
                if n > 2 && n % 2 == 1 {
                    return Err(OracleError::Lattice(format!(
                        "periodic {name}={n} is odd and breaks the checkerboard"
                    )));
                }
            }
        }
        Ok(Self { lx, ly, boundary })
    }

    pub fn sites(&self) -> usize {
        self.lx * self.ly
    }

    pub fn sublattice(&self, site: usize) -> Sublattice {
        let (x, y) = (site % self.lx, site / self.lx);
        if (x + y) % 2 == 0 {
            Sublattice::A
        } else {
            Sublattice::B
        }
    }

    /// All links of one class. Wrap-around links on periodic boundaries join
    /// the class they would have in the infinite lattice; an extent of two
    /// gives a doubled bond, an extent of one none.
    pub fn links(&self, class: LinkClass) -> Vec<Link> {
        let mut out = Vec::new();
        let idx = |x: usize, y: usize| y * self.lx + x;
        for y in 0..self.ly {
            for x in 0..self.lx {
                let here = idx(x, y);
                let is_a = self.sublattice(here) == Sublattice::A;
                let right = if x + 1 < self.lx {
                    Some(idx(x + 1, y))
                } else if self.boundary == Boundary::Periodic && self.lx > 1 {
                    Some(idx(0, y))
                } else {
                    None
                };
                let down = if y + 1 < self.ly {
                    Some(idx(x, y + 1))
                } else if self.boundary == Boundary::Periodic && self.ly > 1 {
                    Some(idx(x, 0))
                } else {
                    None
                };
                if let Some(r) = right {
                    let c = if is_a { LinkClass::Right } else { LinkClass::Left };
                    if c == class {
                        out.push(if is_a { Link { a: here, b: r, class } } else { Link { a: r, b: here, class } });
                    }
                }
                if let Some(d) = down {
                    let c = if is_a { LinkClass::Down } else { LinkClass::Up };
                    if c == class {
                        out.push(if is_a { Link { a: here, b: d, class } } else { Link { a: d, b: here, class } });
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for LatticeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = match self.boundary {
            Boundary::Open => "open",
            Boundary::Periodic => "periodic",
        };
        write!(f, "{}x{} {b}", self.lx, self.ly)
    }
}

/// One disorder realization: level index per site, field `h·s_k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisorderConfig {
    pub levels: Vec<usize>,
}

impl DisorderConfig {
    /// The `index`-th configuration in lexicographic order, site 0 most significant.
    pub fn nth(index: usize, sites: usize, d_a: usize) -> Self {
        let mut levels = vec![0; sites];
        let mut rest = index;
        for k in (0..sites).rev() {
            levels[k] = rest % d_a;
            rest /= d_a;
        }
        Self { levels }
    }

    pub fn fields(&self, params: &ModelParams) -> Result<Vec<f64>, OracleError> {
        let values = ancilla_levels(params.levels)?;
        self.levels
            .iter()
            .map(|&k| {
                values
                    .get(k)
                    .map(|s| params.disorder * s)
                    .ok_or_else(|| OracleError::Argument(format!("level index {k} out of range for d_a={}", params.levels)))
            })
            .collect()
    }
}

/// Dense state over a row of digits, first digit most significant.
#[derive(Clone, Debug)]
pub struct Register {
    dims: Vec<usize>,
    strides: Vec<usize>,
    pub amplitudes: Vec<C64>,
}

impl Register {
    fn new(dims: Vec<usize>, max_amplitudes: usize) -> Result<Self, OracleError> {
        let mut total: usize = 1;
        for &d in &dims {
            total = total
                .checked_mul(d)
                .filter(|&t| t <= max_amplitudes)
                .ok_or_else(|| OracleError::Resource(format!("state of digit extents {dims:?} exceeds {max_amplitudes} amplitudes")))?;
        }
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        Ok(Self { dims, strides, amplitudes: vec![C64::new(0.0, 0.0); total] })
    }

    fn offsets(&self, digits: &[usize]) -> Vec<usize> {
        let mut out = vec![0usize];
        for &d in digits {
            let mut next = Vec::with_capacity(out.len() * self.dims[d]);
            for &o in &out {
                for v in 0..self.dims[d] {
                    next.push(o + v * self.strides[d]);
                }
            }
            out = next;
        }
        out
    }

    /// Applies `m` to the digits listed, first listed most significant.
    fn apply(&mut self, digits: &[usize], m: &DenseTensor) -> Result<(), OracleError> {
        let inner = self.offsets(digits);
        let k = inner.len();
        if m.shape() != [k, k] {
            return Err(OracleError::Argument(format!("gate shape {:?} on digits of total extent {k}", m.shape())));
        }
        let rest: Vec<usize> = (0..self.dims.len()).filter(|d| !digits.contains(d)).collect();
        let outer = self.offsets(&rest);
        let md = m.data();
        let mut v = vec![C64::new(0.0, 0.0); k];
        for &base in &outer {
            for (j, &o) in inner.iter().enumerate() {
                v[j] = self.amplitudes[base + o];
            }
            for (i, &o) in inner.iter().enumerate() {
                let row = &md[i * k..(i + 1) * k];
                let mut acc = C64::new(0.0, 0.0);
                for (a, b) in row.iter().zip(&v) {
                    acc += a * b;
                }
                self.amplitudes[base + o] = acc;
            }
        }
        Ok(())
    }

    fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Reduced density matrix of one digit, all others traced.
    fn digit_rdm(&self, digit: usize) -> DenseTensor {
        let d = self.dims[digit];
        let rest: Vec<usize> = (0..self.dims.len()).filter(|&x| x != digit).collect();
        let outer = self.offsets(&rest);
        let stride = self.strides[digit];
        let mut rho = DenseTensor::zeros(&[d, d]);
        for i in 0..d {
            for j in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for &base in &outer {
                    acc += self.amplitudes[base + i * stride] * self.amplitudes[base + j * stride].conj();
                }
                rho.set(&[i, j], acc);
            }
        }
        rho
    }
}

/// Limits on the oracle's state size.
#[derive(Clone, Copy, Debug)]
pub struct OracleBudget {
    pub max_amplitudes: usize,
    pub max_configs: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self { max_amplitudes: DEFAULT_MAX_AMPLITUDES, max_configs: DEFAULT_MAX_CONFIGS }
    }
}

/// Checks that `(2·d_a)^N` amplitudes fit the budget before anything is allocated.
pub fn check_budget(lattice: &LatticeSpec, levels: usize, budget: &OracleBudget) -> Result<usize, OracleError> {
    let per_site = 2 * levels;
    let mut total: usize = 1;
    for _ in 0..lattice.sites() {
        total = total.checked_mul(per_site).filter(|&t| t <= budget.max_amplitudes).ok_or_else(|| {
            OracleError::Resource(format!(
                "{lattice} with d_a={levels} needs more than {} amplitudes",
                budget.max_amplitudes
            ))
        })?;
    }
    Ok(total)
}

fn initial_spin(pattern: Pattern, lattice: &LatticeSpec, site: usize) -> usize {
    if pattern.initial_sz(lattice.sublattice(site)) > 0.0 {
        0
    } else {
        1
    }
}

/// Physical block of a fused one-site gate that acts as `op ⊗ I_a`.
fn physical_block(fused: &DenseTensor, levels: usize) -> DenseTensor {
    DenseTensor::from_fn(&[2, 2], |ix| fused.get(&[ix[0] * levels, ix[1] * levels]))
}

fn link_matrix(g: &DenseTensor) -> Result<DenseTensor, OracleError> {
    Ok(g.clone().reshape(&[4, 4])?)
}

/// Per-sublattice averages of site observables; entropies are averaged per
/// site. An empty sublattice reports the other one's values.
fn record_from_sites(
    lattice: &LatticeSpec,
    rdms: &[DenseTensor],
    pattern: Pattern,
    cycle: usize,
    time: f64,
) -> Result<MeasurementRecord, OracleError> {
    let mut members: [Vec<&DenseTensor>; 2] = [Vec::new(), Vec::new()];
    for (i, r) in rdms.iter().enumerate() {
        members[lattice.sublattice(i).index()].push(r);
    }
    let lone = members[1].is_empty();
    if lone {
        members[1] = members[0].clone();
    }
    let mut rec = MeasurementRecord::from_physical(cycle, time, [members[0][0], members[1][0]], pattern)?;
    for site in Sublattice::BOTH {
        let k = site.index();
        let n = members[k].len() as f64;
        let (mut sz, mut half, mut one) = (0.0, 0.0, 0.0);
        for r in &members[k] {
            sz += sz_expectation(r)?;
            half += renyi_entropy(r, RenyiOrder::Half)?;
            one += renyi_entropy(r, RenyiOrder::One)?;
        }
        rec.sz[k] = sz / n;
        rec.czz[k] = pattern.initial_sz(site) * rec.sz[k];
        rec.renyi_half[k] = half / n;
        rec.renyi_one[k] = one / n;
    }
    if lone {
        rec.czz[1] = rec.czz[0];
        rec.sz[1] = rec.sz[0];
    }
    Ok(rec)
}

/// Walks the schedule for `n_cycles`, calling `apply` per gate and `measure`
/// at the points selected by `cadence` (plus the initial state).
fn drive<F, M>(schedule: &GateSchedule, n_cycles: usize, cadence: Cadence, mut apply: F, mut measure: M) -> Result<(), OracleError>
where
    F: FnMut(&crate::model::GateApplication) -> Result<(), OracleError>,
    M: FnMut(usize, f64) -> Result<(), OracleError>,
{
    let period = schedule.params.period;
    measure(0, 0.0)?;
    for cycle in 0..n_cycles {
        for (k, gate) in schedule.gates.iter().enumerate() {
            apply(gate)?;
            let last = k + 1 == schedule.gates.len();
            if last {
                measure(cycle + 1, (cycle + 1) as f64 * period)?;
            } else if cadence == Cadence::PerTrotterStep && gate.step_boundary {
                measure(cycle, cycle as f64 * period + gate.offset_after)?;
            }
        }
    }
    Ok(())
}

/// Evolves the full fused state (spins and ancillas) and records per-sublattice observables.
pub fn exact_evolve_dilated(
    lattice: &LatticeSpec,
    schedule: &GateSchedule,
    pattern: Pattern,
    n_cycles: usize,
    cadence: Cadence,
    budget: &OracleBudget,
) -> Result<Vec<MeasurementRecord>, OracleError> {
    let (state, series) = dilated_run(lattice, schedule, pattern, n_cycles, cadence, budget)?;
    let norm = state.norm_sqr();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(OracleError::Argument(format!("state norm drifted to {norm}")));
    }
    Ok(series)
}

fn dilated_initial(lattice: &LatticeSpec, levels: usize, pattern: Pattern, budget: &OracleBudget) -> Result<Register, OracleError> {
    check_budget(lattice, levels, budget)?;
    let n = lattice.sites();
    let dims: Vec<usize> = (0..n).flat_map(|_| [2, levels]).collect();
    let mut reg = Register::new(dims, budget.max_amplitudes)?;
    // product of |spin_i⟩ ⊗ |+⟩: amplitude d_a^{-N/2} on every level string
    let amp = (levels as f64).powf(-0.5 * n as f64);
    let spins: Vec<usize> = (0..n).map(|i| initial_spin(pattern, lattice, i)).collect();
    let level_digits: Vec<usize> = (0..n).map(|i| 2 * i + 1).collect();
    let base: usize = spins.iter().enumerate().map(|(i, &s)| s * reg.strides[2 * i]).sum();
    for o in reg.offsets(&level_digits) {
        reg.amplitudes[base + o] = C64::new(amp, 0.0);
    }
    Ok(reg)
}

fn dilated_run(
    lattice: &LatticeSpec,
    schedule: &GateSchedule,
    pattern: Pattern,
    n_cycles: usize,
    cadence: Cadence,
    budget: &OracleBudget,
) -> Result<(Register, Vec<MeasurementRecord>), OracleError> {
    let levels = schedule.params.levels;
    let n = lattice.sites();
    let reg = std::cell::RefCell::new(dilated_initial(lattice, levels, pattern, budget)?);
    let links: Vec<Vec<Link>> = LinkClass::ORDER.iter().map(|&c| lattice.links(c)).collect();
    let mut series = Vec::new();
    drive(
        schedule,
        n_cycles,
        cadence,
        |gate| {
            let mut r = reg.borrow_mut();
            match &gate.operator {
                GateOperator::OneSite(u) => {
                    for i in 0..n {
                        r.apply(&[2 * i, 2 * i + 1], u)?;
                    }
                }
                GateOperator::Link(class, g) => {
                    let m = link_matrix(g)?;
                    for l in &links[class.index()] {
                        r.apply(&[2 * l.a, 2 * l.b], &m)?;
                    }
                }
            }
            Ok(())
        },
        |cycle, time| {
            let r = reg.borrow();
            let rdms: Vec<DenseTensor> = (0..n).map(|i| r.digit_rdm(2 * i)).collect();
            series.push(record_from_sites(lattice, &rdms, pattern, cycle, time)?);
            Ok(())
        },
    )?;
    Ok((reg.into_inner(), series))
}

/// Final dilated state vector after `n_cycles`; fused digits per site.
pub fn dilated_final_state(
    lattice: &LatticeSpec,
    schedule: &GateSchedule,
    pattern: Pattern,
    n_cycles: usize,
    budget: &OracleBudget,
) -> Result<Vec<C64>, OracleError> {
    Ok(dilated_run(lattice, schedule, pattern, n_cycles, Cadence::Stroboscopic, budget)?.0.amplitudes)
}

/// Neumaier-compensated complex accumulator.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: [f64; 2],
    comp: [f64; 2],
}

impl CompensatedSum {
    fn add(&mut self, z: C64) {
        for (k, x) in [z.re, z.im].into_iter().enumerate() {
            let t = self.sum[k] + x;
            if self.sum[k].abs() >= x.abs() {
                self.comp[k] += (self.sum[k] - t) + x;
            } else {
                self.comp[k] += (x - t) + self.sum[k];
            }
            self.sum[k] = t;
        }
    }

    fn value(&self) -> C64 {
        C64::new(self.sum[0] + self.comp[0], self.sum[1] + self.comp[1])
    }
}

/// Averages physical-only evolutions over every disorder configuration.
pub fn exact_evolve_enumerated(
    lattice: &LatticeSpec,
    schedule: &GateSchedule,
    pattern: Pattern,
    n_cycles: usize,
    cadence: Cadence,
    budget: &OracleBudget,
) -> Result<Vec<MeasurementRecord>, OracleError> {
    let count = config_count(lattice, schedule.params.levels, budget)?;
    let order: Vec<usize> = (0..count).collect();
    enumerated_in_order(lattice, schedule, pattern, n_cycles, cadence, budget, &order)
}

fn config_count(lattice: &LatticeSpec, levels: usize, budget: &OracleBudget) -> Result<usize, OracleError> {
    let mut count: usize = 1;
    for _ in 0..lattice.sites() {
        count = count.checked_mul(levels).filter(|&c| c <= budget.max_configs).ok_or_else(|| {
            OracleError::Resource(format!("{lattice} with d_a={levels} has more than {} configurations", budget.max_configs))
        })?;
    }
    Ok(count)
}

/// Enumerated average visiting configurations in `order`.
pub fn enumerated_in_order(
    lattice: &LatticeSpec,
    schedule: &GateSchedule,
    pattern: Pattern,
    n_cycles: usize,
    cadence: Cadence,
    budget: &OracleBudget,
    order: &[usize],
) -> Result<Vec<MeasurementRecord>, OracleError> {
    let params = &schedule.params;
    let levels = params.levels;
    let n = lattice.sites();
    let count = config_count(lattice, levels, budget)?;
    if order.len() != count {
        return Err(OracleError::Argument(format!("order lists {} of {count} configurations", order.len())));
    }
    check_budget(lattice, 1, budget)?;
    let links: Vec<Vec<Link>> = LinkClass::ORDER.iter().map(|&c| lattice.links(c)).collect();
    let link_gates: Vec<Option<DenseTensor>> = schedule
        .gates
        .iter()
        .map(|g| match &g.operator {
            GateOperator::Link(_, m) => link_matrix(m).map(Some),
            GateOperator::OneSite(u) if g.role != GateRole::Disorder => Ok(Some(physical_block(u, levels))),
            _ => Ok(None),
        })
        .collect::<Result<_, _>>()?;

    let mut sums: Vec<Vec<[CompensatedSum; 4]>> = Vec::new();
    let mut grid: Vec<(usize, f64)> = Vec::new();
    for (visit, &index) in order.iter().enumerate() {
        if index >= count {
            return Err(OracleError::Argument(format!("configuration {index} out of range")));
        }
        let config = DisorderConfig::nth(index, n, levels);
        let fields = config.fields(params)?;
        let zeeman: Vec<DenseTensor> = fields.iter().map(|&f| field_gate(f, params.dt)).collect();
        let reg = std::cell::RefCell::new(Register::new(vec![2; n], budget.max_amplitudes)?);
        {
            let mut r = reg.borrow_mut();
            let start: usize = (0..n).map(|i| initial_spin(pattern, lattice, i) * r.strides[i]).sum();
            r.amplitudes[start] = C64::new(1.0, 0.0);
        }
        let mut point = 0usize;
        let mut gate_index = 0usize;
        drive(
            schedule,
            n_cycles,
            cadence,
            |gate| {
                let mut r = reg.borrow_mut();
                let k = gate_index % schedule.gates.len();
                gate_index += 1;
                match (&gate.operator, &link_gates[k]) {
                    (GateOperator::Link(class, _), Some(m)) => {
                        for l in &links[class.index()] {
                            r.apply(&[l.a, l.b], m)?;
                        }
                    }
                    (GateOperator::OneSite(_), Some(m)) => {
                        for i in 0..n {
                            r.apply(&[i], m)?;
                        }
                    }
                    _ => {
                        for (i, z) in zeeman.iter().enumerate() {
                            r.apply(&[i], z)?;
                        }
                    }
                }
                Ok(())
            },
            |cycle, time| {
                let r = reg.borrow();
                if visit == 0 {
                    grid.push((cycle, time));
                    sums.push(vec![[CompensatedSum::default(); 4]; n]);
                }
                for i in 0..n {
                    let rho = r.digit_rdm(i);
                    for (acc, z) in sums[point][i].iter_mut().zip(rho.data()) {
                        acc.add(*z);
                    }
                }
                point += 1;
                Ok(())
            },
        )?;
    }
    let weight = 1.0 / count as f64;
    grid.iter()
        .zip(&sums)
        .map(|(&(cycle, time), site_sums)| {
            let rdms: Vec<DenseTensor> = site_sums
                .iter()
                .map(|s| DenseTensor::new(vec![2, 2], s.iter().map(|a| a.value() * weight).collect()).expect("2x2"))
                .collect();
            record_from_sites(lattice, &rdms, pattern, cycle, time)
        })
        .collect()
}

/// Stroboscopic evolution with exact exponentials of the full half-period
/// Hamiltonians (no Trotter splitting), in the dilated space.
pub fn exact_evolve_unsplit(
    lattice: &LatticeSpec,
    params: &ModelParams,
    pattern: Pattern,
    n_cycles: usize,
    budget: &OracleBudget,
) -> Result<Vec<MeasurementRecord>, OracleError> {
    params.validate()?;
    let levels = params.levels;
    let n = lattice.sites();
    let mut reg = dilated_initial(lattice, levels, pattern, budget)?;
    let dim = reg.amplitudes.len();
    if dim > 4096 {
        return Err(OracleError::Resource(format!("dense propagator of dimension {dim} is too large")));
    }
    let bond = heisenberg_bond().scale_real(params.coupling);
    let ancilla = crate::model::ancilla_level_operator(levels)?;
    let disorder = spin_half_operators().z.kron(&ancilla)?.scale_real(params.disorder);
    let sx = spin_half_operators().x;
    let apply_h = |v: &[C64]| -> Result<Vec<C64>, OracleError> {
        let mut out = vec![C64::new(0.0, 0.0); dim];
        let mut add = |r: &Register| {
            for (o, x) in out.iter_mut().zip(&r.amplitudes) {
                *o += x;
            }
        };
        for class in LinkClass::ORDER {
            for l in lattice.links(class) {
                let mut r = reg.clone();
                r.amplitudes.copy_from_slice(v);
                r.apply(&[2 * l.a, 2 * l.b], &bond)?;
                add(&r);
            }
        }
        for i in 0..n {
            let mut r = reg.clone();
            r.amplitudes.copy_from_slice(v);
            r.apply(&[2 * i, 2 * i + 1], &disorder)?;
            add(&r);
        }
        Ok(out)
    };
    let mut h = DenseTensor::zeros(&[dim, dim]);
    for col in 0..dim {
        let mut e = vec![C64::new(0.0, 0.0); dim];
        e[col] = C64::new(1.0, 0.0);
        let hv = apply_h(&e)?;
        for (row, x) in hv.into_iter().enumerate() {
            h.set(&[row, col], x);
        }
    }
    let u_mbl = hermitian_exponential(&h, C64::new(0.0, -0.5 * params.period))?;
    let flip = hermitian_exponential(&sx, C64::new(0.0, -params.flip_angle()))?;
    let measure = |r: &Register, cycle: usize| {
        let rdms: Vec<DenseTensor> = (0..n).map(|i| r.digit_rdm(2 * i)).collect();
        record_from_sites(lattice, &rdms, pattern, cycle, cycle as f64 * params.period)
    };
    let mut series = vec![measure(&reg, 0)?];
    for cycle in 0..n_cycles {
        let v = DenseTensor::new(vec![dim, 1], reg.amplitudes.clone())?;
        reg.amplitudes = u_mbl.matmul(&v)?.into_data();
        for i in 0..n {
            reg.apply(&[2 * i], &flip)?;
        }
        series.push(measure(&reg, cycle + 1)?);
    }
    Ok(series)
}

/// Largest deviation of `czz_mean` between two aligned series.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub max_deviation: f64,
    pub index: usize,
    pub time: f64,
    pub cycle: usize,
    pub records: usize,
    pub horizon: f64,
}

impl Comparison {
    pub fn report(&self) -> String {
        format!(
            "records_compared {}\nhorizon {:.16e}\nmax_deviation {:.16e}\nat_record {}\nat_cycle {}\nat_time {:.16e}\n",
            self.records, self.horizon, self.max_deviation, self.index, self.cycle, self.time
        )
    }
}

/// Max over records with `time ≤ horizon` of `|czz_mean(a) − czz_mean(b)|`.
pub fn compare_short_time(
    ipeps: &[MeasurementRecord],
    oracle: &[MeasurementRecord],
    horizon: f64,
) -> Result<Comparison, OracleError> {
    let tol = 1e-9 * horizon.abs().max(1.0);
    let take = |s: &[MeasurementRecord]| s.iter().take_while(|r| r.time <= horizon + tol).count();
    let (na, nb) = (take(ipeps), take(oracle));
    if na != nb {
        return Err(OracleError::Argument(format!("series have {na} and {nb} records up to t={horizon}")));
    }
    if na == 0 {
        return Err(OracleError::Argument(format!("no records up to t={horizon}")));
    }
    let mut best = Comparison { max_deviation: 0.0, index: 0, time: ipeps[0].time, cycle: ipeps[0].cycle, records: na, horizon };
    for (k, (a, b)) in ipeps.iter().zip(oracle).take(na).enumerate() {
        if a.cycle != b.cycle || (a.time - b.time).abs() > tol {
            return Err(OracleError::Argument(format!("record {k} misaligned: t={} vs t={}", a.time, b.time)));
        }
        let d = (a.czz_mean() - b.czz_mean()).abs();
        if d > best.max_deviation {
            best = Comparison { max_deviation: d, index: k, time: a.time, cycle: a.cycle, records: na, horizon };
        }
    }
    Ok(best)
}
