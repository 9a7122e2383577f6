//! Spin operators, gates and the per-period gate schedule.
//!
//! A network site is a *fused* site: the physical spin-1/2 and its ancilla
//! with `d_a` levels share one index of extent `2·d_a`, laid out physical-major
//! (`fused = spin · d_a + level`). Spin index 0 is `|↑⟩`.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64 as C64;

use crate::tensor::{hermitian_exponential, DenseTensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model parameter `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid { field, reason: reason.into() }
}

/// Parameters of the driven, disordered Heisenberg model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Exchange coupling `J`.
    pub coupling: f64,
    /// Disorder strength `h`; fields are spread over `[-h/2, h/2]`.
    pub disorder: f64,
    /// Number of disorder levels `d_a` (1 means no disorder).
    pub levels: usize,
    /// Floquet period `T`.
    pub period: f64,
    /// Flip imperfection `ε`.
    pub epsilon: f64,
    /// Trotter step `δt`.
    pub dt: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { coupling: 1.0, disorder: 0.0, levels: 1, period: 0.1, epsilon: 0.0, dt: 0.005 }
    }
}

impl ModelParams {
    /// Checks the parameter constraints and returns the number of Trotter
    /// steps in the first half-period.
    pub fn validate(&self) -> Result<usize, ModelError> {
        let finite = [
            ("J", self.coupling),
            ("h", self.disorder),
            ("T", self.period),
            ("epsilon", self.epsilon),
            ("dt", self.dt),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if self.period <= 0.0 {
            return Err(invalid("T", "must be positive"));
        }
        if self.dt <= 0.0 {
            return Err(invalid("dt", "must be positive"));
        }
        if self.levels < 1 {
            return Err(invalid("d_a", "must be at least 1"));
        }
        let ratio = 0.5 * self.period / self.dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio {
            return Err(invalid(
                "dt",
                format!("dt = {} does not divide T/2 = {} (ratio {ratio})", self.dt, 0.5 * self.period),
            ));
        }
        Ok(steps as usize)
    }

    pub fn fused_dim(&self) -> usize {
        2 * self.levels
    }

    /// Rotation angle of the flip half-period, `π − εT`.
    pub fn flip_angle(&self) -> f64 {
        0.5 * self.period * (2.0 * PI / self.period - 2.0 * self.epsilon)
    }
}

/// Spin-1/2 operators with `ħ = 1`.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub x: DenseTensor,
    pub y: DenseTensor,
    pub z: DenseTensor,
}

pub fn spin_half_operators() -> SpinOperators {
    let z0 = C64::new(0.0, 0.0);
    let h = C64::new(0.5, 0.0);
    let ih = C64::new(0.0, 0.5);
    SpinOperators {
        x: DenseTensor::new(vec![2, 2], vec![z0, h, h, z0]).unwrap(),
        y: DenseTensor::new(vec![2, 2], vec![z0, -ih, ih, z0]).unwrap(),
        z: DenseTensor::new(vec![2, 2], vec![h, z0, z0, -h]).unwrap(),
    }
}

/// Eigenvalues of the ancilla operator: `d_a` equally spaced values on
/// `[-1/2, 1/2]`, or the single value 0 when there is one level.
pub fn ancilla_levels(levels: usize) -> Result<Vec<f64>, ModelError> {
    match levels {
        0 => Err(invalid("d_a", "must be at least 1")),
        1 => Ok(vec![0.0]),
        n => Ok((0..n).map(|k| -0.5 + k as f64 / (n - 1) as f64).collect()),
    }
}

/// Diagonal ancilla operator coupling to the physical `S^z`.
pub fn ancilla_level_operator(levels: usize) -> Result<DenseTensor, ModelError> {
    Ok(DenseTensor::diag(&ancilla_levels(levels)?))
}

/// Embeds a physical one-site operator into the fused space as `op ⊗ I_a`.
pub fn embed_physical(op: &DenseTensor, levels: usize) -> Result<DenseTensor, ModelError> {
    Ok(op.kron(&DenseTensor::identity(levels))?)
}

/// Physical rotation `exp(−i θ S^x)`.
pub fn x_rotation(angle: f64) -> DenseTensor {
    let (s, c) = (0.5 * angle).sin_cos();
    DenseTensor::new(vec![2, 2], vec![C64::new(c, 0.0), C64::new(0.0, -s), C64::new(0.0, -s), C64::new(c, 0.0)])
        .expect("2x2 shape")
}

/// Flip drive over a full half-period, as a fused one-site gate.
pub fn build_flip_gate(params: &ModelParams) -> Result<DenseTensor, ModelError> {
    build_flip_slice(params, 1)
}

/// One of `slices` equal pieces of the flip half-period.
pub fn build_flip_slice(params: &ModelParams, slices: usize) -> Result<DenseTensor, ModelError> {
    if slices == 0 {
        return Err(invalid("flip_slices", "must be positive"));
    }
    let sx = spin_half_operators().x;
    let rot = hermitian_exponential(&sx, C64::new(0.0, -params.flip_angle() / slices as f64))?;
    embed_physical(&rot, params.levels)
}

/// Heisenberg exchange `exp(−i δt J S·S)` on two physical spins, as a tensor
/// with axes `(out_a, out_b, in_a, in_b)`.
pub fn build_heisenberg_link_gate(params: &ModelParams) -> Result<DenseTensor, ModelError> {
    heisenberg_gate(params.coupling, params.dt)
}

pub fn heisenberg_gate(coupling: f64, dt: f64) -> Result<DenseTensor, ModelError> {
    let h = heisenberg_bond();
    let u = hermitian_exponential(&h, C64::new(0.0, -dt * coupling))?;
    Ok(u.reshape(&[2, 2, 2, 2])?)
}

/// `S·S` on two spins as a 4×4 matrix, first spin major.
pub fn heisenberg_bond() -> DenseTensor {
    let s = spin_half_operators();
    let xx = s.x.kron(&s.x).unwrap();
    let yy = s.y.kron(&s.y).unwrap();
    let zz = s.z.kron(&s.z).unwrap();
    xx.add(&yy).unwrap().add(&zz).unwrap()
}

/// Expands a physical link gate `(2,2,2,2)` into a fused two-site matrix of
/// dimension `(2 d_a)²`, identity on both ancillas.
pub fn fused_link_matrix(gate: &DenseTensor, levels: usize) -> Result<DenseTensor, ModelError> {
    if gate.shape() != [2, 2, 2, 2] {
        return Err(TensorError::Dimension(format!("link gate shape {:?}", gate.shape())).into());
    }
    let q = 2 * levels;
    Ok(DenseTensor::from_fn(&[q * q, q * q], |ix| {
        let (oa, ob) = (ix[0] / q, ix[0] % q);
        let (ia, ib) = (ix[1] / q, ix[1] % q);
        if oa % levels != ia % levels || ob % levels != ib % levels {
            return C64::new(0.0, 0.0);
        }
        gate.get(&[oa / levels, ob / levels, ia / levels, ib / levels])
    }))
}

/// Disorder coupling `exp(−i δt h S^z_p ⊗ A)` on a fused site; diagonal.
pub fn build_disorder_site_gate(params: &ModelParams) -> Result<DenseTensor, ModelError> {
    let levels = ancilla_levels(params.levels)?;
    let d = params.levels;
    let mut phases = Vec::with_capacity(2 * d);
    for sz in [0.5, -0.5] {
        for &s in &levels {
            phases.push(C64::new(0.0, -params.dt * params.disorder * sz * s).exp());
        }
    }
    let mut g = DenseTensor::zeros(&[2 * d, 2 * d]);
    for (k, p) in phases.into_iter().enumerate() {
        g.set(&[k, k], p);
    }
    Ok(g)
}

/// Physical-only Zeeman step `exp(−i δt field S^z)` for one fixed disorder
/// configuration.
pub fn field_gate(field: f64, dt: f64) -> DenseTensor {
    let mut g = DenseTensor::zeros(&[2, 2]);
    g.set(&[0, 0], C64::new(0.0, -dt * field * 0.5).exp());
    g.set(&[1, 1], C64::new(0.0, dt * field * 0.5).exp());
    g
}

/// The four inequivalent links of the checkerboard cell, named from the
/// point of view of an `A` site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LinkClass {
    Left,
    Up,
    Right,
    Down,
}

impl LinkClass {
    /// Application order within one Trotter step.
    pub const ORDER: [LinkClass; 4] = [LinkClass::Left, LinkClass::Up, LinkClass::Right, LinkClass::Down];

    pub fn index(self) -> usize {
        match self {
            LinkClass::Left => 0,
            LinkClass::Up => 1,
            LinkClass::Right => 2,
            LinkClass::Down => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LinkClass::Left => "L",
            LinkClass::Up => "U",
            LinkClass::Right => "R",
            LinkClass::Down => "Do",
        }
    }
}

impl fmt::Display for LinkClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GateOperator {
    /// Fused one-site unitary `[2 d_a, 2 d_a]`, applied to every site.
    OneSite(DenseTensor),
    /// Physical two-site unitary `(out_a, out_b, in_a, in_b)` applied to every
    /// link of one class; the ancilla factors are spectators.
    Link(LinkClass, DenseTensor),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateRole {
    Disorder,
    Exchange,
    Flip,
}

#[derive(Clone, Debug)]
pub struct GateApplication {
    pub role: GateRole,
    pub operator: GateOperator,
    /// Time covered by this gate; zero for all but the last gate of a
    /// Trotter step, which carries the whole `δt`.
    pub duration: f64,
    /// Time within the period once this gate has been applied.
    pub offset_after: f64,
    /// A sub-period measurement point follows this gate.
    pub step_boundary: bool,
}

impl GateApplication {
    /// The gate as a matrix on the fused space it acts on.
    pub fn fused_unitary(&self, levels: usize) -> Result<DenseTensor, ModelError> {
        match &self.operator {
            GateOperator::OneSite(u) => Ok(u.clone()),
            GateOperator::Link(_, g) => fused_link_matrix(g, levels),
        }
    }
}

/// The gates of one Floquet period, in application order.
#[derive(Clone, Debug)]
pub struct GateSchedule {
    pub params: ModelParams,
    pub gates: Vec<GateApplication>,
    pub trotter_steps: usize,
    pub flip_slices: usize,
}

impl GateSchedule {
    pub fn total_duration(&self) -> f64 {
        self.gates.iter().map(|g| g.duration).sum()
    }
}

pub fn build_floquet_schedule(params: &ModelParams) -> Result<GateSchedule, ModelError> {
    build_floquet_schedule_sliced(params, 1)
}

/// Like [`build_floquet_schedule`], with the flip half-period cut into
/// `flip_slices` equal rotations so it can be sampled at finer resolution.
pub fn build_floquet_schedule_sliced(params: &ModelParams, flip_slices: usize) -> Result<GateSchedule, ModelError> {
    let steps = params.validate()?;
    if flip_slices == 0 {
        return Err(invalid("flip_slices", "must be positive"));
    }
    let disorder = build_disorder_site_gate(params)?;
    let exchange = build_heisenberg_link_gate(params)?;
    let flip = build_flip_slice(params, flip_slices)?;
    let half = 0.5 * params.period;

    let mut gates = Vec::with_capacity(steps * 5 + flip_slices);
    for k in 0..steps {
        let end = half * (k + 1) as f64 / steps as f64;
        gates.push(GateApplication {
            role: GateRole::Disorder,
            operator: GateOperator::OneSite(disorder.clone()),
            duration: 0.0,
            offset_after: half * k as f64 / steps as f64,
            step_boundary: false,
        });
        for class in LinkClass::ORDER {
            let last = class == LinkClass::Down;
            gates.push(GateApplication {
                role: GateRole::Exchange,
                operator: GateOperator::Link(class, exchange.clone()),
                duration: if last { half / steps as f64 } else { 0.0 },
                offset_after: if last { end } else { half * k as f64 / steps as f64 },
                step_boundary: last,
            });
        }
    }
    for j in 0..flip_slices {
        gates.push(GateApplication {
            role: GateRole::Flip,
            operator: GateOperator::OneSite(flip.clone()),
            duration: half / flip_slices as f64,
            offset_after: if j + 1 == flip_slices { params.period } else { half + half * (j + 1) as f64 / flip_slices as f64 },
            step_boundary: true,
        });
    }
    Ok(GateSchedule { params: params.clone(), gates, trotter_steps: steps, flip_slices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{contract, hermitian_exponential};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn case_iii() -> ModelParams {
        ModelParams { coupling: 1.0, disorder: 100.0, levels: 5, period: 0.1, epsilon: 0.5, dt: 0.005 }
    }

    #[test]
    fn su2_algebra() {
        let s = spin_half_operators();
        let comm = s.x.matmul(&s.y).unwrap().sub(&s.y.matmul(&s.x).unwrap()).unwrap();
        let isz = s.z.clone().scale(c(0.0, 1.0));
        assert!(comm.sub(&isz).unwrap().max_abs() < 1e-15);
        assert_eq!(s.z.get(&[0, 0]).re, 0.5);
        assert_eq!(s.z.get(&[1, 1]).re, -0.5);
        // S^x |↑⟩ = |↓⟩ / 2
        assert_eq!(s.x.get(&[1, 0]), c(0.5, 0.0));
        assert_eq!(s.x.get(&[0, 0]), c(0.0, 0.0));
    }

    #[test]
    fn ancilla_spectra() {
        assert_eq!(ancilla_levels(2).unwrap(), vec![-0.5, 0.5]);
        assert_eq!(ancilla_levels(5).unwrap(), vec![-0.5, -0.25, 0.0, 0.25, 0.5]);
        assert_eq!(ancilla_levels(1).unwrap(), vec![0.0]);
        assert!(ancilla_levels(0).is_err());
        let a = ancilla_level_operator(2).unwrap();
        let sz = spin_half_operators().z;
        // same spectrum as S^z, opposite ordering of the basis
        assert_eq!(a.get(&[0, 0]).re, sz.get(&[1, 1]).re);
    }

    #[test]
    fn perfect_flip_reverses_spin() {
        let p = ModelParams { epsilon: 0.0, ..Default::default() };
        let g = build_flip_gate(&p).unwrap();
        let sz = spin_half_operators().z;
        // ⟨↑| U† S^z U |↑⟩
        let up = DenseTensor::new(vec![2, 1], vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let out = g.matmul(&up).unwrap();
        let expect = out.adjoint().unwrap().matmul(&sz.matmul(&out).unwrap()).unwrap();
        assert!((expect.data()[0].re + 0.5).abs() < 1e-15);
    }

    #[test]
    fn imperfect_flip_angle() {
        let p = ModelParams { epsilon: 0.5, period: 0.1, ..Default::default() };
        assert!((p.flip_angle() - (PI - 0.05)).abs() < 1e-14);
        let g = build_flip_gate(&p).unwrap();
        assert!(g.sub(&x_rotation(PI - 0.05)).unwrap().max_abs() < 1e-14);
        for eps in [0.1, 1.3, -2.0, 7.5, 0.0] {
            let p = ModelParams { epsilon: eps, period: 0.37, ..Default::default() };
            assert!((p.flip_angle() - (PI - eps * 0.37)).abs() < 1e-13);
        }
    }

    #[test]
    fn flip_gate_is_identity_on_ancilla() {
        let p = case_iii();
        let g = build_flip_gate(&p).unwrap();
        let d = p.levels;
        // partial trace over the physical factor is 2 cos(θ/2) times identity
        let t = g.clone().reshape(&[2, d, 2, d]).unwrap();
        let mut tr = DenseTensor::zeros(&[d, d]);
        for a in 0..d {
            for b in 0..d {
                tr.set(&[a, b], t.get(&[0, a, 0, b]) + t.get(&[1, a, 1, b]));
            }
        }
        let scale = 2.0 * (0.5 * p.flip_angle()).cos();
        assert!(tr.sub(&DenseTensor::identity(d).scale_real(scale)).unwrap().max_abs() < 1e-14);
        let expected = x_rotation(p.flip_angle()).kron(&DenseTensor::identity(d)).unwrap();
        assert!(g.sub(&expected).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn heisenberg_gate_properties() {
        let id = heisenberg_gate(0.0, 0.005).unwrap().reshape(&[4, 4]).unwrap();
        assert!(id.sub(&DenseTensor::identity(4)).unwrap().max_abs() < 1e-15);
        let p = ModelParams::default();
        let g = build_heisenberg_link_gate(&p).unwrap();
        let m = g.clone().reshape(&[4, 4]).unwrap();
        assert!(m.unitarity_error().unwrap() < 1e-10);

        // |↑↓⟩ → e^{iδt/4}(cos(δt/2)|↑↓⟩ − i sin(δt/2)|↓↑⟩)
        let col: Vec<C64> = (0..4).map(|r| m.get(&[r, 1])).collect();
        let half = 0.5 * p.dt;
        let phase = c(0.0, p.dt / 4.0).exp();
        assert!((col[1] - phase * half.cos()).norm() < 1e-14);
        assert!((col[2] - phase * c(0.0, -half.sin())).norm() < 1e-14);
        assert!(col[0].norm() < 1e-15 && col[3].norm() < 1e-15);

        // Taylor series of the 4×4 generator as an independent check
        let a = heisenberg_bond().scale(c(0.0, -p.dt));
        let mut term = DenseTensor::identity(4);
        let mut series = DenseTensor::identity(4);
        for n in 1..20 {
            term = term.matmul(&a).unwrap().scale_real(1.0 / n as f64);
            series = series.add(&term).unwrap();
        }
        assert!(series.sub(&m).unwrap().max_abs() < 1e-15);
        // Schmidt values of the image of |↑↓⟩
        let psi = DenseTensor::new(vec![2, 2], col).unwrap();
        let r = crate::tensor::svd_split(&psi, &[0], 2, 0.0).unwrap();
        assert!((r.singular_values[0] - half.cos()).abs() < 1e-12);
        assert!((r.singular_values[1] - half.sin()).abs() < 1e-12);
    }

    #[test]
    fn fused_link_gate_is_block_diagonal_in_ancilla() {
        let p = ModelParams { levels: 3, ..Default::default() };
        let g = build_heisenberg_link_gate(&p).unwrap();
        let f = fused_link_matrix(&g, 3).unwrap();
        assert_eq!(f.shape(), &[36, 36]);
        assert!(f.unitarity_error().unwrap() < 1e-10);
        // equals U_phys ⊗ I on the reordered space
        let u = g.reshape(&[4, 4]).unwrap();
        let t = f.reshape(&[2, 3, 2, 3, 2, 3, 2, 3]).unwrap();
        let reordered = t.permute(&[0, 2, 1, 3, 4, 6, 5, 7]).unwrap().reshape(&[36, 36]).unwrap();
        let expected = u.kron(&DenseTensor::identity(9)).unwrap();
        assert!(reordered.sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn disorder_gate_phases() {
        let p = ModelParams { disorder: 0.0, levels: 3, ..Default::default() };
        let g = build_disorder_site_gate(&p).unwrap();
        assert!(g.sub(&DenseTensor::identity(6)).unwrap().max_abs() < 1e-15);

        let p = case_iii();
        let g = build_disorder_site_gate(&p).unwrap();
        let levels = ancilla_levels(5).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    assert_eq!(g.get(&[i, j]), c(0.0, 0.0));
                }
            }
        }
        for (k, s) in levels.iter().enumerate() {
            let expected = c(0.0, -p.dt * p.disorder * s / 2.0).exp();
            assert!((g.get(&[k, k]) - expected).norm() < 1e-15);
        }

        let p = ModelParams { disorder: 100.0, levels: 2, ..Default::default() };
        let g = build_disorder_site_gate(&p).unwrap();
        // |↑⟩ ⊗ |−1/2⟩ and |↑⟩ ⊗ |+1/2⟩
        assert!((g.get(&[0, 0]) - c(0.0, 0.125).exp()).norm() < 1e-15);
        assert!((g.get(&[1, 1]) - c(0.0, -0.125).exp()).norm() < 1e-15);

        // matches the matrix exponential of the coupling term
        let hz = spin_half_operators().z.kron(&ancilla_level_operator(2).unwrap()).unwrap();
        let e = hermitian_exponential(&hz, c(0.0, -p.dt * p.disorder)).unwrap();
        assert!(e.sub(&g).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn field_gate_matches_fused_block() {
        let p = ModelParams { disorder: 7.0, levels: 3, ..Default::default() };
        let g = build_disorder_site_gate(&p).unwrap();
        for (k, s) in ancilla_levels(3).unwrap().iter().enumerate() {
            let f = field_gate(p.disorder * s, p.dt);
            assert!((f.get(&[0, 0]) - g.get(&[k, k])).norm() < 1e-15);
            assert!((f.get(&[1, 1]) - g.get(&[3 + k, 3 + k])).norm() < 1e-15);
        }
    }

    #[test]
    fn reference_schedule_shape() {
        let p = case_iii();
        let s = build_floquet_schedule(&p).unwrap();
        assert_eq!(s.trotter_steps, 10);
        assert_eq!(s.gates.len(), 10 * 5 + 1);
        assert_eq!(s.gates.iter().filter(|g| g.role == GateRole::Disorder).count(), 10);
        assert_eq!(s.gates.iter().filter(|g| g.role == GateRole::Exchange).count(), 40);
        assert_eq!(s.gates.last().unwrap().role, GateRole::Flip);
        let classes: Vec<LinkClass> = s.gates[..5]
            .iter()
            .filter_map(|g| match g.operator {
                GateOperator::Link(c, _) => Some(c),
                _ => None,
            })
            .collect();
        assert_eq!(classes, LinkClass::ORDER.to_vec());
        assert!((s.total_duration() - p.period).abs() < 1e-12);
        assert!((s.gates.last().unwrap().offset_after - p.period).abs() < 1e-15);

        let sliced = build_floquet_schedule_sliced(&p, 10).unwrap();
        assert_eq!(sliced.gates.len(), 60);
        assert!((sliced.total_duration() - p.period).abs() < 1e-12);
    }

    #[test]
    fn every_gate_is_unitary_and_ancilla_block_diagonal() {
        let p = case_iii();
        let s = build_floquet_schedule_sliced(&p, 3).unwrap();
        for g in &s.gates {
            let u = g.fused_unitary(p.levels).unwrap();
            assert!(u.unitarity_error().unwrap() < 1e-10);
            let n = u.shape()[0];
            let q = p.fused_dim();
            // conjugation by any ancilla level projector leaves the gate invariant
            let level_of = |idx: usize| -> Vec<usize> {
                if n == q {
                    vec![idx % p.levels]
                } else {
                    vec![(idx / q) % p.levels, (idx % q) % p.levels]
                }
            };
            for i in 0..n {
                for j in 0..n {
                    if level_of(i) != level_of(j) {
                        assert_eq!(u.get(&[i, j]), c(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn trivial_case_reduces_to_flip() {
        let p = ModelParams { coupling: 0.0, disorder: 0.0, levels: 2, epsilon: 0.5, ..Default::default() };
        let s = build_floquet_schedule(&p).unwrap();
        for g in &s.gates {
            let u = g.fused_unitary(p.levels).unwrap();
            let n = u.shape()[0];
            if g.role != GateRole::Flip {
                assert!(u.sub(&DenseTensor::identity(n)).unwrap().max_abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_level_schedule_ignores_disorder() {
        let a = build_floquet_schedule(&ModelParams { disorder: 0.0, ..Default::default() }).unwrap();
        let b = build_floquet_schedule(&ModelParams { disorder: 123.0, ..Default::default() }).unwrap();
        for (x, y) in a.gates.iter().zip(&b.gates) {
            assert_eq!(x.operator, y.operator);
        }
    }

    #[test]
    fn rejects_non_divisible_step() {
        let p = ModelParams { dt: 0.003, ..Default::default() };
        let err = build_floquet_schedule(&p).unwrap_err();
        assert!(err.to_string().contains("does not divide"));
        assert!(ModelParams { period: 0.0, ..Default::default() }.validate().is_err());
        assert!(ModelParams { levels: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn embedded_link_gate_contracts_like_kron() {
        // (U ⊗ I) applied to |↑,k⟩⊗|↓,l⟩ keeps the ancilla labels
        let p = ModelParams { levels: 2, ..Default::default() };
        let g = build_heisenberg_link_gate(&p).unwrap();
        let f = fused_link_matrix(&g, 2).unwrap().reshape(&[4, 4, 4, 4]).unwrap();
        let mut v = DenseTensor::zeros(&[4, 4]);
        v.set(&[1, 2], c(1.0, 0.0)); // spin ↑ level 1, spin ↓ level 0
        let out = contract(&f, &v, &[(2, 0), (3, 1)]).unwrap();
        let phys = g.reshape(&[4, 4]).unwrap();
        assert!((out.get(&[1, 2]) - phys.get(&[1, 1])).norm() < 1e-15);
        assert!((out.get(&[3, 0]) - phys.get(&[2, 1])).norm() < 1e-15);
    }
}
