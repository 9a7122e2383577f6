//! Corner transfer matrix contraction of the infinite double-layer network.
//!
//! Every site tensor has virtual axes in geometric order (left, up, right,
//! down) on both sublattices, so the double layer of either sublattice can be
//! rotated by a plain axis permutation. Only the left absorption move is
//! implemented; the other three directions are the left move in a rotated
//! frame.
//!
//! Environment legs run clockwise. Corner `C_k` carries `(T_{k-1} side, T_k side)`
//! with `T_0 = T_4`; edge `T_k` carries `(C_k side, site, C_{k+1} side)`.
//! `C1` is up-left, `T1` up, and so on around the site. Tensors are stored per
//! sublattice of the site they surround.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::state::{Sublattice, UnitCell};
use crate::tensor::{contract, hermitian_eigh, matrix_svd, DenseTensor, TensorError};

pub const DEFAULT_CTM_TOL: f64 = 1e-8;
pub const DEFAULT_CTM_MAX_ITER: usize = 200;

/// Singular values of the projector SVD below this fraction of the largest are dropped.
const PROJECTOR_CUTOFF: f64 = 1e-12;

/// Eigenvalues of a normalized density matrix below `-RDM_NEGATIVE_TOL` are an error.
pub const RDM_NEGATIVE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("environment: {0}")]
    Numerical(String),
    #[error("environment: {0}")]
    Argument(String),
}

/// Contracts the weight-absorbed tensor of `site` with its conjugate.
///
/// Virtual axes fuse as `ket·D + bra`. With `open_physical` the result has a
/// leading axis `p·d + p'` of extent `d²`.
pub fn build_double_layer(cell: &UnitCell, site: Sublattice, open_physical: bool) -> DenseTensor {
    double_layer_of(&cell.absorb_weights(site), open_physical)
}

fn double_layer_of(t: &DenseTensor, open_physical: bool) -> DenseTensor {
    let s = t.shape();
    let (d, dims) = (s[0], [s[1], s[2], s[3], s[4]]);
    let virt: usize = dims.iter().product();
    let fused: Vec<usize> = dims.iter().map(|x| x * x).collect();
    if open_physical {
        // [p, v] x [p', v'] -> [p, p', (l l') (u u') (r r') (d d')]
        let mut out = DenseTensor::zeros(&[d * d, fused[0], fused[1], fused[2], fused[3]]);
        let data = t.data();
        let o = out.data_mut();
        let strides = [fused[1] * fused[2] * fused[3], fused[2] * fused[3], fused[3], 1];
        for p in 0..d {
            for q in 0..d {
                let base = (p * d + q) * virt * virt;
                for v in 0..virt {
                    let ket = data[p * virt + v];
                    if ket == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let iv = unravel(v, &dims);
                    for w in 0..virt {
                        let iw = unravel(w, &dims);
                        let mut off = base;
                        for k in 0..4 {
                            off += (iv[k] * dims[k] + iw[k]) * strides[k];
                        }
                        o[off] += ket * data[q * virt + w].conj();
                    }
                }
            }
        }
        return out;
    }
    let m = t.clone().reshape(&[d, virt]).expect("site tensor");
    let raw = contract(&m, &m.conj(), &[(0, 0)]).expect("matching physical axes");
    let split = raw
        .reshape(&[dims[0], dims[1], dims[2], dims[3], dims[0], dims[1], dims[2], dims[3]])
        .expect("virtual extents");
    split
        .permute(&[0, 4, 1, 5, 2, 6, 3, 7])
        .expect("rank 8")
        .reshape(&fused)
        .expect("fused extents")
}

fn unravel(mut v: usize, dims: &[usize; 4]) -> [usize; 4] {
    let mut ix = [0; 4];
    for k in (0..4).rev() {
        ix[k] = v % dims[k];
        v /= dims[k];
    }
    ix
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtmOptions {
    pub chi: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl CtmOptions {
    pub fn new(chi: usize) -> Self {
        Self { chi, tol: DEFAULT_CTM_TOL, max_iter: DEFAULT_CTM_MAX_ITER }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub chi: usize,
    /// `corners[s][k]` is `C_{k+1}` around a site of sublattice `s`.
    pub corners: [[DenseTensor; 4]; 2],
    /// `edges[s][k]` is `T_{k+1}`, shape `[χ, D², χ]`.
    pub edges: [[DenseTensor; 4]; 2],
    /// Spectrum change after each sweep.
    pub history: Vec<f64>,
    pub converged: bool,
    /// Largest relative weight dropped by a projector in the last sweep.
    pub residual: f64,
}

/// Rotated double layers: `layers[s]` for the current frame.
type Layers = [DenseTensor; 2];

fn rotate_layer(a: &DenseTensor) -> DenseTensor {
    a.permute(&[1, 2, 3, 0]).expect("rank-4 double layer")
}

impl Environment {
    /// Trivial boundary: unit corners and edges that pair ket and bra indices.
    pub fn product_boundary(cell: &UnitCell, chi: usize) -> Self {
        let edge = |dim: usize| {
            let mut t = DenseTensor::zeros(&[1, dim * dim, 1]);
            for k in 0..dim {
                t.set(&[0, k * dim + k, 0], C64::new(1.0, 0.0));
            }
            t
        };
        let corner = || DenseTensor::from_fn(&[1, 1], |_| C64::new(1.0, 0.0));
        let make = |site: Sublattice| {
            let s = cell.tensor(site).shape();
            // T_k faces the site's up, right, down, left axes respectively
            [edge(s[2]), edge(s[3]), edge(s[4]), edge(s[1])]
        };
        Self {
            chi,
            corners: [[corner(), corner(), corner(), corner()], [corner(), corner(), corner(), corner()]],
            edges: [make(Sublattice::A), make(Sublattice::B)],
            history: Vec::new(),
            converged: false,
            residual: 0.0,
        }
    }

    /// Whether this environment's edge extents match the double layers of `cell`.
    pub fn fits(&self, cell: &UnitCell) -> bool {
        Sublattice::BOTH.iter().all(|&site| {
            let s = cell.tensor(site).shape();
            let want = [s[2], s[3], s[4], s[1]];
            (0..4).all(|k| self.edges[site.index()][k].shape()[1] == want[k] * want[k])
        })
    }

    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    fn rotate(&mut self) {
        for s in 0..2 {
            self.corners[s].rotate_left(1);
            self.edges[s].rotate_left(1);
        }
    }

    /// Normalized descending singular values of every corner.
    fn spectra(&self) -> Result<Vec<Vec<f64>>, EnvError> {
        let mut out = Vec::with_capacity(8);
        for s in 0..2 {
            for c in &self.corners[s] {
                let (_, sv, _) = matrix_svd(c)?;
                let total: f64 = sv.iter().sum();
                if !(total > 0.0) {
                    return Err(EnvError::Numerical("corner matrix vanished".into()));
                }
                out.push(sv.iter().map(|x| x / total).collect());
            }
        }
        Ok(out)
    }

    /// One full sweep: left, up, right and down moves.
    pub fn sweep(&mut self, cell: &UnitCell) -> Result<(), EnvError> {
        let mut layers = [build_double_layer(cell, Sublattice::A, false), build_double_layer(cell, Sublattice::B, false)];
        for l in &mut layers {
            let n = l.norm();
            *l = l.clone().scale_real(1.0 / n);
        }
        self.sweep_layers(&mut layers)
    }

    fn sweep_layers(&mut self, layers: &mut Layers) -> Result<(), EnvError> {
        let mut residual = 0.0f64;
        for _ in 0..4 {
            residual = residual.max(self.left_move(layers)?);
            // rotate counterclockwise: the upper boundary becomes the left one
            self.rotate();
            for l in layers.iter_mut() {
                *l = rotate_layer(l);
            }
        }
        self.residual = residual;
        Ok(())
    }

    /// Enlarged corner `k` (0-based) of sublattice `s` as a matrix
    /// `[(T_{k-1} outer, site), (T_k outer, site)]`.
    fn enlarged_corner(&self, s: usize, k: usize, a: &DenseTensor) -> Result<DenseTensor, EnvError> {
        let c = &self.corners[s][k];
        let t_next = &self.edges[s][k];
        let t_prev = &self.edges[s][(k + 3) % 4];
        // site axes (facing T_prev, facing T_next, toward T_next's outer, toward T_prev's outer)
        let perm = [k, (k + 1) % 4, (k + 2) % 4, (k + 3) % 4];
        let a = a.permute(&perm)?;
        let x = contract(c, t_next, &[(1, 0)])?; // [x, f2, c1]
        let y = contract(t_prev, &x, &[(2, 0)])?; // [r1, f1, f2, c1]
        let q = contract(&y, &a, &[(1, 0), (2, 1)])?; // [r1, c1, col, row]
        let (r1, c1, col, row) = (q.shape()[0], q.shape()[1], q.shape()[2], q.shape()[3]);
        Ok(q.permute(&[0, 3, 1, 2])?.reshape(&[r1 * row, c1 * col])?)
    }

    /// Projectors on the left cut below a site of sublattice `p`:
    /// `(P, P̃, dropped weight)` with `P` attached to the lower half.
    fn projectors(&self, p: usize, layers: &Layers) -> Result<(DenseTensor, DenseTensor, f64), EnvError> {
        let q = 1 - p;
        let ul = self.enlarged_corner(p, 0, &layers[p])?;
        let ur = self.enlarged_corner(q, 1, &layers[q])?;
        let dr = self.enlarged_corner(p, 2, &layers[p])?;
        let dl = self.enlarged_corner(q, 3, &layers[q])?;
        let upper = normalized(ul.matmul(&ur)?);
        let lower = normalized(dr.matmul(&dl)?);
        let (u, sv, vh) = matrix_svd(&lower.matmul(&upper)?)?;
        let smax = sv.first().copied().unwrap_or(0.0);
        if !(smax > 0.0) || !smax.is_finite() {
            return Err(EnvError::Numerical("projector spectrum vanished".into()));
        }
        let keep = sv.iter().take(self.chi).take_while(|&&x| x > PROJECTOR_CUTOFF * smax).count();
        let total: f64 = sv.iter().map(|x| x * x).sum();
        let dropped: f64 = sv[keep..].iter().map(|x| x * x).sum();
        let inv: Vec<f64> = sv[..keep].iter().map(|x| x.sqrt().recip()).collect();
        let n = vh.shape()[1];
        let m = u.shape()[0];
        let r = sv.len();
        // P = upper · V · S^{-1/2}
        let v_k = DenseTensor::from_fn(&[n, keep], |ix| vh.get(&[ix[1], ix[0]]).conj() * inv[ix[1]]);
        let proj = upper.matmul(&v_k)?;
        // P̃ = S^{-1/2} · U† · lower
        let uh_k = DenseTensor::from_fn(&[keep, m], |ix| u.data()[ix[1] * r + ix[0]].conj() * inv[ix[0]]);
        let proj_t = uh_k.matmul(&lower)?;
        Ok((proj, proj_t, if total > 0.0 { dropped / total } else { 0.0 }))
    }

    /// Absorbs one column from the left into both sublattices' boundaries.
    fn left_move(&mut self, layers: &Layers) -> Result<f64, EnvError> {
        let (p0, pt0, w0) = self.projectors(0, layers)?;
        let (p1, pt1, w1) = self.projectors(1, layers)?;
        let proj = [p0, p1];
        let proj_t = [pt0, pt1];
        let mut c1n = Vec::with_capacity(2);
        let mut t4n = Vec::with_capacity(2);
        let mut c4n = Vec::with_capacity(2);
        for s in 0..2 {
            let o = 1 - s;
            // C1 · T1 -> [(down, site), right]
            let x = contract(&self.corners[o][0], &self.edges[o][0], &[(1, 0)])?;
            let (xd, xf, xr) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let x = x.reshape(&[xd * xf, xr])?;
            c1n.push(normalized(proj_t[s].matmul(&x)?));

            // T4 · a -> [down, up, u, r, d]
            let a = &layers[o];
            let y = contract(&self.edges[o][3], a, &[(1, 0)])?;
            let sh = y.shape().to_vec();
            let (dn, up, fu, fr, fd) = (sh[0], sh[1], sh[2], sh[3], sh[4]);
            // [(down, d), r, (up, u)]
            let y = y.permute(&[0, 4, 3, 1, 2])?.reshape(&[dn * fd, fr, up * fu])?;
            let y = contract(&proj_t[o], &y, &[(1, 0)])?; // [down', r, (up,u)]
            let t = contract(&y, &proj[s], &[(2, 0)])?; // [down', r, up']
            t4n.push(normalized(t));

            // T3 · C4 -> [right, up3, up]
            let z = contract(&self.edges[o][2], &self.corners[o][3], &[(2, 0)])?;
            let (zr, zu3, zu) = (z.shape()[0], z.shape()[1], z.shape()[2]);
            let z = z.permute(&[0, 2, 1])?.reshape(&[zr, zu * zu3])?;
            c4n.push(normalized(z.matmul(&proj[o])?));
        }
        for (s, ((c1, t4), c4)) in c1n.into_iter().zip(t4n).zip(c4n).enumerate() {
            self.corners[s][0] = c1;
            self.edges[s][3] = t4;
            self.corners[s][3] = c4;
        }
        Ok(w0.max(w1))
    }

    /// Environment contracted around a site of sublattice `site`:
    /// `E[l, u, r, d]` with fused ket/bra legs.
    fn site_environment(&self, site: Sublattice) -> Result<DenseTensor, EnvError> {
        let s = site.index();
        let [c1, c2, c3, c4] = &self.corners[s];
        let [t1, t2, t3, t4] = &self.edges[s];
        let x = contract(c1, t1, &[(1, 0)])?; // [d1, u, r1]
        let x = contract(&x, c2, &[(2, 0)])?; // [d1, u, d2]
        let x = contract(&x, t2, &[(2, 0)])?; // [d1, u, r, d3]
        let x = contract(&x, c3, &[(3, 0)])?; // [d1, u, r, l3]
        let x = contract(&x, t3, &[(3, 0)])?; // [d1, u, r, dd, l4]
        let x = contract(&x, c4, &[(4, 0)])?; // [d1, u, r, dd, u4]
        let e = contract(&x, t4, &[(4, 0), (0, 2)])?; // [u, r, dd, l]
        Ok(e.permute(&[3, 0, 1, 2])?)
    }
}

fn normalized(t: DenseTensor) -> DenseTensor {
    let n = t.max_abs();
    if n > 0.0 && n.is_finite() {
        t.scale_real(1.0 / n)
    } else {
        t
    }
}

fn spectrum_change(old: &[Vec<f64>], new: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a, b) in old.iter().zip(new) {
        for k in 0..a.len().max(b.len()) {
            let x = a.get(k).copied().unwrap_or(0.0);
            let y = b.get(k).copied().unwrap_or(0.0);
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Converges an environment from the trivial boundary.
pub fn ctmrg_converge(cell: &UnitCell, options: &CtmOptions) -> Result<Environment, EnvError> {
    ctmrg_converge_from(cell, options, None)
}

/// Converges an environment, starting from `initial` when its shapes fit `cell`.
///
/// Hitting `max_iter` is not an error: the result has `converged == false`.
pub fn ctmrg_converge_from(
    cell: &UnitCell,
    options: &CtmOptions,
    initial: Option<&Environment>,
) -> Result<Environment, EnvError> {
    if options.chi < 1 {
        return Err(EnvError::Argument("chi must be at least 1".into()));
    }
    if options.max_iter < 1 {
        return Err(EnvError::Argument("ctm_max_iter must be at least 1".into()));
    }
    let mut env = match initial {
        Some(e) if e.fits(cell) && e.chi == options.chi => {
            let mut e = e.clone();
            e.history.clear();
            e.converged = false;
            e
        }
        _ => Environment::product_boundary(cell, options.chi),
    };
    let mut layers = [build_double_layer(cell, Sublattice::A, false), build_double_layer(cell, Sublattice::B, false)];
    for l in &mut layers {
        let n = l.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(EnvError::Numerical("double layer has zero or non-finite norm".into()));
        }
        *l = l.clone().scale_real(1.0 / n);
    }
    let mut previous = env.spectra()?;
    for _ in 0..options.max_iter {
        env.sweep_layers(&mut layers)?;
        let current = env.spectra()?;
        let change = spectrum_change(&previous, &current);
        env.history.push(change);
        previous = current;
        if change < options.tol {
            env.converged = true;
            break;
        }
    }
    if !env.converged {
        log::warn!(
            "ctmrg did not converge in {} sweeps (last change {:.3e})",
            options.max_iter,
            env.history.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(env)
}

/// One-site reduced density matrix in the fused space and its physical marginal.
#[derive(Clone, Debug)]
pub struct SiteRdm {
    /// Dimension `2·d_a`, index `spin·d_a + level`.
    pub fused: DenseTensor,
    /// Dimension 2.
    pub physical: DenseTensor,
    /// Most negative eigenvalue clipped to zero.
    pub clipped: f64,
}

/// Hermitianizes, clips small negative eigenvalues and renormalizes.
pub fn sanitize_density_matrix(rho: &DenseTensor) -> Result<(DenseTensor, f64), EnvError> {
    let tr = rho.trace()?;
    if !(tr.re > 0.0) || !tr.re.is_finite() {
        return Err(EnvError::Numerical(format!("density matrix has trace {tr}")));
    }
    let rho = rho.clone().scale_real(1.0 / tr.re);
    let herm = rho.add(&rho.adjoint()?)?.scale_real(0.5);
    let (values, vecs) = hermitian_eigh(&herm)?;
    let lowest = values.first().copied().unwrap_or(0.0);
    if lowest < -RDM_NEGATIVE_TOL {
        return Err(EnvError::Numerical(format!("density matrix eigenvalue {lowest:.3e} below tolerance")));
    }
    let clipped: Vec<f64> = values.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let n = clipped.len();
    let mut scaled = vecs.clone();
    for i in 0..n {
        for j in 0..n {
            let v = scaled.get(&[i, j]) * (clipped[j] / total);
            scaled.set(&[i, j], v);
        }
    }
    let out = scaled.matmul(&vecs.adjoint()?)?;
    Ok((out.add(&out.adjoint()?)?.scale_real(0.5), lowest.min(0.0)))
}

/// Traces the ancilla factor out of a fused-space operator.
pub fn physical_marginal(fused: &DenseTensor, levels: usize) -> DenseTensor {
    DenseTensor::from_fn(&[2, 2], |ix| {
        (0..levels).map(|a| fused.get(&[ix[0] * levels + a, ix[1] * levels + a])).sum()
    })
}

pub fn one_site_rdm(cell: &UnitCell, env: &Environment, site: Sublattice) -> Result<SiteRdm, EnvError> {
    let t = cell.absorb_weights(site);
    let s = t.shape().to_vec();
    let (d, dims) = (s[0], [s[1], s[2], s[3], s[4]]);
    let virt: usize = dims.iter().product();
    let e = env.site_environment(site)?;
    if e.shape() != [dims[0] * dims[0], dims[1] * dims[1], dims[2] * dims[2], dims[3] * dims[3]] {
        return Err(EnvError::Argument(format!("environment shape {:?} does not fit site {:?}", e.shape(), s)));
    }
    // [(l u r d), (l' u' r' d')]
    let e = e
        .reshape(&[dims[0], dims[0], dims[1], dims[1], dims[2], dims[2], dims[3], dims[3]])?
        .permute(&[0, 2, 4, 6, 1, 3, 5, 7])?
        .reshape(&[virt, virt])?;
    let m = t.reshape(&[d, virt])?;
    let ket = m.matmul(&e)?; // [p, v']
    let rho = contract(&ket, &m.conj(), &[(1, 1)])?;
    let (fused, clipped) = sanitize_density_matrix(&rho)?;
    let physical = physical_marginal(&fused, cell.levels);
    Ok(SiteRdm { fused, physical, clipped })
}

/// `Tr(ρ · op)` for a fused-space operator.
pub fn expectation(rdm: &DenseTensor, op: &DenseTensor) -> Result<f64, EnvError> {
    Ok(rdm.matmul(op)?.trace()?.re)
}

/// Serializes the environment into named tensors for a checkpoint.
pub fn environment_to_extras(env: &Environment) -> Vec<(String, DenseTensor)> {
    let mut out = Vec::with_capacity(17);
    let meta = DenseTensor::from_fn(&[2], |ix| {
        C64::new(if ix[0] == 0 { env.chi as f64 } else { env.residual }, 0.0)
    });
    out.push(("env.meta".to_string(), meta));
    for s in 0..2 {
        for k in 0..4 {
            out.push((format!("env.c{s}{k}"), env.corners[s][k].clone()));
            out.push((format!("env.t{s}{k}"), env.edges[s][k].clone()));
        }
    }
    out
}

/// Inverse of [`environment_to_extras`]; `None` when no environment was stored.
pub fn environment_from_extras(extras: &[(String, DenseTensor)]) -> Option<Environment> {
    let find = |name: &str| extras.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone());
    let meta = find("env.meta")?;
    let get = |kind: char, s: usize, k: usize| find(&format!("env.{kind}{s}{k}"));
    let side = |kind: char, s: usize| -> Option<[DenseTensor; 4]> {
        let v: Option<Vec<DenseTensor>> = (0..4).map(|k| get(kind, s, k)).collect();
        v?.try_into().ok()
    };
    let corners = [side('c', 0)?, side('c', 1)?];
    let edges = [side('t', 0)?, side('t', 1)?];
    Some(Environment {
        chi: meta.data()[0].re as usize,
        corners,
        edges,
        history: Vec::new(),
        converged: true,
        residual: meta.data()[1].re,
    })
}
