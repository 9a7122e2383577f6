//! The two-site checkerboard iPEPS and its on-disk checkpoint container.
//!
//! Site tensors carry axes `(fused physical, left, up, right, down)` and are
//! stored without bond weights (Vidal form); the four weight vectors live on
//! the links. An `A` site's left/up/right/down neighbours are all `B` sites,
//! so each link class names one bond of the cell:
//!
//! ```text
//!            U                  axis of A   axis of B
//!            |              L       1           3
//!     L -- A -- R           U       2           4
//!            |              R       3           1
//!            Do             Do      4           2
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use num_complex::Complex64 as C64;

use crate::model::LinkClass;
use crate::tensor::{DenseTensor, TensorError};

/// Weights below this fraction of the largest one are clamped when divided out.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("unknown initial pattern `{0}` (expected `neel` or `polarized`)")]
    UnknownPattern(String),

    #[error("invalid unit cell: {0}")]
    Inconsistent(String),

    #[error("checkpoint: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sublattice {
    A,
    B,
}

impl Sublattice {
    pub const BOTH: [Sublattice; 2] = [Sublattice::A, Sublattice::B];

    pub fn index(self) -> usize {
        match self {
            Sublattice::A => 0,
            Sublattice::B => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Sublattice::A => Sublattice::B,
            Sublattice::B => Sublattice::A,
        }
    }
}

/// Initial z-basis product pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Neel,
    Polarized,
}

impl Pattern {
    /// Initial `S^z` eigenvalue on each sublattice.
    pub fn initial_sz(self, site: Sublattice) -> f64 {
        match (self, site) {
            (Pattern::Neel, Sublattice::B) => -0.5,
            _ => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Neel => "neel",
            Pattern::Polarized => "polarized",
        }
    }
}

impl std::str::FromStr for Pattern {
    type Err = StateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "neel" | "néel" => Ok(Pattern::Neel),
            "polarized" | "polarised" => Ok(Pattern::Polarized),
            other => Err(StateError::UnknownPattern(other.to_string())),
        }
    }
}

/// Virtual axis (1..=4) of `site` that carries link `class`.
pub fn link_axis(site: Sublattice, class: LinkClass) -> usize {
    match (site, class) {
        (Sublattice::A, LinkClass::Left) | (Sublattice::B, LinkClass::Right) => 1,
        (Sublattice::A, LinkClass::Up) | (Sublattice::B, LinkClass::Down) => 2,
        (Sublattice::A, LinkClass::Right) | (Sublattice::B, LinkClass::Left) => 3,
        (Sublattice::A, LinkClass::Down) | (Sublattice::B, LinkClass::Up) => 4,
    }
}

/// Link class carried by virtual axis `axis` (1..=4) of `site`.
pub fn axis_link(site: Sublattice, axis: usize) -> LinkClass {
    *LinkClass::ORDER
        .iter()
        .find(|&&c| link_axis(site, c) == axis)
        .expect("virtual axes are 1..=4")
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitCell {
    pub a: DenseTensor,
    pub b: DenseTensor,
    /// Bond weights indexed by [`LinkClass::index`].
    pub weights: [Vec<f64>; 4],
    pub levels: usize,
    pub max_bond: usize,
}

impl UnitCell {
    pub fn tensor(&self, site: Sublattice) -> &DenseTensor {
        match site {
            Sublattice::A => &self.a,
            Sublattice::B => &self.b,
        }
    }

    pub fn tensor_mut(&mut self, site: Sublattice) -> &mut DenseTensor {
        match site {
            Sublattice::A => &mut self.a,
            Sublattice::B => &mut self.b,
        }
    }

    pub fn weight(&self, class: LinkClass) -> &[f64] {
        &self.weights[class.index()]
    }

    pub fn fused_dim(&self) -> usize {
        2 * self.levels
    }

    pub fn bond_dims(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|k| self.weights[k].len())
    }

    pub fn check(&self) -> Result<(), StateError> {
        for site in Sublattice::BOTH {
            let t = self.tensor(site);
            if t.rank() != 5 || t.shape()[0] != self.fused_dim() {
                return Err(StateError::Inconsistent(format!("{site:?} tensor has shape {:?}", t.shape())));
            }
            for class in LinkClass::ORDER {
                let ext = t.shape()[link_axis(site, class)];
                if ext != self.weight(class).len() {
                    return Err(StateError::Inconsistent(format!(
                        "{site:?} extent {ext} on link {class} against {} weights",
                        self.weight(class).len()
                    )));
                }
            }
        }
        for (k, w) in self.weights.iter().enumerate() {
            if w.is_empty() || w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(StateError::Inconsistent(format!("weights on link {} must be positive", LinkClass::ORDER[k])));
            }
        }
        Ok(())
    }

    /// The site tensor with the square root of every adjacent weight
    /// multiplied into its virtual axis.
    pub fn absorb_weights(&self, site: Sublattice) -> DenseTensor {
        self.scaled(site, |w| w.sqrt())
    }

    /// The site tensor with the full weight of every adjacent link absorbed.
    pub(crate) fn scaled(&self, site: Sublattice, f: impl Fn(f64) -> f64) -> DenseTensor {
        let mut t = self.tensor(site).clone();
        for class in LinkClass::ORDER {
            let w: Vec<f64> = self.weight(class).iter().map(|&x| f(x)).collect();
            t.scale_axis(link_axis(site, class), &w).expect("consistent cell");
        }
        t
    }

    /// Relabels the cell after a translation by one lattice site: `A` and `B`
    /// exchange roles and every link class maps to its mirror.
    pub fn translated(&self) -> Self {
        let w = &self.weights;
        Self {
            a: self.b.clone(),
            b: self.a.clone(),
            weights: [w[2].clone(), w[3].clone(), w[0].clone(), w[1].clone()],
            levels: self.levels,
            max_bond: self.max_bond,
        }
    }
}

/// Reciprocal of `w` with the small-weight floor applied.
pub fn regularized_inverse(weights: &[f64]) -> Vec<f64> {
    let wmax = weights.iter().copied().fold(0.0, f64::max);
    let floor = WEIGHT_FLOOR * wmax;
    weights.iter().map(|&w| 1.0 / w.max(floor)).collect()
}

/// Divides `sqrt(weights)` back out of an absorbed tensor.
pub fn remove_absorbed_weights(t: &DenseTensor, site: Sublattice, cell: &UnitCell) -> DenseTensor {
    let mut out = t.clone();
    for class in LinkClass::ORDER {
        let inv: Vec<f64> = regularized_inverse(cell.weight(class)).iter().map(|x| x.sqrt()).collect();
        out.scale_axis(link_axis(site, class), &inv).expect("consistent cell");
    }
    out
}

/// Bond-dimension-one product state: the physical spin per `pattern` and the
/// ancilla in the equal superposition of its levels.
pub fn init_product_state(pattern: Pattern, levels: usize, max_bond: usize) -> Result<UnitCell, StateError> {
    if levels < 1 {
        return Err(StateError::Inconsistent("d_a must be at least 1".into()));
    }
    if max_bond < 1 {
        return Err(StateError::Inconsistent("D_max must be at least 1".into()));
    }
    let amp = (levels as f64).sqrt().recip();
    let site = |spin: usize| {
        let mut t = DenseTensor::zeros(&[2 * levels, 1, 1, 1, 1]);
        for a in 0..levels {
            t.set(&[spin * levels + a, 0, 0, 0, 0], C64::new(amp, 0.0));
        }
        t
    };
    let spin_of = |s: Sublattice| if pattern.initial_sz(s) > 0.0 { 0 } else { 1 };
    Ok(UnitCell {
        a: site(spin_of(Sublattice::A)),
        b: site(spin_of(Sublattice::B)),
        weights: [vec![1.0], vec![1.0], vec![1.0], vec![1.0]],
        levels,
        max_bond,
    })
}

const MAGIC: &[u8; 8] = b"DTCCKPT\0";
const VERSION: u32 = 1;

/// Snapshot of a run: the cell, the elapsed Floquet time, and any extra named
/// tensors (for instance a converged environment used as a warm start).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub cell: UnitCell,
    pub cycle: u64,
    pub time: f64,
    pub extra: Vec<(String, DenseTensor)>,
}

/// Binary layout, all integers and floats little-endian:
///
/// ```text
/// magic    8 bytes  "DTCCKPT\0"
/// version  u32      1
/// d_a      u32
/// D_max    u32
/// cycle    u64
/// time     f64
/// weights  4 × (u32 length, length × f64)      L, U, R, Do
/// count    u32      number of tensors; the first two are A and B
/// tensor   u16 name length, name bytes, u32 rank, rank × u64 extents,
///          entries × (f64 re, f64 im) in row-major order
/// ```
impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> Result<(), StateError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.cell.levels as u32).to_le_bytes())?;
        w.write_all(&(self.cell.max_bond as u32).to_le_bytes())?;
        w.write_all(&self.cycle.to_le_bytes())?;
        w.write_all(&self.time.to_le_bytes())?;
        for wv in &self.cell.weights {
            w.write_all(&(wv.len() as u32).to_le_bytes())?;
            for x in wv {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        let tensors: Vec<(&str, &DenseTensor)> = [("A", &self.cell.a), ("B", &self.cell.b)]
            .into_iter()
            .chain(self.extra.iter().map(|(n, t)| (n.as_str(), t)))
            .collect();
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, t) in tensors {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for z in t.data() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, StateError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(StateError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(StateError::Format(format!("unsupported version {version}")));
        }
        let levels = read_u32(&mut r)? as usize;
        let max_bond = read_u32(&mut r)? as usize;
        let cycle = read_u64(&mut r)?;
        let time = read_f64(&mut r)?;
        let mut weights: [Vec<f64>; 4] = Default::default();
        for wv in weights.iter_mut() {
            let n = read_u32(&mut r)? as usize;
            *wv = (0..n).map(|_| read_f64(&mut r)).collect::<Result<_, _>>()?;
        }
        let count = read_u32(&mut r)? as usize;
        if count < 2 {
            return Err(StateError::Format("missing site tensors".into()));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| StateError::Format("tensor name is not utf-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            if rank > 16 {
                return Err(StateError::Format(format!("implausible rank {rank}")));
            }
            let shape: Vec<usize> = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<_, _>>()?;
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let re = read_f64(&mut r)?;
                let im = read_f64(&mut r)?;
                data.push(C64::new(re, im));
            }
            tensors.push((name, DenseTensor::new(shape, data)?));
        }
        let mut it = tensors.into_iter();
        let (na, a) = it.next().expect("count checked");
        let (nb, b) = it.next().expect("count checked");
        if na != "A" || nb != "B" {
            return Err(StateError::Format(format!("expected tensors A and B first, found {na} and {nb}")));
        }
        let cell = UnitCell { a, b, weights, levels, max_bond };
        cell.check()?;
        Ok(Self { cell, cycle, time, extra: it.collect() })
    }

    /// Writes via a temporary file and a rename so a crash never leaves a
    /// truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<(), StateError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StateError> {
        Self::read_from(io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
