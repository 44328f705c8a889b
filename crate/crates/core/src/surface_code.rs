//! Odd-distance square rotated surface code and binary Pauli-frame arithmetic.
//!
//! Layout conventions, fixed for the whole crate:
//!
//! * qubits sit on the vertices of a `d x d` grid, indexed row-major:
//!   qubit `(r, c)` has index `r * d + c`;
//! * a face is named by its top-left vertex `(r, c)` with `r, c` in `-1..=d-1`
//!   and touches the vertices `(r, c), (r, c+1), (r+1, c), (r+1, c+1)` that
//!   lie inside the grid;
//! * face `(r, c)` is dark (X-check) when `r + c` is even, light (Z-check)
//!   otherwise;
//! * weight-2 X-checks live on the left and right boundaries, weight-2
//!   Z-checks on the top and bottom boundaries;
//! * checks are ordered row-major by face coordinate;
//! * the logical Z is the vertical string on column 0, the logical X the
//!   horizontal string on row 0.
//!
//! With this orientation a single Z error on the top or bottom row flips
//! exactly one X-check, so Z chains terminate on the top and bottom
//! boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A binary vector stored one bit per byte.
pub type Bits = Vec<u8>;

/// Kind of stabilizer check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckKind {
    X,
    Z,
}

/// A face of the lattice carrying a stabilizer check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub kind: CheckKind,
    /// Top-left vertex of the face; may be `-1` on boundaries.
    pub row: i32,
    pub col: i32,
    /// Qubits in the support, ascending.
    pub qubits: Vec<usize>,
}

impl Face {
    pub fn weight(&self) -> usize {
        self.qubits.len()
    }
}

/// X-syndrome: one bit per X-check, `1` marks a flipped check.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Syndrome(pub Bits);

impl Syndrome {
    pub fn zeros(len: usize) -> Self {
        Syndrome(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_trivial(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    pub fn weight(&self) -> usize {
        self.0.iter().map(|&b| b as usize).sum()
    }

    pub fn xor(&self, other: &Syndrome) -> Syndrome {
        Syndrome(xor_bits(&self.0, &other.0))
    }

    /// Bit string such as `"0110"`, check 0 first.
    pub fn to_bitstring(&self) -> String {
        self.0
            .iter()
            .map(|&b| if b == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn from_bitstring(s: &str) -> Option<Syndrome> {
        s.chars()
            .map(|ch| match ch {
                '0' => Some(0u8),
                '1' => Some(1u8),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Syndrome)
    }

    /// Syndrome whose bits are the binary digits of `index` (bit `i` of the
    /// integer is check `i`).
    pub fn from_index(index: usize, len: usize) -> Syndrome {
        Syndrome((0..len).map(|i| ((index >> i) & 1) as u8).collect())
    }
}

/// Support of a Pauli-Z operator.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PauliZMask(pub Bits);

impl PauliZMask {
    pub fn zeros(n: usize) -> Self {
        PauliZMask(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weight(&self) -> usize {
        self.0.iter().map(|&b| b as usize).sum()
    }

    pub fn xor(&self, other: &PauliZMask) -> PauliZMask {
        PauliZMask(xor_bits(&self.0, &other.0))
    }

    pub fn from_index(index: usize, n: usize) -> PauliZMask {
        PauliZMask((0..n).map(|i| ((index >> i) & 1) as u8).collect())
    }
}

pub(crate) fn xor_bits(a: &[u8], b: &[u8]) -> Bits {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

pub(crate) fn dot_mod2(a: &[u8], b: &[u8]) -> u8 {
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc ^ (x & y))
}

/// The `d x d` rotated surface code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCode {
    pub d: usize,
    pub n: usize,
    pub h_x: Vec<Bits>,
    pub h_z: Vec<Bits>,
    pub logical_x: Bits,
    pub logical_z: Bits,
    pub x_faces: Vec<Face>,
    pub z_faces: Vec<Face>,
}

impl SurfaceCode {
    /// Builds the distance-`d` code. `d` must be odd and at least 3.
    pub fn build(d: usize) -> Result<SurfaceCode> {
        if d < 3 || d % 2 == 0 {
            return Err(Error::InvalidDistance(d));
        }
        let n = d * d;
        let di = d as i32;
        let mut x_faces = Vec::new();
        let mut z_faces = Vec::new();
        for r in -1..di {
            for c in -1..di {
                let mut qubits = Vec::new();
                for (vr, vc) in [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)] {
                    if (0..di).contains(&vr) && (0..di).contains(&vc) {
                        qubits.push((vr * di + vc) as usize);
                    }
                }
                if qubits.len() < 2 {
                    continue;
                }
                let kind = if (r + c).rem_euclid(2) == 0 {
                    CheckKind::X
                } else {
                    CheckKind::Z
                };
                let on_lr = c == -1 || c == di - 1;
                let on_tb = r == -1 || r == di - 1;
                let keep = match qubits.len() {
                    4 => true,
                    _ => (on_lr && kind == CheckKind::X) || (on_tb && kind == CheckKind::Z),
                };
                if !keep {
                    continue;
                }
                qubits.sort_unstable();
                let face = Face {
                    kind,
                    row: r,
                    col: c,
                    qubits,
                };
                match kind {
                    CheckKind::X => x_faces.push(face),
                    CheckKind::Z => z_faces.push(face),
                }
            }
        }
        let to_rows = |faces: &[Face]| -> Vec<Bits> {
            faces
                .iter()
                .map(|f| {
                    let mut row = vec![0u8; n];
                    for &q in &f.qubits {
                        row[q] = 1;
                    }
                    row
                })
                .collect()
        };
        let h_x = to_rows(&x_faces);
        let h_z = to_rows(&z_faces);
        let mut logical_z = vec![0u8; n];
        let mut logical_x = vec![0u8; n];
        for i in 0..d {
            logical_z[i * d] = 1;
            logical_x[i] = 1;
        }
        Ok(SurfaceCode {
            d,
            n,
            h_x,
            h_z,
            logical_x,
            logical_z,
            x_faces,
            z_faces,
        })
    }

    pub fn num_x_checks(&self) -> usize {
        self.h_x.len()
    }

    pub fn num_z_checks(&self) -> usize {
        self.h_z.len()
    }

    pub fn qubit_index(&self, row: usize, col: usize) -> usize {
        row * self.d + col
    }

    pub fn qubit_coords(&self, q: usize) -> (usize, usize) {
        (q / self.d, q % self.d)
    }

    /// `h_x . e (mod 2)`.
    pub fn syndrome_of(&self, e: &PauliZMask) -> Result<Syndrome> {
        self.check_len(e.len())?;
        Ok(Syndrome(
            self.h_x.iter().map(|row| dot_mod2(row, &e.0)).collect(),
        ))
    }

    /// `l_X . mask (mod 2)`: whether the Z-mask acts as a logical Z.
    pub fn logical_parity(&self, mask: &PauliZMask) -> Result<u8> {
        self.check_len(mask.len())?;
        Ok(dot_mod2(&self.logical_x, &mask.0))
    }

    /// X-checks containing qubit `q`, in check order.
    pub fn x_checks_of_qubit(&self, q: usize) -> Vec<usize> {
        (0..self.h_x.len())
            .filter(|&i| self.h_x[i][q] == 1)
            .collect()
    }

    pub fn check_syndrome_len(&self, s: &Syndrome) -> Result<()> {
        if s.len() != self.num_x_checks() {
            return Err(Error::LengthMismatch {
                expected: self.num_x_checks(),
                actual: s.len(),
            });
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: len,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<SurfaceCode> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Rank of a binary matrix over GF(2).
pub fn rank_gf2(rows: &[Bits]) -> usize {
    let mut m: Vec<Bits> = rows.to_vec();
    let ncols = m.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for col in 0..ncols {
        let Some(pivot) = (rank..m.len()).find(|&i| m[i][col] == 1) else {
            continue;
        };
        m.swap(rank, pivot);
        for i in 0..m.len() {
            if i != rank && m[i][col] == 1 {
                let p = m[rank].clone();
                for (a, b) in m[i].iter_mut().zip(p) {
                    *a ^= b;
                }
            }
        }
        rank += 1;
    }
    rank
}
