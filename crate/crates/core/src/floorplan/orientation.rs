//! The eight placement orientations and their composition.
//!
//! Each orientation is a rotation by `rot * 90` degrees counter-clockwise
//! applied after an optional mirror about the x axis (`y -> -y`).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum Orientation {
    #[default]
    R0,
    R90,
    R180,
    R270,
    MX,
    MY,
    MX90,
    MY90,
}

impl Orientation {
    pub const ALL: [Orientation; 8] = [
        Orientation::R0,
        Orientation::R90,
        Orientation::R180,
        Orientation::R270,
        Orientation::MX,
        Orientation::MY,
        Orientation::MX90,
        Orientation::MY90,
    ];

    /// `(quarter turns, mirrored about x first)`.
    pub fn parts(self) -> (u8, bool) {
        match self {
            Orientation::R0 => (0, false),
            Orientation::R90 => (1, false),
            Orientation::R180 => (2, false),
            Orientation::R270 => (3, false),
            Orientation::MX => (0, true),
            Orientation::MX90 => (1, true),
            Orientation::MY => (2, true),
            Orientation::MY90 => (3, true),
        }
    }

    pub fn from_parts(rot: u8, mirror: bool) -> Orientation {
        match (rot % 4, mirror) {
            (0, false) => Orientation::R0,
            (1, false) => Orientation::R90,
            (2, false) => Orientation::R180,
            (3, false) => Orientation::R270,
            (0, true) => Orientation::MX,
            (1, true) => Orientation::MX90,
            (2, true) => Orientation::MY,
            _ => Orientation::MY90,
        }
    }

    /// `self` applied after `inner`. Uses `MX * Rot(k) = Rot(-k) * MX`.
    pub fn compose(self, inner: Orientation) -> Orientation {
        let (k1, f1) = self.parts();
        let (k2, f2) = inner.parts();
        let k2 = if f1 { (4 - k2) % 4 } else { k2 };
        Orientation::from_parts(k1 + k2, f1 ^ f2)
    }

    pub fn inverse(self) -> Orientation {
        let (k, f) = self.parts();
        if f {
            self
        } else {
            Orientation::from_parts((4 - k) % 4, false)
        }
    }

    /// Integer matrix acting on column vectors `(x, y)`.
    pub fn matrix(self) -> [[i64; 2]; 2] {
        let (k, f) = self.parts();
        let rot = match k {
            0 => [[1, 0], [0, 1]],
            1 => [[0, -1], [1, 0]],
            2 => [[-1, 0], [0, -1]],
            _ => [[0, 1], [-1, 0]],
        };
        if f {
            // rot * diag(1, -1)
            [[rot[0][0], -rot[0][1]], [rot[1][0], -rot[1][1]]]
        } else {
            rot
        }
    }

    pub fn from_matrix(m: [[i64; 2]; 2]) -> Option<Orientation> {
        Orientation::ALL.into_iter().find(|o| o.matrix() == m)
    }

    /// Whether width and height trade places.
    pub fn swaps_axes(self) -> bool {
        self.parts().0 % 2 == 1
    }
}

/// `table[a][b] = a.compose(b)` in `Orientation::ALL` order.
pub fn compose_table() -> [[Orientation; 8]; 8] {
    let mut t = [[Orientation::R0; 8]; 8];
    for (i, a) in Orientation::ALL.iter().enumerate() {
        for (j, b) in Orientation::ALL.iter().enumerate() {
            t[i][j] = a.compose(*b);
        }
    }
    t
}

impl std::fmt::Display for Orientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}
