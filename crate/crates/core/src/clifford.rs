//! Exact two-qubit Clifford group engine.
//!
//! Elements are represented by their conjugation tableaux: the signed Pauli
//! images of the four generators X₀, X₁, Z₀, Z₁. The full group (11 520
//! elements) is enumerated once by breadth-first closure over
//! {H₀, H₁, S₀, S₁, CNOT}; sampling is index-based and exactly uniform, and
//! inverses come from a lookup table built during enumeration.

use std::collections::{HashMap, VecDeque};

use nalgebra::Matrix4;
use num_complex::Complex64;
use rand::Rng;

use crate::synthesis::{kron, Pauli, Wrapper};

type C64 = Complex64;

/// Order of the two-qubit Clifford group modulo global phase.
pub const TWO_QUBIT_CLIFFORD_ORDER: usize = 11_520;

/// A Hermitian two-qubit Pauli with sign: `(-1)^neg · i^(x·z) · X^x Z^z`
/// per qubit, qubit 0 = control, qubit 1 = target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignedPauli {
    pub x: [bool; 2],
    pub z: [bool; 2],
    pub neg: bool,
}

impl SignedPauli {
    pub const fn identity() -> Self {
        SignedPauli {
            x: [false; 2],
            z: [false; 2],
            neg: false,
        }
    }

    fn basis_x(q: usize) -> Self {
        let mut p = Self::identity();
        p.x[q] = true;
        p
    }

    fn basis_z(q: usize) -> Self {
        let mut p = Self::identity();
        p.z[q] = true;
        p
    }

    fn key(&self) -> u32 {
        (self.x[0] as u32)
            | (self.z[0] as u32) << 1
            | (self.x[1] as u32) << 2
            | (self.z[1] as u32) << 3
            | (self.neg as u32) << 4
    }

    /// Dense 4×4 matrix of this signed Pauli, for oracle tests.
    pub fn matrix(&self) -> Matrix4<C64> {
        let single = |x: bool, z: bool| match (x, z) {
            (false, false) => Matrix4::<C64>::identity()
                .fixed_view::<2, 2>(0, 0)
                .into_owned(),
            (true, false) => Pauli::X.matrix(),
            (false, true) => Pauli::Z.matrix(),
            (true, true) => Pauli::Y.matrix(),
        };
        let m = kron(&single(self.x[0], self.z[0]), &single(self.x[1], self.z[1]));
        if self.neg {
            m * C64::new(-1.0, 0.0)
        } else {
            m
        }
    }
}

/// Internal product form `i^phase · X^x Z^z` with phase tracked mod 4;
/// intermediates of Pauli products are not Hermitian in general.
#[derive(Clone, Copy)]
struct PhasedPauli {
    x: [bool; 2],
    z: [bool; 2],
    phase: u8,
}

impl PhasedPauli {
    fn from_signed(p: &SignedPauli) -> Self {
        let canonical = (p.x[0] && p.z[0]) as u8 + (p.x[1] && p.z[1]) as u8;
        PhasedPauli {
            x: p.x,
            z: p.z,
            phase: (2 * p.neg as u8 + canonical) % 4,
        }
    }

    fn into_signed(self) -> SignedPauli {
        let canonical = (self.x[0] && self.z[0]) as u8 + (self.x[1] && self.z[1]) as u8;
        let diff = (self.phase + 4 - canonical % 4) % 4;
        debug_assert!(diff.is_multiple_of(2), "non-Hermitian Pauli image");
        SignedPauli {
            x: self.x,
            z: self.z,
            neg: diff == 2,
        }
    }

    /// Product `self · other` in the X-then-Z canonical form: commuting
    /// each X factor of `other` past the Z factors of `self` contributes
    /// a sign per qubit.
    fn mul(self, other: PhasedPauli) -> PhasedPauli {
        let mut phase = (self.phase + other.phase) % 4;
        for q in 0..2 {
            if self.z[q] && other.x[q] {
                phase = (phase + 2) % 4;
            }
        }
        PhasedPauli {
            x: [self.x[0] ^ other.x[0], self.x[1] ^ other.x[1]],
            z: [self.z[0] ^ other.z[0], self.z[1] ^ other.z[1]],
            phase,
        }
    }
}

/// Conjugation tableau of a two-qubit Clifford: signed images of the
/// generators in row order X₀, X₁, Z₀, Z₁.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CliffordTableau {
    pub rows: [SignedPauli; 4],
}

impl CliffordTableau {
    pub fn identity() -> Self {
        CliffordTableau {
            rows: [
                SignedPauli::basis_x(0),
                SignedPauli::basis_x(1),
                SignedPauli::basis_z(0),
                SignedPauli::basis_z(1),
            ],
        }
    }

    fn x_image(&self, q: usize) -> &SignedPauli {
        &self.rows[q]
    }

    fn z_image(&self, q: usize) -> &SignedPauli {
        &self.rows[2 + q]
    }

    /// Image of an arbitrary signed Pauli under conjugation by this
    /// element: expand `p` into generator factors and multiply their
    /// images in the same order.
    pub fn conjugate(&self, p: &SignedPauli) -> SignedPauli {
        let canonical = (p.x[0] && p.z[0]) as u8 + (p.x[1] && p.z[1]) as u8;
        let mut acc = PhasedPauli {
            x: [false; 2],
            z: [false; 2],
            phase: (2 * p.neg as u8 + canonical) % 4,
        };
        for q in 0..2 {
            if p.x[q] {
                acc = acc.mul(PhasedPauli::from_signed(self.x_image(q)));
            }
            if p.z[q] {
                acc = acc.mul(PhasedPauli::from_signed(self.z_image(q)));
            }
        }
        acc.into_signed()
    }

    /// Tableau of "apply `self`, then `other`".
    pub fn then(&self, other: &CliffordTableau) -> CliffordTableau {
        CliffordTableau {
            rows: [
                other.conjugate(&self.rows[0]),
                other.conjugate(&self.rows[1]),
                other.conjugate(&self.rows[2]),
                other.conjugate(&self.rows[3]),
            ],
        }
    }

    fn key(&self) -> u32 {
        self.rows[0].key()
            | self.rows[1].key() << 5
            | self.rows[2].key() << 10
            | self.rows[3].key() << 15
    }
}

/// Group generators in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Generator {
    H0,
    H1,
    S0,
    S1,
    Cnot,
}

const GENERATORS: [Generator; 5] = [
    Generator::H0,
    Generator::H1,
    Generator::S0,
    Generator::S1,
    Generator::Cnot,
];

impl Generator {
    fn tableau(&self) -> CliffordTableau {
        let mut t = CliffordTableau::identity();
        match self {
            Generator::H0 => {
                t.rows[0] = SignedPauli::basis_z(0);
                t.rows[2] = SignedPauli::basis_x(0);
            }
            Generator::H1 => {
                t.rows[1] = SignedPauli::basis_z(1);
                t.rows[3] = SignedPauli::basis_x(1);
            }
            Generator::S0 => {
                t.rows[0] = SignedPauli {
                    x: [true, false],
                    z: [true, false],
                    neg: false,
                };
            }
            Generator::S1 => {
                t.rows[1] = SignedPauli {
                    x: [false, true],
                    z: [false, true],
                    neg: false,
                };
            }
            Generator::Cnot => {
                t.rows[0] = SignedPauli {
                    x: [true, true],
                    z: [false, false],
                    neg: false,
                };
                t.rows[3] = SignedPauli {
                    x: [false, false],
                    z: [true, true],
                    neg: false,
                };
            }
        }
        t
    }

    fn inverse_tableau(&self) -> CliffordTableau {
        match self {
            // H and CNOT are involutions; S⁻¹ sends X to -Y.
            Generator::H0 | Generator::H1 | Generator::Cnot => self.tableau(),
            Generator::S0 => {
                let mut t = CliffordTableau::identity();
                t.rows[0] = SignedPauli {
                    x: [true, false],
                    z: [true, false],
                    neg: true,
                };
                t
            }
            Generator::S1 => {
                let mut t = CliffordTableau::identity();
                t.rows[1] = SignedPauli {
                    x: [false, true],
                    z: [false, true],
                    neg: true,
                };
                t
            }
        }
    }

    fn unitary(&self) -> Matrix4<C64> {
        let id2 = nalgebra::Matrix2::identity();
        match self {
            Generator::H0 => kron(&Wrapper::H.matrix(), &id2),
            Generator::H1 => kron(&id2, &Wrapper::H.matrix()),
            Generator::S0 => kron(&Wrapper::S.matrix(), &id2),
            Generator::S1 => kron(&id2, &Wrapper::S.matrix()),
            Generator::Cnot => {
                let o = C64::new(0.0, 0.0);
                let l = C64::new(1.0, 0.0);
                Matrix4::new(
                    l, o, o, o, //
                    o, l, o, o, //
                    o, o, o, l, //
                    o, o, l, o,
                )
            }
        }
    }
}

/// The fully enumerated two-qubit Clifford group. Immutable shared state
/// after construction; index-based operations are exact.
pub struct CliffordGroup {
    elements: Vec<CliffordTableau>,
    index: HashMap<u32, u32>,
    inverse: Vec<u32>,
    unitaries: Vec<Matrix4<C64>>,
}

impl CliffordGroup {
    /// Breadth-first closure over the generators, starting from the
    /// identity (element 0). Inverse indices and unitaries are built
    /// alongside by word replay.
    pub fn enumerate() -> Self {
        let id = CliffordTableau::identity();
        let mut elements = vec![id];
        let mut index = HashMap::with_capacity(TWO_QUBIT_CLIFFORD_ORDER * 2);
        index.insert(id.key(), 0u32);
        let mut inverse_tableaus = vec![id];
        let mut unitaries = vec![Matrix4::<C64>::identity()];
        let mut queue = VecDeque::from([0usize]);

        while let Some(current) = queue.pop_front() {
            let tableau = elements[current];
            let inv_tableau = inverse_tableaus[current];
            let unitary = unitaries[current];
            for generator in GENERATORS {
                let next = tableau.then(&generator.tableau());
                if let std::collections::hash_map::Entry::Vacant(slot) = index.entry(next.key()) {
                    slot.insert(elements.len() as u32);
                    elements.push(next);
                    // (t then g)^-1 = apply g^-1 first, then t^-1.
                    inverse_tableaus.push(generator.inverse_tableau().then(&inv_tableau));
                    unitaries.push(generator.unitary() * unitary);
                    queue.push_back(elements.len() - 1);
                }
            }
        }

        let inverse = inverse_tableaus
            .iter()
            .map(|t| *index.get(&t.key()).expect("inverse not in closure"))
            .collect();

        CliffordGroup {
            elements,
            index,
            inverse,
            unitaries,
        }
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    /// Index of the identity element.
    pub fn identity(&self) -> u32 {
        0
    }

    pub fn tableau(&self, element: u32) -> &CliffordTableau {
        &self.elements[element as usize]
    }

    /// Cached 4×4 unitary of the element (defined up to global phase by
    /// its generator word).
    pub fn unitary(&self, element: u32) -> &Matrix4<C64> {
        &self.unitaries[element as usize]
    }

    /// Index of "apply `first`, then `second`".
    pub fn compose(&self, first: u32, second: u32) -> u32 {
        let composed = self.tableau(first).then(self.tableau(second));
        *self
            .index
            .get(&composed.key())
            .expect("group closure violated")
    }

    /// Index of the group inverse.
    pub fn invert(&self, element: u32) -> u32 {
        self.inverse[element as usize]
    }

    /// Uniformly random element index.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        rng.gen_range(0..self.order() as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{equivalent_up_to_global_phase, Unitary4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn group() -> CliffordGroup {
        CliffordGroup::enumerate()
    }

    #[test]
    fn enumeration_finds_the_full_group() {
        assert_eq!(group().order(), TWO_QUBIT_CLIFFORD_ORDER);
    }

    #[test]
    fn identity_is_element_zero_and_fixes_paulis() {
        let g = group();
        let id = g.tableau(g.identity());
        for p in [
            SignedPauli::basis_x(0),
            SignedPauli::basis_x(1),
            SignedPauli::basis_z(0),
            SignedPauli::basis_z(1),
            SignedPauli {
                x: [true, true],
                z: [true, false],
                neg: true,
            },
        ] {
            assert_eq!(id.conjugate(&p), p);
        }
    }

    /// Pins the sign conventions: conjugating each basis Pauli matrix by
    /// each generator unitary must reproduce the tableau image exactly.
    #[test]
    fn generator_tableaus_match_unitary_conjugation() {
        for generator in GENERATORS {
            let t = generator.tableau();
            let u = generator.unitary();
            for (row, p) in [
                SignedPauli::basis_x(0),
                SignedPauli::basis_x(1),
                SignedPauli::basis_z(0),
                SignedPauli::basis_z(1),
            ]
            .iter()
            .enumerate()
            {
                let image = t.rows[row];
                let conjugated = u * p.matrix() * u.adjoint();
                let expected = image.matrix();
                let defect = (conjugated - expected)
                    .iter()
                    .map(|c| c.norm())
                    .fold(0.0, f64::max);
                assert!(
                    defect < 1e-12,
                    "{generator:?} image of row {row} off by {defect}"
                );
            }
        }
    }

    #[test]
    fn inversion_round_trips_exactly() {
        let g = group();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let c = g.sample(&mut rng);
            assert_eq!(g.compose(c, g.invert(c)), g.identity());
            assert_eq!(g.compose(g.invert(c), c), g.identity());
        }
        assert_eq!(g.invert(g.identity()), g.identity());
    }

    #[test]
    fn composition_matches_unitary_oracle() {
        let g = group();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let a = g.sample(&mut rng);
            let b = g.sample(&mut rng);
            let composed = g.compose(a, b);
            // "apply a then b" corresponds to the matrix product U_b U_a.
            let product = Unitary4(g.unitary(b) * g.unitary(a));
            let direct = Unitary4(*g.unitary(composed));
            assert!(
                equivalent_up_to_global_phase(&product, &direct, 1e-10).unwrap(),
                "tableau composition disagrees with unitary product for ({a}, {b})"
            );
        }
    }

    #[test]
    fn sampled_compositions_stay_in_the_group() {
        let g = group();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let a = g.sample(&mut rng);
            let b = g.sample(&mut rng);
            let c = g.compose(a, b);
            assert!((c as usize) < g.order());
        }
    }

    #[test]
    fn sampling_is_uniform_by_chi_squared() {
        let g = group();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = 1_000_000usize;
        let mut counts = vec![0u32; g.order()];
        for _ in 0..draws {
            counts[g.sample(&mut rng) as usize] += 1;
        }
        let expected = draws as f64 / g.order() as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 99.9th percentile of chi2 with 11519 dof (Wilson-Hilferty) is
        // about 11994; exceeding it would reject uniformity at p < 0.001.
        assert!(
            chi2 < 11_994.0,
            "chi2 = {chi2} too large for uniform sampling"
        );
    }
}
