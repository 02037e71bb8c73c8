//! Material and geometric description of the continuum rod.

use nalgebra::{Matrix6, Matrix6xX, Vector3, Vector6, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{skew, Twist};

/// Circular-section rod properties (SI units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodProperties {
    pub length: f64,
    pub diameter: f64,
    pub density: f64,
    pub young_modulus: f64,
    pub poisson: f64,
    /// Kelvin-Voigt material damping, Pa*s.
    pub damping: f64,
    pub tendon_offset: f64,
    pub tendon_count: usize,
}

impl RodProperties {
    /// Nitinol backbone used in both simulation scenarios.
    pub fn nitinol() -> Self {
        Self {
            length: 1.0,
            diameter: 2e-3,
            density: 6.45e3,
            young_modulus: 5e10,
            poisson: 0.33,
            damping: 1e2,
            tendon_offset: 0.02,
            tendon_count: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("diameter", self.diameter),
            ("density", self.density),
            ("young_modulus", self.young_modulus),
            ("damping", self.damping),
            ("tendon_offset", self.tendon_offset),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation {
                    field: format!("rod.{name}"),
                    message: format!("must be finite and > 0 (got {v})"),
                });
            }
        }
        if !(self.poisson > 0.0 && self.poisson < 0.5) {
            return Err(Error::Validation {
                field: "rod.poisson".into(),
                message: format!("must lie in (0, 0.5) (got {})", self.poisson),
            });
        }
        if self.tendon_count == 0 {
            return Err(Error::Validation {
                field: "rod.tendon_count".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.diameter.powi(2) / 4.0
    }

    /// Second moment of area about a bending axis.
    pub fn bending_moment_of_area(&self) -> f64 {
        std::f64::consts::PI * self.diameter.powi(4) / 64.0
    }

    pub fn polar_moment_of_area(&self) -> f64 {
        std::f64::consts::PI * self.diameter.powi(4) / 32.0
    }

    pub fn shear_modulus(&self) -> f64 {
        self.young_modulus / (2.0 * (1.0 + self.poisson))
    }

    pub fn mass_per_length(&self) -> f64 {
        self.density * self.area()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass_per_length() * self.length
    }
}

/// Per-unit-length section matrices, angular-first.
#[derive(Clone, Debug, PartialEq)]
pub struct SectionDensities {
    pub inertia: Matrix6<f64>,
    pub stiffness: Matrix6<f64>,
    pub damping: Matrix6<f64>,
}

impl SectionDensities {
    pub fn from_properties(props: &RodProperties) -> Self {
        Self {
            inertia: section_inertia(props),
            stiffness: section_stiffness(props),
            damping: section_damping(props),
        }
    }
}

fn geometric_diagonal(props: &RodProperties) -> Vector6<f64> {
    let (i, j, a) = (
        props.bending_moment_of_area(),
        props.polar_moment_of_area(),
        props.area(),
    );
    Vector6::new(i, i, j, a, a, a)
}

pub fn section_inertia(props: &RodProperties) -> Matrix6<f64> {
    Matrix6::from_diagonal(&(geometric_diagonal(props) * props.density))
}

pub fn section_stiffness(props: &RodProperties) -> Matrix6<f64> {
    let (e, g) = (props.young_modulus, props.shear_modulus());
    let (i, j, a) = (
        props.bending_moment_of_area(),
        props.polar_moment_of_area(),
        props.area(),
    );
    Matrix6::from_diagonal(&Vector6::new(e * i, e * i, g * j, g * a, g * a, e * a))
}

pub fn section_damping(props: &RodProperties) -> Matrix6<f64> {
    Matrix6::from_diagonal(&(geometric_diagonal(props) * props.damping))
}

/// Shape functions for the strain field `xi(s) = xi* + B_q(s) q_s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// No rod coordinates; the rod is a rigid straight appendage.
    Rigid,
    /// Two constant bending curvatures `(k1, k2)`.
    ConstantBending,
    /// Bending curvatures affine in `s / L`: `k1 = q1 + q2 s/L`, `k2 = q3 + q4 s/L`.
    LinearBending,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrainBasis {
    pub kind: BasisKind,
    pub length: f64,
    pub reference: Twist,
}

impl StrainBasis {
    /// Backbone along local z, unstretched: `xi* = (0, 0, 0, 0, 0, 1)`.
    pub fn new(kind: BasisKind, length: f64) -> Self {
        Self {
            kind,
            length,
            reference: Twist::new(Vector3::zeros(), Vector3::z()),
        }
    }

    pub fn dof(&self) -> usize {
        match self.kind {
            BasisKind::Rigid => 0,
            BasisKind::ConstantBending => 2,
            BasisKind::LinearBending => 4,
        }
    }

    fn check_arc(&self, s: f64) -> Result<()> {
        if !(s >= -1e-12 && s <= self.length * (1.0 + 1e-12) + 1e-12) {
            return Err(Error::ArcLengthOutOfRange {
                s,
                length: self.length,
            });
        }
        Ok(())
    }

    /// `B_q(s)`, a 6 x n_s matrix.
    pub fn matrix(&self, s: f64) -> Result<Matrix6xX<f64>> {
        self.check_arc(s)?;
        let mut b = Matrix6xX::zeros(self.dof());
        match self.kind {
            BasisKind::Rigid => {}
            BasisKind::ConstantBending => {
                b[(0, 0)] = 1.0;
                b[(1, 1)] = 1.0;
            }
            BasisKind::LinearBending => {
                let x = s / self.length;
                b[(0, 0)] = 1.0;
                b[(0, 1)] = x;
                b[(1, 2)] = 1.0;
                b[(1, 3)] = x;
            }
        }
        Ok(b)
    }

    pub fn strain_field(&self, q_s: &DVector<f64>, s: f64) -> Result<Twist> {
        if q_s.len() != self.dof() {
            return Err(Error::Dimension(format!(
                "strain coordinates have length {}, basis expects {}",
                q_s.len(),
                self.dof()
            )));
        }
        let b = self.matrix(s)?;
        Ok(Twist::from_vector(&(self.reference.to_vector() + b * q_s)))
    }
}

/// Distributed wrench per unit tension for straight tendons parallel to the
/// backbone, spaced evenly at radius `tendon_offset`. Tendon `i` sits at angle
/// `2 pi i / n_a` from the local x axis.
pub fn tendon_routing(props: &RodProperties) -> Matrix6xX<f64> {
    let n = props.tendon_count;
    let mut b = Matrix6xX::zeros(n);
    let pull = -Vector3::z();
    for i in 0..n {
        let alpha = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        let r = Vector3::new(alpha.cos(), alpha.sin(), 0.0) * props.tendon_offset;
        let moment = skew(&r) * pull;
        b.fixed_view_mut::<3, 1>(0, i).copy_from(&moment);
        b.fixed_view_mut::<3, 1>(3, i).copy_from(&pull);
    }
    // Exact zeros keep the antagonistic cancellation exact.
    b.iter_mut().for_each(|x| {
        if x.abs() < 1e-15 * props.tendon_offset.max(1.0) {
            *x = 0.0
        }
    });
    b
}
