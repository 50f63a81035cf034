//! Logarithmic interaction `I(nu, mu) = ∬ -log|x - y| dnu(x) dmu(y)` for
//! measures carried by intervals.

pub mod density;
pub mod interval;
pub mod measure;
pub mod pair;
pub mod quadrature;

pub use density::{DensitySpec, PiecewiseLinear};
pub use interval::{Interval, Materialized, Relation};
pub use measure::{measure_energy, mutual_energy, Atom, EnergyBreakdown, PiecewiseMeasure};
pub use pair::{
    farfield_interaction, farfield_interaction_with_sup, gap_ratio, pair_interaction_closed_form, self_energy_uniform,
    FarField,
};
pub use quadrature::{interaction_quadrature, interaction_quadrature_with_budget};

/// `I(dx|[0,1])`, the energy of Lebesgue measure on the unit interval.
///
/// Checked against an independent graded Gauss–Legendre evaluation in the
/// `selftest` module and in the kernel tests.
pub const C0: f64 = 1.5;
