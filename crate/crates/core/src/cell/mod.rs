//! Effective Hamiltonians, effective Lagrangian tables and Moreau–Yosida regularisation.

mod explicit;
mod levelset;
mod minimax;
mod moreau;
mod table;

pub use explicit::{effective_h_1d, flat_piece_radius};
pub use minimax::{effective_h_minimax, extreme_value, Corrector, MinimaxBracket, MinimaxOptions};
pub use moreau::{
    argmin_defect, gradient_bound_excess, growth_constant, moreau_inf, moreau_sup, subgradient_defect, Moreau,
};
pub use table::{EffectiveTable, Slope, TableOptions, TableReport};

/// `𝖫̄(v)` from a table (bracket midpoints).
pub fn effective_lagrangian(table: &EffectiveTable, v: &[f64]) -> crate::Result<f64> {
    table.lagrangian(v)
}
