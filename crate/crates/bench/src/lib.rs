//! Shared fixtures for the benchmarks.

use mfg_core::{GridSpec, InitialDensity, KernelCoupling, ModelSpec, TerminalBase, TerminalCost};

/// Coupled reference model on `[0, 4)` at the smallest stable `nt` for `nx`.
pub fn coupled_model_a(nx: usize, horizon: f64) -> (ModelSpec, GridSpec) {
    let mut model = ModelSpec::model_a(horizon);
    model.coupling_f = KernelCoupling { width: 0.25, gain: 0.5 };
    model.terminal_g = TerminalCost {
        base: TerminalBase::Cosine { amplitude: 0.5, wavenumber: 1 },
        coupling: KernelCoupling { width: 0.25, gain: 0.1 },
    };
    model.m0 = InitialDensity::Gaussian { center: Some([2.0, 0.0]), std: 0.25 };
    let cfl = model.cfl_data();
    let nt = GridSpec::min_nt_for(1, 4.0, nx, horizon, &cfl);
    let grid = GridSpec::new(1, 4.0, nx, nt, horizon, cfl).expect("stable grid");
    (model, grid)
}
