use ndarray::Array1;
use unmix_core::bregman::{init_state, outer_iteration, adapt_penalty, BregmanConfig};
use unmix_core::kernel::{gram, KernelSpec};
use unmix_core::pixelwise::{solve_pixel_kernel, PixelModel};
use unmix_core::spatial::{CirculantSolver, GridStencil};
use unmix_core::synth::*;

#[test]
#[ignore]
fn true_cost_direction() {
    for seed in 0..3u64 {
        let library = builtin_library();
        let m = pick_endmembers(&library, 5, seed).unwrap().subsample_bands(50).unwrap();
        let spec = AbundanceFieldSpec {
            pattern: FieldPattern::Patches { patch_size: 10, pure_fraction: 0.1 },
            w: 50, h: 50, r: 5, seed,
        };
        let a = gen_abundances(&spec).unwrap();
        let clean = mix(&a, &m, &MixtureSpec::new(MixtureModel::Bilinear, seed), 50, 50).unwrap();
        let cube = add_noise(&clean, 20.0, seed).unwrap();
        let k = gram(KernelSpec::Polynomial, &m).unwrap();
        let model = PixelModel::khype(0.01).unwrap();
        let mut config = BregmanConfig::new(model);
        config.eta = 0.1;
        let stencil = GridStencil::new(50, 50).unwrap();
        let solver = CirculantSolver::new(stencil);
        let mut state = init_state(&cube, &m, Some(&k), &config).unwrap();
        // true cost of an abundance matrix: re-solve psi per pixel at fixed alpha?
        // cheaper: use the Step-1 duals' objective terms which already include
        // the zeta-prox... instead evaluate J_err from stored fit terms is what
        // history.objective does. Here: J_err(A) via fresh zeta=0 solves at fixed A is
        // not available; approximate the Eq-7 cost with history fit terms + eta*|A H|.
        let mut costs = vec![];
        for _ in 0..10 {
            outer_iteration(&mut state, &cube, &m, Some(&k), &config, &solver).unwrap();
            let tv = stencil.regularizer_value(&state.abundances).unwrap();
            let last = state.history.last().unwrap();
            // history objective = sum fit terms + eta*|U|; recover sum fit terms:
            let fit_sum = last.objective - config.eta * state.split.u.iter().map(|v| v.abs()).sum::<f64>();
            costs.push((fit_sum, tv, fit_sum + config.eta * tv, last.objective));
            adapt_penalty(&mut state);
        }
        println!("seed {seed}:");
        for (i, (fit, tv, true_cost, split_obj)) in costs.iter().enumerate() {
            println!("  it {}: J_err {:.1} TV {:.1} J_err+eta*TV {:.1} (split obj {:.1})", i+1, fit, tv, true_cost, split_obj);
        }
    }
    // context: unregularized baseline cost
    let _ = solve_pixel_kernel::<>;
    let _ : Option<Array1<f64>> = None;
}
