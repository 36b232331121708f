mod common;
use unmix_core::bregman::{run, BregmanConfig};
use unmix_core::kernel::{gram, KernelSpec};
use unmix_core::pixelwise::PixelModel;
use unmix_core::synth::*;

#[test]
#[ignore]
fn stats() {
    for seed in 0..5u64 {
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
        let mut config = BregmanConfig::new(PixelModel::khype(0.01).unwrap());
        config.eta = 0.1;
        let out = run(&cube, &m, Some(&k), &config).unwrap();
        let h = &out.history;
        let tail = &h[h.len().saturating_sub(5)..];
        let mono_a = tail.windows(2).all(|w| w[1].rho_a <= w[0].rho_a);
        let mono_u = tail.windows(2).all(|w| w[1].rho_u <= w[0].rho_u);
        let obj: Vec<f64> = h.iter().map(|s| s.objective).collect();
        let after2 = &obj[2.min(obj.len())..];
        let noninc = after2.windows(2).filter(|w| w[1] <= w[0] + 1e-9).count();
        let total = after2.len().saturating_sub(1).max(1);
        println!("seed {seed}: iters {} mono_a {mono_a} mono_u {mono_u} obj-noninc {noninc}/{total}", h.len());
        println!("  rho_a: {:?}", h.iter().map(|s| format!("{:.2e}", s.rho_a)).collect::<Vec<_>>());
        println!("  obj  : {:?}", h.iter().map(|s| format!("{:.1}", s.objective)).collect::<Vec<_>>());
    }
}
