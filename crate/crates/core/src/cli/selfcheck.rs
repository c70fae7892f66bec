//! Fast invariant suite behind `secfed selfcheck`.
//!
//! Five cheap end-to-end checks that catch the failure modes that matter:
//! broken ring arithmetic, a non-optimal Hankel projection, a wrong noise
//! scale, secure/plaintext divergence, and silently-wrong sparse aggregation.
//! Target runtime is a few seconds at test parameters.

use num_bigint::{BigUint, RandBigInt};
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::ahe::keygen;
use crate::bhm::{self, BhmParams, CsrUpdate};
use crate::dp::derive_sigma;
use crate::fedsim::{run_reference, run_simulation, SimConfig};
use crate::oracle;

/// Fault-injection hooks for exercising the suite's own failure reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfcheckFault {
    /// Perturb one projected sequence entry before the optimality comparison.
    FlipBhmProjection,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail,
    }
}

fn check_ahe_roundtrip() -> CheckOutcome {
    let name = "ahe-roundtrip";
    let mut rng = ChaCha12Rng::seed_from_u64(0x5E1F);
    let kp = match keygen(256, &mut rng) {
        Ok(kp) => kp,
        Err(e) => return outcome(name, false, format!("keygen failed: {e}")),
    };
    let pk = kp.public_key();
    let sk = kp.secret_key();
    let m = BigUint::from(42u32);
    let ct = pk.encrypt(&m, &mut rng).unwrap();
    if sk.decrypt(&ct).unwrap() != m {
        return outcome(name, false, "decrypt(encrypt(42)) != 42".into());
    }
    let c3 = pk.encrypt(&BigUint::from(3u32), &mut rng).unwrap();
    let c4 = pk.encrypt(&BigUint::from(4u32), &mut rng).unwrap();
    if sk.decrypt(&pk.hom_add(&c3, &c4).unwrap()).unwrap() != BigUint::from(7u32) {
        return outcome(name, false, "hom_add(3, 4) != 7".into());
    }
    let c5 = pk.encrypt(&BigUint::from(5u32), &mut rng).unwrap();
    if sk
        .decrypt(&pk.hom_scale(&c5, &BigUint::from(3u32)).unwrap())
        .unwrap()
        != BigUint::from(15u32)
    {
        return outcome(name, false, "hom_scale(5, 3) != 15".into());
    }
    let n = pk.modulus().clone();
    let values: Vec<BigUint> = (0..10).map(|_| rng.gen_biguint_below(&n)).collect();
    let expected = values.iter().fold(BigUint::zero(), |a, v| a + v) % &n;
    let folded = values
        .iter()
        .map(|v| pk.encrypt(v, &mut rng).unwrap())
        .reduce(|a, b| pk.hom_add(&a, &b).unwrap())
        .unwrap();
    if sk.decrypt(&folded).unwrap() != expected {
        return outcome(name, false, "homomorphic fold != big-integer sum".into());
    }
    outcome(name, true, "roundtrip, addition, scaling, 10-term fold".into())
}

fn check_bhm_optimality(fault: Option<SelfcheckFault>) -> CheckOutcome {
    let name = "bhm-projection-optimality";
    let mut rng = ChaCha12Rng::seed_from_u64(0xB4A);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let l = rng.gen_range(2..=8usize);
        let block =
            ndarray::Array2::from_shape_fn((l, l), |_| rng.gen_range(-2.0..2.0));
        let mut projected = bhm::project_block(&block.view());
        if fault == Some(SelfcheckFault::FlipBhmProjection) {
            projected[0] += 0.1;
        }
        let ours = oracle::hankel_fit_error(&block.view(), &projected);
        let (_, best) = oracle::hankel_least_squares(&block.view());
        worst = worst.max(ours - best);
        if ours > best + 1e-10 {
            return outcome(
                name,
                false,
                format!(
                    "trial {trial} (l={l}): projection error {ours:.12} exceeds \
                     least-squares oracle {best:.12}"
                ),
            );
        }
    }
    outcome(
        name,
        true,
        format!("20 random blocks, worst excess over oracle {worst:.2e}"),
    )
}

fn check_sigma_formula() -> CheckOutcome {
    let name = "sigma-formula";
    let delta_forced = 1.25 / std::f64::consts::E.powi(2);
    let sigma = derive_sigma(1.0, delta_forced).unwrap();
    if (sigma - 2.0).abs() > 1e-12 {
        return outcome(name, false, format!("σ(1, 1.25/e²) = {sigma}, want 2"));
    }
    // Frozen high-precision spot values (mpmath at 30 digits).
    let spots = [(1.0, 1e-5, 4.844805262605389), (2.0, 1e-7, 2.8584295690354633)];
    for (eps, delta, want) in spots {
        let got = derive_sigma(eps, delta).unwrap();
        if (got - want).abs() > 1e-12 {
            return outcome(name, false, format!("σ({eps}, {delta}) = {got}, want {want}"));
        }
    }
    outcome(name, true, "forced value and frozen spot checks".into())
}

fn check_oracle_equivalence() -> CheckOutcome {
    let name = "oracle-equivalence";
    let mut cfg = SimConfig::small(0x0E);
    cfg.rounds = 3;
    cfg.num_clients = 4;
    cfg.dp.sigma = 0.0;
    let secure = match run_simulation(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(name, false, format!("secure run failed: {e}")),
    };
    let reference = match run_reference(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(name, false, format!("reference run failed: {e}")),
    };
    let tol = cfg.rounds as f64 * cfg.num_clients as f64 * cfg.fixed.resolution();
    for (s, r) in secure.final_weights.iter().zip(&reference.final_weights) {
        if (s - r).abs() > tol {
            return outcome(
                name,
                false,
                format!("secure weight {s} vs reference {r}, tolerance {tol:.2e}"),
            );
        }
    }
    outcome(
        name,
        true,
        format!("3-round σ=0 micro-run matches within {tol:.2e} per weight"),
    )
}

fn check_csr_pitfall() -> CheckOutcome {
    let name = "csr-pitfall";
    let ma = ndarray::array![[1.0, 0.0], [0.0, 2.0]];
    let mb = ndarray::array![[0.0, 3.0], [4.0, 0.0]];
    let a = CsrUpdate::from_dense(&ma.view());
    let b = CsrUpdate::from_dense(&mb.view());
    let report = match bhm::demonstrate_csr_pitfall(&a, &b) {
        Ok(r) => r,
        Err(e) => return outcome(name, false, format!("demo failed: {e}")),
    };
    if report.blind_matches_true {
        return outcome(
            name,
            false,
            "blind CSR value addition unexpectedly produced the true sum".into(),
        );
    }
    let params = BhmParams::new(2, 1.0).unwrap();
    let ca = bhm::compress(&ma.view(), &params).unwrap();
    let cb = bhm::compress(&mb.view(), &params).unwrap();
    let summed = bhm::decompress(&bhm::add_bhm(&ca, &cb).unwrap()).unwrap();
    let expected = bhm::decompress(&ca).unwrap() + bhm::decompress(&cb).unwrap();
    if summed != expected {
        return outcome(name, false, "BHM addition diverged from dense sum".into());
    }
    outcome(
        name,
        true,
        format!(
            "blind CSR sum off by {:.1}; BHM aggregation exact",
            report.max_abs_deviation
        ),
    )
}

/// Run the whole suite. `fault` lets tests verify that a failure is caught
/// and named.
pub fn run_selfcheck(fault: Option<SelfcheckFault>) -> Vec<CheckOutcome> {
    vec![
        check_ahe_roundtrip(),
        check_bhm_optimality(fault),
        check_sigma_formula(),
        check_oracle_equivalence(),
        check_csr_pitfall(),
    ]
}
