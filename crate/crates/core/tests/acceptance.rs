//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use jtame::inflation::{
    build_profile_negative, build_profile_trivial, class_shift, estimate_epsilons, omega_f, positive_case_bound, positive_obstruction,
    verify_tameness, BundleCase, EpsilonPair, ModelGrid, NormalModel,
};
use jtame::jet_extension::{check_section, extend_section, jet_residual, random_normal_jet, TubeGrid};
use jtame::linalg::{block, blocks, j0, skew_block, Mat2, Mat4};
use jtame::linear_core::{euclidean_margin, random_skew, skew_from_block, AcsMatrix, TwoForm};
use jtame::linear_isotopy::{composition_defect, lemma_step_bound, n_of_t, psi, IsotopyContext};
use jtame::linear_core::SkewPart;
use jtame::model::{AcsFamily, SkewProfile};
use jtame::pipeline::{choose_params, prepare, CurveField};
use jtame::smooth::{gauss_legendre, integrate};
use jtame::sphere::operator_norm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: String) -> Outcome {
    Outcome { ok, detail }
}

fn criterion(n: usize, title: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let in_time = took < limit;
    let ok = out.ok && in_time;
    println!(
        "criterion {n} {}: {title}: {} ({:.2} s, limit {} s)",
        if ok { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64(),
        limit.as_secs()
    );
    ok
}

/// Margin law for random block-form structures.
fn margin_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = TwoForm::standard();
    let mut worst = 0.0f64;
    let mut sign_ok = true;
    for _ in 0..1000 {
        let s = random_skew(&mut rng, 2.0);
        let (m, _) = euclidean_margin(w.matrix(), AcsMatrix::block_skew(s.a, s.b).matrix());
        worst = worst.max((m - (1.0 - 0.5 * s.n)).abs());
        sign_ok &= m > 0.0;
    }
    for _ in 0..200 {
        let n = rng.random_range(2.0..4.0);
        let th = rng.random_range(0.0..std::f64::consts::TAU);
        let (m, _) = euclidean_margin(w.matrix(), AcsMatrix::block_skew(n * th.cos(), n * th.sin()).matrix());
        sign_ok &= m <= 0.0;
    }
    let (m2, _) = euclidean_margin(w.matrix(), AcsMatrix::block_skew(2.0, 0.0).matrix());
    sign_ok &= m2 <= 0.0;
    outcome(worst <= 1e-9 && sign_ok, format!("max |margin − (1 − N/2)| = {worst:.2e}, sign law {sign_ok}"))
}

/// Ψ_t from its block formula, independent of the library constructor.
fn psi_oracle(b: &Mat2, n: f64, t: f64) -> Mat4 {
    let a = (1.0 - n * n * t * (1.0 - t)).powf(-0.5);
    block(&Mat2::identity(), &(j0() * b * (a * t)), &Mat2::zeros(), &(Mat2::identity() * a))
}

fn isotopy_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w0 = TwoForm::standard();
    let (mut pull, mut skew, mut oracle) = (0.0f64, 0.0f64, 0.0f64);
    let mut half_exact = true;
    for _ in 0..100 {
        let s = random_skew(&mut rng, 1.999);
        let t = rng.random_range(0.0..=0.5);
        let ctx = IsotopyContext::from_skew(&s).unwrap();
        let st = psi(&ctx, t).unwrap();
        let defect = (st.psi.transpose() * ctx.omega_t(t).matrix() * st.psi - w0.matrix()).amax();
        pull = pull.max(defect);
        let product = st.psi_inverse * ctx.j_b().matrix() * st.psi;
        let measured = skew_from_block(&blocks(&product).1).unwrap().n;
        let expected = (1.0 - 2.0 * t).abs() * st.alpha * s.n;
        skew = skew.max((measured - expected).abs());
        oracle = oracle.max((psi_oracle(&s.matrix(), s.n, t) - st.psi).amax());
        half_exact &= n_of_t(0.5, s.n).unwrap() == 0.0 && psi(&ctx, 0.5).unwrap().pulled_j == AcsMatrix::standard();
    }
    outcome(
        pull <= 1e-12 && skew <= 1e-9 && oracle <= 1e-12 && half_exact,
        format!("pullback {pull:.2e}, skew {skew:.2e}, Ψ oracle {oracle:.2e}, N(1/2) = 0 exactly: {half_exact}"),
    )
}

fn step_lemma() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut violations, mut reverse_violations) = (0usize, 0usize);
    let (mut worst, mut worst_rev) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let n = rng.random_range(0.01..1.99);
        let eps = rng.random_range(0.01..1.0);
        let th = rng.random_range(0.0..std::f64::consts::TAU);
        let ctx = IsotopyContext::from_skew(&SkewPart::new(n * th.cos(), n * th.sin())).unwrap();
        let bound = lemma_step_bound(n, eps).unwrap();
        let t_prime = rng.random_range(0.0..=0.5);
        let step = rng.random::<f64>() * bound.min(0.5);
        let t = if rng.random::<bool>() { t_prime + step } else { t_prime - step }.clamp(0.0, 0.5);
        if (t - t_prime).abs() >= bound {
            continue;
        }
        let d = composition_defect(&ctx, t_prime, t).unwrap();
        let (a, b) = (psi(&ctx, t).unwrap(), psi(&ctx, t_prime).unwrap());
        let d_rev = operator_norm(&(b.psi_inverse * a.psi - Mat4::identity()));
        violations += usize::from(d >= eps);
        reverse_violations += usize::from(d_rev >= eps);
        worst = worst.max(d / eps);
        worst_rev = worst_rev.max(d_rev / eps);
    }
    outcome(
        violations == 0 && reverse_violations == 0,
        format!(
            "violations {violations} (max defect/ε {worst:.4}); reverse order Ψ_{{t'}}⁻¹Ψ_t violations {reverse_violations} (max {worst_rev:.4})"
        ),
    )
}

/// `2π∫(f − 1) r dr` by Gauss–Legendre panels in `ln r`.
fn shift_oracle(f: impl Fn(f64) -> f64, r_lo: f64, r_hi: f64) -> f64 {
    let rule = gauss_legendre(16);
    let (a, b) = (r_lo.ln(), r_hi.ln());
    let panels = 4000;
    let h = (b - a) / panels as f64;
    let body: f64 = (0..panels)
        .map(|k| {
            integrate(
                |s| {
                    let r = s.exp();
                    (f(r) - 1.0) * r * r
                },
                a + h * k as f64,
                a + h * (k + 1) as f64,
                &rule,
            )
        })
        .sum();
    2.0 * std::f64::consts::PI * (body + 0.5 * (f(r_lo) - 1.0) * r_lo * r_lo)
}

fn trivial_inflation() -> Outcome {
    let fam = AcsFamily::new(SkewProfile::Constant { a: 0.8, b: 0.0 }, [1.5, 0.0]);
    let model = NormalModel::new(BundleCase::Trivial, 0.3, ModelGrid::default(), fam).unwrap();
    let measured = estimate_epsilons(&model).unwrap();
    let eps = EpsilonPair::new(0.5, 1.0, measured.valid_radius).unwrap();
    let mut ok = measured.eps1 <= 0.5 && measured.eps2 <= 1.0;
    let mut detail = format!("model ε = ({:.3}, {:.3}) ≤ (0.5, 1);", measured.eps1, measured.eps2);
    for t in [1.0, 5.0, 25.0] {
        let (p, support) = build_profile_trivial(t, &eps).unwrap();
        let cap = p
            .samples
            .iter()
            .map(|s| s.f * s.r * s.r / 0.25)
            .chain(model.radii().into_iter().map(|r| p.eval(r).0 * r * r / 0.25))
            .fold(0.0, f64::max);
        let shift = class_shift(&p, &model);
        let oracle = shift_oracle(|r| p.eval(r).0, 1e-14, support);
        let rep = verify_tameness(&omega_f(&model, &p).unwrap(), &model, &eps);
        let good = cap < 1.0 && (shift - t).abs() <= 0.01 * t && (oracle - t).abs() <= 0.01 * t && rep.tameness.all_positive();
        ok &= good;
        detail += &format!(
            " t={t}: cap {cap:.4}, shift {shift:.6}, oracle {oracle:.6}, min margin {:.4};",
            rep.tameness.margin
        );
    }
    outcome(ok, detail)
}

fn negative_inflation() -> Outcome {
    let fam = AcsFamily::new(SkewProfile::Constant { a: 0.6, b: 0.0 }, [1.0, 0.0]);
    let mut ok = true;
    let mut detail = String::new();
    for m in 1..=3u32 {
        let mp = 0.8 / m as f64;
        let model = NormalModel::new(BundleCase::Negative(m), 0.3, ModelGrid::default(), fam).unwrap();
        let eps = estimate_epsilons(&model).unwrap().for_negative_bundle(m, mp);
        let p = build_profile_negative(m, mp, &eps).unwrap();
        let c = p.log_slope().unwrap();
        let constraint = model
            .radii()
            .into_iter()
            .chain(p.samples.iter().map(|s| s.r))
            .filter(|&r| r <= p.support_radius)
            .map(|r| eps.eps2 * (r * r + c).sqrt())
            .fold(0.0, f64::max);
        let rep = verify_tameness(&omega_f(&model, &p).unwrap(), &model, &eps);
        let rejected = build_profile_negative(m, 1.01 / m as f64, &eps).is_err();
        let good = p.head == mp && p.eval(0.0).0 == mp && constraint < 1.0 - eps.eps1 && rep.tameness.all_positive() && rejected;
        ok &= good;
        detail += &format!(
            " m={m}: f(0) {}, ε₂√(r²+c) {constraint:.4} < {:.4}, min margin {:.4}, 1.01/m rejected {rejected};",
            p.eval(0.0).0,
            1.0 - eps.eps1,
            rep.tameness.margin
        );
    }
    outcome(ok, detail)
}

fn positive_obstruction_case() -> Outcome {
    let grid = ModelGrid { n_r: 256, n_theta: 16, n_z: 4, r_min_ratio: 1e-10 };
    let bound = positive_case_bound(1, 0.5);
    let big = positive_obstruction(1, 0.5, 6.0, 0.4, grid).unwrap();
    let small = positive_obstruction(1, 0.5, 0.1, 0.4, grid).unwrap();
    let xs = [0.3, 0.5, 0.7, 0.9];
    let decreasing = xs.windows(2).all(|w| positive_case_bound(1, w[1]) < positive_case_bound(1, w[0]));
    // Near r = 0 the sufficient condition reads 1 − ε₁√(1 + mM').
    let head = 1.0 - 0.5 * (1.0f64 + 6.0).sqrt();
    let ok = bound == 3.0
        && big.sufficient_inner < 0.0
        && (big.sufficient_inner - head).abs() < 1e-6
        && small.sufficient_holds()
        && small.tame()
        && !big.tame()
        && decreasing;
    outcome(
        ok,
        format!(
            "bound {bound}; M'=6: inner value {:.4} at r={:.1e}, exact margin {:.4}; M'=0.1: min {:.4}, margin {:.4}; decreasing {decreasing}",
            big.sufficient_inner, big.inner_radius, big.margin, small.sufficient_min, small.margin
        ),
    )
}

fn jet_battery() -> Outcome {
    let grid = TubeGrid::new(16, 13, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let slack = 1e-6;
    let (mut value_excess, mut grad_excess, mut min_order) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..100 {
        let scale = rng.random_range(0.02..0.6);
        let jet = random_normal_jet(&mut rng, grid.n_z, scale);
        let sec = extend_section(&jet, rng.random_range(0.2..0.5), &grid).unwrap();
        let rep = check_section(&sec, &grid);
        value_excess = value_excess.max(rep.max_value_ratio - 2.0 * rep.bounds.k);
        grad_excess = grad_excess.max(rep.max_gradient - 6.0 * rep.bounds.k);
        let r: Vec<f64> = [0.016, 0.008, 0.004].iter().map(|&h| jet_residual(&sec, &jet, h)).collect();
        min_order = min_order.min((r[0] / r[1]).log2()).min((r[1] / r[2]).log2());
    }
    outcome(
        value_excess <= slack && grad_excess <= slack && min_order >= 1.8,
        format!("max(‖f̃‖/r − 2K) {value_excess:.3e}, max(‖∇f̃‖ − 6K) {grad_excess:.3e}, min residual order {min_order:.3}"),
    )
}

/// `Ψ_{1/2}⁻¹ J_B Ψ_{1/2}` at `z`, from the block formula.
fn fiberwise_target(fam: &AcsFamily, z: f64) -> Mat4 {
    let s = fam.skew.skew(z);
    let p = psi_oracle(&skew_block(s.a, s.b), s.n, 0.5);
    p.try_inverse().unwrap() * fam.matrix(z, [0.0, 0.0]) * p
}

fn end_to_end() -> Outcome {
    let grid = TubeGrid::new(16, 13, 0.5);
    let families = [
        ("constant N=1", AcsFamily::constant(1.0, 0.0)),
        (
            "sinusoidal",
            AcsFamily::new(SkewProfile::Sinusoidal { mean: 1.0, amplitude: 0.5, winding: 1 }, [0.1, 0.05]),
        ),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (name, fam) in families {
        let curve = CurveField::new(fam, grid).unwrap();
        let params = choose_params(&curve).unwrap();
        match prepare(&curve, &params) {
            Ok((prepared, trace)) => {
                let zs = grid.zs();
                let oracle = (0..grid.n_z)
                    .map(|k| (prepared.field[grid.index(k, grid.centre(), grid.centre())] - fiberwise_target(&fam, zs[k])).amax())
                    .fold(0.0, f64::max);
                let step_min = trace.steps.iter().map(|s| s.margin_after).fold(trace.initial_margin, f64::min);
                let s = prepared.summary;
                let good = s.final_n_along_z < 1e-6 && step_min > 0.0 && s.min_margin > 0.0 && s.z_match_error <= 1e-8 && oracle <= 1e-8;
                ok &= good;
                detail += &format!(
                    " {name}: {} steps, final N {:.2e}, min step margin {step_min:.4}, z-match {:.2e} (oracle {oracle:.2e});",
                    s.steps, s.final_n_along_z, s.z_match_error
                );
            }
            Err(e) => {
                ok = false;
                detail += &format!(" {name}: {e};");
            }
        }
    }
    outcome(ok, detail)
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn selftest_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_jtame");
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let run = |out: &Path| Command::new(bin).args(["selftest", "--seed", "42", "--out"]).arg(out).output().unwrap();
    let (ra, rb) = (run(&a), run(&b));
    let same = read_dir_bytes(&a) == read_dir_bytes(&b) && ra.stdout == rb.stdout;
    let files = read_dir_bytes(&a).len();
    outcome(
        ra.status.code() == Some(0) && rb.status.code() == Some(0) && same,
        format!("exit codes {:?}/{:?}, {files} artifacts byte-identical: {same}", ra.status.code(), rb.status.code()),
    )
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        criterion(1, "tameness margin law", s(5), margin_law),
        criterion(2, "isotopy identities", s(5), isotopy_identities),
        criterion(3, "step lemma sweep", s(30), step_lemma),
        criterion(4, "trivial-case inflation", s(60), trivial_inflation),
        criterion(5, "negative-case inflation", s(60), negative_inflation),
        criterion(6, "positive-case obstruction", s(30), positive_obstruction_case),
        criterion(7, "jet extension bounds", s(60), jet_battery),
        criterion(8, "end-to-end preparation", s(120), end_to_end),
        criterion(9, "selftest exit and determinism", s(60), selftest_determinism),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
