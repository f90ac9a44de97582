//! Reference implementations shared by the integration tests. Deliberately naive.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use plate::model::ContinuousModel;

pub type M = DMatrix<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix<R: Rng>(r: usize, c: usize, rng: &mut R) -> M {
    M::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// `G Gᵀ` scaled to Frobenius norm `scale`, plus a small ridge.
pub fn random_spd<R: Rng>(n: usize, scale: f64, rng: &mut R) -> M {
    let g = normal_matrix(n, n, rng);
    let p = &g * g.transpose();
    let p = p.clone() * (scale / p.norm());
    p + M::identity(n, n) * (1e-3 * scale)
}

/// Taylor series on `A / 2^s` followed by `s` squarings.
pub fn expm_taylor(a: &M) -> M {
    let n = a.nrows();
    let norm = a.norm();
    let s = if norm > 0.05 { (norm / 0.05).log2().ceil() as i32 } else { 0 };
    let x = a / 2f64.powi(s);
    let mut term = M::identity(n, n);
    let mut sum = M::identity(n, n);
    for k in 1..30 {
        term = &term * &x / k as f64;
        sum += &term;
        if term.norm() < 1e-20 {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> M>(f: &F, a: f64, b: f64, fa: &M, fm: &M, fb: &M, whole: &M, tol: f64, depth: u32) -> M {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let h = b - a;
    let left = (fa + &flm * 4.0 + fm) * (h / 12.0);
    let right = (fm + &frm * 4.0 + fb) * (h / 12.0);
    let both = &left + &right;
    let err = (&both - whole).norm();
    if depth == 0 || err <= 15.0 * tol {
        return &both + (&both - whole) / 15.0;
    }
    simpson_rec(f, a, m, fa, &flm, fm, &left, 0.5 * tol, depth - 1) + simpson_rec(f, m, b, fm, &frm, fb, &right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of a matrix-valued integrand.
pub fn simpson<F: Fn(f64) -> M>(f: F, a: f64, b: f64, tol: f64) -> M {
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (&fa + &fm * 4.0 + &fb) * ((b - a) / 6.0);
    simpson_rec(&f, a, b, &fa, &fm, &fb, &whole, tol, 40)
}

/// Random model with `nx` states, moderately sized drift and full-rank diffusion.
pub fn random_model<R: Rng>(nx: usize, rng: &mut R) -> ContinuousModel {
    let nw = rng.random_range(1..=nx);
    let nz = rng.random_range(1..=nx);
    ContinuousModel {
        a: normal_matrix(nx, nx, rng) * (1.5 / (nx as f64).sqrt()),
        b: normal_matrix(nx, nw, rng),
        w: random_spd(nw, 1.0, rng),
        c: normal_matrix(nz, nx, rng),
        x0: DVector::zeros(nx),
        p0: random_spd(nx, 1.0, rng),
        dt_s: 1.0 / 30.0,
    }
}

/// `W_d(t) = ∫₀ᵗ e^{As} Q e^{Aᵀs} ds`.
pub fn wd_oracle(model: &ContinuousModel, t: f64) -> M {
    let q = &model.b * &model.w * model.b.transpose();
    simpson(
        |s| {
            let e = expm_taylor(&(&model.a * s));
            &e * &q * e.transpose()
        },
        0.0,
        t,
        1e-14,
    )
}

/// `∫₀ᵈ A_d(t)ᵀ A_d(t) dt` and `∫₀ᵈ tr W_d(t) dt = ∫₀ᵈ (d − s) tr(e^{As} Q e^{Aᵀs}) ds`.
pub fn gram_oracle(model: &ContinuousModel, d: f64) -> (M, f64) {
    let m = simpson(
        |t| {
            let e = expm_taylor(&(&model.a * t));
            e.transpose() * e
        },
        0.0,
        d,
        1e-14,
    );
    let q = &model.b * &model.w * model.b.transpose();
    let c = simpson(
        |s| {
            let e = expm_taylor(&(&model.a * s));
            M::from_element(1, 1, (d - s) * (&e * &q * e.transpose()).trace())
        },
        0.0,
        d,
        1e-14,
    );
    (m, c[(0, 0)])
}

/// Textbook predictor-form Riccati step.
pub fn riccati(p: &M, ad: &M, wd: &M, c: &M, r: &M) -> M {
    let s = c * p * c.transpose() + r;
    let s_inv = s.try_inverse().expect("innovation covariance invertible");
    ad * (p - p * c.transpose() * s_inv * c * p) * ad.transpose() + wd
}

pub fn rel_err(a: &M, b: &M) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
