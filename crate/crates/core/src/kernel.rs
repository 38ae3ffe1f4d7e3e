//! Contour-integral numerics for the Pearcey kernel.
//!
//! The kernel is built from two special functions: an entire function `phi`
//! given by a real-axis integral with a decaying quartic weight, and a
//! companion `psi` given by an integral over four rays on which the quartic
//! weight also decays. Their product, integrated over a half-line in `z`,
//! gives the kernel entry.
//!
//! The half-line integral is delicate. The two factors trade exponential
//! envelopes `e^{-g(u)}` and `e^{+g(u)}` with `g(u) ~ (3/8) u^(4/3)`, so the
//! product decays only where the `phi` argument leads the `psi` argument;
//! there [`kernel_value`] integrates in phase-tracked blocks and averages
//! trailing partial sums to strip the residual oscillation. On the diagonal
//! the envelopes cancel exactly and the product's local mean decays only
//! like `z^(-2/3)`, so the partial integrals drift like `Z^(1/3)` and no
//! averaging converges; [`kernel_diag`] instead evaluates the continuous
//! (confluent) limit of the kernel's divided-difference form, which both
//! inner factors' third-order ODEs reduce to a finite combination of their
//! derivatives at the evaluation point.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{r64, Real};
use crate::scaling::ModelParams;

/// Quadrature scheme for the inner (one-dimensional) integrals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Composite Gauss–Legendre panels (default).
    GaussLegendre,
    /// Uniform composite trapezoid; kept for scheme-independence checks.
    Trapezoid,
}

/// Discretization parameters for the kernel integrals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec<R> {
    /// Truncation `T` of the inner integrals: `|t| <= T` on the real axis,
    /// ray radius `r <= T` on the contour.
    pub inner_truncation: R,
    /// Total node budget for each inner integral.
    pub inner_nodes: usize,
    /// Upper end `Z` of the half-line integral.
    pub outer_cutoff: R,
    /// Node budget per oscillation period of the outer integrand.
    pub outer_nodes: usize,
    /// Number of consecutive half-period partial sums per tail window
    /// (even; 0 disables tail compensation).
    pub tail_average_windows: usize,
    pub scheme: Scheme,
}

/// Slope of the linear term in the truncation equation: the ray integrand
/// carries `e^{|y| r sin(pi/4)}`, so covering arguments `|y| <= 40` needs
/// `(sqrt 2 / 2) * 40 * T` headroom beyond the quartic decay.
const RAY_SLOPE: f64 = 28.284271247461902;

impl<R: Real> QuadratureSpec<R> {
    /// Defaults tuned so both inner integrals are fully resolved for the
    /// argument ranges the kernel machinery visits.
    ///
    /// `T` solves `T^4/4 - |rho| T^2/2 - (sqrt 2 / 2) 40 T - 40 = 0`: at the
    /// cut the ray integrand for arguments up to ~40 is below `e^-40`, and
    /// the real-axis integrand far smaller. The left side is increasing in
    /// `T` past its stationary point and the bracket below always straddles
    /// the root, so ninety bisections pin it to full precision.
    pub fn for_params(params: &ModelParams<R>) -> Self {
        let a = params.rho().abs();
        let g = |t: R| {
            let t2 = t * t;
            t2 * t2 / r64::<R>(4.0) - a * t2 / r64::<R>(2.0) - r64::<R>(RAY_SLOPE) * t
                - r64::<R>(40.0)
        };
        let mut lo = R::one();
        let mut hi = r64::<R>(2.0) * (a + r64::<R>(20.0)).sqrt();
        for _ in 0..90 {
            let mid = (lo + hi) / r64::<R>(2.0);
            if g(mid) < R::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        QuadratureSpec {
            inner_truncation: (lo + hi) / r64::<R>(2.0),
            inner_nodes: 512,
            outer_cutoff: r64(20.0),
            outer_nodes: 64,
            tail_average_windows: 8,
            scheme: Scheme::GaussLegendre,
        }
    }

    /// Checks the truncation bound `e^(-T^4/4 + |rho| T^2/2) <= 1e-16` and
    /// the node-count floors.
    pub fn validate(&self, params: &ModelParams<R>) -> Result<()> {
        let t = self.inner_truncation;
        if !t.is_finite() || !(t > R::zero()) {
            return Err(Error::config(format!(
                "inner truncation must be positive and finite, got {t}"
            )));
        }
        let t2 = t * t;
        let exponent = -t2 * t2 / r64::<R>(4.0) + params.rho().abs() * t2 / r64::<R>(2.0);
        if !(exponent <= r64::<R>(-36.8)) {
            return Err(Error::config(format!(
                "inner truncation {t} leaves a tail of e^{exponent:.2}, above 1e-16"
            )));
        }
        if self.inner_nodes < 64 || self.outer_nodes < 64 {
            return Err(Error::config(format!(
                "node counts must be at least 64, got inner {} / outer {}",
                self.inner_nodes, self.outer_nodes
            )));
        }
        if !self.outer_cutoff.is_finite() || !(self.outer_cutoff > R::zero()) {
            return Err(Error::config(format!(
                "outer cutoff must be positive and finite, got {}",
                self.outer_cutoff
            )));
        }
        if !self.tail_average_windows.is_multiple_of(2) {
            return Err(Error::config(format!(
                "tail_average_windows must be even (pairs of half-periods), got {}",
                self.tail_average_windows
            )));
        }
        Ok(())
    }

    fn panel_order(&self) -> usize {
        (self.outer_nodes / 4).clamp(8, 64)
    }
}

/// Complex result of an integral evaluation.
pub type ComplexValue<R> = Complex<R>;

/// A kernel evaluation together with an error estimate: the spread of the
/// tail window averages for [`kernel_value`], a mesh-refinement difference
/// plus the imaginary residual for [`kernel_diag`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEstimate<R> {
    pub value: Complex<R>,
    pub error_estimate: R,
}

/// First inner factor: `integral over [-T, T] of e^(-t^4/4 - rho t^2/2 + i t x) dt`.
///
/// Real and even in `x` up to quadrature noise.
pub fn phi<R: Real>(params: &ModelParams<R>, x: R, spec: &QuadratureSpec<R>) -> Result<Complex<R>> {
    phi_moment(params, x, 0, spec)
}

/// Moment integrals `integral (i t)^m e^(-t^4/4 - rho t^2/2 + i t x) dt`,
/// equal to the `m`-th derivative of [`phi`] in `x`. Supported for `m <= 4`.
pub fn phi_moment<R: Real>(
    params: &ModelParams<R>,
    x: R,
    m: usize,
    spec: &QuadratureSpec<R>,
) -> Result<Complex<R>> {
    spec.validate(params)?;
    if m > 4 {
        return Err(Error::Unsupported(format!(
            "moment order {m} not supported (maximum 4)"
        )));
    }
    if !x.is_finite() {
        return Err(Error::domain(format!("phi argument must be finite, got {x}")));
    }
    let t_max = spec.inner_truncation;
    check_resolution(x, r64::<R>(2.0) * t_max, spec)?;
    let rho = params.rho();
    let quarter = r64::<R>(0.25);
    let half_rho = rho / r64::<R>(2.0);
    let f = |t: R| -> Complex<R> {
        let t2 = t * t;
        let base = Complex::new(-quarter * t2 * t2 - half_rho * t2, t * x).exp();
        // (i t)^m
        let it = Complex::new(R::zero(), t);
        base * complex_pow(it, m)
    };
    let value = integrate_segment(-t_max, t_max, spec, &f);
    ensure_finite(value, "phi quadrature")
}

fn complex_pow<R: Real>(z: Complex<R>, m: usize) -> Complex<R> {
    let mut acc = Complex::new(R::one(), R::zero());
    for _ in 0..m {
        acc *= z;
    }
    acc
}

/// Second inner factor: the integral of `e^(t^4/4 + rho t^2/2 + i t y)`
/// over the four-ray contour at angles `±pi/4, ±3pi/4`.
///
/// Rays pointing in from infinity enter with a minus sign; on each ray
/// `t = r e^(i theta)` gives `t^4 = -r^4`, so the integrand decays like
/// `e^(-r^4/4)`. Real and odd for real `y`: exactly zero at `y = 0` by the
/// cancellation of the four direction factors, and `t -> -t` maps the
/// contour onto itself reversing orientation. Grows like
/// `e^((3/8) |y|^(4/3))`.
pub fn psi<R: Real>(params: &ModelParams<R>, y: R, spec: &QuadratureSpec<R>) -> Result<Complex<R>> {
    psi_moment(params, y, 0, spec)
}

/// Moment integrals `integral over the contour of (i t)^m e^(t^4/4 + rho t^2/2 + i t y) dt`,
/// equal to the `m`-th derivative of [`psi`] in `y`. Supported for `m <= 4`.
///
/// Obeys the third-order ODE `psi''' = -y psi + rho psi'`: integrating the
/// exact ray derivative `d/dr e^(t^4/4 + rho t^2/2)` by parts leaves no
/// boundary terms, because the contribution at the contour origin cancels
/// across the four rays exactly as in `psi(0) = 0` and the cut at `r = T`
/// is below the truncation tolerance.
pub fn psi_moment<R: Real>(
    params: &ModelParams<R>,
    y: R,
    m: usize,
    spec: &QuadratureSpec<R>,
) -> Result<Complex<R>> {
    spec.validate(params)?;
    if m > 4 {
        return Err(Error::Unsupported(format!(
            "moment order {m} not supported (maximum 4)"
        )));
    }
    if !y.is_finite() {
        return Err(Error::domain(format!("psi argument must be finite, got {y}")));
    }
    let t_max = spec.inner_truncation;
    check_resolution(y, t_max, spec)?;
    let rho = params.rho();
    let quarter = r64::<R>(0.25);
    let half_rho = rho / r64::<R>(2.0);
    let s = r64::<R>(2.0).sqrt() / r64::<R>(2.0);

    // Unlike the real-axis integrand, two of the rays carry e^(|y| r sin pi/4)
    // growth before the quartic decay wins, so the cut must be checked per
    // argument, not just per rho.
    let t2 = t_max * t_max;
    let peak = -quarter * t2 * t2 + half_rho.abs() * t2 + s * y.abs() * t_max;
    if !(peak <= r64::<R>(-30.0)) {
        return Err(Error::config(format!(
            "inner truncation {t_max} insufficient for ray argument |y| = {}: \
             the integrand is still e^{peak:.1} at the cut",
            y.abs()
        )));
    }

    // (orientation, direction e^(i theta), i e^(i theta), sign of Im(t^2)).
    let rays: [(R, Complex<R>, Complex<R>, R); 4] = [
        (-R::one(), Complex::new(s, s), Complex::new(-s, s), R::one()), // pi/4, inbound
        (R::one(), Complex::new(-s, s), Complex::new(-s, -s), -R::one()), // 3pi/4, outbound
        (-R::one(), Complex::new(-s, -s), Complex::new(s, -s), R::one()), // -3pi/4, inbound
        (R::one(), Complex::new(s, -s), Complex::new(s, s), -R::one()), // -pi/4, outbound
    ];

    let mut total = Complex::new(R::zero(), R::zero());
    for (orient, dir, idir, t2_sign) in rays {
        let f = |r: R| -> Complex<R> {
            let r2 = r * r;
            // exponent = -r^4/4 + i * t2_sign * rho r^2 / 2 + i y r e^(i theta)
            let exponent =
                Complex::new(-quarter * r2 * r2, t2_sign * half_rho * r2) + idir * (y * r);
            // (i t)^m = (i e^(i theta))^m r^m
            exponent.exp() * complex_pow(idir, m) * r.powi(m as i32)
        };
        let ray_integral = integrate_segment(R::zero(), t_max, spec, &f);
        total += dir * ray_integral * orient;
    }
    ensure_finite(total, "psi quadrature")
}

/// Guards against under-resolving the oscillation `e^(i x t)` with the
/// configured node budget.
fn check_resolution<R: Real>(freq: R, span: R, spec: &QuadratureSpec<R>) -> Result<()> {
    let budget = match spec.scheme {
        // 16-point panels hold spectral accuracy to ~20 radians of phase.
        Scheme::GaussLegendre => {
            let panels = spec.inner_nodes.div_ceil(GL_ORDER);
            r64::<R>(20.0) * r64::<R>(panels as f64) / span
        }
        // Trapezoid needs a few nodes per radian.
        Scheme::Trapezoid => {
            r64::<R>(2.0) * r64::<R>(spec.inner_nodes as f64) / span
        }
    };
    if freq.abs() > budget {
        return Err(Error::config(format!(
            "argument magnitude {} exceeds what {} inner nodes resolve (max ~{})",
            freq.abs(),
            spec.inner_nodes,
            budget
        )));
    }
    Ok(())
}

fn ensure_finite<R: Real>(v: Complex<R>, what: &str) -> Result<Complex<R>> {
    if !v.re.is_finite() || !v.im.is_finite() {
        return Err(Error::input(format!("{what} produced a non-finite value")));
    }
    Ok(v)
}

const GL_ORDER: usize = 16;

/// Nodes and weights of the Gauss–Legendre rule on [-1, 1], by Newton
/// iteration on the Legendre polynomial.
fn gauss_legendre<R: Real>(order: usize) -> (Vec<R>, Vec<R>) {
    let mut nodes = vec![R::zero(); order];
    let mut weights = vec![R::zero(); order];
    let nf = r64::<R>(order as f64);
    for i in 0..order {
        // Chebyshev-like initial guess.
        let theta = (r64::<R>(i as f64) + r64::<R>(0.75)) / (nf + r64::<R>(0.5)) * R::PI();
        let mut x = theta.cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(order, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= r64::<R>(1e-15) {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(order, x);
        nodes[i] = x;
        weights[i] = r64::<R>(2.0) / ((R::one() - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Legendre polynomial `P_n` and its derivative at `x`, by the three-term
/// recurrence.
fn legendre_with_derivative<R: Real>(n: usize, x: R) -> (R, R) {
    let mut p0 = R::one();
    let mut p1 = x;
    if n == 0 {
        return (p0, R::zero());
    }
    for k in 2..=n {
        let kf = r64::<R>(k as f64);
        let p2 = ((r64::<R>(2.0) * kf - R::one()) * x * p1 - (kf - R::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = r64::<R>(n as f64) * (x * p1 - p0) / (x * x - R::one());
    (p1, dp)
}

/// Integrates `f` over `[a, b]` with the configured inner scheme and node
/// budget.
fn integrate_segment<R: Real>(
    a: R,
    b: R,
    spec: &QuadratureSpec<R>,
    f: &impl Fn(R) -> Complex<R>,
) -> Complex<R> {
    match spec.scheme {
        Scheme::GaussLegendre => {
            let panels = spec.inner_nodes.div_ceil(GL_ORDER).max(1);
            composite_gl(a, b, panels, GL_ORDER, f)
        }
        Scheme::Trapezoid => trapezoid(a, b, spec.inner_nodes.max(2), f),
    }
}

fn composite_gl<R: Real>(
    a: R,
    b: R,
    panels: usize,
    order: usize,
    f: &impl Fn(R) -> Complex<R>,
) -> Complex<R> {
    let (nodes, weights) = gauss_legendre::<R>(order);
    let width = (b - a) / r64::<R>(panels as f64);
    let mut acc = Complex::new(R::zero(), R::zero());
    for p in 0..panels {
        let lo = a + width * r64::<R>(p as f64);
        let mid = lo + width / r64::<R>(2.0);
        let half = width / r64::<R>(2.0);
        let mut panel = Complex::new(R::zero(), R::zero());
        for (x, w) in nodes.iter().zip(&weights) {
            panel += f(mid + half * *x) * *w;
        }
        acc += panel * half;
    }
    acc
}

fn trapezoid<R: Real>(a: R, b: R, n: usize, f: &impl Fn(R) -> Complex<R>) -> Complex<R> {
    let h = (b - a) / r64::<R>((n - 1) as f64);
    let mut acc = (f(a) + f(b)) * r64::<R>(0.5);
    for i in 1..n - 1 {
        acc += f(a + h * r64::<R>(i as f64));
    }
    acc * h
}

/// Oscillation phase of the product integrand at offset `z`:
/// `(3 sqrt 3 / 8) [ (x+z)_+^(4/3) + (y+z)_+^(4/3) ]`, the stationary-phase
/// exponent of `phi(x+z) psi(y+z)`.
fn oscillation_phase<R: Real>(x: R, y: R, z: R) -> R {
    let c = r64::<R>(3.0) * r64::<R>(3.0).sqrt() / r64::<R>(8.0);
    let pos = |u: R| {
        if u > R::zero() {
            u * u.cbrt()
        } else {
            R::zero()
        }
    };
    c * (pos(x + z) + pos(y + z))
}

/// Finds `z` in `[lo, hi]` with `oscillation_phase(x, y, z) = target`
/// (the phase is non-decreasing in `z`).
fn solve_phase<R: Real>(x: R, y: R, target: R, mut lo: R, mut hi: R) -> R {
    for _ in 0..200 {
        let mid = (lo + hi) / r64::<R>(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if oscillation_phase(x, y, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / r64::<R>(2.0)
}

/// Kernel value `(2 pi)^(-2) * integral over [0, Z] of phi(x+z) psi(y+z) dz`
/// with oscillatory-tail compensation.
///
/// Partial sums are recorded at 2W successive half-period phase marks ending
/// at `Z` (W = `tail_average_windows`); sliding means over W consecutive
/// marks give W+1 window averages, each one half-period further into the
/// tail. The value is the last window average and the error estimate the
/// spread of all of them around it. When the spread exceeds tolerance the
/// window averages are not Cauchy — the tail still carries a drifting,
/// non-oscillatory component that no averaging removes — and a convergence
/// error is returned instead of a value.
///
/// The integral only settles where `x` exceeds `y` by enough that the
/// product's envelope `e^(g(y+z) - g(x+z))`, `g(u) ~ (3/8) u^(4/3)`, decays
/// within the cutoff (`x - y` of order 5 at the defaults). On the diagonal
/// the envelopes cancel and the partial integrals drift like `Z^(1/3)`;
/// use [`kernel_diag`] there.
pub fn kernel_value<R: Real>(
    params: &ModelParams<R>,
    x: R,
    y: R,
    spec: &QuadratureSpec<R>,
) -> Result<KernelEstimate<R>> {
    spec.validate(params)?;
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::domain(format!(
            "kernel arguments must be finite, got ({x}, {y})"
        )));
    }
    let z_end = spec.outer_cutoff;
    let f = |z: R| -> Result<Complex<R>> {
        Ok(phi(params, x + z, spec)? * psi(params, y + z, spec)?)
    };
    let order = spec.panel_order();
    let windows = spec.tail_average_windows;
    let norm = {
        let two_pi = r64::<R>(2.0) * R::PI();
        R::one() / (two_pi * two_pi)
    };

    let phase_at = |z: R| oscillation_phase(x, y, z);
    let phase_start = phase_at(R::zero());
    let phase_end = phase_at(z_end);

    if windows == 0 {
        // Plain integration; the last panel magnitude is the only error
        // handle available.
        let (total, last_panel) = integrate_outer_block(R::zero(), z_end, x, y, order, &f)?;
        return Ok(KernelEstimate {
            value: total * norm,
            error_estimate: last_panel.norm() * norm,
        });
    }

    let marks = 2 * windows;
    let needed = r64::<R>(marks as f64) * R::PI() + R::one();
    if !(phase_end - phase_start > needed) {
        return Err(Error::Convergence {
            what: format!(
                "outer cutoff {z_end} spans too little oscillation phase for {windows} tail windows"
            ),
            spread: (phase_end - phase_start).to_f64().unwrap_or(f64::NAN),
            tolerance: needed.to_f64().unwrap_or(f64::NAN),
        });
    }

    // Half-period marks ascending to Z: phase_end - j pi for j = marks-1 .. 0.
    let mut mark_zs = Vec::with_capacity(marks);
    let mut lo = R::zero();
    for j in (0..marks).rev() {
        let target = phase_end - r64::<R>(j as f64) * R::PI();
        let z = if j == 0 {
            z_end
        } else {
            solve_phase(x, y, target, lo, z_end)
        };
        mark_zs.push(z);
        lo = z;
    }

    // Bulk up to the first mark, then one half-period at a time, recording
    // the partial sum at every mark.
    let (mut running, _) = integrate_outer_block(R::zero(), mark_zs[0], x, y, order, &f)?;
    let mut partials = Vec::with_capacity(marks);
    partials.push(running);
    for w in mark_zs.windows(2) {
        let seg = composite_gl_fallible(w[0], w[1], 2, order, &f)?;
        running += seg;
        partials.push(running);
    }

    let mean_of = |block: &[Complex<R>]| -> Complex<R> {
        let mut acc = Complex::new(R::zero(), R::zero());
        for v in block {
            acc += *v;
        }
        acc / r64::<R>(block.len() as f64)
    };
    let averages: Vec<Complex<R>> = (0..=windows)
        .map(|i| mean_of(&partials[i..i + windows]))
        .collect();
    let estimate = averages[windows] * norm;
    let spread = averages
        .iter()
        .map(|a| (*a * norm - estimate).norm())
        .fold(R::zero(), |a, b| a.max(b));

    let tolerance = r64::<R>(5e-5).max(r64::<R>(5e-3) * estimate.norm());
    if !(spread <= tolerance) {
        return Err(Error::Convergence {
            what: format!("oscillatory tail averaging at ({x}, {y}) did not stabilize"),
            spread: spread.to_f64().unwrap_or(f64::NAN),
            tolerance: tolerance.to_f64().unwrap_or(f64::NAN),
        });
    }

    Ok(KernelEstimate {
        value: estimate,
        error_estimate: spread,
    })
}

/// Diagonal kernel value `K(x, x)`, where the half-line representation does
/// not converge, computed as the confluent limit of the kernel's
/// divided-difference form.
///
/// Both inner factors obey third-order ODEs (`phi''' = x phi + rho phi'`,
/// `psi''' = -y psi + rho psi'`), which make
/// `F(z) = phi'' psi - phi' psi' + phi psi'' - rho phi psi` (arguments
/// `x + z`, `y + z`) an exact antiderivative: `F'(z) = (x - y) phi psi`.
/// The half-line integral therefore collapses to boundary terms; the far
/// term oscillates around zero and drops out under the same tail averaging
/// [`kernel_value`] performs (the off-diagonal agreement between the two
/// code paths checks this), leaving `K(x, y) = -(2 pi)^-2 F(0) / (x - y)`.
/// The diagonal is the `y -> x` limit:
///
/// `K(x, x) = -(2 pi)^-2 [phi''(x) psi'(x) - phi'(x) psi''(x) - x phi(x) psi(x)]`
///
/// Even in `x`, term by term, since `phi` is even and `psi` odd. The error
/// estimate is the shift under halving the inner node budget plus the
/// imaginary residual.
pub fn kernel_diag<R: Real>(
    params: &ModelParams<R>,
    x: R,
    spec: &QuadratureSpec<R>,
) -> Result<KernelEstimate<R>> {
    spec.validate(params)?;
    if !x.is_finite() {
        return Err(Error::domain(format!(
            "kernel argument must be finite, got {x}"
        )));
    }
    // The combination is a near-cancellation of terms of size e^(+g(x)):
    // quadrature roundoff in the decaying factor is amplified by the growing
    // one. Capping the growth exponent at 30 keeps the amplified noise below
    // ~1e-8 of the result.
    let ax = x.abs();
    let growth = r64::<R>(0.375) * ax * ax.cbrt()
        + params.rho().abs() / r64::<R>(2.0) * (ax * ax).cbrt();
    if !(growth <= r64::<R>(30.0)) {
        return Err(Error::config(format!(
            "diagonal argument {x} amplifies roundoff by e^{growth:.1}; \
             the result would be quadrature noise"
        )));
    }
    let full = diag_combination(params, x, spec)?;
    let mut halved = *spec;
    halved.inner_nodes = (spec.inner_nodes / 2).max(64);
    let coarse = diag_combination(params, x, &halved)?;
    Ok(KernelEstimate {
        value: full,
        error_estimate: (full - coarse).norm() + full.im.abs(),
    })
}

fn diag_combination<R: Real>(
    params: &ModelParams<R>,
    x: R,
    spec: &QuadratureSpec<R>,
) -> Result<Complex<R>> {
    let p0 = phi_moment(params, x, 0, spec)?;
    let p1 = phi_moment(params, x, 1, spec)?;
    let p2 = phi_moment(params, x, 2, spec)?;
    let q0 = psi_moment(params, x, 0, spec)?;
    let q1 = psi_moment(params, x, 1, spec)?;
    let q2 = psi_moment(params, x, 2, spec)?;
    let two_pi = r64::<R>(2.0) * R::PI();
    let norm = R::one() / (two_pi * two_pi);
    Ok((p2 * q1 - p1 * q2 - p0 * q0 * x) * -norm)
}

/// Integrates the outer integrand over `[a, b]` in panels that span at most
/// one unit of `z` and at most half an oscillation period; returns the total
/// and the last panel's contribution.
fn integrate_outer_block<R: Real>(
    a: R,
    b: R,
    x: R,
    y: R,
    order: usize,
    f: &impl Fn(R) -> Result<Complex<R>>,
) -> Result<(Complex<R>, Complex<R>)> {
    let mut acc = Complex::new(R::zero(), R::zero());
    let mut last = Complex::new(R::zero(), R::zero());
    let mut z = a;
    // Tolerate roundoff at the segment end.
    let eps = (b - a) * r64::<R>(1e-12);
    while z < b - eps {
        let cap = (z + R::one()).min(b);
        let target = oscillation_phase(x, y, z) + R::PI();
        let next = if oscillation_phase(x, y, cap) <= target {
            cap
        } else {
            solve_phase(x, y, target, z, cap)
        };
        let next = if next <= z { cap } else { next };
        last = composite_gl_fallible(z, next, 1, order, f)?;
        acc += last;
        z = next;
    }
    Ok((acc, last))
}

fn composite_gl_fallible<R: Real>(
    a: R,
    b: R,
    panels: usize,
    order: usize,
    f: &impl Fn(R) -> Result<Complex<R>>,
) -> Result<Complex<R>> {
    let (nodes, weights) = gauss_legendre::<R>(order);
    let width = (b - a) / r64::<R>(panels as f64);
    let mut acc = Complex::new(R::zero(), R::zero());
    for p in 0..panels {
        let lo = a + width * r64::<R>(p as f64);
        let half = width / r64::<R>(2.0);
        let mid = lo + half;
        let mut panel = Complex::new(R::zero(), R::zero());
        for (x, w) in nodes.iter().zip(&weights) {
            panel += f(mid + half * *x)? * *w;
        }
        acc += panel * half;
    }
    Ok(acc)
}

/// Mean count over `[-x, x]`: the integral of the diagonal kernel, by
/// adaptive Simpson quadrature.
///
/// Comparable with the closed-form mean up to an O(1) offset.
pub fn mean_count<R: Real>(params: &ModelParams<R>, x: R, spec: &QuadratureSpec<R>) -> Result<R> {
    spec.validate(params)?;
    if !(x > R::zero()) || !x.is_finite() {
        return Err(Error::domain(format!(
            "mean count radius must be positive and finite, got {x}"
        )));
    }
    let f = |t: R| -> Result<R> { Ok(kernel_diag(params, t, spec)?.value.re) };
    let a = -x;
    let b = x;
    let fa = f(a)?;
    let fm = f((a + b) / r64::<R>(2.0))?;
    let fb = f(b)?;
    let tol = r64::<R>(2e-3);
    adaptive_simpson(&f, a, b, fa, fm, fb, tol, 8)
}

fn simpson_value<R: Real>(a: R, b: R, fa: R, fm: R, fb: R) -> R {
    (b - a) / r64::<R>(6.0) * (fa + r64::<R>(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson<R: Real>(
    f: &impl Fn(R) -> Result<R>,
    a: R,
    b: R,
    fa: R,
    fm: R,
    fb: R,
    tol: R,
    depth: usize,
) -> Result<R> {
    let m = (a + b) / r64::<R>(2.0);
    let lm = (a + m) / r64::<R>(2.0);
    let rm = (m + b) / r64::<R>(2.0);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let whole = simpson_value(a, b, fa, fm, fb);
    let left = simpson_value(a, m, fa, flm, fm);
    let right = simpson_value(m, b, fm, frm, fb);
    let refined = left + right;
    if depth == 0 || (refined - whole).abs() <= r64::<R>(15.0) * tol {
        // Richardson correction; at depth exhaustion this is the best
        // available estimate (tolerances downstream are loose).
        return Ok(refined + (refined - whole) / r64::<R>(15.0));
    }
    let half_tol = tol / r64::<R>(2.0);
    let l = adaptive_simpson(f, a, m, fa, flm, fm, half_tol, depth - 1)?;
    let r = adaptive_simpson(f, m, b, fm, frm, fb, half_tol, depth - 1)?;
    Ok(l + r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::ModelParams;

    fn p(rho: f64) -> ModelParams<f64> {
        ModelParams::new(rho).unwrap()
    }

    fn spec(rho: f64) -> QuadratureSpec<f64> {
        QuadratureSpec::for_params(&p(rho))
    }

    #[test]
    fn default_spec_passes_validation_for_test_rhos() {
        for &rho in &[-3.24, -1.31, 0.0, 2.19, 2.54] {
            let params = p(rho);
            let q = QuadratureSpec::for_params(&params);
            q.validate(&params).unwrap();
            // The truncation is the root of its defining equation.
            let t = q.inner_truncation;
            let residual =
                t.powi(4) / 4.0 - rho.abs() * t * t / 2.0 - RAY_SLOPE * t - 40.0;
            assert!(residual.abs() < 1e-9, "rho={rho}: residual {residual}");
        }
        assert!((spec(0.0).inner_truncation - 5.237659093221763).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let params = p(0.0);
        let mut q = spec(0.0);
        q.inner_truncation = 2.0; // tail ~ e^{-4}
        assert!(q.validate(&params).is_err());
        let mut q = spec(0.0);
        q.inner_nodes = 32;
        assert!(q.validate(&params).is_err());
        let mut q = spec(0.0);
        q.tail_average_windows = 3;
        assert!(q.validate(&params).is_err());
        let mut q = spec(0.0);
        q.outer_cutoff = -1.0;
        assert!(q.validate(&params).is_err());
        // Strongly negative rho needs a larger T than rho = 0 provides.
        let strong = ModelParams::new(-25.0).unwrap();
        let q0 = spec(0.0);
        assert!(q0.validate(&strong).is_err());
        QuadratureSpec::for_params(&strong).validate(&strong).unwrap();
    }

    #[test]
    fn gauss_legendre_rule_integrates_polynomials_exactly() {
        let (nodes, weights) = gauss_legendre::<f64>(16);
        assert_eq!(nodes.len(), 16);
        // Degree-31 monomials are integrated exactly on [-1, 1].
        for degree in [0usize, 2, 8, 16, 30] {
            let exact = 2.0 / (degree as f64 + 1.0);
            let got: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * x.powi(degree as i32))
                .sum();
            assert!((got - exact).abs() < 1e-13, "degree {degree}: {got}");
        }
        // Odd monomials vanish.
        let odd: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(7)).sum();
        assert!(odd.abs() < 1e-14);
        // Weights are positive and sum to 2.
        assert!(weights.iter().all(|&w| w > 0.0));
        let total: f64 = weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
    }

    #[test]
    fn phi_matches_gamma_closed_form_at_zero() {
        // Gamma(1/4)/sqrt(2).
        let value = phi(&p(0.0), 0.0, &spec(0.0)).unwrap();
        assert!((value.re - 2.5636933520408475729).abs() < 1e-10, "{value}");
        assert!(value.im.abs() < 1e-12);
    }

    #[test]
    fn phi_matches_frozen_offaxis_values() {
        let v = phi(&p(0.0), 1.0, &spec(0.0)).unwrap();
        assert!((v.re - 1.7971007368239381558).abs() < 1e-10, "{v}");
        let v = phi(&p(1.0), 2.0, &spec(1.0)).unwrap();
        assert!((v.re - 0.68049484374890007358).abs() < 1e-10, "{v}");
    }

    #[test]
    fn phi_is_real_and_even() {
        let params = p(1.0);
        let q = spec(1.0);
        for &x in &[0.3, 1.7, 4.0, 9.5] {
            let plus = phi(&params, x, &q).unwrap();
            let minus = phi(&params, -x, &q).unwrap();
            assert!(plus.im.abs() <= 1e-10 * (1.0 + plus.norm()));
            assert!((plus.re - minus.re).abs() <= 1e-10 * (1.0 + plus.norm()));
        }
    }

    #[test]
    fn phi_moment_closed_forms_at_zero() {
        // m = 1: odd integrand integrates to zero.
        let m1 = phi_moment(&p(0.0), 0.0, 1, &spec(0.0)).unwrap();
        assert!(m1.norm() < 1e-12);
        // m = 2: second derivative -sqrt(2) Gamma(3/4).
        let m2 = phi_moment(&p(0.0), 0.0, 2, &spec(0.0)).unwrap();
        assert!((m2.re - -1.7330009201847699629).abs() < 1e-10, "{m2}");
        assert!(phi_moment(&p(0.0), 0.0, 5, &spec(0.0)).is_err());
    }

    #[test]
    fn phi_satisfies_third_order_ode() {
        // phi''' = x phi + rho phi', following from integrating the exact
        // derivative of the integrand weight.
        for &rho in &[0.0, 1.0] {
            let params = p(rho);
            let q = spec(rho);
            let mut x = -5.0;
            while x <= 5.0 {
                let f0 = phi(&params, x, &q).unwrap();
                let f1 = phi_moment(&params, x, 1, &q).unwrap();
                let f3 = phi_moment(&params, x, 3, &q).unwrap();
                let residual = (f3 - f0 * x - f1 * rho).norm();
                assert!(
                    residual <= 1e-6 * (1.0 + f0.norm()),
                    "rho={rho} x={x}: residual {residual}"
                );
                x += 0.25;
            }
        }
    }

    #[test]
    fn phi_consistent_with_finite_differences() {
        let params = p(1.0);
        let q = spec(1.0);
        let h = 1e-2;
        let x = 0.7;
        let at = |dx: f64| phi(&params, x + dx, &q).unwrap().re;
        // 4th-order central first derivative.
        let fd1 = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
        let m1 = phi_moment(&params, x, 1, &q).unwrap().re;
        assert!((fd1 - m1).abs() < 1e-6, "fd {fd1} vs moment {m1}");
        let fd2 = (-at(-2.0 * h) + 16.0 * at(-h) - 30.0 * at(0.0) + 16.0 * at(h)
            - at(2.0 * h))
            / (12.0 * h * h);
        let m2 = phi_moment(&params, x, 2, &q).unwrap().re;
        assert!((fd2 - m2).abs() < 1e-5, "fd {fd2} vs moment {m2}");
    }

    #[test]
    fn psi_vanishes_at_zero_by_ray_cancellation() {
        for &rho in &[0.0, 1.0, -1.31] {
            let v = psi(&p(rho), 0.0, &spec(rho)).unwrap();
            assert!(v.norm() <= 1e-8, "rho={rho}: {v}");
        }
    }

    #[test]
    fn psi_matches_frozen_values() {
        let v = psi(&p(0.0), 1.0, &spec(0.0)).unwrap();
        assert!((v.re - 3.4859430642679857982).abs() < 1e-9, "{v}");
        assert!(v.im.abs() < 1e-10);
        let v = psi(&p(1.0), 2.0, &spec(1.0)).unwrap();
        assert!((v.re - 8.1255902777211730669).abs() < 1e-9, "{v}");
        let v = psi(&p(0.0), -2.0, &spec(0.0)).unwrap();
        assert!((v.re - -5.2586601308406936288).abs() < 1e-9, "{v}");
    }

    #[test]
    fn psi_is_odd() {
        for &rho in &[0.0, 1.0, 2.54] {
            let params = p(rho);
            let q = spec(rho);
            for &y in &[1.0, 3.0, 7.0] {
                let plus = psi(&params, y, &q).unwrap();
                let minus = psi(&params, -y, &q).unwrap();
                assert!(
                    (plus + minus).norm() <= 1e-10 * (1.0 + plus.norm()),
                    "rho={rho} y={y}"
                );
            }
        }
    }

    #[test]
    fn psi_moment_closed_forms_at_zero() {
        // First derivative at 0: 2 sqrt(pi) (each ray pair contributes a
        // Gaussian-type moment).
        let m1 = psi_moment(&p(0.0), 0.0, 1, &spec(0.0)).unwrap();
        assert!((m1.re - 3.5449077018110320546).abs() < 1e-12, "{m1}");
        assert!(m1.im.abs() < 1e-12);
        // Second derivative of an odd function vanishes at 0.
        let m2 = psi_moment(&p(0.0), 0.0, 2, &spec(0.0)).unwrap();
        assert!(m2.norm() < 1e-12, "{m2}");
        assert!(psi_moment(&p(0.0), 0.0, 5, &spec(0.0)).is_err());
    }

    #[test]
    fn psi_satisfies_third_order_ode() {
        // psi''' = -y psi + rho psi': the ray-derivative identity, with the
        // origin boundary term cancelling across the four rays.
        for &rho in &[0.0, 1.0, -1.31] {
            let params = p(rho);
            let q = spec(rho);
            let mut y = -5.0;
            while y <= 5.0 {
                let f0 = psi(&params, y, &q).unwrap();
                let f1 = psi_moment(&params, y, 1, &q).unwrap();
                let f3 = psi_moment(&params, y, 3, &q).unwrap();
                let residual = (f3 + f0 * y - f1 * rho).norm();
                assert!(
                    residual <= 1e-10 * (1.0 + f0.norm()),
                    "rho={rho} y={y}: residual {residual}"
                );
                y += 0.5;
            }
        }
    }

    #[test]
    fn psi_rejects_arguments_beyond_the_cut() {
        // The ray integrand at |y| = 60 is still enormous at the default cut.
        match psi(&p(0.0), 60.0, &spec(0.0)) {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
        // |y| = 40 is inside the designed coverage.
        psi(&p(0.0), 40.0, &spec(0.0)).unwrap();
    }

    #[test]
    fn inner_quadrature_converges_under_refinement() {
        let params = p(0.0);
        let coarse = spec(0.0);
        let mut fine = coarse;
        fine.inner_nodes = 1024;
        for &u in &[0.5, 1.0, 3.0] {
            let a = phi(&params, u, &coarse).unwrap();
            let b = phi(&params, u, &fine).unwrap();
            assert!((a - b).norm() <= 1e-8 * b.norm().max(1.0));
            let a = psi(&params, u, &coarse).unwrap();
            let b = psi(&params, u, &fine).unwrap();
            assert!((a - b).norm() <= 1e-8 * b.norm().max(1.0));
        }
    }

    #[test]
    fn schemes_agree_where_both_are_spectral() {
        // phi decays at both endpoints for any argument; the psi rays are
        // even in r at y = 0. In both cases the trapezoid rule converges
        // superalgebraically and must agree with Gauss panels.
        let params = p(1.0);
        let gl = spec(1.0);
        let mut tz = gl;
        tz.scheme = Scheme::Trapezoid;
        tz.inner_nodes = 2048;
        let a = psi(&params, 0.0, &gl).unwrap();
        let b = psi(&params, 0.0, &tz).unwrap();
        assert!((a - b).norm() <= 1e-8);
        let a = phi(&params, 1.0, &gl).unwrap();
        let b = phi(&params, 1.0, &tz).unwrap();
        assert!((a - b).norm() <= 1e-8 * a.norm());
    }

    #[test]
    fn oscillation_phase_is_monotone_and_solvable() {
        let (x, y) = (0.0, 0.0);
        let mut prev = oscillation_phase(x, y, 0.0);
        for i in 1..=300 {
            let z = 0.1 * i as f64;
            let cur = oscillation_phase(x, y, z);
            assert!(cur >= prev);
            prev = cur;
        }
        let target = oscillation_phase(x, y, 17.3);
        let z = solve_phase(x, y, target, 0.0, 30.0);
        assert!((z - 17.3).abs() < 1e-9);
    }

    #[test]
    fn kernel_diag_matches_frozen_high_precision_values() {
        // Independently computed at 30-digit working precision.
        let anchors: [(f64, f64, f64); 7] = [
            (0.0, 0.0, 0.1556123239481241562),
            (1.0, 0.0, 0.2522908194207933811),
            (2.0, 0.0, 0.3765835024410093868),
            (4.0, 0.0, 0.4417982151279465444),
            (0.0, 1.0, 0.0633256553114992552),
            (2.0, 1.0, 0.2744937161242749940),
            (0.0, 2.54, 0.0077808929420700616),
        ];
        for (x, rho, expect) in anchors {
            let est = kernel_diag(&p(rho), x, &spec(rho)).unwrap();
            assert!(
                (est.value.re - expect).abs() <= 1e-12 * expect,
                "x={x} rho={rho}: {} vs {expect}",
                est.value.re
            );
        }
    }

    #[test]
    fn kernel_diag_is_real_nonnegative_and_stable() {
        let params = p(0.0);
        let q = spec(0.0);
        for &x in &[0.0, 1.0, 2.0, 4.0, 8.0, 12.0] {
            let est = kernel_diag(&params, x, &q).unwrap();
            assert!(
                est.value.im.abs() <= 1e-6 * (1.0 + est.value.norm()),
                "x={x}: imaginary part {}",
                est.value.im
            );
            assert!(est.value.re >= -1e-6, "x={x}: negative density {}", est.value.re);
            assert!(est.error_estimate < 1e-6, "x={x}: error {}", est.error_estimate);
        }
    }

    #[test]
    fn kernel_diag_is_even() {
        for &rho in &[0.0, 1.0, -3.24] {
            let params = p(rho);
            let q = spec(rho);
            for &x in &[1.0, 4.0, 9.5] {
                let plus = kernel_diag(&params, x, &q).unwrap().value;
                let minus = kernel_diag(&params, -x, &q).unwrap().value;
                assert!(
                    (plus - minus).norm() <= 1e-11 * (1.0 + plus.norm()),
                    "rho={rho} x={x}: asymmetry {}",
                    (plus - minus).norm()
                );
            }
        }
    }

    #[test]
    fn kernel_diag_grows_with_the_asymptotic_density() {
        // Compare K(x,x) against mu'(x)/2 at x = 4.
        let params = p(0.0);
        let q = spec(0.0);
        let k4 = kernel_diag(&params, 4.0, &q).unwrap().value.re;
        let k1 = kernel_diag(&params, 1.0, &q).unwrap().value.re;
        assert!(k4 > k1);
        let half_density = params.mu_prime(4.0).unwrap() / 2.0;
        let ratio = k4 / half_density;
        assert!(ratio > 0.95 && ratio < 1.05, "ratio {ratio}");
    }

    #[test]
    fn kernel_diag_rejects_noise_dominated_arguments() {
        match kernel_diag(&p(0.0), 30.0, &spec(0.0)) {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn kernel_value_agrees_with_the_derivative_form_off_diagonal() {
        // Where the half-line integral converges, the tail-averaged value
        // and the boundary-term form must coincide: this pins the overall
        // sign and validates both code paths against each other.
        let params = p(0.0);
        let q = spec(0.0);
        for &(x, y) in &[(6.0, 0.0), (8.0, 2.0)] {
            let est = kernel_value(&params, x, y, &q).unwrap();
            assert!(est.value.im.abs() <= 1e-6, "({x},{y}): im {}", est.value.im);
            assert!(est.error_estimate <= 5e-5, "({x},{y})");
            let p0 = phi_moment(&params, x, 0, &q).unwrap();
            let p1 = phi_moment(&params, x, 1, &q).unwrap();
            let p2 = phi_moment(&params, x, 2, &q).unwrap();
            let q0 = psi_moment(&params, y, 0, &q).unwrap();
            let q1 = psi_moment(&params, y, 1, &q).unwrap();
            let q2 = psi_moment(&params, y, 2, &q).unwrap();
            let norm = 1.0 / (4.0 * std::f64::consts::PI * std::f64::consts::PI);
            let closed =
                (p2 * q0 - p1 * q1 + p0 * q2 - p0 * q0 * params.rho()) / (x - y) * -norm;
            assert!(
                (est.value - closed).norm() <= 1e-4,
                "({x},{y}): tail-averaged {} vs boundary form {}",
                est.value.re,
                closed.re
            );
        }
    }

    #[test]
    fn kernel_value_reports_tail_drift_near_the_diagonal() {
        // On the diagonal the envelopes cancel and the window averages
        // drift; the gate must refuse to return a value.
        let params = p(0.0);
        let q = spec(0.0);
        for &(x, y) in &[(0.0, 0.0), (4.0, 0.0)] {
            match kernel_value(&params, x, y, &q) {
                Err(Error::Convergence { spread, tolerance, .. }) => {
                    assert!(spread > tolerance, "({x},{y})");
                }
                other => panic!("({x},{y}): expected convergence error, got {other:?}"),
            }
        }
    }

    #[test]
    fn kernel_requires_enough_oscillation_for_averaging() {
        let params = p(0.0);
        let mut q = spec(0.0);
        q.outer_cutoff = 2.0;
        match kernel_value(&params, 0.0, 0.0, &q) {
            Err(Error::Convergence { .. }) => {}
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn mean_count_is_monotone_and_tracks_mu() {
        let params = p(0.0);
        let q = spec(0.0);
        let m2 = mean_count(&params, 2.0, &q).unwrap();
        let m4 = mean_count(&params, 4.0, &q).unwrap();
        assert!(m4 >= m2);
        // Independently computed at 30-digit precision: 2.61268217710905.
        assert!((m4 - 2.6126821771090488).abs() <= 5e-3, "mean_count {m4}");
        let mu4 = params.mu(4.0).unwrap();
        assert!((m4 - mu4).abs() <= 1.0, "mean_count {m4} vs mu {mu4}");
        let mu2 = params.mu(2.0).unwrap();
        assert!((m2 - mu2).abs() <= 1.0, "mean_count {m2} vs mu {mu2}");
    }

    #[test]
    fn mean_count_rejects_bad_radii() {
        assert!(mean_count(&p(0.0), 0.0, &spec(0.0)).is_err());
        assert!(mean_count(&p(0.0), -1.0, &spec(0.0)).is_err());
    }
}
