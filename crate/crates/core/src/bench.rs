//! Analytic test functions at their native dimensionality, each with a
//! domain box, a known minimum and an estimated maximum over the box.
//!
//! Every function is written once over a generic scalar; evaluating it on
//! dual numbers gives exact gradients. Functions with kinks near their
//! optimum use central differences instead.

use std::f64::consts::{E, PI};
use std::sync::OnceLock;

use num_dual::{Dual64, DualNum};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PopError, Result};
use crate::objective::{central_difference, DomainBox, Objective};
use crate::rng::seeded;

/// Seed of the random shift applied to the Halton sample behind `y_max`.
pub const YMAX_SEED: u64 = 20_240_601;
pub const YMAX_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    ManyLocalMinima,
    Bowl,
    Plate,
    Valley,
    RidgeDrop,
    Other,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::ManyLocalMinima => "many-local-minima",
            Category::Bowl => "bowl",
            Category::Plate => "plate",
            Category::Valley => "valley",
            Category::RidgeDrop => "ridge-drop",
            Category::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

pub trait Scalar: DualNum<Primitive = f64> + Copy {}
impl<T: DualNum<Primitive = f64> + Copy> Scalar for T {}

#[inline]
fn k<T: Scalar>(v: f64) -> T {
    T::from(v)
}

fn sum<T: Scalar>(it: impl Iterator<Item = T>) -> T {
    it.fold(k(0.0), |a, b| a + b)
}

// ---- many local minima ----

fn ackley<T: Scalar>(x: &[T]) -> T {
    let d = x.len() as f64;
    let s2 = sum(x.iter().map(|v| *v * *v));
    let sc = sum(x.iter().map(|v| (*v * (2.0 * PI)).cos()));
    -((s2 / d).sqrt() * -0.2).exp() * 20.0 - (sc / d).exp() + 20.0 + E
}

fn rastrigin<T: Scalar>(x: &[T]) -> T {
    sum(x.iter().map(|v| *v * *v - (*v * (2.0 * PI)).cos() * 10.0)) + 10.0 * x.len() as f64
}

fn griewank<T: Scalar>(x: &[T]) -> T {
    let s = sum(x.iter().map(|v| *v * *v)) / 4000.0;
    let p = x.iter().enumerate().fold(k::<T>(1.0), |acc, (i, v)| acc * (*v / ((i + 1) as f64).sqrt()).cos());
    s - p + 1.0
}

fn levy<T: Scalar>(x: &[T]) -> T {
    let w: Vec<T> = x.iter().map(|v| (*v - 1.0) / 4.0 + 1.0).collect();
    let n = w.len();
    let first = (w[0] * PI).sin().powi(2);
    let mid = sum(w[..n - 1].iter().map(|wi| (*wi - 1.0).powi(2) * ((*wi * PI + 1.0).sin().powi(2) * 10.0 + 1.0)));
    let last = (w[n - 1] - 1.0).powi(2) * ((w[n - 1] * (2.0 * PI)).sin().powi(2) + 1.0);
    first + mid + last
}

fn schwefel<T: Scalar>(x: &[T]) -> T {
    -sum(x.iter().map(|v| *v * v.abs().sqrt().sin())) + 418.9829 * x.len() as f64
}

fn drop_wave<T: Scalar>(x: &[T]) -> T {
    let r2 = x[0] * x[0] + x[1] * x[1];
    -((r2.sqrt() * 12.0).cos() + 1.0) / (r2 * 0.5 + 2.0)
}

fn eggholder<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    -(b + 47.0) * (b + a / 2.0 + 47.0).abs().sqrt().sin() - a * (a - (b + 47.0)).abs().sqrt().sin()
}

fn bukin_n6<T: Scalar>(x: &[T]) -> T {
    (x[1] - x[0] * x[0] * 0.01).abs().sqrt() * 100.0 + (x[0] + 10.0).abs() * 0.01
}

fn cross_in_tray<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    let r = (a * a + b * b).sqrt();
    let inner = (a.sin() * b.sin() * (-(r / PI) + 100.0).abs().exp()).abs() + 1.0;
    -inner.powf(0.1) * 1e-4
}

fn holder_table<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    let r = (a * a + b * b).sqrt();
    -(a.sin() * b.cos() * (-(r / PI) + 1.0).abs().exp()).abs()
}

fn levy_n13<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    (a * (3.0 * PI)).sin().powi(2)
        + (a - 1.0).powi(2) * ((b * (3.0 * PI)).sin().powi(2) + 1.0)
        + (b - 1.0).powi(2) * ((b * (2.0 * PI)).sin().powi(2) + 1.0)
}

fn schaffer_n2<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    let den = ((a * a + b * b) * 0.001 + 1.0).powi(2);
    ((a * a - b * b).sin().powi(2) - 0.5) / den + 0.5
}

fn schaffer_n4<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    let den = ((a * a + b * b) * 0.001 + 1.0).powi(2);
    ((a * a - b * b).abs().sin().cos().powi(2) - 0.5) / den + 0.5
}

fn shubert<T: Scalar>(x: &[T]) -> T {
    let term = |v: T| sum((1..=5).map(|i| (v * (i + 1) as f64 + i as f64).cos() * i as f64));
    term(x[0]) * term(x[1])
}

const LANGERMANN_A: [[f64; 2]; 5] = [[3.0, 5.0], [5.0, 2.0], [2.0, 1.0], [1.0, 4.0], [7.0, 9.0]];
const LANGERMANN_C: [f64; 5] = [1.0, 2.0, 5.0, 2.0, 3.0];

fn langermann<T: Scalar>(x: &[T]) -> T {
    sum(LANGERMANN_A.iter().zip(LANGERMANN_C).map(|(a, c)| {
        let s = (x[0] - a[0]).powi(2) + (x[1] - a[1]).powi(2);
        (-s / PI).exp() * (s * PI).cos() * c
    }))
}

fn gramacy_lee<T: Scalar>(x: &[T]) -> T {
    let v = x[0];
    (v * (10.0 * PI)).sin() / (v * 2.0) + (v - 1.0).powi(4)
}

// ---- bowl ----

fn sphere<T: Scalar>(x: &[T]) -> T {
    sum(x.iter().map(|v| *v * *v))
}

fn sum_squares<T: Scalar>(x: &[T]) -> T {
    sum(x.iter().enumerate().map(|(i, v)| *v * *v * (i + 1) as f64))
}

fn bohachevsky1<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    a * a + b * b * 2.0 - (a * (3.0 * PI)).cos() * 0.3 - (b * (4.0 * PI)).cos() * 0.4 + 0.7
}

fn bohachevsky2<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    a * a + b * b * 2.0 - (a * (3.0 * PI)).cos() * (b * (4.0 * PI)).cos() * 0.3 + 0.3
}

fn bohachevsky3<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    a * a + b * b * 2.0 - (a * (3.0 * PI) + b * (4.0 * PI)).cos() * 0.3 + 0.3
}

fn rotated_hyper_ellipsoid<T: Scalar>(x: &[T]) -> T {
    sum((0..x.len()).map(|i| sum(x[..=i].iter().map(|v| *v * *v))))
}

fn sum_different_powers<T: Scalar>(x: &[T]) -> T {
    sum(x.iter().enumerate().map(|(i, v)| v.abs().powi(i as i32 + 2)))
}

fn trid<T: Scalar>(x: &[T]) -> T {
    sum(x.iter().map(|v| (*v - 1.0).powi(2))) - sum(x.windows(2).map(|w| w[0] * w[1]))
}

fn perm0<T: Scalar>(x: &[T]) -> T {
    let d = x.len();
    let beta = 10.0;
    sum((1..=d).map(|i| {
        sum((1..=d).map(|j| (x[j - 1].powi(i as i32) - 1.0 / (j as f64).powi(i as i32)) * (j as f64 + beta))).powi(2)
    }))
}

// ---- plate ----

fn booth<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    (a + b * 2.0 - 7.0).powi(2) + (a * 2.0 + b - 5.0).powi(2)
}

fn matyas<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    (a * a + b * b) * 0.26 - a * b * 0.48
}

fn mccormick<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    (a + b).sin() + (a - b).powi(2) - a * 1.5 + b * 2.5 + 1.0
}

fn zakharov<T: Scalar>(x: &[T]) -> T {
    let s = sum(x.iter().enumerate().map(|(i, v)| *v * (0.5 * (i + 1) as f64)));
    sum(x.iter().map(|v| *v * *v)) + s.powi(2) + s.powi(4)
}

const POWER_SUM_B: [f64; 4] = [8.0, 18.0, 44.0, 114.0];

fn power_sum<T: Scalar>(x: &[T]) -> T {
    sum((1..=4).map(|i| (sum(x.iter().map(|v| v.powi(i as i32))) - POWER_SUM_B[i - 1]).powi(2)))
}

// ---- valley ----

fn rosenbrock<T: Scalar>(x: &[T]) -> T {
    sum(x.windows(2).map(|w| (w[1] - w[0] * w[0]).powi(2) * 100.0 + (w[0] - 1.0).powi(2)))
}

fn six_hump_camel<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    (-(a * a) * 2.1 + a.powi(4) / 3.0 + 4.0) * a * a + a * b + (b * b * 4.0 - 4.0) * b * b
}

fn three_hump_camel<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    a * a * 2.0 - a.powi(4) * 1.05 + a.powi(6) / 6.0 + a * b + b * b
}

fn dixon_price<T: Scalar>(x: &[T]) -> T {
    (x[0] - 1.0).powi(2) + sum((1..x.len()).map(|i| (x[i] * x[i] * 2.0 - x[i - 1]).powi(2) * (i + 1) as f64))
}

// ---- steep ridges / drops ----

fn easom<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    -a.cos() * b.cos() * (-(a - PI).powi(2) - (b - PI).powi(2)).exp()
}

fn michalewicz<T: Scalar>(x: &[T]) -> T {
    -sum(x.iter().enumerate().map(|(i, v)| v.sin() * (*v * *v * ((i + 1) as f64 / PI)).sin().powi(20)))
}

fn de_jong5<T: Scalar>(x: &[T]) -> T {
    const P: [f64; 5] = [-32.0, -16.0, 0.0, 16.0, 32.0];
    let s = sum((0..25).map(|i| {
        let (a1, a2) = (P[i % 5], P[i / 5]);
        ((x[0] - a1).powi(6) + (x[1] - a2).powi(6) + (i + 1) as f64).recip()
    }));
    (s + 0.002).recip()
}

// ---- other ----

fn branin<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    let (b_, c, r, s, t) = (5.1 / (4.0 * PI * PI), 5.0 / PI, 6.0, 10.0, 1.0 / (8.0 * PI));
    (b - a * a * b_ + a * c - r).powi(2) + a.cos() * (s * (1.0 - t)) + s
}

fn beale<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    (-a + a * b + 1.5).powi(2) + (-a + a * b * b + 2.25).powi(2) + (-a + a * b.powi(3) + 2.625).powi(2)
}

fn goldstein_price<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    let f1 = (a + b + 1.0).powi(2) * (a * -14.0 + a * a * 3.0 - b * 14.0 + a * b * 6.0 + b * b * 3.0 + 19.0) + 1.0;
    let f2 =
        (a * 2.0 - b * 3.0).powi(2) * (a * -32.0 + a * a * 12.0 + b * 48.0 - a * b * 36.0 + b * b * 27.0 + 18.0) + 30.0;
    f1 * f2
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN3_A: [[f64; 3]; 4] = [[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]];
const HARTMANN3_P: [[f64; 3]; 4] =
    [[0.3689, 0.1170, 0.2673], [0.4699, 0.4387, 0.7470], [0.1091, 0.8732, 0.5547], [0.0381, 0.5743, 0.8828]];
const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

fn hartmann<T: Scalar, const D: usize>(x: &[T], a: &[[f64; D]; 4], p: &[[f64; D]; 4]) -> T {
    -sum((0..4).map(|i| {
        let inner = sum((0..D).map(|j| (x[j] - p[i][j]).powi(2) * a[i][j]));
        (-inner).exp() * HARTMANN_ALPHA[i]
    }))
}

fn hartmann3<T: Scalar>(x: &[T]) -> T {
    hartmann(x, &HARTMANN3_A, &HARTMANN3_P)
}

fn hartmann6<T: Scalar>(x: &[T]) -> T {
    hartmann(x, &HARTMANN6_A, &HARTMANN6_P)
}

fn styblinski_tang<T: Scalar>(x: &[T]) -> T {
    sum(x.iter().map(|v| v.powi(4) - *v * *v * 16.0 + *v * 5.0)) * 0.5
}

const SHEKEL_B: [f64; 10] = [0.1, 0.2, 0.2, 0.4, 0.4, 0.6, 0.3, 0.7, 0.5, 0.5];
const SHEKEL_C: [[f64; 10]; 4] = [
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
];

fn shekel<T: Scalar>(x: &[T]) -> T {
    -sum((0..10).map(|i| (sum((0..4).map(|j| (x[j] - SHEKEL_C[j][i]).powi(2))) + SHEKEL_B[i]).recip()))
}

fn forrester<T: Scalar>(x: &[T]) -> T {
    let v = x[0];
    (v * 6.0 - 2.0).powi(2) * (v * 12.0 - 4.0).sin()
}

fn colville<T: Scalar>(x: &[T]) -> T {
    let (a, b, c, d) = (x[0], x[1], x[2], x[3]);
    (a * a - b).powi(2) * 100.0
        + (a - 1.0).powi(2)
        + (c - 1.0).powi(2)
        + (c * c - d).powi(2) * 90.0
        + ((b - 1.0).powi(2) + (d - 1.0).powi(2)) * 10.1
        + (b - 1.0) * (d - 1.0) * 19.8
}

fn powell<T: Scalar>(x: &[T]) -> T {
    let (a, b, c, d) = (x[0], x[1], x[2], x[3]);
    (a + b * 10.0).powi(2) + (c - d).powi(2) * 5.0 + (b - c * 2.0).powi(4) + (a - d).powi(4) * 10.0
}

type RealFn = fn(&[f64]) -> f64;
type DualFn = fn(&[Dual64]) -> Dual64;

/// Static description of one catalog member.
struct Entry {
    name: &'static str,
    category: Category,
    lower: &'static [f64],
    upper: &'static [f64],
    argmin: &'static [f64],
    y_min: f64,
    mode: GradientMode,
    real: RealFn,
    dual: DualFn,
}

macro_rules! entry {
    ($name:literal, $f:ident, $cat:ident, $lo:expr, $hi:expr, $argmin:expr, $ymin:expr) => {
        entry!($name, $f, $cat, $lo, $hi, $argmin, $ymin, Analytic)
    };
    ($name:literal, $f:ident, $cat:ident, $lo:expr, $hi:expr, $argmin:expr, $ymin:expr, $mode:ident) => {
        Entry {
            name: $name,
            category: Category::$cat,
            lower: &$lo,
            upper: &$hi,
            argmin: &$argmin,
            y_min: $ymin,
            mode: GradientMode::$mode,
            real: $f::<f64>,
            dual: $f::<Dual64>,
        }
    };
}

// Minimizers off the integer lattice were refined numerically from the
// published values; minimum values are the function values there.
fn entries() -> Vec<Entry> {
    vec![
        entry!("ackley", ackley, ManyLocalMinima, [-32.768; 2], [32.768; 2], [0.0; 2], 0.0),
        entry!("rastrigin", rastrigin, ManyLocalMinima, [-5.12; 2], [5.12; 2], [0.0; 2], 0.0),
        entry!("griewank", griewank, ManyLocalMinima, [-600.0; 2], [600.0; 2], [0.0; 2], 0.0),
        entry!("levy", levy, ManyLocalMinima, [-10.0; 2], [10.0; 2], [1.0; 2], 0.0),
        entry!(
            "schwefel",
            schwefel,
            ManyLocalMinima,
            [-500.0; 2],
            [500.0; 2],
            [420.968_746_482_375_4, 420.968_746_353_174_54],
            2.545_513_234_508_689_5e-5,
            FiniteDifference
        ),
        entry!("drop_wave", drop_wave, ManyLocalMinima, [-5.12; 2], [5.12; 2], [0.0; 2], -1.0),
        entry!(
            "eggholder",
            eggholder,
            ManyLocalMinima,
            [-512.0; 2],
            [512.0; 2],
            [512.0, 404.231_807_683_644_7],
            -959.640_662_720_843_2,
            FiniteDifference
        ),
        entry!("bukin_n6", bukin_n6, ManyLocalMinima, [-15.0, -3.0], [-5.0, 3.0], [-10.0, 1.0], 0.0, FiniteDifference),
        entry!(
            "cross_in_tray",
            cross_in_tray,
            ManyLocalMinima,
            [-10.0; 2],
            [10.0; 2],
            [1.349_406_633_055_875_8, 1.349_406_599_177_794_2],
            -2.062_611_870_822_739_7,
            FiniteDifference
        ),
        entry!(
            "holder_table",
            holder_table,
            ManyLocalMinima,
            [-10.0; 2],
            [10.0; 2],
            [8.055_023_466_339_607, 9.664_590_027_738_118],
            -19.208_502_567_886_75,
            FiniteDifference
        ),
        entry!("levy_n13", levy_n13, ManyLocalMinima, [-10.0; 2], [10.0; 2], [1.0; 2], 0.0),
        entry!("schaffer_n2", schaffer_n2, ManyLocalMinima, [-100.0; 2], [100.0; 2], [0.0; 2], 0.0),
        entry!(
            "schaffer_n4",
            schaffer_n4,
            ManyLocalMinima,
            [-100.0; 2],
            [100.0; 2],
            [-2.648_716_372_680_750_6e-8, 1.253_131_828_927_371_4],
            0.292_578_632_035_980_45,
            FiniteDifference
        ),
        entry!(
            "shubert",
            shubert,
            ManyLocalMinima,
            [-10.0; 2],
            [10.0; 2],
            [-7.083_506_409_397_382, 4.858_056_877_022_195],
            -186.730_908_831_023_92
        ),
        entry!(
            "langermann",
            langermann,
            ManyLocalMinima,
            [0.0; 2],
            [10.0; 2],
            [2.793_402_207_208_67, 1.597_232_502_429_644_5],
            -4.155_809_291_847_786_5
        ),
        entry!(
            "gramacy_lee",
            gramacy_lee,
            ManyLocalMinima,
            [0.5],
            [2.5],
            [0.548_563_444_575_899_1],
            -0.869_011_134_989_499_9
        ),
        entry!("sphere", sphere, Bowl, [-5.12; 2], [5.12; 2], [0.0; 2], 0.0),
        entry!("sum_squares", sum_squares, Bowl, [-10.0; 2], [10.0; 2], [0.0; 2], 0.0),
        entry!("bohachevsky1", bohachevsky1, Bowl, [-100.0; 2], [100.0; 2], [0.0; 2], 0.0),
        entry!("bohachevsky2", bohachevsky2, Bowl, [-100.0; 2], [100.0; 2], [0.0; 2], 0.0),
        entry!("bohachevsky3", bohachevsky3, Bowl, [-100.0; 2], [100.0; 2], [0.0; 2], 0.0),
        entry!("rotated_hyper_ellipsoid", rotated_hyper_ellipsoid, Bowl, [-65.536; 3], [65.536; 3], [0.0; 3], 0.0),
        entry!("sum_different_powers", sum_different_powers, Bowl, [-1.0; 2], [1.0; 2], [0.0; 2], 0.0),
        entry!("trid", trid, Bowl, [-36.0; 6], [36.0; 6], [6.0, 10.0, 12.0, 12.0, 10.0, 6.0], -50.0),
        entry!("perm0", perm0, Bowl, [-2.0; 2], [2.0; 2], [1.0, 0.5], 0.0),
        entry!("booth", booth, Plate, [-10.0; 2], [10.0; 2], [1.0, 3.0], 0.0),
        entry!("matyas", matyas, Plate, [-10.0; 2], [10.0; 2], [0.0; 2], 0.0),
        entry!(
            "mccormick",
            mccormick,
            Plate,
            [-1.5, -3.0],
            [4.0, 4.0],
            [-0.547_197_551_484_209_7, -1.547_197_539_319_677],
            -1.913_222_954_981_036_7
        ),
        entry!("zakharov", zakharov, Plate, [-5.0; 2], [10.0; 2], [0.0; 2], 0.0),
        entry!("power_sum", power_sum, Plate, [0.0; 4], [4.0; 4], [1.0, 2.0, 2.0, 3.0], 0.0),
        entry!("rosenbrock", rosenbrock, Valley, [-5.0; 2], [10.0; 2], [1.0; 2], 0.0),
        entry!(
            "six_hump_camel",
            six_hump_camel,
            Valley,
            [-3.0, -2.0],
            [3.0, 2.0],
            [0.089_842_013_935_185_4, -0.712_656_405_820_822_5],
            -1.031_628_453_489_877_4
        ),
        entry!("three_hump_camel", three_hump_camel, Valley, [-5.0; 2], [5.0; 2], [0.0; 2], 0.0),
        entry!("dixon_price", dixon_price, Valley, [-10.0; 2], [10.0; 2], [1.0, std::f64::consts::FRAC_1_SQRT_2], 0.0),
        entry!("easom", easom, RidgeDrop, [-100.0; 2], [100.0; 2], [PI, PI], -1.0),
        entry!(
            "michalewicz",
            michalewicz,
            RidgeDrop,
            [0.0; 2],
            [PI; 2],
            [2.202_905_519_983_487_7, 1.570_796_327_224_075],
            -1.801_303_410_098_553_4
        ),
        entry!(
            "de_jong5",
            de_jong5,
            RidgeDrop,
            [-65.536; 2],
            [65.536; 2],
            [-31.978_333_379_567_83, -31.978_334_007_870_856],
            0.998_003_837_794_449_8
        ),
        entry!("branin", branin, Other, [-5.0, 0.0], [10.0, 15.0], [PI, 2.275], 0.397_887_357_729_738_16),
        entry!("beale", beale, Other, [-4.5; 2], [4.5; 2], [3.0, 0.5], 0.0),
        entry!("goldstein_price", goldstein_price, Other, [-2.0; 2], [2.0; 2], [0.0, -1.0], 3.0),
        entry!(
            "hartmann3",
            hartmann3,
            Other,
            [0.0; 3],
            [1.0; 3],
            [0.114_588_881_195_379_22, 0.555_648_895_173_644_1, 0.852_546_983_610_887_4],
            -3.862_779_787_332_662_8
        ),
        entry!(
            "hartmann6",
            hartmann6,
            Other,
            [0.0; 6],
            [1.0; 6],
            [
                0.201_689_508_784_659_35,
                0.150_010_693_129_116_25,
                0.476_873_972_624_845_65,
                0.275_332_427_118_824_7,
                0.311_651_615_988_359_33,
                0.657_300_533_832_674_6
            ],
            -3.322_368_011_415_514_7
        ),
        entry!(
            "styblinski_tang",
            styblinski_tang,
            Other,
            [-5.0; 2],
            [5.0; 2],
            [-2.903_534_026_709_805_5, -2.903_534_032_395_590_7],
            -78.332_331_407_542_85
        ),
        entry!(
            "shekel",
            shekel,
            Other,
            [0.0; 4],
            [10.0; 4],
            [4.000_746_866_658_956, 3.999_509_480_867_588_6, 4.000_746_866_997_999, 3.999_509_482_242_383_6],
            -10.536_443_153_483_53
        ),
        entry!("forrester", forrester, Other, [0.0], [1.0], [0.757_248_757_351_039_2], -6.020_740_055_767_083),
        entry!("colville", colville, Other, [-10.0; 4], [10.0; 4], [1.0; 4], 0.0),
        entry!("powell", powell, Other, [-4.0; 4], [5.0; 4], [0.0; 4], 0.0),
    ]
}

/// One catalog function. Implements [`Objective`].
#[derive(Clone)]
pub struct BenchmarkFunction {
    pub name: &'static str,
    pub category: Category,
    pub domain: DomainBox,
    pub argmin: Vec<f64>,
    pub y_min: f64,
    pub y_max: f64,
    pub y_max_argmax: Vec<f64>,
    pub gradient_mode: GradientMode,
    real: RealFn,
    dual: DualFn,
}

impl std::fmt::Debug for BenchmarkFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BenchmarkFunction")
            .field("name", &self.name)
            .field("dimension", &self.domain.dim())
            .field("y_min", &self.y_min)
            .field("y_max", &self.y_max)
            .finish()
    }
}

impl BenchmarkFunction {
    /// Gradient from dual numbers, regardless of the configured mode.
    pub fn dual_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut xs: Vec<Dual64> = x.iter().map(|v| Dual64::new(*v, 0.0)).collect();
        (0..x.len())
            .map(|d| {
                xs[d].eps = 1.0;
                let g = (self.dual)(&xs).eps;
                xs[d].eps = 0.0;
                g
            })
            .collect()
    }

    /// Central differences with `h = 1e-6 * width` per coordinate.
    pub fn fd_gradient(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = (0..x.len()).map(|d| 1e-6 * self.domain.width(d)).collect();
        central_difference(self.real, x, &h)
    }
}

impl Objective for BenchmarkFunction {
    fn dimension(&self) -> usize {
        self.domain.dim()
    }

    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.real)(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self.gradient_mode {
            GradientMode::Analytic => {
                let g = self.dual_gradient(x);
                // e.g. sqrt at 0: fall back rather than hand out NaN
                if g.iter().all(|v| v.is_finite()) {
                    g
                } else {
                    self.fd_gradient(x)
                }
            }
            GradientMode::FiniteDifference => self.fd_gradient(x),
        }
    }
}

/// Estimated maximum of a function over its box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YmaxEstimate {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub points: usize,
    pub seed: u64,
}

const PRIMES: [u8; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Point `i` of a randomly shifted Halton sequence in the box.
fn halton_point(domain: &DomainBox, i: usize, shift: &[f64]) -> Vec<f64> {
    (0..domain.dim())
        .map(|d| {
            let u = (halton::number(PRIMES[d], i + 1) + shift[d]).fract();
            domain.lower[d] + u * domain.width(d)
        })
        .collect()
}

/// Projected gradient ascent with step halving, in box-width units.
fn local_ascent(f: &dyn Objective, mut x: Vec<f64>, iters: usize) -> (Vec<f64>, f64) {
    let domain = f.domain().clone();
    let mut fx = f.value(&x);
    for _ in 0..iters {
        let g = f.gradient(&x);
        let dir: Vec<f64> = g.iter().enumerate().map(|(d, v)| v * domain.width(d)).collect();
        let norm = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        let mut step = 0.1;
        let mut moved = false;
        for _ in 0..40 {
            let mut trial: Vec<f64> =
                x.iter().zip(&dir).enumerate().map(|(d, (xi, di))| xi + step * di / norm * domain.width(d)).collect();
            domain.clip(&mut trial);
            let ft = f.value(&trial);
            if ft > fx {
                x = trial;
                fx = ft;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (x, fx)
}

/// Maximum over a shifted Halton sample of `points` points plus the box
/// corners, refined by local ascent from the 10 best candidates.
pub fn estimate_ymax(f: &dyn Objective, points: usize, seed: u64) -> Result<YmaxEstimate> {
    let domain = f.domain().clone();
    domain.validate()?;
    let dim = domain.dim();
    if dim > PRIMES.len() {
        return Err(PopError::Usage(format!("y_max estimation supports up to {} dimensions", PRIMES.len())));
    }
    let mut rng = seeded(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::with_capacity(points + (1 << dim.min(10)));
    for i in 0..points {
        let x = halton_point(&domain, i, &shift);
        candidates.push((f.value(&x), x));
    }
    if dim <= 10 {
        for mask in 0..(1usize << dim) {
            let x: Vec<f64> =
                (0..dim).map(|d| if mask >> d & 1 == 1 { domain.upper[d] } else { domain.lower[d] }).collect();
            candidates.push((f.value(&x), x));
        }
    }
    candidates.retain(|(y, _)| y.is_finite());
    if candidates.is_empty() {
        return Err(PopError::Numerical("no finite values while estimating y_max".into()));
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut best_y, mut best_x) = candidates[0].clone();
    for (_, x) in candidates.iter().take(10) {
        let (xr, yr) = local_ascent(f, x.clone(), 100);
        if yr > best_y {
            best_y = yr;
            best_x = xr;
        }
    }
    Ok(YmaxEstimate { value: best_y, argmax: best_x, points, seed })
}

fn build() -> Vec<BenchmarkFunction> {
    entries()
        .into_iter()
        .map(|e| {
            let mut f = BenchmarkFunction {
                name: e.name,
                category: e.category,
                domain: DomainBox { lower: e.lower.to_vec(), upper: e.upper.to_vec() },
                argmin: e.argmin.to_vec(),
                y_min: e.y_min,
                y_max: f64::NAN,
                y_max_argmax: Vec::new(),
                gradient_mode: e.mode,
                real: e.real,
                dual: e.dual,
            };
            let est = estimate_ymax(&f, YMAX_POINTS, YMAX_SEED).expect("catalog boxes are finite and low-dimensional");
            f.y_max = est.value;
            f.y_max_argmax = est.argmax;
            f
        })
        .collect()
}

/// The full catalog; `y_max` is estimated once per process.
pub fn catalog() -> &'static [BenchmarkFunction] {
    static CATALOG: OnceLock<Vec<BenchmarkFunction>> = OnceLock::new();
    CATALOG.get_or_init(build)
}

pub fn get(name: &str) -> Option<&'static BenchmarkFunction> {
    catalog().iter().find(|f| f.name == name)
}

/// Serializable view of a catalog member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub category: Category,
    pub dimension: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub argmin: Vec<f64>,
    pub y_min: f64,
    pub y_max: f64,
    pub y_max_argmax: Vec<f64>,
    pub y_max_points: usize,
    pub y_max_seed: u64,
    pub gradient: GradientMode,
}

pub fn catalog_entries() -> Vec<CatalogEntry> {
    catalog()
        .iter()
        .map(|f| CatalogEntry {
            name: f.name.to_string(),
            category: f.category,
            dimension: f.domain.dim(),
            lower: f.domain.lower.clone(),
            upper: f.domain.upper.clone(),
            argmin: f.argmin.clone(),
            y_min: f.y_min,
            y_max: f.y_max,
            y_max_argmax: f.y_max_argmax.clone(),
            y_max_points: YMAX_POINTS,
            y_max_seed: YMAX_SEED,
            gradient: f.gradient_mode,
        })
        .collect()
}
