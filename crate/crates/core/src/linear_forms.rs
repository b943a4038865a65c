//! Rational linear forms `(a x + b y) / den` and the families built from them.
//!
//! Coefficients are limited to the 32-bit range; evaluation and determinants run
//! in 128-bit arithmetic and report overflow instead of wrapping.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::{Error, Result};

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn lcm(a: i128, b: i128) -> i128 {
    a / gcd(a, b) * b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct LinearForm {
    a: i64,
    b: i64,
    den: i64,
}

impl LinearForm {
    pub fn new(a: i64, b: i64, den: i64) -> Result<Self> {
        Self::from_wide(a as i128, b as i128, den as i128)
    }

    /// Integer form `a x + b y`.
    pub fn integer(a: i64, b: i64) -> Result<Self> {
        Self::new(a, b, 1)
    }

    pub fn x() -> Self {
        Self { a: 1, b: 0, den: 1 }
    }

    pub fn y() -> Self {
        Self { a: 0, b: 1, den: 1 }
    }

    fn from_wide(a: i128, b: i128, den: i128) -> Result<Self> {
        if den == 0 {
            return Err(Error::InvalidForm("zero denominator".into()));
        }
        if a == 0 && b == 0 {
            return Err(Error::InvalidForm("zero form".into()));
        }
        let sign = den.signum();
        let g = gcd(gcd(a, b), den);
        let (a, b, den) = (sign * a / g, sign * b / g, sign * den / g);
        let lim = i32::MAX as i128;
        if a.abs() > lim || b.abs() > lim || den > lim {
            return Err(Error::InvalidForm(format!("coefficients ({a},{b})/{den} exceed 32 bits")));
        }
        Ok(Self { a: a as i64, b: b as i64, den: den as i64 })
    }

    pub fn a(&self) -> i64 {
        self.a
    }

    pub fn b(&self) -> i64 {
        self.b
    }

    pub fn den(&self) -> i64 {
        self.den
    }

    /// Exact value at `(x, y)`; `Ok(None)` when the value is not an integer.
    pub fn evaluate(&self, x: i64, y: i64) -> Result<Option<i64>> {
        let num = (self.a as i128) * (x as i128) + (self.b as i128) * (y as i128);
        if num % self.den as i128 != 0 {
            return Ok(None);
        }
        i64::try_from(num / self.den as i128)
            .map(Some)
            .map_err(|_| Error::Overflow(format!("{self} at ({x},{y})")))
    }

    /// Hot-loop evaluation for arguments bounded by `2^31` in magnitude.
    #[inline]
    pub fn at(&self, x: i64, y: i64) -> Option<i64> {
        debug_assert!(x.abs() <= i32::MAX as i64 && y.abs() <= i32::MAX as i64);
        let num = self.a * x + self.b * y;
        if self.den == 1 {
            Some(num)
        } else if num % self.den == 0 {
            Some(num / self.den)
        } else {
            None
        }
    }

    /// `a_i b_j - a_j b_i` scaled by the denominators; zero iff proportional.
    pub fn cross(&self, other: &LinearForm) -> i128 {
        self.a as i128 * other.b as i128 - other.a as i128 * self.b as i128
    }

    pub fn is_proportional(&self, other: &LinearForm) -> bool {
        self.cross(other) == 0
    }

    /// Largest `|L(x, y)|` over `|x| <= wx, |y| <= wy`, rounded down.
    pub fn range_half_width(&self, wx: i64, wy: i64) -> i64 {
        (self.a.abs() * wx + self.b.abs() * wy) / self.den
    }

    /// Precomposition with `(x, y) = (m00 u + m01 v, m10 u + m11 v) / scale`.
    pub fn compose(&self, m: [[i64; 2]; 2], scale: i64) -> Result<LinearForm> {
        let (a, b) = (self.a as i128, self.b as i128);
        let na = a * m[0][0] as i128 + b * m[1][0] as i128;
        let nb = a * m[0][1] as i128 + b * m[1][1] as i128;
        Self::from_wide(na, nb, self.den as i128 * scale as i128)
    }
}

impl fmt::Display for LinearForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{},{}", self.a, self.b)
        } else {
            write!(f, "{},{}/{}", self.a, self.b, self.den)
        }
    }
}

impl FromStr for LinearForm {
    type Err = Error;

    /// Parses `a,b` or `a,b/den`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("expected `a,b` or `a,b/den`, got `{s}`"));
        let (coeffs, den) = match s.split_once('/') {
            Some((c, d)) => (c, d.trim().parse::<i64>().map_err(|_| bad())?),
            None => (s, 1),
        };
        let (a, b) = coeffs.split_once(',').ok_or_else(bad)?;
        let a = a.trim().parse::<i64>().map_err(|_| bad())?;
        let b = b.trim().parse::<i64>().map_err(|_| bad())?;
        if den <= 0 {
            return Err(Error::Parse(format!("denominator must be positive in `{s}`")));
        }
        LinearForm::new(a, b, den)
    }
}

/// Forms `L_0, ..., L_M`; `L_0` is the kernel slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FormFamily {
    forms: Vec<LinearForm>,
}

/// Which non-degeneracy hypotheses a family must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    /// Operator `T(f, g_1..g_M)(x) = sum_y f(y) k(L_0) prod g_j(L_j)`: no form may
    /// be a multiple of either coordinate, no two forms proportional.
    Operator,
    /// Scalar form `sum_{x,y} k(L_0) prod f_j(L_j)`: pairwise non-proportional.
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    Empty,
    ProportionalToX { index: usize },
    ProportionalToY { index: usize },
    ProportionalPair { first: usize, second: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty family"),
            Violation::ProportionalToX { index } => write!(f, "L_{index} is proportional to (x,y) -> x"),
            Violation::ProportionalToY { index } => write!(f, "L_{index} is proportional to (x,y) -> y"),
            Violation::ProportionalPair { first, second } => {
                write!(f, "L_{first} and L_{second} are proportional")
            }
        }
    }
}

impl FormFamily {
    pub fn new(forms: Vec<LinearForm>) -> Self {
        Self { forms }
    }

    pub fn forms(&self) -> &[LinearForm] {
        &self.forms
    }

    pub fn kernel(&self) -> LinearForm {
        self.forms[0]
    }

    /// `L_1, ..., L_M`.
    pub fn slots(&self) -> &[LinearForm] {
        &self.forms[1..]
    }

    /// Degree `M`.
    pub fn degree(&self) -> usize {
        self.forms.len().saturating_sub(1)
    }

    pub fn validate(&self, kind: FamilyKind) -> std::result::Result<(), Violation> {
        validate_family(self, kind)
    }
}

impl fmt::Display for FormFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.forms.iter().map(|l| l.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl FromStr for FormFamily {
    type Err = Error;

    /// Parses `a,b/den; a,b/den; ...`.
    fn from_str(s: &str) -> Result<Self> {
        let forms = s
            .split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<LinearForm>>>()?;
        if forms.is_empty() {
            return Err(Error::Parse("empty form family".into()));
        }
        Ok(Self { forms })
    }
}

pub fn validate_family(family: &FormFamily, kind: FamilyKind) -> std::result::Result<(), Violation> {
    let forms = &family.forms;
    if forms.is_empty() {
        return Err(Violation::Empty);
    }
    if kind == FamilyKind::Operator {
        for (index, l) in forms.iter().enumerate() {
            if l.b == 0 {
                return Err(Violation::ProportionalToX { index });
            }
            if l.a == 0 {
                return Err(Violation::ProportionalToY { index });
            }
        }
    }
    for i in 0..forms.len() {
        for j in i + 1..forms.len() {
            if forms[i].is_proportional(&forms[j]) {
                return Err(Violation::ProportionalPair { first: i, second: j });
            }
        }
    }
    Ok(())
}

/// Result of straightening `L_1, L_2` into the coordinates `(u, v)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChangeOfVariables {
    /// Rewritten family: `L_1(u,v) = u`, `L_2(u,v) = v`, the rest re-expressed.
    pub family: FormFamily,
    /// Multiplier clearing the denominators of `L_1` and `L_2`.
    pub lambda: i64,
    /// `(u, v) = forward (x, y)`.
    pub forward: [[i64; 2]; 2],
    /// `(x, y) = inverse (u, v) / det`.
    pub inverse: [[i64; 2]; 2],
    pub det: i64,
    /// Window multiplier: `(x, y)` in `[-A N, A N]^2` maps into `[-gA N, gA N]^2`.
    pub window_growth: i64,
}

impl ChangeOfVariables {
    /// `(x, y)` with `forward (x, y) = (u, v)`, if `(u, v)` lies on the image lattice.
    pub fn preimage(&self, u: i64, v: i64) -> Option<(i64, i64)> {
        let m = self.inverse;
        let xn = m[0][0] as i128 * u as i128 + m[0][1] as i128 * v as i128;
        let yn = m[1][0] as i128 * u as i128 + m[1][1] as i128 * v as i128;
        let det = self.det as i128;
        if xn % det != 0 || yn % det != 0 {
            return None;
        }
        Some(((xn / det) as i64, (yn / det) as i64))
    }

    pub fn image(&self, x: i64, y: i64) -> (i64, i64) {
        let m = self.forward;
        (m[0][0] * x + m[0][1] * y, m[1][0] * x + m[1][1] * y)
    }

    pub fn grown_window(&self, window_a: i64) -> i64 {
        self.window_growth * window_a
    }
}

/// Change of variables `(u, v) = lambda (L_i, L_j)` for the two given slots.
pub fn straighten(forms: &[LinearForm], first: LinearForm, second: LinearForm) -> Result<ChangeOfVariables> {
    if first.is_proportional(&second) {
        return Err(Error::InvalidForm(format!("{first} and {second} are proportional")));
    }
    let lambda = lcm(first.den as i128, second.den as i128);
    let row = |l: &LinearForm| {
        let s = lambda / l.den as i128;
        [(s * l.a as i128) as i64, (s * l.b as i128) as i64]
    };
    let forward = [row(&first), row(&second)];
    let det128 = forward[0][0] as i128 * forward[1][1] as i128 - forward[0][1] as i128 * forward[1][0] as i128;
    let det = i64::try_from(det128).map_err(|_| Error::Overflow("change-of-variables determinant".into()))?;
    let inverse = [[forward[1][1], -forward[0][1]], [-forward[1][0], forward[0][0]]];
    let family = FormFamily::new(
        forms
            .iter()
            .map(|l| l.compose(inverse, det))
            .collect::<Result<Vec<_>>>()?,
    );
    let window_growth = forward
        .iter()
        .map(|r| r[0].abs() + r[1].abs())
        .max()
        .unwrap_or(1);
    Ok(ChangeOfVariables { family, lambda: lambda as i64, forward, inverse, det, window_growth })
}

/// Rewrites a scalar-form family so that `L_1(u,v) = u` and `L_2(u,v) = v`.
pub fn change_of_variables(family: &FormFamily) -> Result<ChangeOfVariables> {
    if family.degree() < 2 {
        return Err(Error::InvalidParameter("need at least two function slots".into()));
    }
    validate_family(family, FamilyKind::Scalar).map_err(Error::Family)?;
    let slots = family.slots();
    straighten(family.forms(), slots[0], slots[1])
}
