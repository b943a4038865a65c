//! Cauchy-Schwarz degree reduction of scalar forms.
//!
//! A [`FormInstance`] is the sum over a box `X x Y` of
//! `rho(L_0(x,y)) prod_j f_j(L_j(x,y)) prod_c 1[lo_c <= C_c(x,y) <= hi_c]`.
//! The indicator factors appear when a change of variables turns the old box
//! into a parallelogram; they keep every rewritten sum exactly equal to the
//! original one. Once `L_1 = x` and `L_2 = y`, substituting `y' = y + z` in
//! `sum_x (sum_y ...)^2` gives one child form per shift `z`, of degree one less.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::linear_forms::{straighten, ChangeOfVariables, FamilyKind, FormFamily, LinearForm};
use crate::operator::FunctionVec;
use crate::random_measure::{sample_r, SelectorModel, ShiftTuple, SignedMeasure};
use crate::rng::{purpose, stream_id, stream_rng};
use crate::stats::CompensatedSum;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slot {
    pub form: LinearForm,
    pub function: FunctionVec,
}

/// Indicator `1[lo <= C(x,y) <= hi]`; empty when `lo > hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Constraint {
    pub form: LinearForm,
    pub lo: i64,
    pub hi: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormInstance {
    kernel_form: LinearForm,
    kernel: SignedMeasure,
    shifts: ShiftTuple,
    slots: Vec<Slot>,
    constraints: Vec<Constraint>,
    x_range: (i64, i64),
    y_range: (i64, i64),
}

impl FormInstance {
    /// `sum_{(x,y) in [-W,W]^2} rho(L_0) prod_j f_j(L_j)` for a family satisfying the
    /// scalar-form hypotheses. `shifts` records `rho = prod_i r(. + z_i)`; plain `r`
    /// corresponds to the single shift `0`.
    pub fn new(
        family: &FormFamily,
        kernel: SignedMeasure,
        shifts: ShiftTuple,
        fs: Vec<FunctionVec>,
        half_width: i64,
    ) -> Result<Self> {
        family.validate(FamilyKind::Scalar).map_err(Error::Family)?;
        if fs.len() != family.degree() {
            return Err(Error::Arity { expected: family.degree(), got: fs.len() });
        }
        if half_width < 1 {
            return Err(Error::Window(format!("half-width {half_width}")));
        }
        let slots = family
            .slots()
            .iter()
            .zip(fs)
            .map(|(&form, function)| Slot { form, function })
            .collect();
        Ok(Self {
            kernel_form: family.kernel(),
            kernel,
            shifts,
            slots,
            constraints: Vec::new(),
            x_range: (-half_width, half_width),
            y_range: (-half_width, half_width),
        })
    }

    pub fn degree(&self) -> usize {
        self.slots.len()
    }

    pub fn kernel(&self) -> &SignedMeasure {
        &self.kernel
    }

    pub fn kernel_form(&self) -> LinearForm {
        self.kernel_form
    }

    pub fn shifts(&self) -> &ShiftTuple {
        &self.shifts
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn x_range(&self) -> (i64, i64) {
        self.x_range
    }

    pub fn y_range(&self) -> (i64, i64) {
        self.y_range
    }

    /// Smallest `W` with the summation box inside `[-W, W]^2`.
    pub fn window_half_width(&self) -> i64 {
        [self.x_range.0, self.x_range.1, self.y_range.0, self.y_range.1]
            .iter()
            .map(|v| v.abs())
            .max()
            .unwrap_or(0)
    }

    /// `L_1 = x` and `L_2 = y`.
    pub fn is_normalized(&self) -> bool {
        self.slots.len() >= 2 && self.slots[0].form == LinearForm::x() && self.slots[1].form == LinearForm::y()
    }

    pub fn with_function(&self, slot: usize, function: FunctionVec) -> Self {
        let mut out = self.clone();
        out.slots[slot].function = function;
        out
    }

    /// Product of every factor except the kernel and the slots listed in `skip`.
    #[inline]
    fn weight(&self, x: i64, y: i64, skip: usize) -> f64 {
        let mut w = 1.0;
        for c in &self.constraints {
            match c.form.at(x, y) {
                Some(t) if c.lo <= t && t <= c.hi => {}
                _ => return 0.0,
            }
        }
        for s in &self.slots[skip..] {
            match s.form.at(x, y) {
                Some(t) => w *= s.function.get(t),
                None => return 0.0,
            }
            if w == 0.0 {
                return 0.0;
            }
        }
        w
    }

    #[inline]
    fn kernel_at(&self, x: i64, y: i64) -> f64 {
        self.kernel_form.at(x, y).map_or(0.0, |t| self.kernel.get(t))
    }

    /// Exact value of the form.
    pub fn evaluate(&self) -> f64 {
        let (xlo, xhi) = self.x_range;
        let (ylo, yhi) = self.y_range;
        let mut acc = CompensatedSum::new();
        for x in xlo..=xhi {
            for y in ylo..=yhi {
                let k = self.kernel_at(x, y);
                if k != 0.0 {
                    acc.add(k * self.weight(x, y, 0));
                }
            }
        }
        acc.value()
    }

    /// Rewrites the instance so that the first two slots read `x` and `y`.
    pub fn normalize(&self) -> Result<(FormInstance, ChangeOfVariables)> {
        if self.slots.len() < 2 {
            return Err(Error::InvalidParameter("need at least two slots to normalize".into()));
        }
        let mut forms = vec![self.kernel_form];
        forms.extend(self.slots.iter().map(|s| s.form));
        forms.extend(self.constraints.iter().map(|c| c.form));
        let cov = straighten(&forms, self.slots[0].form, self.slots[1].form)?;
        let composed = cov.family.forms();
        let m = self.slots.len();
        let lambda = cov.lambda;

        // f_1(L_1) = f_1(u / lambda): the new function vanishes off multiples of lambda
        let stretch = |f: &FunctionVec| {
            FunctionVec::from_fn(f.half_width() * lambda, |u| {
                if u % lambda == 0 {
                    f.get(u / lambda)
                } else {
                    0.0
                }
            })
        };
        let mut slots = vec![
            Slot { form: LinearForm::x(), function: stretch(&self.slots[0].function) },
            Slot { form: LinearForm::y(), function: stretch(&self.slots[1].function) },
        ];
        for (s, &form) in self.slots[2..].iter().zip(&composed[3..1 + m]) {
            slots.push(Slot { form, function: s.function.clone() });
        }
        let mut constraints: Vec<Constraint> = self
            .constraints
            .iter()
            .zip(&composed[1 + m..])
            .map(|(c, &form)| Constraint { form, ..*c })
            .collect();
        let inv = cov.inverse;
        constraints.push(Constraint {
            form: LinearForm::new(inv[0][0], inv[0][1], cov.det)?,
            lo: self.x_range.0,
            hi: self.x_range.1,
        });
        constraints.push(Constraint {
            form: LinearForm::new(inv[1][0], inv[1][1], cov.det)?,
            lo: self.y_range.0,
            hi: self.y_range.1,
        });
        let range = |row: [i64; 2]| {
            let corners = [
                (self.x_range.0, self.y_range.0),
                (self.x_range.0, self.y_range.1),
                (self.x_range.1, self.y_range.0),
                (self.x_range.1, self.y_range.1),
            ];
            let vals: Vec<i64> = corners.iter().map(|&(x, y)| row[0] * x + row[1] * y).collect();
            (*vals.iter().min().unwrap(), *vals.iter().max().unwrap())
        };
        let out = FormInstance {
            kernel_form: composed[0],
            kernel: self.kernel.clone(),
            shifts: self.shifts.clone(),
            slots,
            constraints,
            x_range: range(cov.forward[0]),
            y_range: range(cov.forward[1]),
        };
        Ok((out, cov))
    }

    /// `G(x) = sum_y f_2(y) rho(L_0(x,y)) prod_{j>2} f_j(L_j(x,y))`, the factor
    /// paired with `f_1(x)`; requires a normalized instance.
    pub fn fiber_marginal(&self) -> Result<FunctionVec> {
        self.require_normalized()?;
        let (xlo, xhi) = self.x_range;
        let (ylo, yhi) = self.y_range;
        let hw = xlo.abs().max(xhi.abs());
        Ok(FunctionVec::from_fn(hw, |x| {
            if x < xlo || x > xhi {
                return 0.0;
            }
            let mut acc = CompensatedSum::new();
            for y in ylo..=yhi {
                let k = self.kernel_at(x, y);
                if k != 0.0 {
                    acc.add(k * self.weight(x, y, 1));
                }
            }
            acc.value()
        }))
    }

    fn require_normalized(&self) -> Result<()> {
        if !self.is_normalized() {
            return Err(Error::InvalidParameter("instance must have L_1 = x and L_2 = y".into()));
        }
        Ok(())
    }

    /// Shifts `z` for which `y` and `y + z` both lie in `Y`.
    pub fn z_range(&self) -> (i64, i64) {
        let span = self.y_range.1 - self.y_range.0;
        (-span, span)
    }
}

/// `f^s(u) = f(u) f(u + s)`; identically zero when `s` is not an integer.
fn shifted_square(f: &FunctionVec, s: Option<i64>) -> FunctionVec {
    match s {
        Some(s) => FunctionVec::from_fn(f.half_width(), |u| f.get(u) * f.get(u + s)),
        None => FunctionVec::zeros(f.half_width()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionStep {
    pub z: i64,
    /// `L_0(0, z)` when it is an integer.
    pub kernel_shift: Option<i64>,
    pub exceptional: bool,
    pub child: FormInstance,
}

/// The child form `T^z(f_2^z, ..., f_M^z, rho^z)` of a normalized instance.
pub fn reduce(parent: &FormInstance, z: i64) -> Result<ReductionStep> {
    parent.require_normalized()?;
    let (zlo, zhi) = parent.z_range();
    if z < zlo || z > zhi {
        return Err(Error::Window(format!("z = {z} outside [{zlo}, {zhi}]")));
    }
    let shift_of = |l: &LinearForm| l.at(0, z);
    let kernel_shift = shift_of(&parent.kernel_form);
    let (kernel, exceptional, shifts) = match kernel_shift {
        Some(s) => {
            let kernel = parent.kernel.product_with_shift(&parent.kernel, s);
            match parent.shifts.doubled(s) {
                Ok(t) => (kernel, false, t),
                Err(_) => (kernel, true, parent.shifts.clone()),
            }
        }
        None => (SignedMeasure::zero(parent.kernel.half_width()), false, parent.shifts.clone()),
    };
    let slots = parent.slots[1..]
        .iter()
        .map(|s| Slot { form: s.form, function: shifted_square(&s.function, shift_of(&s.form)) })
        .collect();
    let constraints = parent
        .constraints
        .iter()
        .map(|c| match shift_of(&c.form) {
            Some(s) => Constraint { form: c.form, lo: c.lo.max(c.lo - s), hi: c.hi.min(c.hi - s) },
            None => Constraint { form: c.form, lo: 1, hi: 0 },
        })
        .collect();
    let (ylo, yhi) = parent.y_range;
    let child = FormInstance {
        kernel_form: parent.kernel_form,
        kernel,
        shifts,
        slots,
        constraints,
        x_range: parent.x_range,
        y_range: (ylo.max(ylo - z), yhi.min(yhi - z)),
    };
    Ok(ReductionStep { z, kernel_shift, exceptional, child })
}

/// `B = {z in [lo, hi] : z_i = z_j + L_0(0, z) for some i, j}` by enumeration,
/// cross-checked against the closed form `z = den (z_i - z_j) / b`.
pub fn exceptional_set(shifts: &ShiftTuple, l0: &LinearForm, z_range: (i64, i64)) -> Result<Vec<i64>> {
    if l0.b() == 0 {
        return Err(Error::InvalidForm(format!("z -> {l0}(0, z) is not injective")));
    }
    let zs = shifts.shifts();
    let mut differences: Vec<i64> = zs.iter().flat_map(|a| zs.iter().map(move |b| a - b)).collect();
    differences.sort_unstable();
    differences.dedup();
    let enumerated: Vec<i64> = (z_range.0..=z_range.1)
        .filter(|&z| l0.at(0, z).is_some_and(|s| differences.binary_search(&s).is_ok()))
        .collect();
    let mut closed: Vec<i64> = differences
        .iter()
        .filter_map(|&d| {
            let num = d as i128 * l0.den() as i128;
            let b = l0.b() as i128;
            (num % b == 0).then(|| (num / b) as i64)
        })
        .filter(|z| z_range.0 <= *z && *z <= z_range.1)
        .collect();
    closed.sort_unstable();
    closed.dedup();
    assert_eq!(enumerated, closed, "exceptional set enumeration disagrees with closed form");
    Ok(enumerated)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsReport {
    /// `|T|^2`.
    pub lhs2: f64,
    /// `||f_1||_2^2 sum_z |T^z|`.
    pub rhs: f64,
    /// `||f_1||_2^2 sum_z T^z`, which equals `||f_1||_2^2 sum_x G(x)^2`.
    pub signed_rhs: f64,
    pub f1_norm_sq: f64,
    pub z_count: usize,
    pub exceptional: Vec<i64>,
    pub holds: bool,
}

pub const RELATIVE_SLACK: f64 = 1e-9;

fn within(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + RELATIVE_SLACK * lhs.abs().max(rhs.abs())
}

/// Both sides of `|T|^2 <= ||f_1||_2^2 sum_z |T^z|` over the full range of `z`.
pub fn verify_cs_step(parent: &FormInstance) -> Result<CsReport> {
    parent.require_normalized()?;
    let value = parent.evaluate();
    let f1_norm_sq = parent.slots[0].function.norm2().powi(2);
    let (zlo, zhi) = parent.z_range();
    let children: Vec<(f64, bool)> = (zlo..=zhi)
        .into_par_iter()
        .map(|z| {
            let step = reduce(parent, z)?;
            Ok((step.child.evaluate(), step.exceptional))
        })
        .collect::<Result<_>>()?;
    let abs_sum: CompensatedSum = children.iter().map(|(v, _)| v.abs()).collect();
    let signed_sum: CompensatedSum = children.iter().map(|(v, _)| *v).collect();
    let exceptional = (zlo..=zhi).zip(&children).filter(|(_, c)| c.1).map(|(z, _)| z).collect();
    let lhs2 = value * value;
    let rhs = f1_norm_sq * abs_sum.value();
    Ok(CsReport {
        lhs2,
        rhs,
        signed_rhs: f1_norm_sq * signed_sum.value(),
        f1_norm_sq,
        z_count: children.len(),
        exceptional,
        holds: within(lhs2, rhs),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceptionalReport {
    pub bound: f64,
    /// `(z, |T^z|)` for every `z` checked.
    pub values: Vec<(i64, f64)>,
    pub holds: bool,
}

/// `|T^z| <= ||f_2||_2^2 prod_{j>2} ||f_j||_inf^2 ||rho||_2^2` for each `z` in `b`.
pub fn verify_exceptional_bound(parent: &FormInstance, b: &[i64]) -> Result<ExceptionalReport> {
    parent.require_normalized()?;
    let sup_sq: f64 = parent.slots[2..].iter().map(|s| s.function.norm_inf().powi(2)).product();
    let bound = parent.slots[1].function.norm2().powi(2) * sup_sq * parent.kernel.l2_norm_sq();
    let (zlo, zhi) = parent.z_range();
    let values: Vec<(i64, f64)> = b
        .iter()
        .filter(|z| zlo <= **z && **z <= zhi)
        .map(|&z| Ok((z, reduce(parent, z)?.child.evaluate().abs())))
        .collect::<Result<_>>()?;
    let holds = values.iter().all(|&(_, v)| within(v, bound));
    Ok(ExceptionalReport { bound, values, holds })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceCheck {
    pub lhs2: f64,
    pub rhs: f64,
    #[serde(rename = "B_size")]
    pub b_size: usize,
    pub cs_holds: bool,
    pub exceptional_holds: bool,
    /// `|T|^2` against the signed right side with `f_1` replaced by the fiber marginal.
    pub tight_gap: f64,
    pub holds: bool,
}

/// One Cauchy-Schwarz step and the exceptional bound on a seeded random
/// instance: kernel `r` with density `p` on `[-N, N]`, Gaussian `f_j`.
pub fn check_random_instance(family: &FormFamily, n: u64, p: f64, seed: u64, trial: u64) -> Result<InstanceCheck> {
    let model = SelectorModel::new(n, p, seed, stream_id(&[purpose::KERNEL, trial]))?;
    let r = sample_r(&model);
    let mut rng = stream_rng(seed, stream_id(&[purpose::FUNCTIONS, trial]));
    let hw = n as i64;
    let fs = (0..family.degree())
        .map(|_| FunctionVec::from_fn(hw, |_| rng.sample(StandardNormal)))
        .collect();
    let (inst, _) = FormInstance::new(family, r, ShiftTuple::single(0), fs, hw)?.normalize()?;
    let cs = verify_cs_step(&inst)?;
    let b = exceptional_set(inst.shifts(), &inst.kernel_form(), inst.z_range())?;
    let exc = verify_exceptional_bound(&inst, &b)?;
    let witness = verify_cs_step(&inst.with_function(0, inst.fiber_marginal()?))?;
    let tight_gap = (witness.lhs2 - witness.signed_rhs).abs() / witness.lhs2.abs().max(f64::MIN_POSITIVE);
    Ok(InstanceCheck {
        lhs2: cs.lhs2,
        rhs: cs.rhs,
        b_size: b.len(),
        cs_holds: cs.holds,
        exceptional_holds: exc.holds,
        tight_gap,
        holds: cs.holds && exc.holds,
    })
}
