//! Lane-width-generic element-wise kernels.
//!
//! A kernel is written once against the [`Lane`] trait and instantiated
//! either on packs of `W` values ([`Pack<W>`]) or on plain `f64` (width 1,
//! the scalar instantiation used for device-style code). Every operation acts
//! lane by lane with the same IEEE operations as the scalar type, so results
//! are bitwise identical across widths. Multiply and add are never fused.
//!
//! Reductions are not lane-parallel: [`vreduce_sum`] is a strict
//! left-to-right sum.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LaneError {
    #[error("input {index} has length {len}, expected {expected}")]
    LengthMismatch { index: usize, len: usize, expected: usize },
    #[error("kernel expects {expected} {what}, got {got}")]
    ArityMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("lane width mismatch: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("unsupported lane width {0}; expected one of 1, 2, 4, 8, 16")]
    UnsupportedWidth(usize),
}

/// Configured pack width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LaneWidth {
    W1,
    W2,
    #[default]
    W4,
    W8,
    W16,
}

impl LaneWidth {
    pub const ALL: [LaneWidth; 5] = [
        LaneWidth::W1,
        LaneWidth::W2,
        LaneWidth::W4,
        LaneWidth::W8,
        LaneWidth::W16,
    ];

    pub fn get(self) -> usize {
        match self {
            LaneWidth::W1 => 1,
            LaneWidth::W2 => 2,
            LaneWidth::W4 => 4,
            LaneWidth::W8 => 8,
            LaneWidth::W16 => 16,
        }
    }
}

impl TryFrom<usize> for LaneWidth {
    type Error = LaneError;
    fn try_from(w: usize) -> Result<Self, LaneError> {
        Ok(match w {
            1 => LaneWidth::W1,
            2 => LaneWidth::W2,
            4 => LaneWidth::W4,
            8 => LaneWidth::W8,
            16 => LaneWidth::W16,
            other => return Err(LaneError::UnsupportedWidth(other)),
        })
    }
}

/// Per-lane boolean mask.
pub trait Mask: Copy {
    fn and(self, other: Self) -> Self;
    fn or(self, other: Self) -> Self;
    fn not(self) -> Self;
    fn any(self) -> bool;
}

impl Mask for bool {
    #[inline(always)]
    fn and(self, o: bool) -> bool {
        self && o
    }
    #[inline(always)]
    fn or(self, o: bool) -> bool {
        self || o
    }
    #[inline(always)]
    fn not(self) -> bool {
        !self
    }
    #[inline(always)]
    fn any(self) -> bool {
        self
    }
}

/// Numeric lane type: the closure of operations hydro kernels need.
pub trait Lane:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    type Mask: Mask;
    const WIDTH: usize;

    fn splat(x: f64) -> Self;
    /// Loads `WIDTH` values starting at `src[0]`.
    fn load(src: &[f64]) -> Self;
    fn store(self, dst: &mut [f64]);
    fn min(self, o: Self) -> Self;
    fn max(self, o: Self) -> Self;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn lt(self, o: Self) -> Self::Mask;
    fn le(self, o: Self) -> Self::Mask;
    fn gt(self, o: Self) -> Self::Mask;
    /// Lanes that are not NaN.
    fn is_finite(self) -> Self::Mask;
    fn select(m: Self::Mask, a: Self, b: Self) -> Self;
}

impl Lane for f64 {
    type Mask = bool;
    const WIDTH: usize = 1;

    #[inline(always)]
    fn splat(x: f64) -> f64 {
        x
    }
    #[inline(always)]
    fn load(src: &[f64]) -> f64 {
        src[0]
    }
    #[inline(always)]
    fn store(self, dst: &mut [f64]) {
        dst[0] = self;
    }
    #[inline(always)]
    fn min(self, o: f64) -> f64 {
        f64::min(self, o)
    }
    #[inline(always)]
    fn max(self, o: f64) -> f64 {
        f64::max(self, o)
    }
    #[inline(always)]
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    #[inline(always)]
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn lt(self, o: f64) -> bool {
        self < o
    }
    #[inline(always)]
    fn le(self, o: f64) -> bool {
        self <= o
    }
    #[inline(always)]
    fn gt(self, o: f64) -> bool {
        self > o
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline(always)]
    fn select(m: bool, a: f64, b: f64) -> f64 {
        if m {
            a
        } else {
            b
        }
    }
}

/// `W` values processed element-wise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pack<const W: usize>(pub [f64; W]);

/// `W` per-lane booleans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackMask<const W: usize>(pub [bool; W]);

impl<const W: usize> Mask for PackMask<W> {
    #[inline(always)]
    fn and(self, o: Self) -> Self {
        PackMask(std::array::from_fn(|i| self.0[i] && o.0[i]))
    }
    #[inline(always)]
    fn or(self, o: Self) -> Self {
        PackMask(std::array::from_fn(|i| self.0[i] || o.0[i]))
    }
    #[inline(always)]
    fn not(self) -> Self {
        PackMask(std::array::from_fn(|i| !self.0[i]))
    }
    #[inline(always)]
    fn any(self) -> bool {
        self.0.iter().any(|&b| b)
    }
}

macro_rules! pack_binop {
    ($tr:ident, $f:ident, $op:tt) => {
        impl<const W: usize> $tr for Pack<W> {
            type Output = Pack<W>;
            #[inline(always)]
            fn $f(self, o: Pack<W>) -> Pack<W> {
                Pack(std::array::from_fn(|i| self.0[i] $op o.0[i]))
            }
        }
    };
}

pack_binop!(Add, add, +);
pack_binop!(Sub, sub, -);
pack_binop!(Mul, mul, *);
pack_binop!(Div, div, /);

impl<const W: usize> Neg for Pack<W> {
    type Output = Pack<W>;
    #[inline(always)]
    fn neg(self) -> Pack<W> {
        Pack(self.0.map(|x| -x))
    }
}

impl<const W: usize> Lane for Pack<W> {
    type Mask = PackMask<W>;
    const WIDTH: usize = W;

    #[inline(always)]
    fn splat(x: f64) -> Self {
        Pack([x; W])
    }
    #[inline(always)]
    fn load(src: &[f64]) -> Self {
        Pack(src[..W].try_into().expect("pack load length"))
    }
    #[inline(always)]
    fn store(self, dst: &mut [f64]) {
        dst[..W].copy_from_slice(&self.0);
    }
    #[inline(always)]
    fn min(self, o: Self) -> Self {
        Pack(std::array::from_fn(|i| f64::min(self.0[i], o.0[i])))
    }
    #[inline(always)]
    fn max(self, o: Self) -> Self {
        Pack(std::array::from_fn(|i| f64::max(self.0[i], o.0[i])))
    }
    #[inline(always)]
    fn abs(self) -> Self {
        Pack(self.0.map(f64::abs))
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        Pack(self.0.map(f64::sqrt))
    }
    #[inline(always)]
    fn lt(self, o: Self) -> PackMask<W> {
        PackMask(std::array::from_fn(|i| self.0[i] < o.0[i]))
    }
    #[inline(always)]
    fn le(self, o: Self) -> PackMask<W> {
        PackMask(std::array::from_fn(|i| self.0[i] <= o.0[i]))
    }
    #[inline(always)]
    fn gt(self, o: Self) -> PackMask<W> {
        PackMask(std::array::from_fn(|i| self.0[i] > o.0[i]))
    }
    #[inline(always)]
    fn is_finite(self) -> PackMask<W> {
        PackMask(self.0.map(f64::is_finite))
    }
    #[inline(always)]
    fn select(m: PackMask<W>, a: Self, b: Self) -> Self {
        Pack(std::array::from_fn(|i| if m.0[i] { a.0[i] } else { b.0[i] }))
    }
}

/// Per-lane select with an explicit width check on loose slices.
pub fn vselect(mask: &[bool], a: &[f64], b: &[f64]) -> Result<Vec<f64>, LaneError> {
    if a.len() != mask.len() {
        return Err(LaneError::WidthMismatch(mask.len(), a.len()));
    }
    if b.len() != mask.len() {
        return Err(LaneError::WidthMismatch(mask.len(), b.len()));
    }
    Ok(mask
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&m, (&x, &y))| f64::select(m, x, y))
        .collect())
}

/// An element-wise computation over `INPUTS` arrays producing `OUTPUTS`
/// arrays. `apply` must not mix lanes.
pub trait LaneKernel: Sync {
    const INPUTS: usize;
    const OUTPUTS: usize;

    fn apply<V: Lane>(&self, inputs: &[V], outputs: &mut [V]);
}

/// Applies `kernel` to full packs of `width`, then a scalar loop over the
/// remainder.
pub fn vmap<K: LaneKernel>(
    kernel: &K,
    width: LaneWidth,
    inputs: &[&[f64]],
    outputs: &mut [&mut [f64]],
) -> Result<(), LaneError> {
    check_arity::<K>(inputs.len(), outputs.len())?;
    let n = inputs
        .first()
        .map_or_else(|| outputs.first().map_or(0, |o| o.len()), |i| i.len());
    for (index, s) in inputs.iter().enumerate() {
        if s.len() != n {
            return Err(LaneError::LengthMismatch {
                index,
                len: s.len(),
                expected: n,
            });
        }
    }
    for (index, s) in outputs.iter().enumerate() {
        if s.len() != n {
            return Err(LaneError::LengthMismatch {
                index: inputs.len() + index,
                len: s.len(),
                expected: n,
            });
        }
    }
    vmap_unchecked(kernel, width, inputs, outputs, n);
    Ok(())
}

fn check_arity<K: LaneKernel>(inputs: usize, outputs: usize) -> Result<(), LaneError> {
    if inputs != K::INPUTS {
        return Err(LaneError::ArityMismatch {
            what: "inputs",
            expected: K::INPUTS,
            got: inputs,
        });
    }
    if outputs != K::OUTPUTS {
        return Err(LaneError::ArityMismatch {
            what: "outputs",
            expected: K::OUTPUTS,
            got: outputs,
        });
    }
    Ok(())
}

/// Inner loop without length checks; every slice must be at least `n` long.
pub(crate) fn vmap_unchecked<K: LaneKernel>(
    kernel: &K,
    width: LaneWidth,
    inputs: &[&[f64]],
    outputs: &mut [&mut [f64]],
    n: usize,
) {
    let done = match width {
        LaneWidth::W1 => 0,
        LaneWidth::W2 => run_packs::<K, 2>(kernel, inputs, outputs, n),
        LaneWidth::W4 => run_packs::<K, 4>(kernel, inputs, outputs, n),
        LaneWidth::W8 => run_packs::<K, 8>(kernel, inputs, outputs, n),
        LaneWidth::W16 => run_packs::<K, 16>(kernel, inputs, outputs, n),
    };
    run_scalar(kernel, inputs, outputs, done, n);
}

const MAX_ARITY: usize = 32;

fn run_packs<K: LaneKernel, const W: usize>(
    kernel: &K,
    inputs: &[&[f64]],
    outputs: &mut [&mut [f64]],
    n: usize,
) -> usize {
    debug_assert!(inputs.len() <= MAX_ARITY && outputs.len() <= MAX_ARITY);
    let full = n / W * W;
    let mut ins = [Pack::<W>::splat(0.0); MAX_ARITY];
    let mut outs = [Pack::<W>::splat(0.0); MAX_ARITY];
    let (ni, no) = (inputs.len(), outputs.len());
    let mut at = 0;
    while at < full {
        for (slot, src) in ins.iter_mut().zip(inputs) {
            *slot = Pack::load(&src[at..]);
        }
        kernel.apply(&ins[..ni], &mut outs[..no]);
        for (val, dst) in outs.iter().zip(outputs.iter_mut()) {
            val.store(&mut dst[at..]);
        }
        at += W;
    }
    full
}

fn run_scalar<K: LaneKernel>(kernel: &K, inputs: &[&[f64]], outputs: &mut [&mut [f64]], from: usize, n: usize) {
    let mut ins = [0.0f64; MAX_ARITY];
    let mut outs = [0.0f64; MAX_ARITY];
    let (ni, no) = (inputs.len(), outputs.len());
    for at in from..n {
        for (slot, src) in ins.iter_mut().zip(inputs) {
            *slot = src[at];
        }
        kernel.apply(&ins[..ni], &mut outs[..no]);
        for (val, dst) in outs.iter().zip(outputs.iter_mut()) {
            dst[at] = *val;
        }
    }
}

/// Strict left-to-right sum; identical bits for every lane width.
pub fn vreduce_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, &x| acc + x)
}
