use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};

use super::scalar::{axpy, dot, Scalar};
use crate::error::{Error, Result};

/// A named block of parameters with a tensor shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered list of segments describing how a flat parameter array is carved up.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &segments {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate segment name `{}`", s.name)));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total(&self) -> usize {
        self.segments.iter().map(Segment::size).sum()
    }

    /// Offset range of the named segment.
    pub fn range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for s in &self.segments {
            if s.name == name {
                return Some(offset..offset + s.size());
            }
            offset += s.size();
        }
        None
    }

    /// Concatenates layouts, prefixing every segment name with `<prefix>.`.
    pub fn concat<'a>(parts: impl IntoIterator<Item = (&'a str, &'a Layout)>) -> Result<Self> {
        let segments = parts
            .into_iter()
            .flat_map(|(prefix, layout)| {
                layout
                    .segments
                    .iter()
                    .map(move |s| Segment::new(format!("{prefix}.{}", s.name), s.shape.clone()))
            })
            .collect();
        Self::new(segments)
    }
}

/// Flat array of real parameters together with its segment layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
    layout: Layout,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(layout: Layout, values: Vec<T>) -> Result<Self> {
        if layout.total() != values.len() {
            return Err(Error::Dimension {
                context: "parameter vector",
                expected: layout.total(),
                got: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout.total();
        Self {
            values: vec![T::zero(); n],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn segment(&self, name: &str) -> Option<&[T]> {
        self.layout.range(name).map(|r| &self.values[r])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [T]> {
        self.layout.range(name).map(move |r| &mut self.values[r])
    }

    /// Overwrites values from a slice of the same length.
    pub fn assign(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::Dimension {
                context: "parameter assignment",
                expected: self.values.len(),
                got: values.len(),
            });
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    /// `self += alpha * other`; layouts must match.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_layout(other)?;
        axpy(alpha, &other.values, &mut self.values);
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Usage("parameter layouts differ".into()));
        }
        Ok(())
    }
}

/// Parameter store that many workers read and update without locking.
///
/// Values are kept as `f64` bit patterns in atomics. Reads may observe a mix of
/// old and new coordinates while another worker is writing; updates are
/// per-coordinate compare-and-swap so no delta is lost.
#[derive(Debug)]
pub struct SharedParams {
    cells: Vec<AtomicU64>,
    layout: Layout,
}

impl SharedParams {
    pub fn new<T: Scalar>(params: &ParamVector<T>) -> Self {
        Self {
            cells: params
                .values()
                .iter()
                .map(|v| AtomicU64::new(v.to_f64_lossy().to_bits()))
                .collect(),
            layout: params.layout().clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn snapshot<T: Scalar>(&self) -> ParamVector<T> {
        let values = self
            .cells
            .iter()
            .map(|c| T::lit(f64::from_bits(c.load(Ordering::Relaxed))))
            .collect();
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn load(&self, i: usize) -> f64 {
        f64::from_bits(self.cells[i].load(Ordering::Relaxed))
    }

    /// Atomically replaces coordinate `i` with `f(old)`.
    pub fn update(&self, i: usize, f: impl Fn(f64) -> f64) {
        let cell = &self.cells[i];
        let mut current = cell.load(Ordering::Relaxed);
        loop {
            let next = f(f64::from_bits(current)).to_bits();
            match cell.compare_exchange_weak(current, next, Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => return,
                Err(seen) => current = seen,
            }
        }
    }

    /// Adds `delta` coordinate-wise.
    pub fn accumulate<T: Scalar>(&self, delta: &[T]) -> Result<()> {
        if delta.len() != self.cells.len() {
            return Err(Error::Dimension {
                context: "shared accumulate",
                expected: self.cells.len(),
                got: delta.len(),
            });
        }
        for (i, d) in delta.iter().enumerate() {
            let d = d.to_f64_lossy();
            self.update(i, |v| v + d);
        }
        Ok(())
    }
}
