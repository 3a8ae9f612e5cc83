//! Resource vectors, request descriptions and the shared resource pool.
//!
//! All quantities are integers in canonical function-units: one unit of
//! resource type `p` is what a single function instance needs of that type.

use std::fmt;

use crate::error::{Error, Insufficient};

/// Per-type resource amounts in canonical function-units.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResourceVector(Vec<u32>);

impl ResourceVector {
    pub fn new(amounts: Vec<u32>) -> Self {
        ResourceVector(amounts)
    }

    pub fn zeros(types: usize) -> Self {
        ResourceVector(vec![0; types])
    }

    pub fn splat(types: usize, value: u32) -> Self {
        ResourceVector(vec![value; types])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn amounts(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, p: usize) -> u32 {
        self.0[p]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    /// `true` when every component is `<=` the matching component of `other`.
    pub fn fits_within(&self, other: &ResourceVector) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn scaled(&self, factor: u32) -> ResourceVector {
        ResourceVector(self.0.iter().map(|a| a * factor).collect())
    }

    pub fn checked_add(&self, other: &ResourceVector) -> Option<ResourceVector> {
        if self.0.len() != other.0.len() {
            return None;
        }
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_add(*b))
            .collect::<Option<Vec<_>>>()
            .map(ResourceVector)
    }

    /// Componentwise subtraction; `None` if any component would go negative.
    pub fn checked_sub(&self, other: &ResourceVector) -> Option<ResourceVector> {
        if self.0.len() != other.0.len() {
            return None;
        }
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<_>>>()
            .map(ResourceVector)
    }

    pub(crate) fn add_assign_unchecked(&mut self, other: &ResourceVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Traffic and income parameters of one request class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassParams {
    /// 1-based class identifier.
    pub class_id: usize,
    /// Income `r_g` collected when a request of this class is accepted.
    pub income: f64,
    /// Poisson arrival rate `λ_g`, requests per hour.
    pub arrival_rate: f64,
    /// Per-slice departure rate `μ_g`, per hour.
    pub departure_rate: f64,
}

impl ClassParams {
    pub fn new(class_id: usize, income: f64, arrival_rate: f64, departure_rate: f64) -> Self {
        ClassParams {
            class_id,
            income,
            arrival_rate,
            departure_rate,
        }
    }
}

/// Checks that a class table is positive and numbered `1..=G` in order.
pub fn validate_classes(classes: &[ClassParams]) -> Result<(), Error> {
    if classes.is_empty() {
        return Err(Error::InvalidInput("at least one class is required".into()));
    }
    for (i, c) in classes.iter().enumerate() {
        if c.class_id != i + 1 {
            return Err(Error::InvalidInput(format!(
                "class ids must be 1..=G in order, found {} at position {}",
                c.class_id,
                i + 1
            )));
        }
        if !(c.income > 0.0 && c.arrival_rate > 0.0 && c.departure_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "class {}: income, arrival and departure rates must be positive",
                c.class_id
            )));
        }
    }
    Ok(())
}

/// Binary indicator over the `K` function types a slice may use.
///
/// Function types are 0-based internally; display and config use the same
/// indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FunctionVector {
    bits: u64,
    width: u8,
}

impl FunctionVector {
    pub const MAX_WIDTH: usize = 64;

    pub fn empty(width: usize) -> Self {
        assert!(width <= Self::MAX_WIDTH, "at most 64 function types");
        FunctionVector {
            bits: 0,
            width: width as u8,
        }
    }

    pub fn from_indices(width: usize, indices: &[usize]) -> Self {
        let mut v = Self::empty(width);
        for &i in indices {
            v.insert(i);
        }
        v
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::empty(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.insert(i);
            }
        }
        v
    }

    pub fn insert(&mut self, f: usize) {
        assert!(f < self.width as usize, "function type {f} out of range");
        self.bits |= 1 << f;
    }

    pub fn contains(&self, f: usize) -> bool {
        f < self.width as usize && self.bits & (1 << f) != 0
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    /// Dot product of two binary vectors, i.e. the size of the intersection.
    pub fn dot(&self, other: &FunctionVector) -> usize {
        (self.bits & other.bits).count_ones() as usize
    }

    pub fn union(&self, other: &FunctionVector) -> FunctionVector {
        FunctionVector {
            bits: self.bits | other.bits,
            width: self.width.max(other.width),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width as usize).filter(move |&f| self.contains(f))
    }
}

/// A MetaSlice request: class, functions used and per-function demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaSliceSpec {
    pub class_id: usize,
    pub functions: FunctionVector,
    /// Demand of a single function instance.
    pub per_function_demand: ResourceVector,
}

impl MetaSliceSpec {
    pub fn new(class_id: usize, functions: FunctionVector, per_function_demand: ResourceVector) -> Self {
        MetaSliceSpec {
            class_id,
            functions,
            per_function_demand,
        }
    }

    /// Demand if every function gets a dedicated instance.
    pub fn gross_demand(&self) -> ResourceVector {
        gross_demand(self)
    }
}

pub fn gross_demand(spec: &MetaSliceSpec) -> ResourceVector {
    spec.per_function_demand.scaled(spec.functions.count() as u32)
}

/// The provider's aggregate resource pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemPool {
    capacity: ResourceVector,
    allocated: ResourceVector,
}

impl SystemPool {
    pub fn new(capacity: ResourceVector) -> Self {
        let allocated = ResourceVector::zeros(capacity.len());
        SystemPool { capacity, allocated }
    }

    /// A pool with some amount already allocated; fails if it exceeds capacity.
    pub fn with_allocated(capacity: ResourceVector, allocated: ResourceVector) -> Result<Self, Error> {
        if !allocated.fits_within(&capacity) {
            return Err(Error::InvalidInput(format!(
                "allocated {allocated} exceeds capacity {capacity}"
            )));
        }
        Ok(SystemPool { capacity, allocated })
    }

    pub fn capacity(&self) -> &ResourceVector {
        &self.capacity
    }

    pub fn allocated(&self) -> &ResourceVector {
        &self.allocated
    }

    pub fn available(&self) -> ResourceVector {
        self.capacity
            .checked_sub(&self.allocated)
            .expect("allocated never exceeds capacity")
    }

    pub fn can_allocate(&self, demand: &ResourceVector) -> bool {
        self.allocated
            .checked_add(demand)
            .is_some_and(|total| total.fits_within(&self.capacity))
    }

    /// Allocates `demand` or leaves the pool untouched.
    pub fn checked_alloc(&mut self, demand: &ResourceVector) -> Result<(), Insufficient> {
        match self.allocated.checked_add(demand) {
            Some(total) if total.fits_within(&self.capacity) => {
                self.allocated = total;
                Ok(())
            }
            _ => Err(Insufficient {
                demand: demand.clone(),
                available: self.available(),
            }),
        }
    }

    /// Returns `amount` to the pool. Underflow means the caller's bookkeeping is broken.
    pub fn release(&mut self, amount: &ResourceVector) -> Result<(), Error> {
        match self.allocated.checked_sub(amount) {
            Some(rest) => {
                self.allocated = rest;
                Ok(())
            }
            None => Err(Error::Underflow {
                allocated: self.allocated.clone(),
                amount: amount.clone(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rv(a: &[u32]) -> ResourceVector {
        ResourceVector::new(a.to_vec())
    }

    fn spec(funcs: &[usize], demand: &[u32]) -> MetaSliceSpec {
        MetaSliceSpec::new(1, FunctionVector::from_indices(9, funcs), rv(demand))
    }

    #[test]
    fn gross_demand_examples() {
        assert_eq!(gross_demand(&spec(&[0, 1, 2], &[1, 1, 1])), rv(&[3, 3, 3]));
        assert_eq!(gross_demand(&spec(&[], &[1, 1, 1])), rv(&[0, 0, 0]));
        assert_eq!(gross_demand(&spec(&[3, 5, 8], &[2, 1, 1])), rv(&[6, 3, 3]));
    }

    #[test]
    fn alloc_rejects_overflow_without_mutation() {
        let mut pool = SystemPool::with_allocated(rv(&[12, 12, 12]), rv(&[10, 10, 10])).unwrap();
        let before = pool.clone();
        let err = pool.checked_alloc(&rv(&[3, 3, 3])).unwrap_err();
        assert_eq!(err.available, rv(&[2, 2, 2]));
        assert_eq!(pool, before);
    }

    #[test]
    fn alloc_examples() {
        let mut pool = SystemPool::new(rv(&[12, 12, 12]));
        pool.checked_alloc(&rv(&[0, 0, 0])).unwrap();
        assert_eq!(pool.allocated(), &rv(&[0, 0, 0]));

        let mut pool = SystemPool::with_allocated(rv(&[12, 12, 12]), rv(&[9, 9, 9])).unwrap();
        pool.checked_alloc(&rv(&[3, 3, 3])).unwrap();
        assert_eq!(pool.allocated(), &rv(&[12, 12, 12]));
        assert_eq!(pool.available(), rv(&[0, 0, 0]));
    }

    #[test]
    fn release_examples() {
        let cap = rv(&[12, 12, 12]);
        let mut pool = SystemPool::with_allocated(cap.clone(), rv(&[3, 3, 3])).unwrap();
        pool.release(&rv(&[3, 3, 3])).unwrap();
        assert_eq!(pool.allocated(), &rv(&[0, 0, 0]));

        let mut pool = SystemPool::with_allocated(cap.clone(), rv(&[3, 3, 3])).unwrap();
        pool.release(&rv(&[0, 0, 0])).unwrap();
        assert_eq!(pool.allocated(), &rv(&[3, 3, 3]));

        let mut pool = SystemPool::with_allocated(cap, rv(&[5, 4, 3])).unwrap();
        pool.release(&rv(&[2, 1, 0])).unwrap();
        assert_eq!(pool.allocated(), &rv(&[3, 3, 3]));
    }

    #[test]
    fn release_underflow_is_an_error() {
        let mut pool = SystemPool::with_allocated(rv(&[12, 12, 12]), rv(&[1, 2, 3])).unwrap();
        assert!(matches!(pool.release(&rv(&[2, 0, 0])), Err(Error::Underflow { .. })));
        assert_eq!(pool.allocated(), &rv(&[1, 2, 3]));
    }

    #[test]
    fn function_vector_basics() {
        let v = FunctionVector::from_bits(&[true, false, true, false, false, false, false, false, true]);
        assert_eq!(v.count(), 3);
        assert_eq!(v.iter().collect::<Vec<_>>(), vec![0, 2, 8]);
        assert!(!v.contains(1));
        assert!(!v.contains(20));
    }

    #[test]
    fn class_validation() {
        let good = vec![ClassParams::new(1, 1.0, 60.0, 2.0), ClassParams::new(2, 2.0, 40.0, 2.0)];
        validate_classes(&good).unwrap();
        let gap = vec![ClassParams::new(1, 1.0, 60.0, 2.0), ClassParams::new(3, 2.0, 40.0, 2.0)];
        assert!(validate_classes(&gap).is_err());
        let zero_rate = vec![ClassParams::new(1, 1.0, 0.0, 2.0)];
        assert!(validate_classes(&zero_rate).is_err());
    }

    proptest! {
        #[test]
        fn conservation_over_random_sequences(ops in prop::collection::vec((any::<bool>(), 0u32..5, 0u32..5, 0u32..5), 0..200)) {
            let cap = rv(&[12, 12, 12]);
            let mut pool = SystemPool::new(cap.clone());
            let mut live: Vec<ResourceVector> = Vec::new();
            for (alloc, a, b, c) in ops {
                if alloc || live.is_empty() {
                    let d = rv(&[a, b, c]);
                    if pool.checked_alloc(&d).is_ok() {
                        live.push(d);
                    }
                } else {
                    let d = live.remove((a as usize) % live.len());
                    pool.release(&d).unwrap();
                }
                let mut sum = ResourceVector::zeros(3);
                for d in &live {
                    sum.add_assign_unchecked(d);
                }
                prop_assert_eq!(pool.allocated(), &sum);
                prop_assert!(pool.allocated().fits_within(&cap));
            }
        }

        #[test]
        fn alloc_then_release_restores(al in prop::collection::vec(0u32..=12, 3), d in prop::collection::vec(0u32..=12, 3)) {
            let cap = rv(&[12, 12, 12]);
            let mut pool = SystemPool::with_allocated(cap, ResourceVector::new(al)).unwrap();
            let before = pool.clone();
            let d = ResourceVector::new(d);
            if pool.checked_alloc(&d).is_ok() {
                pool.release(&d).unwrap();
            }
            prop_assert_eq!(pool, before);
        }

        #[test]
        fn gross_demand_is_linear(a in prop::collection::vec(0u32..100, 3), b in prop::collection::vec(0u32..100, 3), k in 1usize..9) {
            let funcs: Vec<usize> = (0..k).collect();
            let sa = spec(&funcs, &a);
            let sb = spec(&funcs, &b);
            let sum = ResourceVector::new(a).checked_add(&ResourceVector::new(b)).unwrap();
            let ssum = spec(&funcs, sum.amounts());
            prop_assert_eq!(gross_demand(&ssum), gross_demand(&sa).checked_add(&gross_demand(&sb)).unwrap());
        }
    }
}
