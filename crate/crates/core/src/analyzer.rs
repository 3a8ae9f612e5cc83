//! MetaSlice analyzer: groups live slices into MetaInstances by Jaccard
//! similarity and lets slices in the same MetaInstance share function
//! instances, up to `sharing_cap` sharers per instance.

use std::collections::BTreeMap;

use crate::error::{Error, Insufficient};
use crate::resources::{FunctionVector, MetaSliceSpec, ResourceVector, SystemPool};

pub type SliceId = u64;
pub type InstanceId = u64;
pub type MetaInstanceId = u64;

/// Jaccard similarity of two binary function vectors.
///
/// Fails when both vectors are empty (the ratio is undefined).
pub fn jaccard(a: &FunctionVector, b: &FunctionVector) -> Result<f64, Error> {
    if a.width() != b.width() {
        return Err(Error::DimensionMismatch {
            expected: a.width(),
            actual: b.width(),
        });
    }
    let dot = a.dot(b);
    let denom = a.count() + b.count() - dot;
    if denom == 0 {
        return Err(Error::InvalidInput("jaccard of two empty function vectors".into()));
    }
    Ok(dot as f64 / denom as f64)
}

/// A running copy of one function type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionInstance {
    pub id: InstanceId,
    pub function: usize,
    pub sharers: u32,
    pub footprint: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaInstance {
    pub id: MetaInstanceId,
    /// The function description: every live function instance of this group.
    pub instances: Vec<FunctionInstance>,
    pub members: Vec<SliceId>,
}

impl MetaInstance {
    pub fn function_vector(&self, width: usize) -> FunctionVector {
        let mut v = FunctionVector::empty(width);
        for inst in &self.instances {
            v.insert(inst.function);
        }
        v
    }

    /// The instance a new sharer of `function` would join, if any has room.
    /// Prefers the fullest eligible instance, then the lowest id.
    fn shareable(&self, function: usize, cap: u32) -> Option<&FunctionInstance> {
        self.instances
            .iter()
            .filter(|i| i.function == function && i.sharers < cap)
            .max_by(|a, b| a.sharers.cmp(&b.sharers).then(b.id.cmp(&a.id)))
    }
}

/// A live, admitted slice and the instances it is bound to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveSlice {
    pub id: SliceId,
    pub class_id: usize,
    pub metainstance: MetaInstanceId,
    /// (function type, instance id) for every function of the slice.
    pub bindings: Vec<(usize, InstanceId)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdmissionOutcome {
    pub slice_id: SliceId,
    pub metainstance_id: MetaInstanceId,
    /// Function type -> existing instance the slice joined.
    pub shared_bindings: BTreeMap<usize, InstanceId>,
    pub new_instances: Vec<FunctionInstance>,
    /// Resources newly taken from the pool; `n_o` in the reward.
    pub net_allocation: ResourceVector,
}

/// Returns the id of the live MetaInstance most similar to `spec`, or `None`
/// when nothing overlaps. Ties go to the lowest id.
pub fn select_metainstance<'a, I>(spec: &MetaSliceSpec, live: I) -> Option<MetaInstanceId>
where
    I: IntoIterator<Item = &'a MetaInstance>,
{
    let width = spec.functions.width();
    let mut best: Option<(f64, MetaInstanceId)> = None;
    for mi in live {
        let fv = mi.function_vector(width);
        let sim = match jaccard(&spec.functions, &fv) {
            Ok(s) => s,
            Err(_) => continue,
        };
        if sim <= 0.0 {
            continue;
        }
        best = match best {
            Some((s, id)) if s > sim || (s == sim && id < mi.id) => Some((s, id)),
            _ => Some((sim, mi.id)),
        };
    }
    best.map(|(_, id)| id)
}

/// Resources a slice would newly occupy if placed in `target`.
pub fn net_demand(
    spec: &MetaSliceSpec,
    target: Option<&MetaInstance>,
    sharing_enabled: bool,
    sharing_cap: u32,
) -> ResourceVector {
    match target {
        Some(mi) if sharing_enabled => {
            let dedicated = spec
                .functions
                .iter()
                .filter(|&f| mi.shareable(f, sharing_cap).is_none())
                .count();
            spec.per_function_demand.scaled(dedicated as u32)
        }
        _ => spec.gross_demand(),
    }
}

/// Owns every MetaInstance and live slice of one system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analyzer {
    sharing_enabled: bool,
    sharing_cap: u32,
    metainstances: BTreeMap<MetaInstanceId, MetaInstance>,
    slices: BTreeMap<SliceId, LiveSlice>,
    next_slice: SliceId,
    next_instance: InstanceId,
    next_metainstance: MetaInstanceId,
}

struct Placement {
    target: Option<MetaInstanceId>,
    shared: BTreeMap<usize, InstanceId>,
    dedicated: Vec<usize>,
}

impl Analyzer {
    pub fn new(sharing_enabled: bool, sharing_cap: u32) -> Self {
        assert!(sharing_cap >= 1, "sharing cap must be at least 1");
        Analyzer {
            sharing_enabled,
            sharing_cap,
            metainstances: BTreeMap::new(),
            slices: BTreeMap::new(),
            next_slice: 0,
            next_instance: 0,
            next_metainstance: 0,
        }
    }

    pub fn sharing_enabled(&self) -> bool {
        self.sharing_enabled
    }

    pub fn sharing_cap(&self) -> u32 {
        self.sharing_cap
    }

    pub fn metainstances(&self) -> impl Iterator<Item = &MetaInstance> {
        self.metainstances.values()
    }

    pub fn metainstance(&self, id: MetaInstanceId) -> Option<&MetaInstance> {
        self.metainstances.get(&id)
    }

    pub fn slice(&self, id: SliceId) -> Option<&LiveSlice> {
        self.slices.get(&id)
    }

    pub fn live_slices(&self) -> usize {
        self.slices.len()
    }

    fn plan(&self, spec: &MetaSliceSpec) -> Placement {
        // Without the analyzer every slice gets its own group and nothing is shared.
        if !self.sharing_enabled {
            return Placement {
                target: None,
                shared: BTreeMap::new(),
                dedicated: spec.functions.iter().collect(),
            };
        }
        let target = select_metainstance(spec, self.metainstances.values());
        let mut shared = BTreeMap::new();
        let mut dedicated = Vec::new();
        let mi = target.and_then(|id| self.metainstances.get(&id));
        for f in spec.functions.iter() {
            match mi.and_then(|mi| mi.shareable(f, self.sharing_cap)) {
                Some(inst) => {
                    shared.insert(f, inst.id);
                }
                None => dedicated.push(f),
            }
        }
        Placement {
            target,
            shared,
            dedicated,
        }
    }

    /// Net demand the slice would place on the pool if admitted now.
    pub fn preview_net_demand(&self, spec: &MetaSliceSpec) -> ResourceVector {
        let plan = self.plan(spec);
        spec.per_function_demand.scaled(plan.dedicated.len() as u32)
    }

    /// Places an approved slice. All-or-nothing: on `Insufficient` neither
    /// the pool nor the analyzer changes.
    pub fn admit(&mut self, spec: &MetaSliceSpec, pool: &mut SystemPool) -> Result<AdmissionOutcome, Insufficient> {
        let plan = self.plan(spec);
        let net = spec.per_function_demand.scaled(plan.dedicated.len() as u32);
        pool.checked_alloc(&net)?;

        let slice_id = self.next_slice;
        self.next_slice += 1;
        let mi_id = match plan.target {
            Some(id) => id,
            None => {
                let id = self.next_metainstance;
                self.next_metainstance += 1;
                self.metainstances.insert(
                    id,
                    MetaInstance {
                        id,
                        instances: Vec::new(),
                        members: Vec::new(),
                    },
                );
                id
            }
        };
        let mi = self.metainstances.get_mut(&mi_id).expect("target exists");

        let mut bindings = Vec::with_capacity(spec.functions.count());
        for (&f, &inst_id) in &plan.shared {
            let inst = mi
                .instances
                .iter_mut()
                .find(|i| i.id == inst_id)
                .expect("planned instance exists");
            inst.sharers += 1;
            bindings.push((f, inst_id));
        }
        let mut new_instances = Vec::with_capacity(plan.dedicated.len());
        for &f in &plan.dedicated {
            let inst = FunctionInstance {
                id: self.next_instance,
                function: f,
                sharers: 1,
                footprint: spec.per_function_demand.clone(),
            };
            self.next_instance += 1;
            bindings.push((f, inst.id));
            mi.instances.push(inst.clone());
            new_instances.push(inst);
        }
        bindings.sort_unstable();
        mi.members.push(slice_id);

        self.slices.insert(
            slice_id,
            LiveSlice {
                id: slice_id,
                class_id: spec.class_id,
                metainstance: mi_id,
                bindings,
            },
        );

        Ok(AdmissionOutcome {
            slice_id,
            metainstance_id: mi_id,
            shared_bindings: plan.shared,
            new_instances,
            net_allocation: net,
        })
    }

    /// Removes a live slice, destroying instances nobody shares any more,
    /// and returns what was released to the pool.
    pub fn depart(&mut self, slice_id: SliceId, pool: &mut SystemPool) -> Result<ResourceVector, Error> {
        let slice = self.slices.remove(&slice_id).ok_or(Error::UnknownSlice(slice_id))?;
        let mi = self
            .metainstances
            .get_mut(&slice.metainstance)
            .ok_or_else(|| Error::Accounting(format!("slice {slice_id} bound to missing metainstance")))?;

        let mut freed = ResourceVector::zeros(pool.capacity().len());
        for &(_, inst_id) in &slice.bindings {
            let pos =
                mi.instances.iter().position(|i| i.id == inst_id).ok_or_else(|| {
                    Error::Accounting(format!("slice {slice_id} bound to missing instance {inst_id}"))
                })?;
            let inst = &mut mi.instances[pos];
            inst.sharers -= 1;
            if inst.sharers == 0 {
                let inst = mi.instances.remove(pos);
                freed.add_assign_unchecked(&inst.footprint);
            }
        }
        mi.members.retain(|&m| m != slice_id);
        if mi.members.is_empty() {
            if !mi.instances.is_empty() {
                return Err(Error::Accounting(format!(
                    "metainstance {} has no members but {} instances",
                    mi.id,
                    mi.instances.len()
                )));
            }
            self.metainstances.remove(&slice.metainstance);
        }
        pool.release(&freed)?;
        Ok(freed)
    }

    /// Checks the bookkeeping invariants against `pool`: the allocation equals
    /// the sum of live footprints, every sharer count is within
    /// `[1, sharing_cap]` and matches the bindings, and no group is empty.
    pub fn audit(&self, pool: &SystemPool) -> Result<(), Error> {
        let mut total = ResourceVector::zeros(pool.capacity().len());
        let mut bound: BTreeMap<InstanceId, u32> = BTreeMap::new();
        for s in self.slices.values() {
            for &(_, inst) in &s.bindings {
                *bound.entry(inst).or_default() += 1;
            }
        }
        let mut instance_count = 0;
        for mi in self.metainstances.values() {
            if mi.members.is_empty() {
                return Err(Error::Accounting(format!("empty metainstance {}", mi.id)));
            }
            for inst in &mi.instances {
                instance_count += 1;
                if inst.sharers < 1 || inst.sharers > self.sharing_cap {
                    return Err(Error::Accounting(format!(
                        "instance {} has {} sharers (cap {})",
                        inst.id, inst.sharers, self.sharing_cap
                    )));
                }
                if bound.get(&inst.id).copied() != Some(inst.sharers) {
                    return Err(Error::Accounting(format!(
                        "instance {} sharer count {} disagrees with bindings",
                        inst.id, inst.sharers
                    )));
                }
                total.add_assign_unchecked(&inst.footprint);
            }
        }
        if instance_count != bound.len() {
            return Err(Error::Accounting("bindings reference unknown instances".into()));
        }
        if &total != pool.allocated() {
            return Err(Error::Accounting(format!(
                "pool allocated {} but live footprints sum to {}",
                pool.allocated(),
                total
            )));
        }
        Ok(())
    }
}
