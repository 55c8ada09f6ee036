//! Per-rank define-mode state.
//!
//! Each kind (dimension, variable, attribute) has its own namespace and its
//! own dense LID sequence. LIDs are handed out at define time and stay valid
//! after end-define; GIDs are bound once at finalize, and objects defined
//! elsewhere get the next free LID when first inquired.

use std::collections::HashMap;

use thiserror::Error;

use crate::codec::CodecError;
use crate::object::{split_full_name, ObjectDef, ObjectDefinition, ObjectKind};

pub type Lid = usize;
pub type Gid = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("{0:?} is already defined on this rank with different metadata")]
    LocalNameConflict(String),
    #[error("define mode has already ended")]
    AlreadyFinalized,
    #[error("define mode has not ended yet")]
    NotFinalized,
    #[error("locally defined {0:?} is missing from the global order")]
    MissingObject(String),
    #[error("no such object {0:?}")]
    NoSuchObject(String),
    #[error("variable {var:?} uses dimension {dim:?}, which is not defined in its block on this rank")]
    UndefinedDimension { var: String, dim: String },
    #[error(transparent)]
    Invalid(#[from] CodecError),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, PartialEq)]
pub struct PendingObject {
    pub kind: ObjectKind,
    pub full_name: String,
    pub def: ObjectDef,
    /// Canonical serialization of `def`.
    pub payload: Vec<u8>,
    pub lid: Lid,
}

impl PendingObject {
    pub fn to_definition(&self) -> ObjectDefinition {
        ObjectDefinition::new(self.full_name.clone(), self.def.clone())
    }

    /// Logical bytes held for this object.
    pub fn held_bytes(&self) -> u64 {
        (self.full_name.len() + self.payload.len()) as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    lid_to_gid: [Vec<Gid>; 3],
    gid_to_lid: [HashMap<Gid, Lid>; 3],
}

impl IdMap {
    pub fn gid(&self, kind: ObjectKind, lid: Lid) -> Option<Gid> {
        self.lid_to_gid[kind.index()].get(lid).copied()
    }

    pub fn lid(&self, kind: ObjectKind, gid: Gid) -> Option<Lid> {
        self.gid_to_lid[kind.index()].get(&gid).copied()
    }

    /// Number of LIDs bound for `kind`.
    pub fn len(&self, kind: ObjectKind) -> usize {
        self.lid_to_gid[kind.index()].len()
    }

    pub fn is_empty(&self) -> bool {
        ObjectKind::ALL.iter().all(|k| self.len(*k) == 0)
    }

    fn bind(&mut self, kind: ObjectKind, gid: Gid) -> Lid {
        let lids = &mut self.lid_to_gid[kind.index()];
        lids.push(gid);
        self.gid_to_lid[kind.index()].insert(gid, lids.len() - 1);
        lids.len() - 1
    }
}

/// File order of every object, per kind. Position is the GID.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalOrder {
    names: [Vec<String>; 3],
    index: [HashMap<String, Gid>; 3],
}

impl GlobalOrder {
    pub fn push(&mut self, kind: ObjectKind, full_name: String) -> Gid {
        let names = &mut self.names[kind.index()];
        let gid = names.len();
        self.index[kind.index()].insert(full_name.clone(), gid);
        names.push(full_name);
        gid
    }

    pub fn gid(&self, kind: ObjectKind, full_name: &str) -> Option<Gid> {
        self.index[kind.index()].get(full_name).copied()
    }

    pub fn names(&self, kind: ObjectKind) -> &[String] {
        &self.names[kind.index()]
    }
}

#[derive(Debug, Clone, Default)]
pub struct ObjectStore {
    objects: [Vec<PendingObject>; 3],
    by_name: [HashMap<String, Lid>; 3],
    ids: Option<IdMap>,
    held_bytes: u64,
}

impl ObjectStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Defines an object and returns its LID. Redefining an identical object
    /// returns the existing LID.
    pub fn define_object(&mut self, full_name: &str, def: ObjectDef) -> Result<Lid> {
        if self.ids.is_some() {
            return Err(StoreError::AlreadyFinalized);
        }
        let kind = def.kind();
        let payload = def.payload();
        if let Some(&lid) = self.by_name[kind.index()].get(full_name) {
            return if self.objects[kind.index()][lid].payload == payload {
                Ok(lid)
            } else {
                Err(StoreError::LocalNameConflict(full_name.to_string()))
            };
        }
        let obj = ObjectDefinition::new(full_name, def);
        obj.validate()?;
        if let ObjectDef::Variable { dims, .. } = &obj.def {
            let (path, _) = split_full_name(full_name);
            for dim in dims {
                let known = self.by_name[ObjectKind::Dimension.index()].contains_key(dim.as_str());
                if !known || split_full_name(dim).0 != path {
                    return Err(StoreError::UndefinedDimension {
                        var: full_name.to_string(),
                        dim: dim.clone(),
                    });
                }
            }
        }
        let objects = &mut self.objects[kind.index()];
        let lid = objects.len();
        let pending = PendingObject {
            kind,
            full_name: obj.full_name,
            def: obj.def,
            payload,
            lid,
        };
        self.held_bytes += pending.held_bytes();
        self.by_name[kind.index()].insert(pending.full_name.clone(), lid);
        objects.push(pending);
        Ok(lid)
    }

    pub fn define(&mut self, obj: &ObjectDefinition) -> Result<Lid> {
        self.define_object(&obj.full_name, obj.def.clone())
    }

    /// Objects defined on this rank, in creation (LID) order.
    pub fn objects(&self, kind: ObjectKind) -> &[PendingObject] {
        &self.objects[kind.index()]
    }

    /// All defined objects, dimensions first, then variables, then attributes.
    pub fn iter(&self) -> impl Iterator<Item = &PendingObject> {
        self.objects.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.objects.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Serialized bytes held by the defined objects.
    pub fn held_bytes(&self) -> u64 {
        self.held_bytes
    }

    pub fn is_finalized(&self) -> bool {
        self.ids.is_some()
    }

    pub fn id_map(&self) -> Option<&IdMap> {
        self.ids.as_ref()
    }

    /// LID of a name this rank has defined or inquired.
    pub fn lid(&self, kind: ObjectKind, full_name: &str) -> Option<Lid> {
        self.by_name[kind.index()].get(full_name).copied()
    }

    /// GID of a LID once finalized.
    pub fn gid(&self, kind: ObjectKind, lid: Lid) -> Option<Gid> {
        self.ids.as_ref()?.gid(kind, lid)
    }

    /// Ends define mode, binding each defined LID to the GID from `resolve`.
    pub fn finalize_with(
        &mut self,
        mut resolve: impl FnMut(ObjectKind, &str) -> Option<Gid>,
    ) -> Result<&IdMap> {
        if self.ids.is_some() {
            return Err(StoreError::AlreadyFinalized);
        }
        let mut ids = IdMap::default();
        for obj in self.objects.iter().flatten() {
            let gid = resolve(obj.kind, &obj.full_name)
                .ok_or_else(|| StoreError::MissingObject(obj.full_name.clone()))?;
            ids.bind(obj.kind, gid);
        }
        Ok(self.ids.insert(ids))
    }

    pub fn finalize_gids(&mut self, order: &GlobalOrder) -> Result<&IdMap> {
        self.finalize_with(|kind, name| order.gid(kind, name))
    }

    /// LID of `full_name`, binding the next free LID on first use. `resolve`
    /// is only consulted for names this rank has not seen yet.
    pub fn inquire_with(
        &mut self,
        kind: ObjectKind,
        full_name: &str,
        resolve: impl FnOnce(&str) -> Option<Gid>,
    ) -> Result<Lid> {
        let ids = self.ids.as_mut().ok_or(StoreError::NotFinalized)?;
        if let Some(&lid) = self.by_name[kind.index()].get(full_name) {
            return Ok(lid);
        }
        let gid = resolve(full_name).ok_or_else(|| StoreError::NoSuchObject(full_name.to_string()))?;
        let lid = ids.bind(kind, gid);
        self.by_name[kind.index()].insert(full_name.to_string(), lid);
        Ok(lid)
    }

    pub fn inquire_object(&mut self, kind: ObjectKind, full_name: &str, order: &GlobalOrder) -> Result<Lid> {
        self.inquire_with(kind, full_name, |name| order.gid(kind, name))
    }
}
