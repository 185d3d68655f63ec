//! The safetensors container layout:
//!
//! ```text
//! [u64 little-endian header length N][N bytes of UTF-8 JSON header][data region]
//! ```
//!
//! The header maps each tensor name to `{dtype, shape, data_offsets: [begin, end]}`
//! with offsets relative to the start of the data region, plus an optional
//! `__metadata__` string map.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::dtype::Dtype;
use crate::error::{ContainerError, Error, Result};

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl NamedTensor {
    pub fn new(
        name: impl Into<String>,
        dtype: Dtype,
        shape: Vec<usize>,
        data: Vec<u8>,
    ) -> Result<Self, ContainerError> {
        let name = name.into();
        let expected = expected_len(&shape, dtype);
        if expected != data.len() as u64 {
            return Err(ContainerError::SizeMismatch {
                name,
                shape,
                expected,
                actual: data.len() as u64,
            });
        }
        Ok(NamedTensor {
            name,
            dtype,
            shape,
            data,
        })
    }

    /// Encodes `values` (row-major) into `dtype`.
    pub fn from_f64(
        name: impl Into<String>,
        dtype: Dtype,
        shape: Vec<usize>,
        values: &[f64],
    ) -> Result<Self, ContainerError> {
        Self::new(name, dtype, shape, dtype.encode(values))
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.dtype.decode(&self.data)
    }

    /// Bytes per row for a 2-D tensor.
    pub fn row_stride(&self) -> Option<usize> {
        match self.shape.as_slice() {
            [_, cols] => Some(cols * self.dtype.size()),
            _ => None,
        }
    }

    pub fn row_bytes(&self, row: usize) -> Option<&[u8]> {
        let stride = self.row_stride()?;
        (row < self.shape[0]).then(|| &self.data[row * stride..(row + 1) * stride])
    }
}

fn expected_len(shape: &[usize], dtype: Dtype) -> u64 {
    shape
        .iter()
        .fold(dtype.size() as u64, |acc, &d| acc.saturating_mul(d as u64))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Container {
    pub tensors: Vec<NamedTensor>,
    pub metadata: Option<BTreeMap<String, String>>,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: (u64, u64),
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Parses a container from its full byte image. Tensors are returned in
    /// data-offset order.
    pub fn parse(bytes: &[u8]) -> Result<Self, ContainerError> {
        let prefix: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or(ContainerError::MissingHeaderLength)?;
        let header_len = u64::from_le_bytes(prefix);
        let available = bytes.len() as u64 - 8;
        if header_len > available {
            return Err(ContainerError::HeaderOverrun {
                header_len,
                available,
            });
        }
        let header_end = 8 + header_len as usize;
        let header: Map<String, Value> = serde_json::from_slice(&bytes[8..header_end])
            .map_err(|e| ContainerError::InvalidHeader(e.to_string()))?;
        let data = &bytes[header_end..];
        let data_len = data.len() as u64;

        let mut metadata = None;
        let mut infos: Vec<(String, TensorInfo)> = Vec::with_capacity(header.len());
        for (name, value) in header {
            if name == METADATA_KEY {
                let map: BTreeMap<String, String> = serde_json::from_value(value)
                    .map_err(|e| ContainerError::InvalidHeader(format!("{METADATA_KEY}: {e}")))?;
                metadata = Some(map);
                continue;
            }
            let info: TensorInfo = serde_json::from_value(value)
                .map_err(|e| ContainerError::InvalidHeader(format!("tensor {name:?}: {e}")))?;
            infos.push((name, info));
        }
        infos.sort_by(|a, b| {
            a.1.data_offsets
                .cmp(&b.1.data_offsets)
                .then_with(|| a.0.cmp(&b.0))
        });

        let mut tensors = Vec::with_capacity(infos.len());
        let mut prev: Option<(&str, u64)> = None;
        for (name, info) in &infos {
            let dtype: Dtype = info
                .dtype
                .parse()
                .map_err(|_| ContainerError::UnknownDtype {
                    name: name.clone(),
                    dtype: info.dtype.clone(),
                })?;
            let (begin, end) = info.data_offsets;
            if begin > end || end > data_len {
                return Err(ContainerError::OffsetsOutOfBounds {
                    name: name.clone(),
                    begin,
                    end,
                    data_len,
                });
            }
            if let Some((prev_name, prev_end)) = prev {
                if begin < prev_end {
                    return Err(ContainerError::OverlappingOffsets {
                        first: prev_name.to_string(),
                        second: name.clone(),
                    });
                }
            }
            // zero-sized tensors never overlap anything
            if end > begin {
                prev = Some((name, end));
            }
            let tensor = NamedTensor::new(
                name.clone(),
                dtype,
                info.shape.clone(),
                data[begin as usize..end as usize].to_vec(),
            )?;
            tensors.push(tensor);
        }
        Ok(Container { tensors, metadata })
    }

    /// Serializes with contiguous offsets in the current tensor order.
    pub fn to_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        let mut seen = HashSet::new();
        let mut header = Map::new();
        if let Some(meta) = &self.metadata {
            header.insert(
                METADATA_KEY.to_string(),
                serde_json::to_value(meta).expect("string map"),
            );
        }
        let mut offset = 0u64;
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(ContainerError::DuplicateName(t.name.clone()));
            }
            let expected = expected_len(&t.shape, t.dtype);
            if expected != t.data.len() as u64 {
                return Err(ContainerError::SizeMismatch {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    expected,
                    actual: t.data.len() as u64,
                });
            }
            let end = offset + expected;
            let info = TensorInfo {
                dtype: t.dtype.to_string(),
                shape: t.shape.clone(),
                data_offsets: (offset, end),
            };
            header.insert(
                t.name.clone(),
                serde_json::to_value(info).expect("plain struct"),
            );
            offset = end;
        }
        let mut header_bytes = serde_json::to_vec(&header).expect("JSON map");
        // pad so the data region starts 8-byte aligned
        while header_bytes.len() % 8 != 0 {
            header_bytes.push(b' ');
        }
        let mut out = Vec::with_capacity(8 + header_bytes.len() + offset as usize);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for t in &self.tensors {
            out.extend_from_slice(&t.data);
        }
        Ok(out)
    }
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::parse(&bytes).map_err(|source| Error::Container {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_container(path: impl AsRef<Path>, container: &Container) -> Result<()> {
    let path = path.as_ref();
    let bytes = container.to_bytes().map_err(|source| Error::Container {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
