//! Binary instance container.
//!
//! Version 1 layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "RPRI"
//! version      u32      1
//! kind         u8       0 = dense, 1 = hadamard
//! m, d         u64, u64
//! n, k         u64, u64 (both 0 for dense operators)
//! eta          f64
//! seed_flags   u8       bit 0: operator seed present, bit 1: signal seed present
//! seeds        u64 x 3  operator, signal, corruption (absent seeds stored as 0)
//! value_model  u8       0 = zero, 1 = cauchy, 2 = uniform_scaled
//! value_param  f64      cauchy scale or uniform half-width factor (0 for zero)
//! b            f64 x m
//! x_star       f64 x d
//! n_support    u64
//! support      u64 x n_support
//! ```
//!
//! The operator itself is not stored; it is rebuilt from its seed.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DVector;

use super::instance::{OutlierSpec, ProblemInstance, SeedManifest, SupportRule, ValueModel};
use super::operator::{gaussian_ensemble, hadamard_ensemble, MeasurementOperator, OperatorKind};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RPRI";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceDump {
    pub kind: OperatorKind,
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub eta: f64,
    pub seeds: SeedManifest,
    pub values: ValueModel,
    pub b: DVector<f64>,
    pub x_star: DVector<f64>,
    pub support: Vec<usize>,
}

impl InstanceDump {
    pub fn from_instance(inst: &ProblemInstance) -> Self {
        let (n, k) = match inst.operator.as_ref() {
            MeasurementOperator::Dense(_) => (0, 0),
            MeasurementOperator::Hadamard(h) => (h.n(), h.k()),
        };
        Self {
            kind: inst.operator.kind(),
            m: inst.m(),
            d: inst.d(),
            n,
            k,
            eta: inst.outliers.fraction,
            seeds: inst.seeds,
            values: inst.outliers.values,
            b: inst.b.clone(),
            x_star: inst.x_star.clone(),
            support: inst.outlier_support.clone(),
        }
    }

    /// Rebuilds the full instance; needs the operator seed.
    pub fn rebuild(&self) -> Result<ProblemInstance> {
        let seed = self
            .seeds
            .operator
            .ok_or_else(|| Error::Format("dump has no operator seed".into()))?;
        let op = match self.kind {
            OperatorKind::Dense => gaussian_ensemble(self.d, self.m, seed)?,
            OperatorKind::Hadamard => hadamard_ensemble(self.n, self.k, seed)?,
        };
        if op.rows() != self.m || op.cols() != self.d {
            return Err(Error::Format("operator shape disagrees with header".into()));
        }
        Ok(ProblemInstance {
            operator: Arc::new(op),
            b: self.b.clone(),
            x_star: self.x_star.clone(),
            outlier_support: self.support.clone(),
            outliers: OutlierSpec {
                fraction: self.eta,
                support: SupportRule::Fixed(self.support.clone()),
                values: self.values,
            },
            seeds: self.seeds,
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[match self.kind {
            OperatorKind::Dense => 0,
            OperatorKind::Hadamard => 1,
        }])?;
        for v in [self.m, self.d, self.n, self.k] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.eta.to_le_bytes())?;
        let flags = u8::from(self.seeds.operator.is_some()) | (u8::from(self.seeds.signal.is_some()) << 1);
        w.write_all(&[flags])?;
        for s in [
            self.seeds.operator.unwrap_or(0),
            self.seeds.signal.unwrap_or(0),
            self.seeds.corruption,
        ] {
            w.write_all(&s.to_le_bytes())?;
        }
        let (tag, param) = match self.values {
            ValueModel::Zero => (0u8, 0.0),
            ValueModel::Cauchy { scale } => (1, scale),
            ValueModel::UniformScaled { half_width_factor } => (2, half_width_factor),
        };
        w.write_all(&[tag])?;
        w.write_all(&param.to_le_bytes())?;
        for v in self.b.iter().chain(self.x_star.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.support.len() as u64).to_le_bytes())?;
        for &i in &self.support {
            w.write_all(&(i as u64).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, not an instance dump".into()));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dump version {version}")));
        }
        let kind = match read_array::<1, _>(r)?[0] {
            0 => OperatorKind::Dense,
            1 => OperatorKind::Hadamard,
            t => return Err(Error::Format(format!("unknown operator kind {t}"))),
        };
        let m = read_usize(r)?;
        let d = read_usize(r)?;
        let n = read_usize(r)?;
        let k = read_usize(r)?;
        let eta = read_f64(r)?;
        let flags = read_array::<1, _>(r)?[0];
        let op_seed = read_u64(r)?;
        let sig_seed = read_u64(r)?;
        let corruption = read_u64(r)?;
        let tag = read_array::<1, _>(r)?[0];
        let param = read_f64(r)?;
        let values = match tag {
            0 => ValueModel::Zero,
            1 => ValueModel::Cauchy { scale: param },
            2 => ValueModel::UniformScaled {
                half_width_factor: param,
            },
            t => return Err(Error::Format(format!("unknown value model {t}"))),
        };
        const MAX_LEN: usize = 1 << 32;
        if m > MAX_LEN || d > MAX_LEN {
            return Err(Error::Format("implausible dimensions in header".into()));
        }
        let b = DVector::from_iterator(m, (0..m).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?);
        let x_star = DVector::from_iterator(d, (0..d).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?);
        let count = read_usize(r)?;
        if count > m {
            return Err(Error::Format("support larger than m".into()));
        }
        let support = (0..count).map(|_| read_usize(r)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            m,
            d,
            n,
            k,
            eta,
            seeds: SeedManifest {
                operator: (flags & 1 != 0).then_some(op_seed),
                signal: (flags & 2 != 0).then_some(sig_seed),
                corruption,
            },
            values,
            b,
            x_star,
            support,
        })
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_usize<R: Read>(r: &mut R) -> Result<usize> {
    usize::try_from(read_u64(r)?).map_err(|_| Error::Format("integer overflow".into()))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{gaussian_signal, synthesize_instance};

    #[test]
    fn dump_round_trip_rebuilds_instance() {
        let op = Arc::new(hadamard_ensemble(16, 3, 21).unwrap());
        let x = gaussian_signal(16, 4);
        let spec = OutlierSpec::new(0.25, ValueModel::cauchy());
        let mut inst = synthesize_instance(op, x, &spec, 5).unwrap();
        inst.seeds.operator = Some(21);
        inst.seeds.signal = Some(4);

        let dump = InstanceDump::from_instance(&inst);
        let mut bytes = Vec::new();
        dump.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(
            bytes.len(),
            4 + 4 + 1 + 32 + 8 + 1 + 24 + 1 + 8 + 8 * (48 + 16) + 8 + 8 * 12
        );
        let back = InstanceDump::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, dump);
        let rebuilt = back.rebuild().unwrap();
        assert_eq!(rebuilt.operator.as_ref(), inst.operator.as_ref());
        assert_eq!(rebuilt.b, inst.b);
    }

    #[test]
    fn rejects_garbage() {
        assert!(InstanceDump::read_from(&mut &b"NOPE0000"[..]).is_err());
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&9u32.to_le_bytes());
        assert!(InstanceDump::read_from(&mut bytes.as_slice()).is_err());
    }
}
